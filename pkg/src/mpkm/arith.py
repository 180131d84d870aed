"""Interchangeable arithmetic for the datapath: saturating fixed point or float.

Both classes expose the same small vocabulary (add, sub, relu, compare,
shift by a power of two, wide accumulation) so the MP solver, kernel and
trainer are written once.  ``FixedArithmetic`` works on raw int64 words and
is fully audited; ``FloatArithmetic`` is the real-valued reference used for
oracles and gradient checks and does not touch the audit.

Wide accumulators (``wsum``/``wadd``/``wsub``) model an adder tree whose
width grows with the number of operands, so partial sums never saturate;
``narrow`` brings a wide value back into the datapath format.
"""

from __future__ import annotations

import numpy as np

from .fxp import AUDIT, DATAPATH_FORMAT, FxFormat, _shr, quantize_raw


class FixedArithmetic:
    mode = "fixed"

    def __init__(self, fmt: FxFormat = DATAPATH_FORMAT, acc_frac_bits: int = 20):
        self.fmt = fmt
        self.in_fmt = FxFormat(fmt.frac_bits + 1, fmt.frac_bits)
        # gradient accumulator: same words with extra fraction bits
        self.acc_frac_bits = max(acc_frac_bits, fmt.frac_bits)

    def __repr__(self):
        return f"FixedArithmetic({self.fmt})"

    # conversion (not audited: these model the ADC / host interface)
    def const(self, value):
        return quantize_raw(value, self.fmt)

    def encode_input(self, value):
        return quantize_raw(value, self.in_fmt)

    def gamma(self, value):
        """Quantize an MP hyper-parameter; it must survive as >= 1 LSB."""
        g = self.const(value)
        if np.any(g < 1):
            raise ValueError(f"gamma {value} is below one LSB ({self.lsb}) of {self.fmt}")
        return g

    def to_real(self, a):
        return self.fmt.to_real(a)

    @property
    def one(self):
        return np.int64(self.fmt.one)

    @property
    def lsb(self):
        return self.fmt.lsb

    def zeros(self, shape):
        return np.zeros(shape, dtype=np.int64)

    # datapath ops
    def add(self, a, b):
        out = np.add(a, b, dtype=np.int64)
        AUDIT.record(adds=out.size)
        return self.fmt.saturate(out)

    def sub(self, a, b):
        out = np.subtract(a, b, dtype=np.int64)
        AUDIT.record(subs=out.size)
        return self.fmt.saturate(out)

    def neg(self, a):
        return self.sub(0, a)

    def relu(self, a):
        a = np.asarray(a, dtype=np.int64)
        AUDIT.record(compares=a.size)
        return np.maximum(a, 0)

    def gt(self, a, b):
        out = np.greater(a, b)
        AUDIT.record(compares=out.size)
        return out

    def maximum(self, a, b):
        out = np.maximum(a, b)
        AUDIT.record(compares=np.size(out))
        return out

    def shl(self, a, n):
        a = np.asarray(a, dtype=np.int64)
        AUDIT.record(shifts=a.size)
        return self.fmt.saturate(a << n)

    def shr(self, a, n, rounding=True):
        """Arithmetic right shift (round half up unless ``rounding=False``,
        which floors). Never needs saturation."""
        return _shr(np.asarray(a, dtype=np.int64), np.asarray(n, dtype=np.int64), rounding)

    def select(self, cond, a, b=0):
        """Multiplexer: ``a`` where cond else ``b`` (no arithmetic)."""
        return np.where(cond, a, b).astype(np.int64)

    def negate_where(self, cond, a):
        """Conditional two's-complement negate (sign application)."""
        a = np.asarray(a, dtype=np.int64)
        AUDIT.record(subs=int(np.count_nonzero(np.broadcast_to(cond, np.shape(a)))))
        return np.where(cond, -a, a)

    def popcount(self, mask, axis=-1):
        mask = np.asarray(mask)
        n = mask.shape[axis]
        AUDIT.record(adds=max(n - 1, 0) * (mask.size // max(n, 1)))
        return np.count_nonzero(mask, axis=axis).astype(np.int64)

    def max_top2(self, x):
        """Largest and second-largest along the last axis (comparator tree)."""
        n = x.shape[-1]
        AUDIT.record(compares=max(2 * n - 3, n - 1) * (x.size // n))
        if n == 1:
            return x[..., 0], x[..., 0]
        part = np.partition(x, n - 2, axis=-1)
        return part[..., -1], part[..., -2]

    # wide accumulator ops
    def wsum(self, a, axis=-1):
        a = np.asarray(a, dtype=np.int64)
        n = a.shape[axis]
        AUDIT.record(adds=max(n - 1, 0) * (a.size // max(n, 1)))
        return a.sum(axis=axis)

    def wadd(self, a, b):
        out = np.add(a, b, dtype=np.int64)
        AUDIT.record(adds=out.size)
        return out

    def wsub(self, a, b):
        out = np.subtract(a, b, dtype=np.int64)
        AUDIT.record(subs=out.size)
        return out

    def narrow(self, a):
        return self.fmt.saturate(a)

    # gradient accumulator (extra fraction bits)
    def acc_pow2(self, p):
        """Accumulator encoding of 2**-p for integer p >= 0 (a wired shift)."""
        p = np.asarray(p, dtype=np.int64)
        AUDIT.record(shifts=p.size)
        return np.right_shift(np.int64(1) << self.acc_frac_bits, p)

    def acc_to_datapath(self, acc, extra_shift):
        """Shift an accumulator value right by ``extra_shift`` into the datapath."""
        s = self.acc_frac_bits - self.fmt.frac_bits + int(extra_shift)
        return self.narrow(self.shr(acc, s))

    def acc_to_real(self, acc):
        return np.asarray(acc, dtype=np.float64) * 2.0 ** -self.acc_frac_bits


class FloatArithmetic:
    """Real-valued twin of :class:`FixedArithmetic` (unaudited)."""

    mode = "float"
    fmt = None
    lsb = 0.0

    def __init__(self, solver: str = "exact"):
        if solver not in ("exact", "newton"):
            raise ValueError(f"unknown solver {solver!r}")
        self.solver = solver

    def __repr__(self):
        return f"FloatArithmetic(solver={self.solver!r})"

    def const(self, value):
        return np.asarray(value, dtype=np.float64)

    encode_input = const
    gamma = const

    def to_real(self, a):
        return np.asarray(a, dtype=np.float64)

    one = 1.0

    def zeros(self, shape):
        return np.zeros(shape, dtype=np.float64)

    def add(self, a, b):
        return np.add(a, b, dtype=np.float64)

    def sub(self, a, b):
        return np.subtract(a, b, dtype=np.float64)

    def neg(self, a):
        return -np.asarray(a, dtype=np.float64)

    def relu(self, a):
        return np.maximum(a, 0.0)

    def gt(self, a, b):
        return np.greater(a, b)

    def maximum(self, a, b):
        return np.maximum(a, b)

    def shl(self, a, n):
        return np.ldexp(np.asarray(a, dtype=np.float64), n)

    def shr(self, a, n, rounding=True):
        return np.ldexp(np.asarray(a, dtype=np.float64), -np.asarray(n))

    def select(self, cond, a, b=0.0):
        return np.where(cond, a, b).astype(np.float64)

    def negate_where(self, cond, a):
        return np.where(cond, -np.asarray(a, dtype=np.float64), a)

    def popcount(self, mask, axis=-1):
        return np.count_nonzero(mask, axis=axis).astype(np.int64)

    def max_top2(self, x):
        n = x.shape[-1]
        if n == 1:
            return x[..., 0], x[..., 0]
        part = np.partition(x, n - 2, axis=-1)
        return part[..., -1], part[..., -2]

    def wsum(self, a, axis=-1):
        return np.sum(a, axis=axis, dtype=np.float64)

    wadd = add
    wsub = sub

    def narrow(self, a):
        return np.asarray(a, dtype=np.float64)

    def acc_pow2(self, p):
        return np.ldexp(1.0, -np.asarray(p))

    def acc_to_datapath(self, acc, extra_shift):
        return np.ldexp(np.asarray(acc, dtype=np.float64), -int(extra_shift))

    def acc_to_real(self, acc):
        return np.asarray(acc, dtype=np.float64)


def make_arithmetic(mode: str = "fixed", total_bits: int = 12, frac_bits=None,
                    solver: str = "exact"):
    """Build an arithmetic by name. ``frac_bits`` defaults to total_bits - 4
    (sign + 3 integer bits, enough for kernel terms up to 4)."""
    if mode == "float":
        return FloatArithmetic(solver=solver)
    if mode != "fixed":
        raise ValueError(f"mode must be 'fixed' or 'float', got {mode!r}")
    if frac_bits is None:
        frac_bits = total_bits - 4
    return FixedArithmetic(FxFormat(total_bits, frac_bits))
