"""Saturating fixed-point arithmetic for the multiplierless datapath.

Only add, subtract, arithmetic shift, compare and clamp-at-zero are exposed.
There is deliberately no multiply or divide: anything that needs a scale
factor has to express it as a shift.

Values are carried as signed integer ``raw`` words (scalars or numpy int64
arrays) interpreted as ``raw * 2**-frac_bits``.  Every operation records
itself in a process-wide :class:`AuditCounters` so that a run can prove it
never multiplied.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field, fields

import numpy as np


@dataclass(frozen=True)
class FxFormat:
    """Signed two's-complement Q-format with ``total_bits`` including sign."""

    total_bits: int = 12
    frac_bits: int = 8

    def __post_init__(self):
        if not 4 <= self.total_bits <= 32:
            raise ValueError(f"total_bits must be in [4, 32], got {self.total_bits}")
        if not 0 <= self.frac_bits < self.total_bits:
            raise ValueError(
                f"frac_bits must be in [0, total_bits), got {self.frac_bits}"
            )

    @property
    def int_bits(self) -> int:
        return self.total_bits - 1 - self.frac_bits

    @property
    def min_raw(self) -> int:
        return -(1 << (self.total_bits - 1))

    @property
    def max_raw(self) -> int:
        return (1 << (self.total_bits - 1)) - 1

    @property
    def one(self) -> int:
        """Raw encoding of 1.0 (may itself be out of range for Q0.n)."""
        return 1 << self.frac_bits

    @property
    def lsb(self) -> float:
        return 2.0 ** -self.frac_bits

    @property
    def min_value(self) -> float:
        return self.min_raw * self.lsb

    @property
    def max_value(self) -> float:
        return self.max_raw * self.lsb

    def saturate(self, raw):
        """Clamp raw integers into range; sets the sticky overflow flag."""
        arr = np.asarray(raw, dtype=np.int64)
        if arr.size and (arr.min() < self.min_raw or arr.max() > self.max_raw):
            AUDIT.flag_overflow()
            arr = np.clip(arr, self.min_raw, self.max_raw)
        return arr

    def to_real(self, raw):
        return np.asarray(raw, dtype=np.float64) * self.lsb

    def __str__(self):
        return f"Q{self.int_bits}.{self.frac_bits}"


DATAPATH_FORMAT = FxFormat(12, 8)
INPUT_FORMAT = FxFormat(9, 8)


@dataclass
class AuditCounters:
    adds: int = 0
    subs: int = 0
    shifts: int = 0
    compares: int = 0
    multiplies: int = 0
    # sparsity bookkeeping for the cost model
    mp_inputs: int = 0
    mp_active: int = 0
    overflow: bool = False

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class _Audit:
    """Lock-guarded global tally. Totals are exact after threads join."""

    counters: AuditCounters = field(default_factory=AuditCounters)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def record(self, *, adds=0, subs=0, shifts=0, compares=0, multiplies=0):
        with self._lock:
            c = self.counters
            c.adds += int(adds)
            c.subs += int(subs)
            c.shifts += int(shifts)
            c.compares += int(compares)
            c.multiplies += int(multiplies)

    def record_mp(self, inputs, active):
        with self._lock:
            self.counters.mp_inputs += int(inputs)
            self.counters.mp_active += int(active)

    def flag_overflow(self):
        with self._lock:
            self.counters.overflow = True

    def snapshot(self) -> AuditCounters:
        with self._lock:
            return AuditCounters(**self.counters.as_dict())

    def reset(self):
        with self._lock:
            self.counters = AuditCounters()


AUDIT = _Audit()


def audit_counters() -> AuditCounters:
    return AUDIT.snapshot()


def reset_audit():
    AUDIT.reset()


@contextmanager
def audited():
    """Reset the audit, run the block, and expose the final counts.

    >>> with audited() as result:
    ...     ...
    >>> result.counters.multiplies
    0
    """

    class _Result:
        counters = None

    res = _Result()
    AUDIT.reset()
    try:
        yield res
    finally:
        res.counters = AUDIT.snapshot()


@dataclass(frozen=True)
class FxWord:
    """A fixed-point scalar or array of words sharing one format."""

    raw: object
    fmt: FxFormat = DATAPATH_FORMAT

    @property
    def value(self):
        v = self.fmt.to_real(self.raw)
        return float(v) if v.ndim == 0 else v

    def __len__(self):
        return len(np.atleast_1d(self.raw))

    def __repr__(self):
        return f"FxWord(raw={self.raw!r}, fmt={self.fmt})"


def _round_half_away(x):
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize_raw(value, fmt: FxFormat):
    """Nearest raw word, ties away from zero, saturating. Not audited."""
    scaled = _round_half_away(np.asarray(value, dtype=np.float64) * fmt.one)
    scaled = np.clip(scaled, fmt.min_raw, fmt.max_raw)
    return scaled.astype(np.int64)


def quantize(value, fmt: FxFormat = DATAPATH_FORMAT) -> FxWord:
    arr = np.asarray(value, dtype=np.float64)
    scaled = _round_half_away(arr * fmt.one)
    if scaled.size and (scaled.min() < fmt.min_raw or scaled.max() > fmt.max_raw):
        AUDIT.flag_overflow()
    raw = quantize_raw(arr, fmt)
    return FxWord(int(raw) if raw.ndim == 0 else raw, fmt)


def _wrap(raw, fmt):
    raw = np.asarray(raw, dtype=np.int64)
    return FxWord(int(raw) if raw.ndim == 0 else raw, fmt)


def _same_format(a: FxWord, b: FxWord):
    if a.fmt != b.fmt:
        raise TypeError(f"format mismatch: {a.fmt} vs {b.fmt}")


def add_sat(a: FxWord, b: FxWord) -> FxWord:
    _same_format(a, b)
    out = np.asarray(a.raw, dtype=np.int64) + np.asarray(b.raw, dtype=np.int64)
    AUDIT.record(adds=out.size)
    return _wrap(a.fmt.saturate(out), a.fmt)


def sub_sat(a: FxWord, b: FxWord) -> FxWord:
    _same_format(a, b)
    out = np.asarray(a.raw, dtype=np.int64) - np.asarray(b.raw, dtype=np.int64)
    AUDIT.record(subs=out.size)
    return _wrap(a.fmt.saturate(out), a.fmt)


def relu(a: FxWord) -> FxWord:
    """Clamp at zero (a register underflow in hardware); one compare per word."""
    raw = np.asarray(a.raw, dtype=np.int64)
    AUDIT.record(compares=raw.size)
    return _wrap(np.maximum(raw, 0), a.fmt)


def greater(a: FxWord, b: FxWord):
    _same_format(a, b)
    ra, rb = np.asarray(a.raw), np.asarray(b.raw)
    out = ra > rb
    AUDIT.record(compares=out.size)
    return bool(out) if out.ndim == 0 else out


def shift_right(a: FxWord, n: int, rounding: bool = True) -> FxWord:
    """Arithmetic right shift by ``n``.

    With ``rounding`` the half-LSB is added before shifting (round half up),
    which costs one extra add.
    """
    raw = np.asarray(a.raw, dtype=np.int64)
    out = _shr(raw, np.asarray(n, dtype=np.int64), rounding)
    return _wrap(out, a.fmt)


def shift_left(a: FxWord, n: int) -> FxWord:
    raw = np.asarray(a.raw, dtype=np.int64)
    AUDIT.record(shifts=raw.size)
    return _wrap(a.fmt.saturate(raw << int(n)), a.fmt)


def _shr(raw, n, rounding):
    """Audited arithmetic shift of raw words (``n`` broadcastable, >= 0)."""
    size = np.broadcast(raw, n).size
    if rounding:
        half = np.where(n > 0, np.left_shift(1, np.maximum(n - 1, 0)), 0)
        raw = raw + half
        AUDIT.record(adds=size)
    AUDIT.record(shifts=size)
    return np.right_shift(raw, n)


def priority_encode(count):
    """One-based index of the highest set bit: floor(log2(count)) + 1.

    Works elementwise on arrays. ``count`` must be >= 1.
    """
    c = np.asarray(count, dtype=np.int64)
    if c.size and c.min() < 1:
        raise ValueError("priority_encode needs count >= 1")
    # frexp gives c = m * 2**e with m in [0.5, 1), so e is exactly the bit length
    _, e = np.frexp(c.astype(np.float64))
    e = e.astype(np.int64)
    return int(e) if e.ndim == 0 else e
