"""Differential encoding and three realizations of an inner product.

``inner_product_exact`` is the multiply-accumulate oracle,
``inner_product_lse`` the smooth log-sum-exp surrogate, and
``inner_product_mp`` the piecewise-linear MP surrogate

    w.x ~ MP([w + x, -w - x], g) - MP([w - x, -w + x], g)

which on the fixed-point path needs only adds, subtracts and the MP solver.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .arith import FixedArithmetic, FloatArithmetic
from .fxp import AUDIT
from .mp_core import mp_solve


@dataclass
class DifferentialVector:
    """Pair of nonnegative vectors with plus + minus = 1 encoding plus - minus."""

    plus: np.ndarray
    minus: np.ndarray

    def decode(self):
        return np.asarray(self.plus) - np.asarray(self.minus)

    def check(self, ar, tol_lsb=1):
        """Raise if the componentwise sum deviates from 1 by more than
        ``tol_lsb`` words (fixed point) or 1e-12 (float)."""
        total = ar.to_real(np.asarray(self.plus) + np.asarray(self.minus))
        tol = tol_lsb * ar.lsb if ar.mode == "fixed" else 1e-12
        if np.any(np.abs(total - 1.0) > tol):
            raise ValueError("differential constraint plus + minus = 1 violated")
        if np.any(ar.to_real(self.plus) < 0) or np.any(ar.to_real(self.minus) < 0):
            raise ValueError("differential components must be nonnegative")


def encode_differential(x, ar=None) -> DifferentialVector:
    """plus = (1 + x) / 2, minus = 1 - plus.

    In fixed point ``x`` is first quantized to the input format, the halving
    is a rounding right shift and ``minus`` is formed by subtraction, so
    plus + minus is exactly one word of 1.0.
    """
    if ar is None:
        ar = FloatArithmetic()
    x = np.asarray(x, dtype=np.float64)
    if np.any(np.abs(x) > 1.0):
        raise ValueError("inputs must lie in [-1, 1]; normalize first")
    xr = ar.encode_input(x)
    plus = ar.shr(ar.add(ar.one, xr), 1)
    minus = ar.sub(ar.one, plus)
    return DifferentialVector(plus, minus)


def inner_product_exact(w, x):
    """Sum of w_i x_i. Oracle only; logged as multiplies in the audit."""
    w = np.asarray(w, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if w.shape != x.shape:
        raise ValueError(f"length mismatch: {w.shape} vs {x.shape}")
    AUDIT.record(multiplies=w.size, adds=max(w.shape[-1] - 1, 0) * (w.size // max(w.shape[-1], 1)))
    return np.sum(w * x, axis=-1)


def _lse(u, gamma):
    # gamma * log sum_i (e^{u_i/g} + e^{-u_i/g}), stabilised by the max |u|
    a = np.abs(u) / gamma
    m = a.max(axis=-1, keepdims=True)
    s = np.sum(np.exp(u / gamma - m) + np.exp(-u / gamma - m), axis=-1)
    return gamma * (m[..., 0] + np.log(s))


def inner_product_lse(w, x, gamma=1.0):
    """0.5 * [f(w + x) - f(w - x)] with f the symmetric log-sum-exp."""
    w = np.asarray(w, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if w.shape != x.shape:
        raise ValueError(f"length mismatch: {w.shape} vs {x.shape}")
    return 0.5 * (_lse(w + x, gamma) - _lse(w - x, gamma))


def inner_product_mp(w, x, gamma=1.0, ar=None, rounds=10):
    """MP surrogate of w.x along the last axis.

    With ``ar=None`` the float arithmetic and exact MP solver are used.  With
    a :class:`FixedArithmetic` the operands are quantized into its format and
    the result is returned as a real number decoded from the output word.
    """
    if ar is None:
        ar = FloatArithmetic()
    w = np.asarray(w, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if w.shape != x.shape:
        raise ValueError(f"length mismatch: {w.shape} vs {x.shape}")
    wq, xq = ar.const(w), ar.const(x)
    g = ar.gamma(gamma)
    s = ar.add(wq, xq)
    d = ar.sub(wq, xq)
    first = np.concatenate([s, ar.neg(s)], axis=-1)
    second = np.concatenate([d, ar.neg(d)], axis=-1)
    z1 = mp_solve(first, g, ar, rounds).z
    z2 = mp_solve(second, g, ar, rounds).z
    return ar.to_real(ar.sub(z1, z2))


def scatter_rows(n_pairs=1000, dims=64, gamma=6.0, seed=0, ar=None):
    """Random pairs uniform in [-1, 1]; returns an (n, 3) array of
    exact, mp and lse inner products."""
    rng = np.random.default_rng(seed)
    w = rng.uniform(-1.0, 1.0, (n_pairs, dims))
    x = rng.uniform(-1.0, 1.0, (n_pairs, dims))
    exact = inner_product_exact(w, x)
    mp = inner_product_mp(w, x, gamma, ar=ar)
    lse = inner_product_lse(w, x, gamma)
    return np.column_stack([exact, mp, lse])


def scatter_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["exact", "mp", "lse"])
    for e, m, l in rows:
        writer.writerow([repr(float(e)), repr(float(m)), repr(float(l))])
    return buf.getvalue()


__all__ = [
    "DifferentialVector",
    "encode_differential",
    "inner_product_exact",
    "inner_product_lse",
    "inner_product_mp",
    "scatter_rows",
    "scatter_csv",
    "FixedArithmetic",
]
