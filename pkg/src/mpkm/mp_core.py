"""Margin propagation: z such that sum_i [x_i - z]_+ = gamma.

Two solvers are provided.  :func:`mp_exact` is the float reference (sort,
prefix sums, closed form on the self-consistent active set).
:func:`mp_newton` is the hardware recursion

    z <- z + (sum_i [x_i - z]_+ - gamma) >> P,   P = priority_encode(|S|)

run for a fixed number of rounds in either arithmetic.  Both operate along
the last axis, so a batch of independent MPs is one call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arith import FixedArithmetic, FloatArithmetic
from .fxp import AUDIT, FxWord, priority_encode


@dataclass(frozen=True)
class MPConfig:
    gamma: float = 1.0
    rounds: int = 10
    convention: str = "plain"
    init: str = "top2"

    def __post_init__(self):
        g = self.gamma.value if isinstance(self.gamma, FxWord) else self.gamma
        if not np.all(np.asarray(g) > 0):
            raise ValueError("gamma must be > 0")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.convention not in ("plain", "shifted"):
            raise ValueError(f"unknown convention {self.convention!r}")
        if self.init not in ("top2", "max"):
            raise ValueError(f"unknown init {self.init!r}")


@dataclass(frozen=True)
class GammaParams:
    gamma1: float = 1.0
    gamma2: float = 0.03125
    gamma_n: float = 1.0

    def __post_init__(self):
        if self.gamma_n != 1.0:
            raise ValueError("gamma_n is fixed at 1")
        if self.gamma1 <= 0 or self.gamma2 <= 0:
            raise ValueError("gamma1 and gamma2 must be > 0")


@dataclass
class MPResult:
    """Solution of one (or a batch of) MP evaluations.

    ``val_signs`` is sign(x_i - z) at the final iterate: +1 contributes to
    the rectified sum, 0 is a tie, -1 is clamped away.
    """

    z: object
    active_count: object
    active_mask: np.ndarray
    val_signs: np.ndarray

    @property
    def z_real(self):
        z = self.z.value if isinstance(self.z, FxWord) else self.z
        return np.asarray(z, dtype=np.float64)


def mp_exact(x, gamma) -> MPResult:
    """Reverse water-filling: sort descending, grow the active set until
    the closed form ``(sum_{S} x - gamma) / |S|`` drops below the next input."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] == 0:
        raise ValueError("mp_exact needs at least one input")
    gamma = np.asarray(gamma, dtype=np.float64)
    if np.any(gamma <= 0):
        raise ValueError("gamma must be > 0")
    u = -np.sort(-x, axis=-1)
    css = np.cumsum(u, axis=-1) - gamma[..., None]
    k = np.arange(1, x.shape[-1] + 1)
    rho = np.count_nonzero(u * k > css, axis=-1)
    z = np.take_along_axis(css, (rho - 1)[..., None], axis=-1)[..., 0] / rho
    return _result(x, z)


def _result(x, z):
    diff = x - np.asarray(z)[..., None]
    mask = diff > 0
    count = np.count_nonzero(mask, axis=-1)
    z = float(z) if np.ndim(z) == 0 else z
    count = int(count) if np.ndim(count) == 0 else count
    return MPResult(z, count, mask, np.sign(diff).astype(np.int8))


def newton_solve(x, gamma, ar, rounds=10, init="top2"):
    """Shift-divide Newton iteration in arithmetic ``ar``.

    ``x`` has shape (..., N) in ``ar``'s representation and ``gamma`` is a
    scalar or (...,) array in the same representation.  Returns
    ``(z, active_count, active_mask, val_signs)``.

    The start point is a lower bound on the root.  ``max`` starts at
    max(x) - gamma; ``top2`` additionally takes the two-input closed form
    (x_1 + x_2 - gamma) / 2, which is also a lower bound and costs one add
    and one shift (truncating, so the bound survives quantization).  Since
    2**P > |S| each step undershoots, so the iterate climbs toward the root;
    in fixed point the step shift rounds, which leaves at most about half a
    word of residual error instead of the up-to-two words a truncating
    step stalls at.
    """
    x = np.asarray(x)
    n = x.shape[-1]
    gamma = np.asarray(gamma)
    top1, top2 = ar.max_top2(x)
    z = ar.sub(top1, gamma)
    if init == "top2" and n >= 2:
        pair = ar.shr(ar.wsub(ar.wadd(top1, top2), gamma), 1, rounding=False)
        z = ar.maximum(z, ar.narrow(pair))
    for _ in range(rounds):
        diff = ar.sub(x, z[..., None])
        pos = ar.relu(diff)
        mask = diff > 0  # same comparator as relu
        count = ar.popcount(mask)
        resid = ar.wsub(ar.wsum(pos), gamma)
        # an empty set (possible after a rounding overshoot) encodes like |S| = 1
        step = ar.shr(resid, priority_encode(np.maximum(count, 1)))
        z = ar.add(z, ar.narrow(step))
    diff = np.subtract(x, z[..., None])
    mask = diff > 0
    count = np.count_nonzero(mask, axis=-1)
    if isinstance(ar, FixedArithmetic):
        AUDIT.record_mp(x.size, count.sum())
    return z, count, mask, np.sign(diff).astype(np.int8)


def mp_newton(x, cfg: MPConfig = MPConfig()) -> MPResult:
    """Run ``cfg.rounds`` Newton rounds.

    With ``convention="shifted"`` the inputs are offset by +gamma first, i.e.
    the solver returns the root of sum_i [x_i - z + gamma]_+ = gamma, which
    equals the plain root plus gamma.

    ``x`` as an :class:`FxWord` selects the audited fixed-point datapath in
    its format (gamma is quantized into it); a plain float array selects the
    float twin with the same shift-approximated division.
    """
    gamma = cfg.gamma.value if isinstance(cfg.gamma, FxWord) else cfg.gamma
    if isinstance(x, FxWord):
        ar = FixedArithmetic(x.fmt)
        xr = np.atleast_1d(np.asarray(x.raw, dtype=np.int64))
        g = ar.gamma(gamma)
        if cfg.convention == "shifted":
            xr = ar.add(xr, g)
        z, count, mask, signs = newton_solve(xr, g, ar, cfg.rounds, cfg.init)
        zw = FxWord(int(z) if np.ndim(z) == 0 else z, x.fmt)
        return MPResult(zw, _scalar(count), mask, signs)
    ar = FloatArithmetic()
    xf = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if cfg.convention == "shifted":
        xf = xf + gamma
    z, count, mask, signs = newton_solve(xf, np.asarray(gamma, float), ar,
                                         cfg.rounds, cfg.init)
    return MPResult(_scalar(z), _scalar(count), mask, signs)


def _scalar(v):
    v = np.asarray(v)
    return v.item() if v.ndim == 0 else v


def mp_solve(x, gamma, ar, rounds=10, init="top2") -> MPResult:
    """Dispatch used by the kernel machine: exact in float mode unless the
    float arithmetic asks for Newton, always Newton in fixed point."""
    if isinstance(ar, FloatArithmetic) and ar.solver == "exact":
        return mp_exact(x, gamma)
    z, count, mask, signs = newton_solve(x, gamma, ar, rounds, init)
    return MPResult(z, count, mask, signs)


def mp_partial(x, gamma, i, tol=0.0):
    """dz/dx_i = 1(x_i > z) / |S|.

    Returns ``(value, tie)``.  At a tie (|x_i - z| <= tol) the derivative does
    not exist; the subgradient 0 is returned with ``tie=True``.
    """
    res = mp_exact(x, gamma)
    xi = float(np.asarray(x, dtype=np.float64)[i])
    if abs(xi - res.z) <= tol:
        return 0.0, True
    if xi > res.z:
        return 1.0 / res.active_count, False
    return 0.0, False
