"""Full-batch gradient descent on the absolute cost, with gamma annealing.

Per sample the gradient of ``|y+ - p+| + |y- - p-|`` is assembled from the
indicator bits of the forward trace.  With h = 1 - 1/|S| (0 or 1/2, since
the normalizing MP has two inputs):

    dp+/dw+ = h [I(z+) A / |S_p| - C / |S_n|]     A = 1(w+ + K+ > z+)
    dp-/dw+ = h [I(z-) C / |S_n| - A / |S_p|]     C = 1(w+ + K- > z-)
    dp+/dw- = h [I(z+) B / |S_p| - D / |S_n|]     B = 1(w- + K- > z+)
    dp-/dw- = h [I(z-) D / |S_n| - B / |S_p|]     D = 1(w- + K+ > z-)
    dp+/db+ =  h I(z+) Ib+ / |S_p|,   dp-/db+ = -h Ib+ / |S_p|
    dp-/db- =  h I(z-) Ib- / |S_n|,   dp+/db- = -h Ib- / |S_n|

In fixed point the reciprocals are right shifts by the priority-encoded
set sizes and the sign factors are conditional negations, so training
performs no multiplications either.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .arith import FloatArithmetic
from .fxp import priority_encode
from .kernel_machine import (
    InferenceTrace,
    ModelParams,
    StoredVectors,
    forward_from_kernel,
    kernel_matrix,
    predict,
)
from .algebra import encode_differential
from .mp_core import GammaParams


@dataclass(frozen=True)
class TrainConfig:
    eta_shift: int = 9
    gamma1_init: float = 1.0
    epsilon: float = 2.0 ** -4
    delta: float = 2.0 ** -4
    iterations: int = 100
    gamma_min: float = 2.0 ** -4

    def __post_init__(self):
        if self.eta_shift < 0:
            raise ValueError("eta_shift must be >= 0")
        if self.epsilon < 0 or self.delta < 0:
            raise ValueError("epsilon and delta must be >= 0")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.gamma_min <= 0 or self.gamma1_init < self.gamma_min:
            raise ValueError("need 0 < gamma_min <= gamma1_init")


@dataclass
class LabelPair:
    y_plus: np.ndarray
    y_minus: np.ndarray

    def __post_init__(self):
        self.y_plus = np.asarray(self.y_plus, dtype=np.int64)
        self.y_minus = np.asarray(self.y_minus, dtype=np.int64)
        ok = np.isin(self.y_plus, (0, 1)) & (self.y_plus + self.y_minus == 1)
        if not np.all(ok):
            raise ValueError("labels must be one-hot binary pairs")

    @classmethod
    def from_binary(cls, labels):
        labels = np.asarray(labels)
        if not np.all(np.isin(labels, (0, 1))):
            raise ValueError("labels must be 0 or 1")
        return cls(labels.astype(np.int64), 1 - labels.astype(np.int64))


@dataclass
class GradientAccumulator:
    dw_plus: np.ndarray
    dw_minus: np.ndarray
    db_plus: object
    db_minus: object

    @classmethod
    def zeros(cls, count, ar):
        return cls(ar.zeros(count), ar.zeros(count), ar.zeros(()), ar.zeros(()))


def cost(p_plus, p_minus, y_plus, y_minus):
    """Absolute cost summed over samples."""
    p_plus, p_minus = np.asarray(p_plus, float), np.asarray(p_minus, float)
    return float(np.sum(np.abs(np.asarray(y_plus) - p_plus)
                        + np.abs(np.asarray(y_minus) - p_minus)))


def _reciprocal(count, ar):
    """1/|set| in the accumulator: exact in float, 2**-P in fixed point."""
    count = np.asarray(count)
    if isinstance(ar, FloatArithmetic):
        return 1.0 / count
    return ar.acc_pow2(priority_encode(count))


def sample_gradients(trace: InferenceTrace, labels: LabelPair, ar=None) -> GradientAccumulator:
    """Per-sample dE/dparam terms (leading axis M) in accumulator units."""
    if ar is None:
        ar = FloatArithmetic()
    yp = np.asarray(labels.y_plus, dtype=float)
    yn = np.asarray(labels.y_minus, dtype=float)
    pp, pn = np.asarray(trace.p_plus), np.asarray(trace.p_minus)
    s_plus = np.sign(pp - yp)  # comparator outputs
    s_minus = np.sign(pn - yn)

    # h/|S_p| and h/|S_n|; h = 1/2 when both normalizer inputs are active, else 0
    both = np.asarray(trace.s_count) >= 2
    q = ar.select(both, ar.shr(_reciprocal(trace.sp_count, ar), 1))
    r = ar.select(both, ar.shr(_reciprocal(trace.sn_count, ar), 1))
    q, r = np.asarray(q), np.asarray(r)
    izp, izn = np.asarray(trace.i_zp), np.asarray(trace.i_zn)

    def combine(own_p, own_n):
        # own_p: membership in S_p, own_n: membership in S_n, both (M, C)
        qa = ar.select(own_p, q[:, None])
        rc = ar.select(own_n, r[:, None])
        dpp = ar.wsub(ar.select(izp[:, None], qa), rc)
        dpn = ar.wsub(ar.select(izn[:, None], rc), qa)
        return _signed_sum(dpp, dpn, s_plus[:, None], s_minus[:, None], ar)

    dw_plus = combine(trace.i_wp_kp, trace.i_wp_km)
    dw_minus = combine(trace.i_wm_km, trace.i_wm_kp)

    bq = ar.select(trace.i_bp, q)
    br = ar.select(trace.i_bn, r)
    # the cross terms reach the other output through the normalizer z
    db_plus = _signed_sum(ar.select(izp, bq), ar.wsub(0, bq), s_plus, s_minus, ar)
    db_minus = _signed_sum(ar.wsub(0, br), ar.select(izn, br), s_plus, s_minus, ar)
    return GradientAccumulator(dw_plus, dw_minus, db_plus, db_minus)


def _signed_sum(dpp, dpn, s_plus, s_minus, ar):
    """sgn+ * dpp + sgn- * dpn with sgn in {-1, 0, 1} as mux/negate."""
    a = ar.select(s_plus != 0, ar.negate_where(s_plus < 0, dpp))
    b = ar.select(s_minus != 0, ar.negate_where(s_minus < 0, dpn))
    return ar.wadd(a, b)


def accumulate(grads: GradientAccumulator, ar) -> GradientAccumulator:
    """Sum per-sample terms over the batch (sample order; integer sums are exact)."""
    return GradientAccumulator(ar.wsum(grads.dw_plus, axis=0), ar.wsum(grads.dw_minus, axis=0),
                               ar.wsum(grads.db_plus, axis=0), ar.wsum(grads.db_minus, axis=0))


def update_params(params: ModelParams, acc: GradientAccumulator, cfg: TrainConfig, ar=None) -> ModelParams:
    """param <- param - (grad >> eta_shift), saturating."""
    if ar is None:
        ar = FloatArithmetic()
    k = cfg.eta_shift
    return ModelParams(
        ar.sub(params.w_plus, ar.acc_to_datapath(acc.dw_plus, k)),
        ar.sub(params.w_minus, ar.acc_to_datapath(acc.dw_minus, k)),
        ar.sub(params.b_plus, ar.acc_to_datapath(acc.db_plus, k)),
        ar.sub(params.b_minus, ar.acc_to_datapath(acc.db_minus, k)),
        params.gamma1,
    )


def anneal_gamma(e_prev, e_curr, gamma1, cfg: TrainConfig):
    """Decrease gamma1 by epsilon when the cost improved by more than delta."""
    if e_prev - e_curr > cfg.delta:
        return max(gamma1 - cfg.epsilon, cfg.gamma_min)
    return gamma1


@dataclass
class LogRow:
    iteration: int
    cost: float
    gamma1: float
    accuracy: float


@dataclass
class FitResult:
    params: ModelParams
    log: list = field(default_factory=list)

    @property
    def costs(self):
        return [row.cost for row in self.log]


def fit(features, labels, stored: StoredVectors, cfg: TrainConfig = TrainConfig(),
        gamma2: float = 0.03125, ar=None, params: ModelParams | None = None) -> FitResult:
    """Train on normalized ``features`` (M, d) with binary ``labels``.

    Each iteration: forward every sample, record the cost, accumulate the
    gradient over the whole batch, update, then anneal gamma1 from the
    cost history.  The kernel matrix does not depend on the parameters and is
    computed once.
    """
    if ar is None:
        ar = FloatArithmetic()
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if features.shape[0] == 0:
        raise ValueError("empty dataset")
    if not isinstance(labels, LabelPair):
        labels = LabelPair.from_binary(labels)
    if params is None:
        params = ModelParams.zeros(stored.count, ar, cfg.gamma1_init)
    x = encode_differential(features, ar)
    km = kernel_matrix(x, stored, gamma2, ar)
    return fit_kernel(km, labels, cfg, ar, params)


def fit_kernel(km, labels: LabelPair, cfg: TrainConfig, ar, params: ModelParams) -> FitResult:
    result = FitResult(params.copy())
    gamma1 = float(ar.to_real(params.gamma1))
    e_prev = None
    for tau in range(1, cfg.iterations + 1):
        params = result.params
        params.gamma1 = ar.gamma(gamma1)
        trace = forward_from_kernel(km, params, ar)
        e = cost(trace.p_plus, trace.p_minus, labels.y_plus, labels.y_minus)
        acc = float(np.mean(predict(trace).label == labels.y_plus))
        result.log.append(LogRow(tau, e, gamma1, acc))
        grads = accumulate(sample_gradients(trace, labels, ar), ar)
        result.params = update_params(params, grads, cfg, ar)
        if e_prev is not None:
            gamma1 = anneal_gamma(e_prev, e, gamma1, cfg)
        e_prev = e
    result.params.gamma1 = ar.gamma(gamma1)
    return result


def evaluate(features, labels, stored: StoredVectors, params: ModelParams,
             gamma2: float, ar) -> float:
    """Accuracy of a trained model on normalized features."""
    labels = labels if isinstance(labels, LabelPair) else LabelPair.from_binary(labels)
    x = encode_differential(np.atleast_2d(features), ar)
    trace = forward_from_kernel(kernel_matrix(x, stored, gamma2, ar), params, ar)
    return float(np.mean(predict(trace).label == labels.y_plus))


__all__ = [
    "TrainConfig", "LabelPair", "GradientAccumulator", "cost", "sample_gradients",
    "accumulate", "update_params", "anneal_gamma", "fit", "fit_kernel", "evaluate",
    "FitResult", "LogRow", "GammaParams",
]
