"""MP kernel and the kernel-machine forward pass.

For an input ``x`` and a stored vector ``x_s`` (both differentially encoded)
the kernel is

    K- = MP([2 xs+, 2 xs-, 2 x+, 2 x-, xs+ + x- + 2, xs- + x+ + 2], gamma2)

over all dimensions, and K+ = -K-.  The layer then computes

    z+ = MP([w+ + K+, w- + K-, b+], gamma1)
    z- = MP([w+ + K-, w- + K+, b-], gamma1)
    z  = MP([z+, z-], 1)
    p+ = [z+ - z]_+,  p- = [z- - z]_+

All functions work on batches: inputs of shape (M, d) give traces whose
fields carry a leading M axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .algebra import DifferentialVector, encode_differential
from .arith import FixedArithmetic, FloatArithmetic
from .fxp import FxFormat
from .mp_core import GammaParams, mp_solve

MODEL_MAGIC = "mpkm-model"
MODEL_VERSION = 1


@dataclass
class StoredVectors:
    """Stored samples in differential form, rows (count, dims)."""

    data: DifferentialVector
    source: np.ndarray  # normalized real features, kept for the model file

    @property
    def count(self) -> int:
        return self.source.shape[0]

    @property
    def dims(self) -> int:
        return self.source.shape[1]

    @classmethod
    def from_features(cls, features, ar):
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        enc = encode_differential(features, ar)
        enc.check(ar)
        return cls(enc, features)


@dataclass
class KernelVector:
    k_minus: np.ndarray

    @property
    def k_plus(self):
        return -np.asarray(self.k_minus)


@dataclass
class ModelParams:
    """Trainable state in the arithmetic's native representation
    (raw int64 words for fixed point, float64 otherwise)."""

    w_plus: np.ndarray
    w_minus: np.ndarray
    b_plus: object
    b_minus: object
    gamma1: object

    @classmethod
    def zeros(cls, count, ar, gamma1=1.0):
        return cls(ar.zeros(count), ar.zeros(count), ar.zeros(()), ar.zeros(()),
                   ar.gamma(gamma1))

    def copy(self):
        return replace(self, w_plus=np.array(self.w_plus), w_minus=np.array(self.w_minus),
                       b_plus=np.array(self.b_plus), b_minus=np.array(self.b_minus),
                       gamma1=np.array(self.gamma1))

    def to_real(self, ar):
        return {
            "w_plus": ar.to_real(self.w_plus),
            "w_minus": ar.to_real(self.w_minus),
            "b_plus": float(ar.to_real(self.b_plus)),
            "b_minus": float(ar.to_real(self.b_minus)),
            "gamma1": float(ar.to_real(self.gamma1)),
        }


@dataclass
class InferenceTrace:
    """Forward-pass values (decoded to reals) and every indicator the
    trainer needs.  ``i_wp_kp`` etc. are (M, count) masks; ``sp_count``
    and ``sn_count`` are active-set sizes of the z+ and z- MPs."""

    z_plus: np.ndarray
    z_minus: np.ndarray
    z: np.ndarray
    p_plus: np.ndarray
    p_minus: np.ndarray
    sp_count: np.ndarray
    sn_count: np.ndarray
    s_count: np.ndarray
    i_zp: np.ndarray
    i_zn: np.ndarray
    i_wp_kp: np.ndarray  # w+ + K+ in S_p
    i_wm_km: np.ndarray  # w- + K- in S_p
    i_bp: np.ndarray  # b+ in S_p
    i_wp_km: np.ndarray  # w+ + K- in S_n
    i_wm_kp: np.ndarray  # w- + K+ in S_n
    i_bn: np.ndarray  # b- in S_n
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def p(self):
        return self.p_plus - self.p_minus

    @property
    def f_mp(self):
        return self.z_plus - self.z_minus

    def __len__(self):
        return np.size(self.z)

    def sample(self, n):
        """Single-sample view of a batched trace."""
        out = {}
        for name in self.__dataclass_fields__:
            if name == "raw":
                out[name] = {k: v[n] for k, v in self.raw.items()}
            else:
                out[name] = getattr(self, name)[n]
        return InferenceTrace(**out)


def _kernel_terms(xp, xm, sp, sm, ar):
    """Six per-dimension kernel inputs; x* shaped (..., d) broadcastable."""
    two = ar.const(2.0)
    xp, xm = np.broadcast_arrays(xp, np.asarray(xm))
    sp, sm = np.broadcast_arrays(sp, np.asarray(sm))
    shape = np.broadcast_shapes(xp.shape, sp.shape)
    parts = [
        ar.shl(sp, 1),
        ar.shl(sm, 1),
        ar.shl(xp, 1),
        ar.shl(xm, 1),
        ar.add(ar.add(sp, xm), two),
        ar.add(ar.add(sm, xp), two),
    ]
    return np.concatenate([np.broadcast_to(p, shape) for p in parts], axis=-1)


def compute_kernel_minus(x: DifferentialVector, xs: DifferentialVector, gamma2, ar=None):
    """K- for one input and one stored vector (each shaped (d,))."""
    if ar is None:
        ar = FloatArithmetic()
    x.check(ar)
    xs.check(ar)
    if np.shape(x.plus) != np.shape(xs.plus):
        raise ValueError("dimension mismatch between input and stored vector")
    terms = _kernel_terms(x.plus, x.minus, xs.plus, xs.minus, ar)
    res = mp_solve(terms, ar.gamma(gamma2), ar)
    return res.z


def kernel_matrix(x: DifferentialVector, stored: StoredVectors, gamma2, ar, chunk=64):
    """K- for a batch of inputs (M, d) against all stored vectors -> (M, count)."""
    xp = np.atleast_2d(x.plus)
    xm = np.atleast_2d(x.minus)
    if xp.shape[1] != stored.dims:
        raise ValueError(f"input has {xp.shape[1]} features, model expects {stored.dims}")
    g = ar.gamma(gamma2)
    sp, sm = stored.data.plus, stored.data.minus
    out = []
    for start in range(0, xp.shape[0], chunk):
        bp = xp[start:start + chunk, None, :]
        bm = xm[start:start + chunk, None, :]
        terms = _kernel_terms(bp, bm, sp[None], sm[None], ar)
        out.append(mp_solve(terms, g, ar).z)
    return np.concatenate(out, axis=0)


def compute_kernel_vector(x: DifferentialVector, stored: StoredVectors, gamma2, ar=None):
    if ar is None:
        ar = FloatArithmetic()
    x.check(ar)
    km = kernel_matrix(DifferentialVector(np.atleast_2d(x.plus), np.atleast_2d(x.minus)),
                       stored, gamma2, ar)
    return KernelVector(km[0] if np.ndim(x.plus) == 1 else km)


def _common_grid(a, b):
    """Round both to a shared per-sample grid 2**-k with k = 50 - exponent.

    Every later step of the normalization (sum, halving, differences) is then
    exact in float64, so p+ + p- == 1 holds bit for bit.  The perturbation is
    below 2**-50 relative.
    """
    mag = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1.0)
    k = 50 - np.frexp(mag)[1]
    return np.ldexp(np.round(np.ldexp(a, k)), -k), np.ldexp(np.round(np.ldexp(b, k)), -k)


def forward_from_kernel(k_minus, params: ModelParams, ar) -> InferenceTrace:
    """Layer MPs given a precomputed (M, count) K- matrix."""
    k_minus = np.atleast_2d(k_minus)
    m, count = k_minus.shape
    if np.shape(params.w_plus) != (count,):
        raise ValueError(f"model has {np.size(params.w_plus)} weights, kernel has {count}")
    k_plus = ar.neg(k_minus)
    bp = np.broadcast_to(params.b_plus, (m, 1))
    bn = np.broadcast_to(params.b_minus, (m, 1))
    pos_in = np.concatenate([ar.add(params.w_plus, k_plus),
                             ar.add(params.w_minus, k_minus), bp], axis=1)
    neg_in = np.concatenate([ar.add(params.w_plus, k_minus),
                             ar.add(params.w_minus, k_plus), bn], axis=1)
    rp = mp_solve(pos_in, params.gamma1, ar)
    rn = mp_solve(neg_in, params.gamma1, ar)
    zp, zn = np.asarray(rp.z), np.asarray(rn.z)
    if isinstance(ar, FloatArithmetic):
        zp, zn = _common_grid(zp, zn)
    pair = np.stack([zp, zn], axis=1)
    rz = mp_solve(pair, ar.const(1.0), ar)
    z = np.asarray(rz.z)
    p_plus = ar.relu(ar.sub(zp, z))
    p_minus = ar.relu(ar.sub(zn, z))
    mp_, mn_ = rp.active_mask, rn.active_mask
    return InferenceTrace(
        z_plus=ar.to_real(zp), z_minus=ar.to_real(zn), z=ar.to_real(z),
        p_plus=ar.to_real(p_plus), p_minus=ar.to_real(p_minus),
        sp_count=np.asarray(rp.active_count), sn_count=np.asarray(rn.active_count),
        s_count=np.asarray(rz.active_count),
        i_zp=rz.active_mask[:, 0], i_zn=rz.active_mask[:, 1],
        i_wp_kp=mp_[:, :count], i_wm_km=mp_[:, count:2 * count], i_bp=mp_[:, -1],
        i_wp_km=mn_[:, :count], i_wm_kp=mn_[:, count:2 * count], i_bn=mn_[:, -1],
        raw={"p_plus": p_plus, "p_minus": p_minus},
    )


def forward(x, stored: StoredVectors, params: ModelParams, gammas: GammaParams, ar=None):
    """Full forward pass.

    ``x`` is either real features in [-1, 1] (shape (d,) or (M, d)) or an
    already encoded :class:`DifferentialVector`.  A single sample returns a
    single-sample trace.
    """
    if ar is None:
        ar = FloatArithmetic()
    single = False
    if not isinstance(x, DifferentialVector):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        x = encode_differential(np.atleast_2d(x), ar)
    else:
        single = np.ndim(x.plus) == 1
        x = DifferentialVector(np.atleast_2d(x.plus), np.atleast_2d(x.minus))
    km = kernel_matrix(x, stored, gammas.gamma2, ar)
    trace = forward_from_kernel(km, params, ar)
    return trace.sample(0) if single else trace


@dataclass(frozen=True)
class Prediction:
    label: object
    tie: object


def predict(trace: InferenceTrace) -> Prediction:
    """Positive (1) iff p+ > p-; ties report 0 with ``tie`` set."""
    p = np.asarray(trace.p_plus) - np.asarray(trace.p_minus)
    label = (p > 0).astype(np.int64)
    tie = p == 0
    if label.ndim == 0:
        return Prediction(int(label), bool(tie))
    return Prediction(label, tie)


# model file

def save_model(path, params: ModelParams, stored: StoredVectors, gammas: GammaParams, ar,
               ranges=None):
    """Write a versioned text model.

    Fixed-point models store raw integer words (bit-exact); float models
    store ``repr`` floats, which round-trip exactly as well.
    """
    lines = [f"{MODEL_MAGIC} {MODEL_VERSION}",
             f"mode {ar.mode}",
             f"dims {stored.dims}",
             f"count {stored.count}"]
    if ar.mode == "fixed":
        lines.append(f"total_bits {ar.fmt.total_bits}")
        lines.append(f"frac_bits {ar.fmt.frac_bits}")
        fmtv = lambda a: " ".join(str(int(v)) for v in np.ravel(a))  # noqa: E731
    else:
        fmtv = lambda a: " ".join(repr(float(v)) for v in np.ravel(a))  # noqa: E731
    lines += [
        f"gamma1 {fmtv(params.gamma1)}",
        f"gamma2 {repr(float(gammas.gamma2))}",
        f"gamma_n {repr(float(gammas.gamma_n))}",
        f"w_plus {fmtv(params.w_plus)}",
        f"w_minus {fmtv(params.w_minus)}",
        f"b_plus {fmtv(params.b_plus)}",
        f"b_minus {fmtv(params.b_minus)}",
    ]
    for row in stored.source:
        lines.append("stored " + " ".join(repr(float(v)) for v in row))
    if ranges is not None:
        lo, hi = ranges
        lines.append("range_min " + " ".join(repr(float(v)) for v in lo))
        lines.append("range_max " + " ".join(repr(float(v)) for v in hi))
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class LoadedModel:
    params: ModelParams
    stored: StoredVectors
    gammas: GammaParams
    ar: object
    ranges: object = None


def load_model(path) -> LoadedModel:
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith(MODEL_MAGIC):
        raise ValueError(f"{path}: not a model file")
    version = int(text[0].split()[1])
    if version != MODEL_VERSION:
        raise ValueError(f"{path}: unsupported model version {version}")
    fields_, stored_rows = {}, []
    for line in text[1:]:
        if not line.strip():
            continue
        key, _, rest = line.partition(" ")
        if key == "stored":
            stored_rows.append([float(v) for v in rest.split()])
        else:
            fields_[key] = rest.split()
    mode = fields_["mode"][0]
    if mode == "fixed":
        ar = FixedArithmetic(FxFormat(int(fields_["total_bits"][0]),
                                      int(fields_["frac_bits"][0])))
        conv = lambda v: np.array([int(t) for t in v], dtype=np.int64)  # noqa: E731
    else:
        ar = FloatArithmetic()
        conv = lambda v: np.array([float(t) for t in v], dtype=np.float64)  # noqa: E731
    count, dims = int(fields_["count"][0]), int(fields_["dims"][0])
    params = ModelParams(conv(fields_["w_plus"]), conv(fields_["w_minus"]),
                         conv(fields_["b_plus"])[0], conv(fields_["b_minus"])[0],
                         conv(fields_["gamma1"])[0])
    if params.w_plus.shape != (count,) or len(stored_rows) != count:
        raise ValueError(f"{path}: inconsistent count")
    stored = StoredVectors.from_features(np.array(stored_rows).reshape(count, dims), ar)
    gammas = GammaParams(float(ar.to_real(params.gamma1)), float(fields_["gamma2"][0]))
    ranges = None
    if "range_min" in fields_:
        ranges = (np.array(fields_["range_min"], dtype=float),
                  np.array(fields_["range_max"], dtype=float))
    return LoadedModel(params, stored, gammas, ar, ranges)
