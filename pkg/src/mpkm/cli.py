"""``mpkm`` command line: train, eval, predict, sweep-bits, scatter, cost.

Every command writes CSV or JSON to ``--out`` (stdout by default).  Options
may also come from a flat ``key = value`` file given with ``--config``;
explicit flags win over the file, which wins over built-in defaults.
Failures exit nonzero with a one-line JSON error on stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .algebra import encode_differential, scatter_csv, scatter_rows
from .arith import make_arithmetic
from .costmodel import CostParams, EnergyConstants, audit_report, cost_json
from .datasets import (
    Dataset,
    apply_ranges,
    fit_ranges,
    kfold,
    load_csv,
    select_stored,
    truncate,
)
from .fxp import audit_counters, reset_audit
from .kernel_machine import (
    ModelParams,
    StoredVectors,
    forward,
    kernel_matrix,
    load_model,
    predict,
    save_model,
)
from .mp_core import GammaParams
from .trainer import LabelPair, TrainConfig, fit_kernel

DEFAULT_STORED = 256
DEFAULT_BITS = tuple(range(8, 17))


class UsageError(ValueError):
    """Bad option combination detected after parsing."""


def _bits_list(text):
    out = [int(t) for t in str(text).replace(",", " ").split()]
    if not out:
        raise argparse.ArgumentTypeError("empty bit-width list")
    return out


def _columns(text):
    return tuple(t.strip() for t in str(text).split(",") if t.strip())


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value file (flags override it)")
    common.add_argument("--out", help="output file (default stdout)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--mode", choices=("fixed", "float"), default="fixed")
    common.add_argument("--bits", type=int, default=12, help="datapath word length")
    common.add_argument("--frac-bits", type=int, default=None,
                        help="fraction bits (default bits - 4)")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--dataset", help="CSV with a header row")
    data.add_argument("--label-column", default="-1", help="name or index (default last)")
    data.add_argument("--ignore-columns", type=_columns, default=(),
                      help="comma-separated columns to drop")
    data.add_argument("--truncate", type=int, default=256,
                      help="seeded random subset size, 0 keeps all rows")

    train = argparse.ArgumentParser(add_help=False)
    d = TrainConfig()
    train.add_argument("--gamma1", type=float, default=d.gamma1_init)
    train.add_argument("--gamma2", type=float, default=GammaParams().gamma2)
    train.add_argument("--eta-shift", type=int, default=d.eta_shift)
    train.add_argument("--epsilon", type=float, default=d.epsilon)
    train.add_argument("--delta", type=float, default=d.delta)
    train.add_argument("--iters", type=int, default=d.iterations)
    train.add_argument("--stored-count", type=int, default=None,
                       help=f"stored vectors (default min({DEFAULT_STORED}, training rows))")
    train.add_argument("--stored-policy", choices=("head", "random"), default="head")

    parser = argparse.ArgumentParser(prog="mpkm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"mpkm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common, data, train],
                       help="train on a dataset, write model and cost log")
    p.add_argument("--model", help="model file to write")

    p = sub.add_parser("eval", parents=[common, data, train],
                       help="k-fold accuracy, or accuracy of --model on --dataset")
    p.add_argument("--model", help="evaluate this model instead of k-fold training")
    p.add_argument("--folds", type=int, default=4)

    p = sub.add_parser("predict", parents=[common, data],
                       help="labels for each row of --dataset under --model")
    p.add_argument("--model")

    p = sub.add_parser("sweep-bits", parents=[common, data, train],
                       help="k-fold accuracy per datapath word length")
    p.add_argument("--folds", type=int, default=4)
    p.add_argument("--bit-list", type=_bits_list, default=list(DEFAULT_BITS),
                   help="word lengths, e.g. '8,10,12' (default 8..16)")

    p = sub.add_parser("scatter", parents=[common],
                       help="exact / MP / LSE inner products of random pairs")
    p.add_argument("--pairs", type=int, default=1000)
    p.add_argument("--dims", type=int, default=64)
    p.add_argument("--gamma", type=float, default=6.0)

    p = sub.add_parser("cost", parents=[common],
                       help="symbolic and measured energy report (JSON)")
    p.add_argument("--M", type=int, default=256, help="stored vectors / matrix size")
    p.add_argument("--R", type=int, default=10, help="MP rounds")
    p.add_argument("--dims", type=int, default=32, help="feature dims of the measured run")
    p.add_argument("--c-mult", type=float, default=EnergyConstants().c_mult)
    p.add_argument("--c-add", type=float, default=EnergyConstants().c_add)
    p.add_argument("--c-cmp", type=float, default=EnergyConstants().c_cmp)
    return parser


def read_config(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sub = parser._subparsers._group_actions[0].choices[args.command]
        actions = {a.dest: a for a in sub._actions}
        cfg = read_config(args.config)
        defaults = {}
        for key, raw in cfg.items():
            if key not in actions or key in ("config", "help"):
                raise UsageError(f"{args.config}: unknown key {key!r} for {args.command}")
            act = actions[key]
            if act.choices is not None and raw not in act.choices:
                raise UsageError(f"{args.config}: {key} must be one of {sorted(act.choices)}")
            defaults[key] = act.type(raw) if act.type else raw
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


@dataclass
class RunConfig:
    """Validated settings shared by the dataset commands."""

    mode: str
    bits: int
    frac_bits: int | None
    gammas: GammaParams
    train: TrainConfig
    seed: int
    stored_count: int | None
    stored_policy: str

    @classmethod
    def from_args(cls, a):
        if a.frac_bits is not None and not 0 <= a.frac_bits < a.bits:
            raise UsageError("--frac-bits must be in [0, bits)")
        if a.stored_count is not None and a.stored_count < 1:
            raise UsageError("--stored-count must be >= 1")
        cfg = TrainConfig(eta_shift=a.eta_shift, gamma1_init=a.gamma1, epsilon=a.epsilon,
                          delta=a.delta, iterations=a.iters,
                          gamma_min=min(TrainConfig().gamma_min, a.gamma1))
        return cls(a.mode, a.bits, a.frac_bits, GammaParams(a.gamma1, a.gamma2), cfg,
                   a.seed, a.stored_count, a.stored_policy)

    def arithmetic(self, bits=None):
        bits = self.bits if bits is None else bits
        frac = self.frac_bits if bits == self.bits else None
        return make_arithmetic(self.mode, bits, frac)


def _load_dataset(a) -> Dataset:
    if not a.dataset:
        raise UsageError(f"{a.command} needs --dataset")
    ds = load_csv(a.dataset, a.label_column, a.ignore_columns)
    if a.truncate < 0:
        raise UsageError("--truncate must be >= 0")
    return truncate(ds, a.truncate, a.seed) if a.truncate else ds


@dataclass
class TrainedModel:
    params: ModelParams
    stored: StoredVectors
    ranges: tuple
    log: list


def train_on(ds: Dataset, run: RunConfig, ar) -> TrainedModel:
    """Normalize on ``ds``, pick stored vectors, fit."""
    ranges = fit_ranges(ds.features)
    feats = apply_ranges(ds.features, ranges)
    count = run.stored_count
    if count is None:
        count = min(DEFAULT_STORED, len(ds))
    idx = select_stored(feats, count, run.stored_policy, run.seed)
    stored = StoredVectors.from_features(feats[idx], ar)
    km = kernel_matrix(encode_differential(feats, ar), stored, run.gammas.gamma2, ar)
    params = ModelParams.zeros(stored.count, ar, run.train.gamma1_init)
    res = fit_kernel(km, LabelPair.from_binary(ds.labels), run.train, ar, params)
    return TrainedModel(res.params, stored, ranges, res.log)


def accuracy_on(model: TrainedModel, ds: Dataset, gamma2, ar) -> float:
    feats = apply_ranges(ds.features, model.ranges)
    trace = forward(feats, model.stored, model.params, GammaParams(1.0, gamma2), ar)
    return float(np.mean(np.atleast_1d(predict(trace).label) == ds.labels))


def kfold_accuracy(ds: Dataset, run: RunConfig, ar, k: int):
    """(train_acc, test_acc) per fold; deterministic given the seed."""
    rows = []
    with warnings.catch_warnings():
        warnings.simplefilter("always")
        spec = kfold(len(ds), k, run.seed)
    for train_idx, test_idx in spec:
        tr, te = ds.subset(train_idx), ds.subset(test_idx)
        model = train_on(tr, run, ar)
        rows.append((accuracy_on(model, tr, run.gammas.gamma2, ar),
                     accuracy_on(model, te, run.gammas.gamma2, ar)))
    return rows


def _check_audit(command):
    counts = audit_counters()
    if counts.multiplies != 0:
        raise AssertionError(f"{command}: {counts.multiplies} multiplies on the MP datapath")
    return counts


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _fmt(v):
    return f"{v:.6f}" if isinstance(v, float) else v


def cmd_train(a) -> str:
    if not a.model:
        raise UsageError("train needs --model")
    run = RunConfig.from_args(a)
    ds = _load_dataset(a)
    ar = run.arithmetic()
    reset_audit()
    model = train_on(ds, run, ar)
    _check_audit("train")
    save_model(a.model, model.params, model.stored,
               GammaParams(float(ar.to_real(model.params.gamma1)), run.gammas.gamma2), ar,
               ranges=model.ranges)
    return _csv(["iteration", "cost", "gamma1", "accuracy"],
                [(r.iteration, _fmt(r.cost), _fmt(r.gamma1), _fmt(r.accuracy))
                 for r in model.log])


def cmd_eval(a) -> str:
    run = RunConfig.from_args(a)
    ds = _load_dataset(a)
    reset_audit()
    if a.model:
        lm = load_model(a.model)
        if lm.stored.dims != ds.dims:
            raise UsageError(f"model expects {lm.stored.dims} features, dataset has {ds.dims}")
        ranges = lm.ranges if lm.ranges is not None else fit_ranges(ds.features)
        model = TrainedModel(lm.params, lm.stored, ranges, [])
        acc = accuracy_on(model, ds, lm.gammas.gamma2, lm.ar)
        _check_audit("eval")
        return _csv(["fold", "train_accuracy", "test_accuracy"], [("model", "", _fmt(acc))])
    if a.folds < 1:
        raise UsageError("--folds must be >= 1")
    rows = kfold_accuracy(ds, run, run.arithmetic(), a.folds)
    _check_audit("eval")
    tr, te = np.mean(rows, axis=0)
    out = [(i, _fmt(r[0]), _fmt(r[1])) for i, r in enumerate(rows)]
    out.append(("mean", _fmt(float(tr)), _fmt(float(te))))
    return _csv(["fold", "train_accuracy", "test_accuracy"], out)


def load_feature_rows(a, dims):
    """Feature matrix from ``--dataset`` for prediction (label column optional)."""
    if not a.dataset:
        raise UsageError("predict needs --dataset")
    frame = pd.read_csv(a.dataset, skipinitialspace=True)
    frame = frame.drop(columns=list(a.ignore_columns))
    if frame.shape[1] == dims + 1:
        lc = a.label_column
        name = lc if lc in frame.columns else frame.columns[int(lc)]
        frame = frame.drop(columns=[name])
    if frame.shape[1] != dims:
        raise UsageError(f"model expects {dims} features, file has {frame.shape[1]} columns")
    feats = frame.apply(pd.to_numeric, errors="coerce")
    bad = np.flatnonzero(feats.isna().any(axis=1).to_numpy())
    if bad.size:
        raise UsageError(f"{a.dataset}: row {int(bad[0]) + 2}: missing or non-numeric value")
    return feats.to_numpy(dtype=np.float64)


def cmd_predict(a) -> str:
    if not a.model:
        raise UsageError("predict needs --model")
    lm = load_model(a.model)
    feats = load_feature_rows(a, lm.stored.dims)
    ranges = lm.ranges if lm.ranges is not None else fit_ranges(feats)
    x = apply_ranges(feats, ranges)
    reset_audit()
    trace = forward(x, lm.stored, lm.params, lm.gammas, lm.ar)
    _check_audit("predict")
    pred = predict(trace)
    rows = zip(np.atleast_1d(pred.label), np.atleast_1d(trace.p_plus),
               np.atleast_1d(trace.p_minus), np.atleast_1d(pred.tie).astype(int))
    return _csv(["label", "p_plus", "p_minus", "tie"],
                [(int(l), repr(float(pp)), repr(float(pn)), t) for l, pp, pn, t in rows])


def cmd_sweep_bits(a) -> str:
    if a.mode != "fixed":
        raise UsageError("sweep-bits runs the fixed-point datapath; drop --mode float")
    run = RunConfig.from_args(a)
    ds = _load_dataset(a)
    reset_audit()
    out = []
    for bits in a.bit_list:
        if bits < 7:
            raise UsageError(f"word length {bits} too short (need >= 7)")
        rows = kfold_accuracy(ds, run, run.arithmetic(bits), a.folds)
        tr, te = np.mean(rows, axis=0)
        out.append((bits, _fmt(float(tr)), _fmt(float(te))))
    _check_audit("sweep-bits")
    return _csv(["total_bits", "train_accuracy", "test_accuracy"], out)


def cmd_scatter(a) -> str:
    if a.pairs < 1 or a.dims < 1 or a.gamma <= 0:
        raise UsageError("need pairs >= 1, dims >= 1 and gamma > 0")
    ar = make_arithmetic(a.mode, a.bits, a.frac_bits)
    return scatter_csv(scatter_rows(a.pairs, a.dims, a.gamma, a.seed, ar))


def cmd_cost(a) -> str:
    """Symbolic costs at M plus a measured fixed-point forward pass
    (one random input against M random stored vectors)."""
    e = EnergyConstants(a.c_mult, a.c_add, a.c_cmp)
    if a.M < 1 or a.R < 1 or a.dims < 1:
        raise UsageError("need M, R and dims >= 1")
    if a.R != 10:
        raise UsageError("the datapath runs 10 MP rounds; only --R 10 can be measured")
    rng = np.random.default_rng(a.seed)
    ar = make_arithmetic("fixed", a.bits, a.frac_bits)
    stored = StoredVectors.from_features(rng.uniform(-1, 1, (a.M, a.dims)), ar)
    params = ModelParams.zeros(a.M, ar)
    x = rng.uniform(-1, 1, a.dims)
    reset_audit()
    forward(x, stored, params, GammaParams(), ar)
    report = audit_report(audit_counters(), e)
    f = report.measured().get("sparsity", 1.0)
    return cost_json(CostParams(a.M, a.R, f), report, e) + "\n"


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "sweep-bits": cmd_sweep_bits,
    "scatter": cmd_scatter,
    "cost": cmd_cost,
}


def _fail(command, exc, code):
    err = {"error": type(exc).__name__, "command": command, "message": str(exc)}
    print(json.dumps(err), file=sys.stderr)
    return code


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except UsageError as exc:
        return _fail(None, exc, 2)
    except OSError as exc:
        return _fail(None, exc, 1)
    try:
        text = COMMANDS[args.command](args)
    except UsageError as exc:
        return _fail(args.command, exc, 2)
    except AssertionError as exc:
        return _fail(args.command, exc, 3)
    except (ValueError, OSError, KeyError) as exc:
        return _fail(args.command, exc, 1)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
