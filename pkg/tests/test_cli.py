import json

import numpy as np
import pytest

from mpkm.cli import main
from mpkm.fxp import audit_counters
from mpkm.kernel_machine import load_model


@pytest.fixture
def csv_path(tmp_path):
    rng = np.random.default_rng(0)
    y = np.repeat([0, 1], 24)
    x = np.where(y[:, None] == 1, 2.0, -2.0) + rng.normal(0, 0.6, (48, 3))
    lines = ["f1,f2,f3,label"] + [",".join(f"{v:.4f}" for v in row) + f",{c}"
                                  for row, c in zip(x, y)]
    p = tmp_path / "toy.csv"
    p.write_text("\n".join(lines) + "\n")
    return p


def run(capsys, *args):
    code = main([str(a) for a in args])
    out, err = capsys.readouterr()
    return code, out, err


def test_train_writes_model_and_log(tmp_path, csv_path, capsys):
    model = tmp_path / "m.txt"
    code, out, _ = run(capsys, "train", "--dataset", csv_path, "--model", model, "--iters", 30)
    assert code == 0
    rows = out.strip().splitlines()
    assert rows[0] == "iteration,cost,gamma1,accuracy"
    assert len(rows) == 31
    lm = load_model(model)
    assert lm.stored.count == 48 and lm.ar.mode == "fixed"
    assert audit_counters().multiplies == 0


def test_zero_iterations_gives_zero_model(tmp_path, csv_path, capsys):
    model = tmp_path / "m.txt"
    assert run(capsys, "train", "--dataset", csv_path, "--model", model, "--iters", 0)[0] == 0
    lm = load_model(model)
    assert not lm.params.w_plus.any() and not lm.params.w_minus.any()


def test_invalid_label_column(tmp_path, csv_path, capsys):
    code, _, err = run(capsys, "train", "--dataset", csv_path, "--model", tmp_path / "m",
                       "--label-column", "nope")
    assert code != 0
    assert json.loads(err)["command"] == "train"


def test_eval_kfold(csv_path, capsys):
    code, out, _ = run(capsys, "eval", "--dataset", csv_path, "--iters", 30)
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0] == "fold,train_accuracy,test_accuracy"
    assert len(lines) == 6 and lines[-1].startswith("mean,")
    assert audit_counters().multiplies == 0


def test_eval_single_fold_warns(csv_path, capsys):
    with pytest.warns(UserWarning):
        code, out, _ = run(capsys, "eval", "--dataset", csv_path, "--folds", 1, "--iters", 5)
    assert code == 0
    fold = out.splitlines()[1].split(",")
    assert fold[1] == fold[2]


def test_eval_model_dims_mismatch(tmp_path, csv_path, capsys):
    model = tmp_path / "m.txt"
    run(capsys, "train", "--dataset", csv_path, "--model", model, "--iters", 2)
    other = tmp_path / "two.csv"
    other.write_text("a,b,y\n1,2,0\n3,4,1\n")
    code, _, err = run(capsys, "eval", "--dataset", other, "--model", model)
    assert code == 2
    assert "features" in json.loads(err)["message"]


def test_predict(tmp_path, csv_path, capsys):
    model = tmp_path / "m.txt"
    run(capsys, "train", "--dataset", csv_path, "--model", model, "--iters", 30)
    code, out, _ = run(capsys, "predict", "--dataset", csv_path, "--model", model)
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0] == "label,p_plus,p_minus,tie"
    assert len(lines) == 49


def test_sweep_bits(csv_path, capsys):
    code, out, _ = run(capsys, "sweep-bits", "--dataset", csv_path, "--bit-list", "8,12",
                       "--iters", 10)
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0] == "total_bits,train_accuracy,test_accuracy"
    twelve = lines[2].split(",")
    _, ev, _ = run(capsys, "eval", "--dataset", csv_path, "--iters", 10)
    assert ev.strip().splitlines()[-1].split(",")[1:] == twelve[1:]


def test_sweep_empty_list(csv_path, capsys):
    with pytest.raises(SystemExit):
        main(["sweep-bits", "--dataset", str(csv_path), "--bit-list", ""])


def test_scatter(tmp_path, capsys):
    out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run(capsys, "scatter", "--pairs", 1000, "--out", out1)[0] == 0
    assert run(capsys, "scatter", "--pairs", 1000, "--out", out2)[0] == 0
    assert out1.read_bytes() == out2.read_bytes()
    assert len(out1.read_text().splitlines()) == 1001


def test_cost(capsys):
    code, out, _ = run(capsys, "cost", "--M", 32, "--dims", 4)
    assert code == 0
    doc = json.loads(out)
    assert doc["symbolic"]["mpkm_pj"] < doc["symbolic"]["km_pj"]
    assert doc["measured"]["multiplies"] == 0
    assert 0 < doc["params"]["F"] <= 1


def test_config_precedence(tmp_path, csv_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# settings\niters = 3\neta-shift = 5\n")
    _, out, _ = run(capsys, "train", "--dataset", csv_path, "--model", tmp_path / "m",
                    "--config", cfg)
    assert len(out.strip().splitlines()) == 4
    _, out, _ = run(capsys, "train", "--dataset", csv_path, "--model", tmp_path / "m",
                    "--config", cfg, "--iters", 2)
    assert len(out.strip().splitlines()) == 3


def test_config_unknown_key(tmp_path, csv_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("colour = blue\n")
    code, _, err = run(capsys, "train", "--dataset", csv_path, "--config", cfg)
    assert code == 2 and "colour" in err


def test_missing_dataset_file(tmp_path, capsys):
    code, _, err = run(capsys, "eval", "--dataset", tmp_path / "none.csv")
    assert code == 1
    assert json.loads(err)["error"] == "FileNotFoundError"


def test_float_mode_train(tmp_path, csv_path, capsys):
    model = tmp_path / "m.txt"
    assert run(capsys, "train", "--dataset", csv_path, "--model", model, "--mode", "float",
               "--iters", 5)[0] == 0
    assert load_model(model).ar.mode == "float"


def test_sweep_short_word_rejected(csv_path, capsys):
    code, _, err = run(capsys, "sweep-bits", "--dataset", csv_path, "--bit-list", "6")
    assert code == 2 and "too short" in err


def test_sweep_gamma_underflow_is_error(csv_path, capsys):
    code, _, err = run(capsys, "sweep-bits", "--dataset", csv_path, "--bit-list", "7")
    assert code == 1 and "below one LSB" in json.loads(err)["message"]
