import csv
import json

import numpy as np
import pytest

from polyformer.cli import (
    ExperimentConfig,
    build_parser,
    compile_report,
    main,
    ordering_holds,
    resolve_config,
)
from polyformer.polynomials import Polynomial, benchmark_targets
from polyformer.training import RunHistory


def parse(*argv):
    return build_parser().parse_args(list(argv))


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert len({len(r) for r in rows}) == 1, "ragged CSV"
    return rows[0], rows[1:]


def test_compile_check_f1(capsys):
    assert main(["compile-check", "--target", "f1", "--bound", "5"]) == 0
    out = capsys.readouterr().out
    assert "free params    13" in out and "nonzeros       41" in out and "PASS" in out


def test_compile_report_f2_token_count():
    _, f2 = benchmark_targets()
    r = compile_report(f2, 6.0, points=20)
    assert r["tokens"] == 2002
    assert r["passed"] and r["max_rel_error"] < 1e-6


def test_compile_check_constant_is_degenerate(tmp_path, capsys):
    path = tmp_path / "c.json"
    path.write_text(Polynomial.constant(2, 3.0).to_json())
    assert main(["compile-check", "--target", str(path)]) == 2
    assert "degenerate" in capsys.readouterr().out


def test_compile_check_custom_file(tmp_path):
    path = tmp_path / "p.json"
    path.write_text(Polynomial(3, 3, {(1, 1, 1): 2.0, (0, 2, 0): -1.0, (0, 0, 0): 0.5}).to_json())
    assert main(["compile-check", "--target", str(path), "--bound", "2"]) == 0


def test_missing_target_file_is_an_error(tmp_path):
    assert main(["compile-check", "--target", str(tmp_path / "nope.json")]) == 2


def test_builtin_defaults_and_scaling():
    cfg = resolve_config(parse("train", "--target", "f2", "--scale", "0.1"))
    assert (cfg.count, cfg.epochs, cfg.batch_size) == (5000, 200, 2500)
    assert cfg.train_count == 4500
    full = resolve_config(parse("train", "--target", "f1"))
    assert (full.count, full.train_count, full.epochs, full.batch_size) == (10000, 9000, 600, 5000)
    assert full.lr_init == 1e-4 and full.lr_max == 1e-3


def test_scaling_rounds_up():
    cfg = resolve_config(parse("train", "--target", "f1", "--scale", "0.001"))
    assert (cfg.count, cfg.epochs, cfg.batch_size) == (10, 1, 5)


def test_precedence_flags_over_file_over_defaults(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"epochs": 40, "lr_max": 5e-3, "seed": 9}))
    cfg = resolve_config(parse("train", "--target", "f1", "--config", str(path), "--seed", "3"))
    assert cfg.epochs == 40 and cfg.lr_max == 5e-3  # file beats default
    assert cfg.seed == 3  # flag beats file
    assert cfg.batch_size == 5000  # untouched default


def test_explicit_flags_are_not_scaled():
    cfg = resolve_config(parse("train", "--target", "f1", "--scale", "0.1", "--epochs", "7"))
    assert cfg.epochs == 7 and cfg.count == 1000


def test_unknown_config_key_rejected(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"epoch": 3}))
    with pytest.raises(ValueError):
        resolve_config(parse("train", "--config", str(path)))


@pytest.mark.parametrize("scale", [0.0, 1.5, -0.1])
def test_scale_out_of_range(scale):
    with pytest.raises(ValueError):
        ExperimentConfig(scale=scale)


def _train(out, *extra):
    return main(["train", "--target", "f1", "--scale", "0.05", "--epochs", "4", "--out-dir", str(out), *extra])


def test_train_writes_outputs(tmp_path):
    assert _train(tmp_path) == 0
    head, rows = read_csv(tmp_path / "history.csv")
    assert head == ["epoch", "train_mse", "test_mse", "lr", "seconds"]
    assert [int(r[0]) for r in rows] == [1, 2, 3, 4]
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["model"] == "attention" and summary["free_parameters"] == 13
    assert "test_mse_clean" in summary and "convergence_epoch" in summary and "wall_time" in summary
    model = json.loads((tmp_path / "model.json").read_text())
    assert model["kind"] == "attention"


def test_surface_grid_f1(tmp_path):
    assert _train(tmp_path) == 0
    head, rows = read_csv(tmp_path / "surface.csv")
    assert head == ["x1", "x2", "prediction"]
    grid = np.array(rows, dtype=float)
    assert grid.shape == (101 * 101, 3)
    assert grid[:, 0].min() == -30.0 and grid[:, 0].max() == 30.0
    assert grid[:, 1].min() == -30.0 and grid[:, 1].max() == 30.0
    assert len(np.unique(grid[:, 0])) == 101


def test_no_surface_for_f2(tmp_path):
    rc = main(["train", "--target", "f2", "--model", "nn_depth", "--scale", "0.01", "--epochs", "2", "--out-dir", str(tmp_path)])
    assert rc == 0
    assert not (tmp_path / "surface.csv").exists()


def test_rerun_is_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert _train(a, "--seed", "4") == 0 and _train(b, "--seed", "4") == 0
    drop = lambda h: [(r.epoch, r.train_mse_noisy, r.test_mse_clean, r.lr) for r in h.records]
    assert drop(RunHistory.from_csv(a / "history.csv")) == drop(RunHistory.from_csv(b / "history.csv"))
    assert (a / "model.json").read_bytes() == (b / "model.json").read_bytes()
    assert (a / "surface.csv").read_bytes() == (b / "surface.csv").read_bytes()


def test_thread_cap_env(tmp_path, monkeypatch):
    monkeypatch.setenv("POLYFORMER_THREADS", "1")
    assert _train(tmp_path) == 0


def test_reproduce_writes_three_runs_and_table(tmp_path, capsys):
    rc = main(["reproduce", "f1", "--scale", "0.05", "--epochs", "3", "--out-dir", str(tmp_path)])
    out = capsys.readouterr().out
    assert "ordering" in out
    for name in ("attention", "nn_depth", "nn_width"):
        assert (tmp_path / name / "history.csv").exists()
    head, rows = read_csv(tmp_path / "comparison.csv")
    assert head[0] == "model" and [r[0] for r in rows] == ["attention", "nn_depth", "nn_width"]
    assert rc == (0 if ordering_holds([json.loads((tmp_path / m / "summary.json").read_text()) for m in ("attention", "nn_depth", "nn_width")]) else 1)


def _summary(model, te, status="ok"):
    return {"model": model, "test_mse_clean": te, "status": status}


def test_ordering_rule():
    assert ordering_holds([_summary("attention", 0.1), _summary("nn_depth", 5.0), _summary("nn_width", 9.0)])
    assert not ordering_holds([_summary("attention", 6.0), _summary("nn_depth", 5.0), _summary("nn_width", 9.0)])
    assert not ordering_holds([_summary("attention", 5.0), _summary("nn_depth", 5.0), _summary("nn_width", 9.0)])
    assert not ordering_holds([_summary("attention", 0.1, "diverged"), _summary("nn_depth", 5.0), _summary("nn_width", 9.0)])


def test_mlp_on_custom_target_rejected(tmp_path):
    path = tmp_path / "p.json"
    path.write_text(Polynomial(2, 2, {(1, 1): 1.0}).to_json())
    assert main(["train", "--target", str(path), "--model", "nn_width", "--scale", "0.01", "--out-dir", str(tmp_path)]) == 2
