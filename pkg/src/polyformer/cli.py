"""Command-line runner: compile checks, single training runs and the three-model comparison."""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from contextlib import nullcontext
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .baselines import init_params, nn_depth_spec, nn_width_spec, param_count
from .constructor import (
    TransformerModel,
    compile_exact,
    count_free_params,
    count_nonzeros,
    free_param_bound,
    nonzero_bound,
)
from .network import predict
from .polynomials import Polynomial, evaluate, benchmark_targets
from .ridge import RidgeDecompositionError
from .training import (
    MlpModel,
    TrainConfig,
    TrainingDiverged,
    generate_data,
    init_attention_model,
    model_predict,
    split,
    train,
)

MODELS = ("attention", "nn_depth", "nn_width")
COMPILE_TOL = 1e-6
SURFACE_POINTS = 101

# data size, covariance, epochs and batch of the two benchmark runs
BUILTIN = {
    "f1": dict(count=10000, covariance=100.0, epochs=600, batch_size=5000, bound=5.0),
    "f2": dict(count=50000, covariance=1.0, epochs=2000, batch_size=25000, bound=6.0),
}
CUSTOM = dict(count=10000, covariance=1.0, epochs=600, batch_size=5000, bound=1.0)


@dataclass(frozen=True)
class ExperimentConfig:
    target: str = "f1"
    model: str = "attention"
    count: int = 10000
    covariance: float | list = 100.0
    train_fraction: float = 0.9
    epochs: int = 600
    batch_size: int = 5000
    lr_init: float = 1e-4
    lr_max: float = 1e-3
    clip_norm: float = TrainConfig.clip_norm
    warmup_fraction: float = 0.3
    seed: int = 0
    scale: float = 1.0
    out_dir: str = "runs"

    def __post_init__(self):
        if not 0 < self.scale <= 1:
            raise ValueError(f"scale must lie in (0, 1], got {self.scale}")
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}; choose from {', '.join(MODELS)}")
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must lie in (0, 1)")

    @property
    def train_count(self) -> int:
        return int(round(self.train_fraction * self.count))

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.epochs, self.batch_size, self.lr_init, self.lr_max,
                           self.clip_norm, self.warmup_fraction, self.seed)


def scaled(value: int, scale: float) -> int:
    return max(1, math.ceil(value * scale - 1e-9))


def load_target(name: str) -> Polynomial:
    f1, f2 = benchmark_targets()
    if name == "f1":
        return f1
    if name == "f2":
        return f2
    return Polynomial.from_json(Path(name).read_text())


def target_defaults(name: str) -> dict:
    return dict(BUILTIN.get(name, CUSTOM))


_SCALED = ("count", "epochs", "batch_size")


def resolve_config(args: argparse.Namespace, model: str | None = None) -> ExperimentConfig:
    """Builtin defaults < JSON config file < explicit flags.

    The scale factor multiplies sample count, epochs and batch size taken from
    the defaults or the config file. Values given as flags are used verbatim.
    """
    file_cfg = {}
    if getattr(args, "config", None):
        file_cfg = json.loads(Path(args.config).read_text())
        known = {f.name for f in fields(ExperimentConfig)}
        unknown = set(file_cfg) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
    flags = {k: v for k, v in vars(args).items() if v is not None and k in {f.name for f in fields(ExperimentConfig)}}
    if model is not None:
        flags["model"] = model
    target = flags.get("target", file_cfg.get("target", "f1"))
    base = {k: v for k, v in target_defaults(target).items() if k != "bound"}
    base.update(file_cfg)
    scale = float(flags.get("scale", base.get("scale", 1.0)))
    for key in _SCALED:
        if key not in flags:
            base[key] = scaled(int(base[key]), scale)
    base.update(flags)
    base["target"] = target
    base["scale"] = scale
    return ExperimentConfig(**base)


def covariance_vector(cfg: ExperimentConfig, d: int) -> np.ndarray:
    cov = np.asarray(cfg.covariance, dtype=float)
    return np.broadcast_to(cov, (d,)).copy()


def build_model(cfg: ExperimentConfig, target: Polynomial):
    d = target.dim
    if cfg.model == "attention":
        return init_attention_model(d, target.degree, covariance_vector(cfg, d), seed=cfg.seed)
    key = cfg.target if cfg.target in BUILTIN else None
    if key is None:
        raise ValueError("MLP baselines are defined only for the f1 and f2 targets")
    spec = nn_depth_spec(key) if cfg.model == "nn_depth" else nn_width_spec(key)
    return MlpModel(spec, init_params(spec, seed=cfg.seed))


def model_record(model) -> dict:
    if isinstance(model, TransformerModel):
        return {"kind": "attention", **model.to_dict()}
    return {"kind": "mlp", "widths": list(model.spec.widths), **model.params.to_dict()}


def free_parameters(model) -> int:
    if isinstance(model, TransformerModel):
        return count_free_params(model)
    return param_count(model.spec)


def surface_grid(model, cov: np.ndarray, points: int = SURFACE_POINTS):
    sigma = np.sqrt(cov)
    g1 = np.linspace(-3 * sigma[0], 3 * sigma[0], points)
    g2 = np.linspace(-3 * sigma[1], 3 * sigma[1], points)
    X = np.array([(a, b) for a in g1 for b in g2])
    return X, model_predict(model, X)


def write_surface(path: Path, X: np.ndarray, pred: np.ndarray) -> None:
    with open(path, "w") as fh:
        fh.write("x1,x2,prediction\n")
        for (a, b), p in zip(X, pred):
            fh.write(f"{float(a)!r},{float(b)!r},{float(p)!r}\n")


def run_experiment(cfg: ExperimentConfig, out_dir: Path, log=print) -> dict:
    """Train one model and write history.csv, summary.json, model.json and surface.csv (d=2)."""
    target = load_target(cfg.target)
    d = target.dim
    cov = covariance_vector(cfg, d)
    ds = generate_data(target, cfg.count, cov, seed=cfg.seed)
    tr, te = split(ds, cfg.train_count, seed=cfg.seed)
    model = build_model(cfg, target)
    out_dir.mkdir(parents=True, exist_ok=True)
    status = "ok"
    try:
        model, history = train(model, tr, te, cfg.train_config())
    except TrainingDiverged as err:
        status, history = f"diverged: {err}", err.history
        log(f"[{cfg.model}] {err}")
    history.to_csv(out_dir / "history.csv")
    summary = {
        "target": cfg.target,
        "model": cfg.model,
        "status": status,
        "free_parameters": free_parameters(model),
        "train_samples": len(tr),
        "test_samples": len(te),
        **history.summary(),
        "config": asdict(cfg),
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    (out_dir / "model.json").write_text(json.dumps(model_record(model)) + "\n")
    if d == 2 and status == "ok":
        write_surface(out_dir / "surface.csv", *surface_grid(model, cov))
    return summary


def comparison_table(summaries: list[dict]) -> str:
    head = f"{'model':<10} {'params':>8} {'MSE_Tr':>12} {'MSE_Te':>12} {'conv.epoch':>10} {'seconds':>9}"
    lines = [head, "-" * len(head)]
    for s in summaries:
        conv = s["convergence_epoch"] if s["convergence_epoch"] is not None else "-"
        tr = s["train_mse_noisy"] if s["train_mse_noisy"] is not None else float("nan")
        te = s["test_mse_clean"] if s["test_mse_clean"] is not None else float("nan")
        lines.append(f"{s['model']:<10} {s['free_parameters']:>8} {tr:>12.4f} {te:>12.4f} {conv:>10} {s['wall_time']:>9.1f}")
    return "\n".join(lines)


def ordering_holds(summaries: list[dict]) -> bool:
    by = {s["model"]: s for s in summaries}
    att = by["attention"]["test_mse_clean"]
    if att is None or by["attention"]["status"] != "ok":
        return False
    others = [by[m]["test_mse_clean"] for m in ("nn_depth", "nn_width")]
    return all(o is None or att < o for o in others)


def write_comparison_csv(path: Path, summaries: list[dict]) -> None:
    with open(path, "w") as fh:
        fh.write("model,free_parameters,train_mse,test_mse,convergence_epoch,seconds\n")
        for s in summaries:
            conv = "" if s["convergence_epoch"] is None else s["convergence_epoch"]
            fh.write(f"{s['model']},{s['free_parameters']},{s['train_mse_noisy']!r},{s['test_mse_clean']!r},{conv},{s['wall_time']:.3f}\n")


# commands

def ball_points(rng: np.random.Generator, count: int, d: int, bound: float) -> np.ndarray:
    v = rng.standard_normal((count, d))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * (bound * rng.random(count) ** (1.0 / d))[:, None]


def compile_report(p: Polynomial, bound: float, seed: int = 0, points: int = 200) -> dict:
    m = compile_exact(p, bound, seed=seed)
    X = ball_points(np.random.default_rng(seed), points, p.dim, bound)
    want = evaluate(p, X)
    got = predict(m, X)
    err = np.abs(got - want)
    d, q = p.dim, p.degree
    report = {
        "dim": d,
        "degree": q,
        "tokens": m.n,
        "bound": bound,
        "points": points,
        "max_abs_error": float(err.max()),
        "max_rel_error": float(np.max(err / np.maximum(1.0, np.abs(want)))),
        "free_parameters": count_free_params(m),
        "free_parameter_bound": free_param_bound(d, q),
        "nonzeros": count_nonzeros(m),
        "nonzero_bound": nonzero_bound(d, q),
    }
    report["within_bounds"] = (report["free_parameters"] <= report["free_parameter_bound"]
                               and report["nonzeros"] <= report["nonzero_bound"])
    report["passed"] = report["max_rel_error"] < COMPILE_TOL
    return report


def cmd_compile_check(args) -> int:
    p = load_target(args.target)
    if p.total_degree == 0:
        print(f"degenerate input: constant polynomial {p.constant_term()!r}; "
              "no encoder blocks are needed, the readout bias alone reproduces it")
        return 2
    if p.degree != p.total_degree:
        p = Polynomial(p.dim, p.total_degree, p.terms)
    bound = args.bound if args.bound is not None else target_defaults(args.target)["bound"]
    try:
        r = compile_report(p, bound, seed=args.seed or 0, points=args.points)
    except RidgeDecompositionError as err:
        print(f"decomposition failed: {err}")
        return 3
    print(f"target {args.target}: d={r['dim']} q={r['degree']} tokens={r['tokens']} bound={r['bound']}")
    print(f"max abs error  {r['max_abs_error']:.3e}")
    print(f"max rel error  {r['max_rel_error']:.3e}  (tolerance {COMPILE_TOL:g})")
    print(f"free params    {r['free_parameters']}  (bound {r['free_parameter_bound']})")
    print(f"nonzeros       {r['nonzeros']}  (bound {r['nonzero_bound']})")
    print(f"bounds {'satisfied' if r['within_bounds'] else 'VIOLATED'}; {'PASS' if r['passed'] else 'FAIL'}")
    return 0 if r["passed"] else 1


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    s = run_experiment(cfg, Path(cfg.out_dir))
    print(comparison_table([s]))
    return 0 if s["status"] == "ok" else 1


def cmd_reproduce(args) -> int:
    args.target = args.experiment
    summaries = []
    root = None
    for name in MODELS:
        cfg = resolve_config(args, model=name)
        root = Path(cfg.out_dir)
        summaries.append(run_experiment(cfg, root / name))
    table = comparison_table(summaries)
    ok = ordering_holds(summaries)
    write_comparison_csv(root / "comparison.csv", summaries)
    (root / "comparison.txt").write_text(table + "\n")
    print(table)
    print("ordering attention < nn_depth, nn_width on test MSE:", "holds" if ok else "VIOLATED")
    return 0 if ok else 1


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scale", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr-init", dest="lr_init", type=float)
    p.add_argument("--lr-max", dest="lr_max", type=float)
    p.add_argument("--clip-norm", dest="clip_norm", type=float)
    p.add_argument("--warmup-fraction", dest="warmup_fraction", type=float)
    p.add_argument("--count", type=int, help="total samples before the train/test split")
    p.add_argument("--covariance", type=float, help="diagonal input covariance")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--config", help="JSON file with ExperimentConfig fields")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polyformer", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    c = sub.add_parser("compile-check", help="compile a polynomial and verify it on random ball points")
    c.add_argument("--target", default="f1", help="f1, f2 or a polynomial JSON file")
    c.add_argument("--bound", type=float, help="input ball radius")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--points", type=int, default=200)
    c.set_defaults(func=cmd_compile_check)

    t = sub.add_parser("train", help="train one model on a noisy regression task")
    t.add_argument("--target", help="f1, f2 or a polynomial JSON file")
    t.add_argument("--model", choices=MODELS)
    _add_train_flags(t)
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("reproduce", help="train all three models and compare test MSE")
    r.add_argument("experiment", choices=sorted(BUILTIN))
    _add_train_flags(r)
    r.set_defaults(func=cmd_reproduce)
    return parser


def thread_limit():
    value = os.environ.get("POLYFORMER_THREADS")
    return threadpool_limits(int(value)) if value else nullcontext()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    with thread_limit():
        try:
            return args.func(args)
        except (ValueError, OSError) as err:
            print(f"error: {err}", file=sys.stderr)
            return 2


if __name__ == "__main__":
    sys.exit(main())
