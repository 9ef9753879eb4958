"""Command-line harness.

Subcommands: train, gradcheck, export-flow, make-data, presets.  Configs
are JSON; artifacts are a JSON report plus fixed-column CSV files with
17-significant-digit floats.  Exit codes: 0 success, 1 config error,
2 training divergence, 3 gradcheck failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import depth as dp
from .data import make_dataset
from .gradcheck import GradcheckConfig, run_gradcheck
from .models import (
    Cnf1d,
    NodeModel,
    load_checkpoint,
    node_forward,
    save_checkpoint,
    wrap_field,
)
from .presets import PRESETS, ConfigError, run_experiment
from .solve import DivergenceError, StiffnessError


def _fmt(v: float) -> str:
    return f"{float(v):.17g}"


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) if isinstance(v, float) else str(v) for v in row) + "\n")


def _grid_inputs(model: NodeModel, grid: dict) -> np.ndarray:
    if "inputs" in grid:
        return np.asarray(grid["inputs"], dtype=np.float64)
    lo, hi = grid.get("min", -2.0), grid.get("max", 2.0)
    n = int(grid.get("n", 9))
    if model.hx.kind in ("none", "zero") and model.field_spec.input_mode != "data-controlled":
        n_x = model.n_z - (model.hx.n_a if model.hx.kind == "zero" else 0)
    else:
        n_x = model.field_spec.input_dim - model.n_z if (
            model.field_spec.input_mode == "data-controlled"
        ) else model.n_z
    if n_x == 1:
        return np.linspace(lo, hi, n)[:, None]
    axes = [np.linspace(lo, hi, n)] * 2
    gx, gy = np.meshgrid(*axes)
    return np.stack([gx.ravel(), gy.ravel()], axis=-1)


def export_flow(checkpoint_path: str, grid: dict, out_dir: str,
                rtol: float = 1e-6, atol: float = 1e-6) -> list[str]:
    """Write trajectories.csv, field.csv, boundary.csv and (when the
    parametrization is depth-variant) theta.csv for a saved model."""
    model = load_checkpoint(checkpoint_path)
    if isinstance(model, Cnf1d):
        raise ConfigError("export-flow expects a state-flow checkpoint, got a flow-density model")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    x = _grid_inputs(model, grid)
    n_s = int(grid.get("n_s", 9))
    s_vals = np.linspace(0.0, model.depth_span, n_s)

    # trajectories: one row per (sample, solver depth)
    rows = []
    for i, xi in enumerate(x):
        _, sol = node_forward(model, xi, rtol, atol)
        for s, z in zip(sol.grid, np.atleast_2d(sol.states)):
            rows.append([i, float(s)] + [float(v) for v in np.ravel(z)])
    nz = model.n_z
    _write_csv(out / "trajectories.csv", ["sample", "s"] + [f"z{i}" for i in range(nz)], rows)
    written.append(str(out / "trajectories.csv"))

    # instantaneous field dz/ds on the state grid at a few depths
    field = wrap_field(model, x)
    rows = []
    if nz == x.shape[1]:
        Z = x
    else:
        from .models import apply_hx

        Z = np.atleast_2d(apply_hx(model.hx, x))
    for s in s_vals:
        f = field.value(float(s), Z)
        for zi, fi in zip(Z, f):
            rows.append([float(s)] + [float(v) for v in zi] + [float(v) for v in fi])
    _write_csv(
        out / "field.csv",
        ["s"] + [f"z{i}" for i in range(nz)] + [f"f{i}" for i in range(nz)],
        rows,
    )
    written.append(str(out / "field.csv"))

    # model output over the input grid (decision surface for classifiers)
    rows = []
    for xi in x:
        y, _ = node_forward(model, xi, rtol, atol)
        rows.append([float(v) for v in xi] + [float(v) for v in np.ravel(y)])
    ny = len(rows[0]) - x.shape[1]
    _write_csv(
        out / "boundary.csv",
        [f"x{i}" for i in range(x.shape[1])] + [f"y{i}" for i in range(ny)],
        rows,
    )
    written.append(str(out / "boundary.csv"))

    if not isinstance(model.theta, dp.Constant):
        rows = []
        for s in np.linspace(0.0, model.depth_span, max(n_s, 33)):
            th = dp.eval_theta(model.theta, float(s))
            rows.append([float(s)] + [float(v) for v in th])
        _write_csv(
            out / "theta.csv",
            ["s"] + [f"theta{i}" for i in range(len(rows[0]) - 1)],
            rows,
        )
        written.append(str(out / "theta.csv"))
    return written


def _load_config(args) -> dict:
    if not args.config:
        raise ConfigError("missing --config (field: config)")
    try:
        with open(args.config) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")


def _cmd_train(args) -> int:
    config = _load_config(args)
    if args.tol_rtol or args.tol_atol:
        tr = config.setdefault("train", {})
        if args.tol_rtol:
            tr["rtol"] = args.tol_rtol
        if args.tol_atol:
            tr["atol"] = args.tol_atol
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        report, model = run_experiment(config, seed=args.seed, deterministic_time=True)
    except (DivergenceError, StiffnessError) as exc:
        if not args.quiet:
            print(f"training diverged: {exc}", file=sys.stderr)
        (out / "report.json").write_text(json.dumps({"error": str(exc)}, indent=2))
        return 2
    ck = out / "checkpoint.json"
    save_checkpoint(model, str(ck))
    report.artifacts = [str(ck), str(out / "history.csv")]
    hist = report.history
    _write_csv(
        out / "history.csv",
        ["epoch", "loss", "accuracy", "nfe"],
        [
            [i, float(l), float(a), float(n)]
            for i, (l, a, n) in enumerate(zip(hist["loss"], hist["accuracy"], hist["nfe"]))
        ],
    )
    (out / "report.json").write_text(report.to_json())
    if not args.quiet:
        print(f"final loss {report.final_loss:.6g}, accuracy {report.final_accuracy:.4f}")
        print(f"report: {out / 'report.json'}")
    return 0


def _cmd_gradcheck(args) -> int:
    cfg = GradcheckConfig(
        seeds=args.seeds,
        rtol=args.tol_rtol or 1e-8,
        atol=args.tol_atol or 1e-8,
        corrupt=args.corrupt,
    )
    result = run_gradcheck(cfg)
    if not args.quiet:
        print(f"{'variant':<16}{'parametrization':<16}{'loss':<18}{'max rel err':<14}ok")
        for (variant, param, loss), err, ok in result.rows():
            print(f"{variant:<16}{param:<16}{loss:<18}{err:<14.3e}{'yes' if ok else 'NO'}")
    return 0 if result.passed else 3


def _cmd_export_flow(args) -> int:
    grid = {}
    if args.config:
        grid = _load_config(args)
    written = export_flow(
        args.checkpoint, grid, args.out_dir,
        rtol=args.tol_rtol or 1e-6, atol=args.tol_atol or 1e-6,
    )
    if not args.quiet:
        for path in written:
            print(path)
    return 0


def _cmd_make_data(args) -> int:
    cfg = _load_config(args)
    name = cfg.pop("name", None)
    n = cfg.pop("n", None)
    if not name or not n:
        raise ConfigError("make-data config needs fields: name, n")
    ds = make_dataset(name, int(n), seed=args.seed, **cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{name}.csv"
    nx, ny = ds.inputs.shape[1], ds.targets.shape[1]
    _write_csv(
        path,
        [f"x{i}" for i in range(nx)] + [f"y{i}" for i in range(ny)],
        [
            [float(v) for v in np.concatenate([xi, yi])]
            for xi, yi in zip(ds.inputs, ds.targets)
        ],
    )
    if not args.quiet:
        print(path)
    return 0


def _cmd_presets(args) -> int:
    if not args.quiet:
        print(json.dumps(sorted(PRESETS), indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="depthflow", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (
        ("train", _cmd_train),
        ("gradcheck", _cmd_gradcheck),
        ("export-flow", _cmd_export_flow),
        ("make-data", _cmd_make_data),
        ("presets", _cmd_presets),
    ):
        p = sub.add_parser(name)
        p.set_defaults(fn=fn)
        p.add_argument("--config", default=None, help="path to a JSON config")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out-dir", default=".")
        p.add_argument("--tol-rtol", type=float, default=None)
        p.add_argument("--tol-atol", type=float, default=None)
        p.add_argument("--quiet", action="store_true")
        if name == "gradcheck":
            p.add_argument("--seeds", type=int, default=20)
            p.add_argument("--corrupt", action="store_true",
                           help="debug: bias gradients to verify the harness fails")
        if name == "export-flow":
            p.add_argument("--checkpoint", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
