"""Named experiment presets and the config-driven experiment runner.

Each preset is a plain JSON-able dict with three sections: dataset, model,
and train.  `run_experiment` turns a config into a dataset + model + loop
and returns an ExperimentReport that serializes byte-identically.
"""

from __future__ import annotations

import copy
import json
import time
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import depth as dp
from . import nn
from .data import make_dataset, tracking_signal
from .models import AugmentationStrategy, Cnf1d, DepthHypernet, NodeModel
from .train import TrainConfig, train_cnf, train_loop, train_tracking

SCHEMA_VERSION = 1


def _crossing(mode: str, hidden: list[int], theta: dict | None = None) -> dict:
    return {
        "dataset": {"name": "crossing", "n": 100},
        "model": {
            "n_z": 1,
            "hidden": hidden,
            "activation": "tanh",
            "input_mode": mode,
            "theta": theta or {"kind": "constant"},
            "hx": {"kind": "none"},
            "hy": "identity",
            "depth_span": 1.0,
        },
        "train": {
            "epochs": 1000,
            "batch_size": None,
            "lr": 1e-3,
            "optimizer": "adam",
            "weight_decay": 1e-5,
            "loss": "l1",
            "task": "regression",
            "rtol": 1e-6,
            "atol": 1e-6,
        },
    }


def _annuli(mode: str, theta: dict | None = None, hx: dict | None = None,
            n_z: int = 2) -> dict:
    return {
        "dataset": {"name": "annuli", "n": 1024},
        "model": {
            "n_z": n_z,
            "hidden": [32],
            "activation": "tanh",
            "input_mode": mode,
            "theta": theta or {"kind": "constant"},
            "hx": hx or {"kind": "none"},
            "hy": "linear",
            "n_y": 1,
            "depth_span": 1.0,
        },
        "train": {
            "epochs": 1024,
            "batch_size": 1024,
            "lr": 1e-3,
            "optimizer": "adamw",
            "weight_decay": 1e-6,
            "loss": "mse",
            "task": "classification",
            "stop_accuracy": 0.99,
            "rtol": 1e-4,
            "atol": 1e-4,
        },
    }


PRESETS: dict[str, dict] = {
    # 1-D regression of x -> -x; the autonomous model cannot cross
    "crossing-vanilla": _crossing("autonomous", [16, 32]),
    "crossing-concat": _crossing("depth-concat", [32, 32]),
    "crossing-galnode": _crossing(
        "autonomous", [32],
        {"kind": "galerkin", "basis": "fourier", "harmonics": 5},
    ),
    "crossing-datacontrol": _crossing("data-controlled", [32, 32]),
    # 2-D concentric annuli classification
    "annuli-galnode": _annuli(
        "autonomous", {"kind": "galerkin", "basis": "fourier", "harmonics": 2}
    ),
    "annuli-concat": _annuli("depth-concat"),
    "annuli-datacontrol": _annuli("data-controlled"),
    "annuli-0aug": _annuli("autonomous", hx={"kind": "zero", "n_a": 2}, n_z=4),
    "annuli-ilnode": _annuli("autonomous", hx={"kind": "input-layer"}, n_z=4),
    "moons-activation-sweep": {
        "dataset": {"name": "moons", "n": 512},
        "model": {
            "n_z": 2,
            "hidden": [16],
            "activation": "tanh",
            "activations": ["tanh", "softplus", "elu"],
            "input_mode": "depth-concat",
            "theta": {"kind": "constant"},
            "hx": {"kind": "none"},
            "hy": "linear",
            "n_y": 1,
            "depth_span": 1.0,
        },
        "train": {
            "epochs": 200,
            "batch_size": 512,
            "lr": 1e-3,
            "optimizer": "adamw",
            "weight_decay": 1e-6,
            "loss": "mse",
            "task": "classification",
            "stop_accuracy": 0.99,
            "rtol": 1e-4,
            "atol": 1e-4,
        },
    },
    "spirals-depthvar": {
        "dataset": {"name": "spirals", "n": 512},
        "model": {
            "n_z": 2,
            "hidden": [32],
            "activation": "tanh",
            "input_mode": "depth-concat",
            "theta": {"kind": "stacked", "segments": 4},
            "hx": {"kind": "none"},
            "hy": "linear",
            "n_y": 1,
            "depth_span": 1.0,
        },
        "train": {
            "epochs": 300,
            "batch_size": 512,
            "lr": 5e-3,
            "optimizer": "adamw",
            "weight_decay": 1e-6,
            "loss": "mse",
            "task": "classification",
            "stop_accuracy": 0.99,
            "rtol": 1e-4,
            "atol": 1e-4,
        },
    },
    # depth-distributed tracking of a periodic reference signal
    "tracking-galnode": {
        "dataset": {"name": "tracking", "n": 64},
        "model": {
            "n_z": 2,
            "hidden": [32],
            "activation": "tanh",
            "input_mode": "autonomous",
            "theta": {"kind": "galerkin", "basis": "fourier", "harmonics": 2},
            "hx": {"kind": "none"},
            "hy": "identity",
            "depth_span": 1.0,
        },
        "train": {
            "epochs": 1000,
            "lr": 1e-3,
            "optimizer": "adam",
            "loss": "mse",
            "task": "tracking",
            "rtol": 1e-6,
            "atol": 1e-6,
        },
    },
    "cnf-conditional": {
        "dataset": {"name": "cnf-conditional", "n": 512, "sigma": 0.3},
        "model": {
            "kind": "cnf",
            "hidden": [128, 128],
            "activation": "softplus",
            "depth_span": 1.0,
        },
        "train": {
            "epochs": 2000,
            "batch_size": 128,
            "lr": 1e-3,
            "optimizer": "adamw",
            "weight_decay": 1e-7,
            "rtol": 1e-8,
            "atol": 1e-8,
        },
    },
    "adaptive-depth": {
        "dataset": {"name": "moons", "n": 256},
        "model": {
            "n_z": 2,
            "hidden": [8, 8],
            "activation": "tanh",
            "input_mode": "depth-concat",
            "theta": {"kind": "constant"},
            "hx": {"kind": "none"},
            "hy": "linear",
            "n_y": 1,
            "depth_span": 1.0,
            "hypernet_hidden": 8,
        },
        "train": {
            "epochs": 50,
            "batch_size": 64,
            "lr": 1e-3,
            "optimizer": "adamw",
            "weight_decay": 1e-6,
            "loss": "mse",
            "task": "classification",
            "rtol": 1e-4,
            "atol": 1e-4,
        },
    },
}


class ConfigError(ValueError):
    """Config schema violation, reported with the offending field path."""


def _require(cfg: dict, key: str, path: str):
    if key not in cfg:
        raise ConfigError(f"missing field {path}.{key}")
    return cfg[key]


def build_theta(theta_cfg: dict, spec: nn.FieldSpec, depth_span: float, seed: int):
    """Instantiate a depth parametrization around a seeded constant init."""
    base = nn.init_params(spec, seed)
    kind = theta_cfg.get("kind", "constant")
    if kind == "constant":
        return dp.Constant(base)
    if kind == "galerkin":
        name = theta_cfg.get("basis", "fourier")
        if name == "fourier":
            basis = dp.BasisSet.fourier(int(theta_cfg.get("harmonics", 2)), depth_span)
        else:
            basis = dp.BasisSet(name, int(theta_cfg.get("m", 3)), depth_span)
        alpha = np.zeros((basis.m, len(base)))
        alpha[0] = base.values  # constant term carries the usual init
        rng = np.random.default_rng(seed + 1)
        alpha[1:] = 0.2 * rng.standard_normal((basis.m - 1, len(base))) / np.sqrt(
            max(spec.input_dim, 1)
        )
        return dp.Galerkin(basis=basis, alpha=alpha, layout=base.layout)
    if kind == "stacked":
        p = int(theta_cfg.get("segments", 2))
        grid = np.linspace(0.0, depth_span, p + 1)
        thetas = [nn.init_params(spec, seed + 10 * i) for i in range(p)]
        return dp.Stacked(grid=grid, thetas=thetas)
    raise ConfigError(f"unknown parametrization kind {kind!r}")


def build_model(model_cfg: dict, n_x: int, seed: int) -> NodeModel:
    """NodeModel from a preset's model section."""
    n_z = int(_require(model_cfg, "n_z", "model"))
    hidden = list(_require(model_cfg, "hidden", "model"))
    act = model_cfg.get("activation", "tanh")
    mode = model_cfg.get("input_mode", "autonomous")
    span = float(model_cfg.get("depth_span", 1.0))
    hx_cfg = model_cfg.get("hx", {"kind": "none"})
    order = int(hx_cfg.get("order", 2)) if hx_cfg["kind"] == "higher-order" else 1
    f_out = n_z // order
    if hx_cfg["kind"] == "selective-higher-order":
        f_out = n_z - hx_cfg["n_a"] // 2
    f_in = {"autonomous": n_z, "depth-concat": n_z + 1, "data-controlled": n_z + n_x}[mode]
    spec = nn.FieldSpec.mlp([f_in] + hidden + [f_out], hidden=act, input_mode=mode)

    rng = np.random.default_rng(seed + 1000)
    kind = hx_cfg["kind"]
    if kind in ("input-layer", "input-layer-preserving", "higher-order") and (
        kind != "higher-order" or hx_cfg.get("learned", kind == "input-layer")
    ):
        rows = {"input-layer": n_z, "input-layer-preserving": n_z - n_x}.get(kind, f_out)
        bound = 1.0 / np.sqrt(n_x)
        hx = AugmentationStrategy(
            kind,
            n_a=hx_cfg.get("n_a", rows),
            order=order,
            weight=rng.uniform(-bound, bound, size=(rows, n_x)),
            bias=np.zeros(rows),
        )
    else:
        hx = AugmentationStrategy(kind, n_a=hx_cfg.get("n_a", 0), order=order)

    hy_w = hy_b = None
    if model_cfg.get("hy", "identity") == "linear":
        n_y = int(model_cfg.get("n_y", 1))
        hy_w = rng.uniform(-1.0 / np.sqrt(n_z), 1.0 / np.sqrt(n_z), size=(n_y, n_z))
        hy_b = np.zeros(n_y)

    hyper = None
    if model_cfg.get("hypernet_hidden"):
        hyper = DepthHypernet.init(n_x, int(model_cfg["hypernet_hidden"]), seed + 2000)

    theta = build_theta(model_cfg.get("theta", {"kind": "constant"}), spec, span, seed)
    return NodeModel(
        field_spec=spec,
        theta=theta,
        hx=hx,
        n_z=n_z,
        depth_span=span,
        hy_weight=hy_w,
        hy_bias=hy_b,
        depth_hypernet=hyper,
    )


def build_cnf(model_cfg: dict, priors, seed: int) -> Cnf1d:
    hidden = list(model_cfg.get("hidden", [128, 128]))
    spec = nn.FieldSpec.mlp([2] + hidden + [1], hidden=model_cfg.get("activation", "softplus"))
    return Cnf1d(
        spec=spec,
        params=nn.init_params(spec, seed),
        priors=[tuple(p) for p in priors],
        depth_span=float(model_cfg.get("depth_span", 1.0)),
    )


def _train_config(train_cfg: dict, seed: int) -> TrainConfig:
    known = {
        "epochs", "batch_size", "lr", "optimizer", "beta1", "beta2", "eps",
        "weight_decay", "schedule_gamma", "schedule_every", "loss",
        "regularizer", "reg_lambda", "rtol", "atol", "task", "stop_accuracy",
    }
    bad = set(train_cfg) - known
    if bad:
        raise ConfigError(f"unknown train fields: train.{sorted(bad)[0]}")
    return TrainConfig(seed=seed, **train_cfg)


@dataclass
class ExperimentReport:
    preset: str
    seed: int
    config: dict
    final_loss: float
    final_accuracy: float
    history: dict
    wall_time: float
    extras: dict = dc_field(default_factory=dict)
    artifacts: list = dc_field(default_factory=list)
    schema_version: int = SCHEMA_VERSION

    def to_json(self) -> str:
        return json.dumps(
            {
                "schema_version": self.schema_version,
                "preset": self.preset,
                "seed": self.seed,
                "config": self.config,
                "final_loss": self.final_loss,
                "final_accuracy": self.final_accuracy,
                "history": self.history,
                "wall_time": self.wall_time,
                "extras": self.extras,
                "artifacts": self.artifacts,
            },
            indent=2,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "ExperimentReport":
        d = json.loads(text)
        return cls(
            preset=d["preset"],
            seed=d["seed"],
            config=d["config"],
            final_loss=d["final_loss"],
            final_accuracy=d["final_accuracy"],
            history=d["history"],
            wall_time=d["wall_time"],
            extras=d.get("extras", {}),
            artifacts=d.get("artifacts", []),
            schema_version=d["schema_version"],
        )


def resolve_config(config: dict) -> dict:
    """Expand a {"preset": name, ...overrides} config into a full one."""
    if "preset" in config:
        name = config["preset"]
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r} (field: preset)")
        full = copy.deepcopy(PRESETS[name])
        for section in ("dataset", "model", "train"):
            full.setdefault(section, {}).update(config.get(section, {}))
        full["preset"] = name
        return full
    for section in ("dataset", "model", "train"):
        _require(config, section, "config")
    return copy.deepcopy(config)


def run_experiment(config: dict, seed: int = 0, deterministic_time: bool = False):
    """Run one experiment; returns (report, trained model)."""
    full = resolve_config(config)
    ds_cfg = dict(full["dataset"])
    dataset = make_dataset(ds_cfg.pop("name"), ds_cfg.pop("n"), seed=seed, **ds_cfg)
    tcfg = _train_config(full["train"], seed)
    t0 = time.perf_counter()

    if full["model"].get("kind") == "cnf":
        cnf = build_cnf(full["model"], dataset.meta["priors"], seed)
        cnf, history = train_cnf(
            cnf, [tuple(t) for t in dataset.meta["targets"]], tcfg,
            batch_size=full["train"].get("batch_size") or 128,
        )
        model = cnf
    elif tcfg.task == "tracking":
        model = build_model(full["model"], dataset.inputs.shape[1], seed)
        z0 = np.tile(tracking_signal(0.0), (4, 1))  # start on the reference
        model, history = train_tracking(model, lambda s: tracking_signal(s), z0, tcfg)
    else:
        model = build_model(full["model"], dataset.inputs.shape[1], seed)
        model, history = train_loop(model, dataset, tcfg)

    wall = 0.0 if deterministic_time else time.perf_counter() - t0
    report = ExperimentReport(
        preset=full.get("preset", "custom"),
        seed=seed,
        config=full,
        final_loss=history.loss[-1] if history.loss else float("nan"),
        final_accuracy=history.accuracy[-1] if history.accuracy else 0.0,
        history=history.to_dict(),
        wall_time=wall,
    )
    return report, model
