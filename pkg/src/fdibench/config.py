"""Versioned JSON run configuration.

One file describes a whole run: scenario, filter, detector parameters,
training, resilience, and the benchmark grid.  Loading is strict both
ways — unknown keys are rejected (catching typos like ``fa_budget``),
and every known key is materialized with its default so the stored file
is self-describing.  ``version`` is mandatory and must match
``CONFIG_VERSION``.

Flags exist only for paths and one-value overrides; everything wide
lives here.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

import numpy as np

from fdibench.attacks import AttackKind, AttackModel, gps_mask
from fdibench.benchmark import BenchmarkSpec, make_plant
from fdibench.detectors import (BhtDetector, CusumDetector, SprtDetector)
from fdibench.detectors.transformer import TrainConfig
from fdibench.detectors.transformer.config import LossWeights
from fdibench.dynamics import PlantModel
from fdibench.ekf import FilterConfig
from fdibench.errors import ConfigError
from fdibench.noise import NoiseFamily, NoiseModel
from fdibench.simulate import Scenario, WaypointController

CONFIG_VERSION = 1

_FILTER = FilterConfig()
_TRAIN = TrainConfig()
_WEIGHTS = LossWeights()

DEFAULTS: dict = {
    "version": CONFIG_VERSION,
    "scenario": {
        "model": "model1",
        "t_steps": 3000,
        "seed": 0,
        "waypoints": [[0.3, -0.3, 1.0]],
        "noise": {
            "family": "exponential",
            "process_std": 0.01,
            "gps_std": 0.5,
            "cam_std": 0.05,
            "mag_std": 0.02,
            "zero_mean_exponential": True,
        },
        "attack": {
            "kind": "none",
            "magnitude": 2.5,
            "start": 1000,
            "end": None,
            "axes": [0, 1, 2],
        },
    },
    "filter": {
        "warmup_steps": _FILTER.warmup_steps,
        "p0_scale": _FILTER.p0_scale,
        "eig_floor": _FILTER.eig_floor,
    },
    "detectors": {
        "selected": "cusum",
        "fa_target": 0.01,
        "cusum": {"drift": 1.0, "threshold": 5.0},
        "sprt": {"mu1": 2.0, "alpha": 0.05, "beta": 0.05, "threshold": None},
        "bht": {"mu1": 2.0, "window": 20, "prior_attack": 0.5,
                "threshold": 0.5},
        "transformer": {"threshold": None, "h_run": 3},
    },
    "training": {
        "epochs": _TRAIN.epochs,
        "lr": _TRAIN.lr,
        "batch_size": _TRAIN.batch_size,
        "stride": _TRAIN.stride,
        "clip_norm": _TRAIN.clip_norm,
        "seed": _TRAIN.seed,
        "weights": {"rec": _WEIGHTS.rec, "disc": _WEIGHTS.disc,
                    "cls": _WEIGHTS.cls},
        "network": {"window": 32, "d_model": 32, "n_heads": 2,
                    "n_layers": 2, "d_ff": 64},
    },
    "resilience": {"n_clean": 100},
    "benchmark": BenchmarkSpec().to_dict(),
}

SELECTABLE_DETECTORS = ("cusum", "sprt", "bht", "transformer")


def default_config() -> dict:
    return copy.deepcopy(DEFAULTS)


def _merge(defaults, user, path: str):
    """Defaults overlaid with user values; unknown or mistyped keys fail."""
    if not isinstance(user, dict):
        raise ConfigError(f"{path or 'config'}: expected an object, "
                          f"got {type(user).__name__}")
    out = {}
    unknown = set(user) - set(defaults)
    if unknown:
        where = f"{path}." if path else ""
        raise ConfigError(
            f"unknown config key(s): "
            f"{', '.join(where + k for k in sorted(unknown))}")
    for key, dval in defaults.items():
        if key not in user:
            out[key] = copy.deepcopy(dval)
        elif isinstance(dval, dict):
            out[key] = _merge(dval, user[key],
                              f"{path}.{key}" if path else key)
        else:
            out[key] = copy.deepcopy(user[key])
    return out


def parse_config(text: str, source: str = "<config>") -> dict:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be a JSON object")
    if "version" not in raw:
        raise ConfigError(f"{source}: missing mandatory 'version' field")
    if raw["version"] != CONFIG_VERSION:
        raise ConfigError(
            f"{source}: config version {raw['version']!r} not supported "
            f"(this build reads version {CONFIG_VERSION})")
    return _merge(DEFAULTS, raw, "")


def load_config(path: str | Path | None) -> dict:
    """Read + materialize a config file; None means pure defaults."""
    if path is None:
        return default_config()
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), source=str(path))


# ---------------------------------------------------------------------------
# builders: config dict -> runtime objects


def build_model(cfg: dict) -> PlantModel:
    return make_plant(cfg["scenario"]["model"])


def build_noise(cfg: dict, model: PlantModel) -> NoiseModel:
    nz = cfg["scenario"]["noise"]
    try:
        family = NoiseFamily(nz["family"])
    except ValueError:
        raise ConfigError(f"unknown noise family {nz['family']!r}") from None
    stds = [nz["gps_std"]] * 3 + [nz["cam_std"]] * 3
    if model.m == 7:
        stds.append(nz["mag_std"])
    return NoiseModel.from_std(
        family, nz["process_std"], np.array(stds, dtype=float), n=model.n,
        zero_mean_exponential=nz["zero_mean_exponential"])


def build_attack(cfg: dict, model: PlantModel) -> AttackModel:
    at = cfg["scenario"]["attack"]
    if at["kind"] == "none":
        return AttackModel.none(model.m)
    try:
        kind = AttackKind(at["kind"])
    except ValueError:
        raise ConfigError(f"unknown attack kind {at['kind']!r}") from None
    mask = gps_mask(model, axes=tuple(at["axes"]))
    attack = AttackModel(kind, mask, at["magnitude"], at["start"],
                         at["end"])
    attack.validate_for(model)
    return attack


def build_scenario(cfg: dict, seed_override: int | None = None) -> Scenario:
    sc = cfg["scenario"]
    model = build_model(cfg)
    waypoints = tuple(tuple(float(c) for c in w) for w in sc["waypoints"])
    return Scenario(
        model=model,
        noise=build_noise(cfg, model),
        attack=build_attack(cfg, model),
        controller=WaypointController(waypoints=waypoints),
        t_steps=sc["t_steps"],
        seed=sc["seed"] if seed_override is None else seed_override,
    )


def build_filter(cfg: dict) -> FilterConfig:
    f = cfg["filter"]
    return FilterConfig(warmup_steps=f["warmup_steps"],
                        p0_scale=f["p0_scale"], eig_floor=f["eig_floor"])


def build_classical_detector(cfg: dict, name: str | None = None):
    """Instantiate the selected classical detector from its param block."""
    det = cfg["detectors"]
    name = name or det["selected"]
    if name == "cusum":
        c = det["cusum"]
        return CusumDetector(drift=c["drift"], threshold=c["threshold"])
    if name == "sprt":
        s = det["sprt"]
        return SprtDetector(mu1=s["mu1"], alpha=s["alpha"], beta=s["beta"],
                            threshold=s["threshold"])
    if name == "bht":
        b = det["bht"]
        return BhtDetector(mu1=b["mu1"], window=b["window"],
                           prior_attack=b["prior_attack"],
                           threshold=b["threshold"])
    raise ConfigError(
        f"detector {name!r} is not selectable here (expected one of "
        f"{list(SELECTABLE_DETECTORS)}; the logistic baseline is fit "
        f"per-corpus inside the benchmark)")


def build_train_config(cfg: dict) -> TrainConfig:
    tr = cfg["training"]
    return TrainConfig(
        epochs=tr["epochs"], lr=tr["lr"], batch_size=tr["batch_size"],
        stride=tr["stride"], clip_norm=tr["clip_norm"], seed=tr["seed"],
        weights=LossWeights(rec=tr["weights"]["rec"],
                            disc=tr["weights"]["disc"],
                            cls=tr["weights"]["cls"]))


def build_benchmark_spec(cfg: dict,
                         seed_override: int | None = None) -> BenchmarkSpec:
    d = dict(cfg["benchmark"])
    if seed_override is not None:
        d["root_seed"] = seed_override
    return BenchmarkSpec.from_dict(d)
