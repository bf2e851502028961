"""Parameter store, initialization, and checkpoint serialization.

Parameters live in a plain ``dict[str, np.ndarray]`` keyed by block name.
``param_spec`` fixes the canonical block order; the checkpoint format and
the gradient dictionaries both follow it, so a file written on one machine
reloads bit-identically on another.
"""

from __future__ import annotations

import json
import math

import numpy as np

from fdibench.errors import ConfigError, ContractViolation
from fdibench.storage import atomic_write_bytes, sha256_bytes
from fdibench.version import RNG_ALGORITHM, __version__

from .config import N_CLASSES, NetConfig

CHECKPOINT_FORMAT_VERSION = 1
_DTYPE = "<f8"


def param_spec(config: NetConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Canonical ordered list of (block name, shape)."""
    m, d, w, dff = (config.n_channels, config.d_model, config.window,
                    config.d_ff)
    spec: list[tuple[str, tuple[int, ...]]] = [
        ("embed_W", (m, d)),
        ("embed_b", (d,)),
    ]
    for i in range(config.n_layers):
        p = f"layer{i}."
        spec += [
            (p + "Wq", (d, d)), (p + "bq", (d,)),
            (p + "Wk", (d, d)), (p + "bk", (d,)),
            (p + "Wv", (d, d)), (p + "bv", (d,)),
            (p + "Wo", (d, d)), (p + "bo", (d,)),
            (p + "sigma_raw", (w,)),
            (p + "ln1_g", (d,)), (p + "ln1_b", (d,)),
            (p + "ln2_g", (d,)), (p + "ln2_b", (d,)),
            (p + "W1", (d, dff)), (p + "b1", (dff,)),
            (p + "W2", (dff, d)), (p + "b2", (d,)),
        ]
    spec += [
        ("recon_W", (d, m)), ("recon_b", (m,)),
        ("cls_W", (d, N_CLASSES)), ("cls_b", (N_CLASSES,)),
    ]
    return spec


def param_count(config: NetConfig) -> int:
    return sum(int(np.prod(shape)) for _, shape in param_spec(config))


def init_params(config: NetConfig, seed: int) -> dict[str, np.ndarray]:
    """Seeded initialization.

    Weight matrices draw U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases start
    at zero, layer-norm gains at one.  The prior-width leaves start where
    softplus maps them to window/4, a kernel wide enough to see most of
    the window but narrow enough to differ from the uniform row.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    params: dict[str, np.ndarray] = {}
    sigma0 = config.window / 4.0
    raw0 = math.log(math.expm1(sigma0))
    for name, shape in param_spec(config):
        base = name.split(".")[-1]
        if base == "sigma_raw":
            params[name] = np.full(shape, raw0)
        elif base in ("ln1_g", "ln2_g"):
            params[name] = np.ones(shape)
        elif len(shape) == 1:
            params[name] = np.zeros(shape)
        else:
            bound = 1.0 / math.sqrt(shape[0])
            params[name] = rng.uniform(-bound, bound, size=shape)
    return params


def zeros_like_params(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}


def copy_params(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: v.copy() for k, v in params.items()}


def global_grad_norm(grads: dict[str, np.ndarray]) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    return math.sqrt(total)


def clip_grads(grads: dict[str, np.ndarray], max_norm: float
               ) -> tuple[dict[str, np.ndarray], float]:
    """Scale the whole gradient so its global L2 norm is <= max_norm."""
    norm = global_grad_norm(grads)
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm


def check_params_match(config: NetConfig, params: dict[str, np.ndarray]) -> None:
    spec = param_spec(config)
    names = [n for n, _ in spec]
    if list(params.keys()) != names and set(params.keys()) != set(names):
        missing = set(names) - set(params.keys())
        extra = set(params.keys()) - set(names)
        raise ContractViolation(
            f"parameter blocks do not match config (missing={sorted(missing)}, "
            f"unexpected={sorted(extra)})")
    for name, shape in spec:
        if params[name].shape != shape:
            raise ContractViolation(
                f"block {name} has shape {params[name].shape}, expected {shape}")


def save_checkpoint(path: str, config: NetConfig, params: dict[str, np.ndarray],
                    *, seed: int | None = None,
                    extra: dict | None = None) -> str:
    """Write a checkpoint: one JSON header line, then raw float64 blocks.

    Blocks are concatenated little-endian in param_spec order.  Returns the
    sha256 hex digest of the written bytes.
    """
    check_params_match(config, params)
    spec = param_spec(config)
    header = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": "residue-window-detector",
        "package_version": __version__,
        "rng": RNG_ALGORITHM,
        "dtype": _DTYPE,
        "config": config.to_dict(),
        "blocks": [[name, list(shape)] for name, shape in spec],
    }
    if seed is not None:
        header["seed"] = seed
    if extra:
        header["extra"] = extra
    payload = json.dumps(header, sort_keys=True).encode("utf-8") + b"\n"
    for name, _ in spec:
        payload += np.ascontiguousarray(params[name], dtype=_DTYPE).tobytes()
    atomic_write_bytes(path, payload)
    return sha256_bytes(payload)


def load_checkpoint(path: str) -> tuple[NetConfig, dict[str, np.ndarray], dict]:
    """Read a checkpoint back; returns (config, params, header)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    nl = blob.find(b"\n")
    if nl < 0:
        raise ConfigError(f"{path}: not a checkpoint (no header line)")
    try:
        header = json.loads(blob[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: malformed checkpoint header: {exc}") from exc
    if header.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ConfigError(
            f"{path}: unsupported checkpoint format_version "
            f"{header.get('format_version')!r}")
    if header.get("dtype") != _DTYPE:
        raise ConfigError(f"{path}: unsupported dtype {header.get('dtype')!r}")
    config = NetConfig.from_dict(header["config"])
    spec = param_spec(config)
    declared = [(name, tuple(shape)) for name, shape in header["blocks"]]
    if declared != spec:
        raise ConfigError(f"{path}: block table does not match its config")
    body = blob[nl + 1:]
    expected = sum(int(np.prod(s)) for _, s in spec) * 8
    if len(body) != expected:
        raise ConfigError(
            f"{path}: payload is {len(body)} bytes, expected {expected}")
    params: dict[str, np.ndarray] = {}
    offset = 0
    for name, shape in spec:
        n = int(np.prod(shape))
        arr = np.frombuffer(body, dtype=_DTYPE, count=n, offset=offset)
        params[name] = arr.reshape(shape).copy()
        offset += n * 8
    return config, params, header
