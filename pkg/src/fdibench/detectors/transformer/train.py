"""Window extraction and the mini-batch training loop."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from fdibench.attacks import LABEL_CLEAN
from fdibench.ekf import ResidueSequence
from fdibench.errors import (ContractViolation, NumericalError,
                             TrainingDivergedError)

from .config import CLASS_NAMES, NetConfig, TrainConfig
from .network import forward, grad, loss_terms
from .params import (clip_grads, copy_params, init_params, param_count)


def class_index(label: str) -> int:
    try:
        return CLASS_NAMES.index(label)
    except ValueError:
        raise ContractViolation(f"unknown class label {label!r}") from None


def window_label(step_labels: list, window: int) -> int:
    """Majority rule: a window is an attack window when more than half of
    its steps carry an attack label; the class is the most common one."""
    hot = [lab for lab in step_labels if lab != LABEL_CLEAN]
    if len(hot) * 2 > window:
        return class_index(Counter(hot).most_common(1)[0][0])
    return 0


def extract_windows(seq: ResidueSequence, window: int, stride: int,
                    labeled: bool) -> tuple[np.ndarray, np.ndarray]:
    """Slice a residue stream into stride-spaced windows.

    Windows never overlap the warm-up region: the first admissible start
    is the first post-warm-up step.  Unlabeled sequences get the tag -1
    on every window.
    """
    data = seq.detector_input(whitened=True)
    t = data.shape[0]
    first = int(seq.warmup.sum())
    starts = list(range(first, t - window + 1, stride))
    if not starts:
        return (np.empty((0, window, seq.m)), np.empty(0, dtype=int))
    X = np.stack([data[s:s + window] for s in starts])
    if labeled:
        labels = np.array([window_label(seq.labels[s:s + window], window)
                           for s in starts], dtype=int)
    else:
        labels = np.full(len(starts), -1, dtype=int)
    return X, labels


@dataclass
class TrainResult:
    """Trained parameters plus the per-epoch log."""

    config: NetConfig
    train_config: TrainConfig
    params: dict
    log: list = field(default_factory=list)
    initial_loss: float = float("nan")
    final_loss: float = float("nan")
    n_windows: int = 0
    n_labeled: int = 0
    param_count: int = 0


def dataset_loss(config: NetConfig, params: dict, X: np.ndarray,
                 labels: np.ndarray, weights, batch_size: int = 64
                 ) -> tuple[float, dict]:
    """Loss over a whole window set, evaluated in batches.

    Reconstruction and discrepancy terms average over windows; the CE term
    averages over labeled windows only, matching loss_terms semantics.
    """
    n = X.shape[0]
    mse_sum = disc_sum = ce_sum = 0.0
    n_lab = 0
    for start in range(0, n, batch_size):
        sl = slice(start, min(start + batch_size, n))
        b = X[sl].shape[0]
        _, bd = loss_terms(config, params, X[sl], labels[sl], weights)
        mse_sum += bd["rec"] * b
        disc_sum += bd["disc"] * b
        lab = int((labels[sl] >= 0).sum())
        ce_sum += bd["cls"] * lab
        n_lab += lab
    mse = mse_sum / n
    disc = disc_sum / n
    ce = ce_sum / n_lab if n_lab else 0.0
    total = weights.rec * mse + weights.disc * disc + weights.cls * ce
    return total, {"rec": mse, "disc": disc, "cls": ce, "total": total}


def train(labeled: list, unlabeled: list,
          net_config: NetConfig | None = None,
          train_config: TrainConfig = TrainConfig()) -> TrainResult:
    """Fit the detector on residue streams with mini-batch gradient descent.

    ``labeled`` sequences contribute windows tagged with a class from their
    step labels; ``unlabeled`` sequences contribute reconstruction and
    discrepancy signal only.  Both kinds are required unless the config
    explicitly waives one side.
    """
    if not labeled and not train_config.allow_unlabeled_only:
        raise ContractViolation(
            "no labeled sequences (set allow_unlabeled_only to waive)")
    if not unlabeled and not train_config.allow_labeled_only:
        raise ContractViolation(
            "no unlabeled sequences (set allow_labeled_only to waive)")
    seqs = list(labeled) + list(unlabeled)
    if not seqs:
        raise ContractViolation("no training sequences at all")
    if net_config is None:
        net_config = NetConfig(n_channels=seqs[0].m)
    for seq in seqs:
        if seq.m != net_config.n_channels:
            raise ContractViolation(
                f"sequence has {seq.m} channels, network expects "
                f"{net_config.n_channels}")

    parts = [extract_windows(s, net_config.window, train_config.stride, True)
             for s in labeled]
    parts += [extract_windows(s, net_config.window, train_config.stride, False)
              for s in unlabeled]
    X = np.concatenate([p[0] for p in parts]) if parts else np.empty((0,))
    y = np.concatenate([p[1] for p in parts]) if parts else np.empty(0, int)
    if X.shape[0] == 0:
        raise ContractViolation(
            f"no admissible training windows (need at least "
            f"{net_config.window} post-warm-up steps)")

    params = init_params(net_config, train_config.seed)
    result = TrainResult(config=net_config, train_config=train_config,
                         params=params, n_windows=int(X.shape[0]),
                         n_labeled=int((y >= 0).sum()),
                         param_count=param_count(net_config))
    w = train_config.weights
    result.initial_loss, _ = dataset_loss(net_config, params, X, y, w)
    if train_config.epochs == 0:
        result.final_loss = result.initial_loss
        return result

    rng = np.random.Generator(np.random.Philox(train_config.seed))
    n = X.shape[0]
    bs = train_config.batch_size
    for epoch in range(train_config.epochs):
        perm = rng.permutation(n)
        sums = {"rec": 0.0, "disc": 0.0, "cls": 0.0, "total": 0.0}
        norms = []
        n_batches = 0
        for start in range(0, n, bs):
            idx = perm[start:start + bs]
            last_good = copy_params(params)
            try:
                total, bd, g = grad(net_config, params, X[idx], y[idx], w)
            except NumericalError as exc:
                raise TrainingDivergedError(
                    f"epoch {epoch}: {exc}", last_checkpoint=last_good
                ) from exc
            if not np.isfinite(total):
                raise TrainingDivergedError(
                    f"epoch {epoch}: loss became non-finite",
                    last_checkpoint=last_good)
            g, norm = clip_grads(g, train_config.clip_norm)
            for name in params:
                params[name] -= train_config.lr * g[name]
            for key in sums:
                sums[key] += bd[key]
            norms.append(norm)
            n_batches += 1
        result.log.append({
            "epoch": epoch,
            **{k: sums[k] / n_batches for k in sums},
            "grad_norm": float(np.mean(norms)),
        })
    result.final_loss, _ = dataset_loss(net_config, params, X, y, w)
    return result
