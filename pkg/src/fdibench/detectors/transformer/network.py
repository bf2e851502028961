"""Forward pass, composite loss, and hand-written reverse-mode gradients.

The network encodes a window of whitened residues and produces three
outputs per window:

* a reconstruction of the input (W x m),
* class logits over {clean, attack1, attack2} from the mean-pooled encoding,
* a per-position association discrepancy.

Each encoder layer runs two attention branches over the same window.  The
*series* branch is ordinary scaled-dot-product attention and is the one
whose output propagates.  The *prior* branch is a row-normalized Gaussian
kernel on position distance |i - j| with a learnable per-position width
sigma_i; it produces no activations, only a target distribution.  The
discrepancy at position i is the symmetrized KL divergence between the two
row distributions, averaged over heads and layers.

Blocks are post-norm (layer norm after each residual add).  That choice is
load-bearing for detection, not a style preference: normalizing the stream
after every add removes the linear bypass from embedding to reconstruction
head, so the network cannot learn an input-identity shortcut that would
reconstruct out-of-envelope (attacked) windows as well as clean ones.  The
encoding is bounded, the decoder learns the scale of clean residues, and
residues far outside the training envelope reconstruct poorly — which is
exactly the signal the anomaly score keys on.

The discrepancy term of the loss is adversarial by construction: the prior
widths are trained to *maximize* it while every series-side parameter is
trained to *minimize* it.  Because the prior depends only on the sigma
leaves and the series depends on everything else, the two stop-gradients
reduce to a sign flip on the sigma blocks — there is no shared path to
disentangle.  Finite-difference checks must therefore compare sigma blocks
against the sign-flipped objective and all other blocks against the plain
one; see tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from fdibench.errors import (ContractViolation, InvalidStateError,
                             NumericalError)

from .config import N_CLASSES, LossWeights, NetConfig

LN_EPS = 1e-5
EPS_SMOOTH = 1e-8


# ---------------------------------------------------------------------------
# small numerics helpers


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _softmax_backward(soft: np.ndarray, dsoft: np.ndarray) -> np.ndarray:
    """Gradient through y = softmax(z) given dL/dy; returns dL/dz."""
    inner = (dsoft * soft).sum(axis=-1, keepdims=True)
    return soft * (dsoft - inner)


def _layernorm_forward(x, gain, bias):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return gain * xhat + bias, (xhat, inv, gain)


def _layernorm_backward(dy, cache):
    xhat, inv, gain = cache
    dgain = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    dbias = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * gain
    dx = inv * (dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dgain, dbias


def positional_encoding(window: int, d_model: int) -> np.ndarray:
    """Fixed sinusoidal position table, (window, d_model)."""
    pos = np.arange(window)[:, None].astype(float)
    idx = np.arange(d_model)[None, :]
    angle = pos / np.power(10000.0, (2 * (idx // 2)) / d_model)
    table = np.empty((window, d_model))
    table[:, 0::2] = np.sin(angle[:, 0::2])
    table[:, 1::2] = np.cos(angle[:, 1::2])
    return table


def smooth_rows(rows: np.ndarray, window: int) -> np.ndarray:
    """Blend a row-stochastic array with a touch of uniform mass.

    Keeps rows stochastic while bounding entries away from zero so the
    KL terms stay finite even if a softmax underflows.
    """
    return (rows + EPS_SMOOTH) / (1.0 + window * EPS_SMOOTH)


def sym_kl_rows(p: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Symmetrized KL between matching row distributions (last axis).

    Both inputs are smoothed before the logs, so exact zeros are safe.
    """
    w = p.shape[-1]
    ph = smooth_rows(p, w)
    sh = smooth_rows(s, w)
    lp, ls = np.log(ph), np.log(sh)
    return 0.5 * ((ph * (lp - ls)).sum(-1) + (sh * (ls - lp)).sum(-1))


def prior_rows(sigma: np.ndarray, window: int) -> np.ndarray:
    """Row-stochastic Gaussian kernel on |i-j| with per-row width sigma_i."""
    d2 = _sq_dist(window)
    with np.errstate(divide="ignore", invalid="ignore"):
        logits = -d2 / (2.0 * sigma[:, None] ** 2)
    if not np.isfinite(logits).all():
        raise NumericalError("prior attention width collapsed to zero")
    return _softmax(logits)


def _sq_dist(window: int) -> np.ndarray:
    idx = np.arange(window, dtype=float)
    return (idx[:, None] - idx[None, :]) ** 2


# ---------------------------------------------------------------------------
# forward


@dataclass
class ForwardResult:
    """Everything the detector consumes, plus caches for the backward pass."""

    recon: np.ndarray          # (B, W, m)
    cls_logits: np.ndarray     # (B, n_classes)
    disc: np.ndarray           # (B, W) — mean over heads and layers
    series: list               # per layer: (B, H, W, W)
    priors: list               # per layer: (W, W)
    cache: dict | None = None


def forward(config: NetConfig, params: dict, X: np.ndarray,
            want_cache: bool = False) -> ForwardResult:
    """Run a batch of windows through the network.

    X has shape (B, window, n_channels).  Deterministic: no randomness
    anywhere in the pass, and windows never interact across the batch.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 3 or X.shape[1] != config.window or X.shape[2] != config.n_channels:
        raise ContractViolation(
            f"window batch must be (B, {config.window}, {config.n_channels}), "
            f"got {X.shape}")
    if X.shape[0] == 0:
        raise ContractViolation("window batch is empty")
    if not np.isfinite(X).all():
        raise InvalidStateError("window batch contains non-finite values")

    B, W, _ = X.shape
    d, H, dh, L = config.d_model, config.n_heads, config.d_head, config.n_layers
    pos = positional_encoding(W, d)

    E = X @ params["embed_W"] + params["embed_b"] + pos[None]
    disc_layers = []
    series_list, prior_list = [], []
    layer_caches = []

    for i in range(L):
        p = f"layer{i}."
        E_in = E
        Q = E_in @ params[p + "Wq"] + params[p + "bq"]
        K = E_in @ params[p + "Wk"] + params[p + "bk"]
        V = E_in @ params[p + "Wv"] + params[p + "bv"]
        Qh = Q.reshape(B, W, H, dh).transpose(0, 2, 1, 3)
        Kh = K.reshape(B, W, H, dh).transpose(0, 2, 1, 3)
        Vh = V.reshape(B, W, H, dh).transpose(0, 2, 1, 3)
        logits = Qh @ Kh.swapaxes(-1, -2) / math.sqrt(dh)
        if not np.isfinite(logits).all():
            raise NumericalError(f"non-finite attention logits in layer {i}")
        S = _softmax(logits)                      # (B, H, W, W)
        AVh = S @ Vh
        AV = AVh.transpose(0, 2, 1, 3).reshape(B, W, d)
        attn = AV @ params[p + "Wo"] + params[p + "bo"]
        E_mid, ln1c = _layernorm_forward(E_in + attn, params[p + "ln1_g"],
                                         params[p + "ln1_b"])
        a1 = E_mid @ params[p + "W1"] + params[p + "b1"]
        t1 = np.tanh(a1)
        F = t1 @ params[p + "W2"] + params[p + "b2"]
        E_out, ln2c = _layernorm_forward(E_mid + F, params[p + "ln2_g"],
                                         params[p + "ln2_b"])

        sigma = _softplus(params[p + "sigma_raw"])
        P = prior_rows(sigma, W)                   # (W, W)
        Ph = smooth_rows(P, W)
        Sh = smooth_rows(S, W)
        logP, logS = np.log(Ph), np.log(Sh)
        kl_ps = (Ph[None, None] * (logP[None, None] - logS)).sum(-1)
        kl_sp = (Sh * (logS - logP[None, None])).sum(-1)
        disc_layers.append(0.5 * (kl_ps + kl_sp).mean(axis=1))  # (B, W)

        series_list.append(S)
        prior_list.append(P)
        if want_cache:
            layer_caches.append({
                "E_in": E_in, "Qh": Qh, "Kh": Kh, "Vh": Vh,
                "S": S, "AV": AV, "ln1c": ln1c, "E_mid": E_mid,
                "t1": t1, "ln2c": ln2c,
                "sigma": sigma, "P": P, "Ph": Ph, "Sh": Sh,
                "logP": logP, "logS": logS,
            })
        E = E_out

    disc = np.mean(disc_layers, axis=0)            # (B, W)
    recon = E @ params["recon_W"] + params["recon_b"]
    pooled = E.mean(axis=1)
    cls_logits = pooled @ params["cls_W"] + params["cls_b"]

    cache = None
    if want_cache:
        cache = {"X": X, "layers": layer_caches, "E_final": E, "pooled": pooled}
    return ForwardResult(recon=recon, cls_logits=cls_logits, disc=disc,
                         series=series_list, priors=prior_list, cache=cache)


def embed_window(config: NetConfig, params: dict, window: np.ndarray
                 ) -> np.ndarray:
    """Input stage alone: linear projection plus the positional table."""
    window = np.asarray(window, dtype=float)
    if window.shape != (config.window, config.n_channels):
        raise ContractViolation(
            f"window must be ({config.window}, {config.n_channels}), "
            f"got {window.shape}")
    pos = positional_encoding(config.window, config.d_model)
    return window @ params["embed_W"] + params["embed_b"] + pos


def anomaly_attention(config: NetConfig, params: dict, encoded: np.ndarray,
                      layer: int = 0) -> dict:
    """Run one layer's attention sub-block on a single encoded sequence.

    Returns the per-head series association, the shared prior association,
    the per-position discrepancy, and the transformed sequence (the
    normalized residual sum — exactly what the full network feeds to its
    feed-forward half).
    """
    encoded = np.asarray(encoded, dtype=float)
    W, d = config.window, config.d_model
    if encoded.shape != (W, d):
        raise ContractViolation(f"encoded must be ({W}, {d}), got {encoded.shape}")
    if not np.isfinite(encoded).all():
        raise InvalidStateError("encoded sequence contains non-finite values")
    H, dh = config.n_heads, config.d_head
    p = f"layer{layer}."
    h1 = encoded[None]
    Q = h1 @ params[p + "Wq"] + params[p + "bq"]
    K = h1 @ params[p + "Wk"] + params[p + "bk"]
    V = h1 @ params[p + "Wv"] + params[p + "bv"]
    Qh = Q.reshape(1, W, H, dh).transpose(0, 2, 1, 3)
    Kh = K.reshape(1, W, H, dh).transpose(0, 2, 1, 3)
    Vh = V.reshape(1, W, H, dh).transpose(0, 2, 1, 3)
    logits = Qh @ Kh.swapaxes(-1, -2) / math.sqrt(dh)
    if not np.isfinite(logits).all():
        raise NumericalError("non-finite attention logits")
    S = _softmax(logits)
    AV = (S @ Vh).transpose(0, 2, 1, 3).reshape(1, W, d)
    attn = (AV @ params[p + "Wo"] + params[p + "bo"])[0]
    transformed, _ = _layernorm_forward(encoded + attn, params[p + "ln1_g"],
                                        params[p + "ln1_b"])
    sigma = _softplus(params[p + "sigma_raw"])
    P = prior_rows(sigma, W)
    disc = sym_kl_rows(P[None, None], S).mean(axis=(0, 1))   # (W,)
    return {"series": S[0], "prior": P, "discrepancy": disc,
            "transformed": transformed}


# ---------------------------------------------------------------------------
# loss and gradients


def loss_terms(config: NetConfig, params: dict, X: np.ndarray,
               window_labels: np.ndarray | None = None,
               weights: LossWeights = LossWeights(),
               result: ForwardResult | None = None
               ) -> tuple[float, dict]:
    """Composite loss: weighted reconstruction + discrepancy + class CE.

    window_labels is an int array (B,): -1 marks an unlabeled window, else
    a class index.  The CE term is exactly zero when nothing is labeled.
    """
    if result is None:
        result = forward(config, params, X)
    B = X.shape[0]
    labels = _check_labels(window_labels, B)
    mse = float(np.mean((result.recon - X) ** 2))
    disc_mean = float(result.disc.mean())
    ce = 0.0
    labeled = np.flatnonzero(labels >= 0)
    if labeled.size:
        lo = result.cls_logits[labeled]
        lo = lo - lo.max(axis=-1, keepdims=True)
        logz = np.log(np.exp(lo).sum(axis=-1))
        ce = float(np.mean(logz - lo[np.arange(labeled.size), labels[labeled]]))
    total = weights.rec * mse + weights.disc * disc_mean + weights.cls * ce
    breakdown = {"rec": mse, "disc": disc_mean, "cls": ce, "total": total}
    return total, breakdown


def _check_labels(window_labels, batch: int) -> np.ndarray:
    if window_labels is None:
        return np.full(batch, -1, dtype=int)
    labels = np.asarray(window_labels, dtype=int)
    if labels.shape != (batch,):
        raise ContractViolation(
            f"window_labels must be ({batch},), got {labels.shape}")
    if labels.max(initial=-1) >= N_CLASSES or labels.min(initial=0) < -1:
        raise ContractViolation("window labels must be -1 or a class index")
    return labels


def grad(config: NetConfig, params: dict, X: np.ndarray,
         window_labels: np.ndarray | None = None,
         weights: LossWeights = LossWeights()
         ) -> tuple[float, dict, dict]:
    """Loss value, per-term breakdown, and gradients for every block.

    Gradients are *descent* directions for the training objective: plain
    loss gradients for all series-side blocks, sign-flipped discrepancy
    gradients for the sigma blocks (which climb the discrepancy).
    """
    X = np.asarray(X, dtype=float)
    res = forward(config, params, X, want_cache=True)
    total, breakdown = loss_terms(config, params, X, window_labels, weights,
                                  result=res)
    B, W, m = X.shape
    d, H, dh, L = config.d_model, config.n_heads, config.d_head, config.n_layers
    labels = _check_labels(window_labels, B)
    cache = res.cache
    g: dict[str, np.ndarray] = {}

    # reconstruction head
    E_final = cache["E_final"]
    d_recon = (2.0 * weights.rec / (B * W * m)) * (res.recon - X)
    g["recon_W"] = E_final.reshape(-1, d).T @ d_recon.reshape(-1, m)
    g["recon_b"] = d_recon.sum(axis=(0, 1))
    dE = d_recon @ params["recon_W"].T

    # classification head (labeled windows only)
    dlogits_cls = np.zeros((B, N_CLASSES))
    labeled = np.flatnonzero(labels >= 0)
    if labeled.size and weights.cls > 0:
        probs = _softmax(res.cls_logits[labeled])
        probs[np.arange(labeled.size), labels[labeled]] -= 1.0
        dlogits_cls[labeled] = probs * (weights.cls / labeled.size)
    g["cls_W"] = cache["pooled"].T @ dlogits_cls
    g["cls_b"] = dlogits_cls.sum(axis=0)
    dE = dE + (dlogits_cls @ params["cls_W"].T)[:, None, :] / W

    # one shared coefficient for every (batch, head, position) KL term
    c_disc = weights.disc / (B * W * L * H)
    inv_smooth = 1.0 / (1.0 + W * EPS_SMOOTH)
    d2 = _sq_dist(W)

    for i in reversed(range(L)):
        p = f"layer{i}."
        lc = cache["layers"][i]

        # output layer norm, then the feed-forward half
        dR2, dg2, db2 = _layernorm_backward(dE, lc["ln2c"])
        g[p + "ln2_g"], g[p + "ln2_b"] = dg2, db2
        dF = dR2
        t1 = lc["t1"]
        g[p + "W2"] = t1.reshape(-1, config.d_ff).T @ dF.reshape(-1, d)
        g[p + "b2"] = dF.sum(axis=(0, 1))
        da1 = (dF @ params[p + "W2"].T) * (1.0 - t1 * t1)
        g[p + "W1"] = lc["E_mid"].reshape(-1, d).T @ da1.reshape(-1, config.d_ff)
        g[p + "b1"] = da1.sum(axis=(0, 1))
        dE_mid = dR2 + da1 @ params[p + "W1"].T

        # mid layer norm, then the attention half
        dR1, dg1, db1 = _layernorm_backward(dE_mid, lc["ln1c"])
        g[p + "ln1_g"], g[p + "ln1_b"] = dg1, db1
        d_attn = dR1
        g[p + "Wo"] = lc["AV"].reshape(-1, d).T @ d_attn.reshape(-1, d)
        g[p + "bo"] = d_attn.sum(axis=(0, 1))
        dAVh = (d_attn @ params[p + "Wo"].T).reshape(B, W, H, dh).transpose(0, 2, 1, 3)
        S, Vh = lc["S"], lc["Vh"]
        dS = dAVh @ Vh.swapaxes(-1, -2)
        dVh = S.swapaxes(-1, -2) @ dAVh

        # series side of the discrepancy (minimized; prior held fixed)
        Sh, Ph = lc["Sh"], lc["Ph"]
        logS, logP = lc["logS"], lc["logP"]
        if weights.disc > 0:
            dSh = (0.5 * c_disc) * (logS - logP[None, None] + 1.0
                                    - Ph[None, None] / Sh)
            dS = dS + dSh * inv_smooth

        dlogits = _softmax_backward(S, dS) / math.sqrt(dh)
        dQh = dlogits @ lc["Kh"]
        dKh = dlogits.swapaxes(-1, -2) @ lc["Qh"]

        dQ = dQh.transpose(0, 2, 1, 3).reshape(B, W, d)
        dK = dKh.transpose(0, 2, 1, 3).reshape(B, W, d)
        dV = dVh.transpose(0, 2, 1, 3).reshape(B, W, d)
        E_in = lc["E_in"]
        ein_flat = E_in.reshape(-1, d)
        g[p + "Wq"] = ein_flat.T @ dQ.reshape(-1, d)
        g[p + "bq"] = dQ.sum(axis=(0, 1))
        g[p + "Wk"] = ein_flat.T @ dK.reshape(-1, d)
        g[p + "bk"] = dK.sum(axis=(0, 1))
        g[p + "Wv"] = ein_flat.T @ dV.reshape(-1, d)
        g[p + "bv"] = dV.sum(axis=(0, 1))
        dE = dR1 + dQ @ params[p + "Wq"].T + dK @ params[p + "Wk"].T \
            + dV @ params[p + "Wv"].T

        # prior side of the discrepancy (maximized; series held fixed)
        if weights.disc > 0:
            dPh = ((0.5 * c_disc) * (logP[None, None] - logS + 1.0
                                     - Sh / Ph[None, None])).sum(axis=(0, 1))
            dP = -(dPh * inv_smooth)           # ascent on the discrepancy
            dt = _softmax_backward(lc["P"], dP)
            sigma = lc["sigma"]
            dsigma = (dt * d2).sum(axis=1) / sigma ** 3
            g[p + "sigma_raw"] = dsigma * _sigmoid(params[p + "sigma_raw"])
        else:
            g[p + "sigma_raw"] = np.zeros(W)

    g["embed_W"] = X.reshape(-1, m).T @ dE.reshape(-1, d)
    g["embed_b"] = dE.sum(axis=(0, 1))

    for name, arr in g.items():
        if not np.isfinite(arr).all():
            raise NumericalError(f"non-finite gradient in block {name}")
    return total, breakdown, g
