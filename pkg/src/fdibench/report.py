"""Figures for a finished benchmark: one PNG per plant, next to the CSVs.

Rendering is pinned for byte-reproducibility: the Agg backend, a fixed
dpi, a fixed metadata block (matplotlib would otherwise stamp its version
string), and bars drawn in a stable detector order.
"""

from __future__ import annotations

import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from fdibench.storage import atomic_write_bytes, sha256_bytes  # noqa: E402

DETECTOR_COLORS = {
    "cusum": "#4c72b0",
    "sprt": "#dd8452",
    "bht": "#55a868",
    "logistic": "#c44e52",
    "transformer": "#8172b3",
}
FIG_DPI = 120


def render_figures(result, out_dir: str | Path) -> dict:
    """Write summary-<plant>.png files; return relative path -> digest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    digests = {}
    for model in result.spec.models:
        rows = [r for r in result.summary_rows if r.model == model]
        if not rows:
            continue
        name = f"summary-{model}.png"
        data = _model_figure_png(result.spec, model, rows)
        atomic_write_bytes(out_dir / name, data)
        digests[name] = sha256_bytes(data)
    return digests


def _model_figure_png(spec, model: str, rows) -> bytes:
    cells = [(n, a) for n in spec.noises for a in spec.attacks]
    detectors = spec.ordered_detectors()
    by_key = {(r.noise, r.attack, r.detector): r for r in rows}

    fig, (ax_f1, ax_delay) = plt.subplots(
        2, 1, figsize=(1.8 + 1.6 * len(cells), 6.0), sharex=True)
    x = np.arange(len(cells), dtype=float)
    width = 0.8 / max(len(detectors), 1)
    for j, det in enumerate(detectors):
        offs = x + (j - (len(detectors) - 1) / 2.0) * width
        f1 = [_value(by_key.get((n, a, det)), "f1") for n, a in cells]
        delay = [_value(by_key.get((n, a, det)), "mean_delay")
                 for n, a in cells]
        color = DETECTOR_COLORS.get(det, "#777777")
        ax_f1.bar(offs, f1, width=width, label=det, color=color)
        ax_delay.bar(offs, delay, width=width, color=color)
    ax_f1.set_ylabel("per-step F1 (seed mean)")
    ax_f1.set_ylim(0.0, 1.05)
    ax_f1.axhline(0.85, color="#999999", lw=0.8, ls="--")
    ax_f1.legend(loc="lower right", fontsize=8, ncol=len(detectors))
    ax_f1.set_title(f"{model}: detection quality per cell")
    ax_delay.set_ylabel("mean onset delay (steps)")
    ax_delay.set_xticks(x)
    ax_delay.set_xticklabels([f"{n}\n{a}" for n, a in cells], fontsize=8)
    fig.tight_layout()

    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=FIG_DPI,
                metadata={"Software": "fdibench"})
    plt.close(fig)
    return buf.getvalue()


def _value(row, attr: str) -> float:
    if row is None:
        return 0.0
    v = getattr(row, attr)
    return 0.0 if v is None else float(v)
