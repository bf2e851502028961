"""Noise families for process and measurement disturbances.

Three zero-mean i.i.d. families are supported. Scales are stored in each
family's native parameter; helpers convert to/from a std-equivalent so a
scenario can say "gps noise 0.5 m" regardless of family:

    gaussian     sigma (std)            var = sigma^2
    laplacian    b (diversity)          var = 2 b^2
    exponential  lam (rate), shifted    var = 1 / lam^2

Exponential draws are shifted by -1/lam so their mean is zero (flag-controlled;
the raw one-sided variant is available for experiments that want a biased
disturbance on purpose).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from fdibench.errors import ContractViolation


class NoiseFamily(str, enum.Enum):
    GAUSSIAN = "gaussian"
    LAPLACIAN = "laplacian"
    EXPONENTIAL = "exponential"


def std_to_native(family: NoiseFamily, std: float) -> float:
    """Native scale parameter of `family` whose draw has standard deviation `std`."""
    if std < 0:
        raise ContractViolation(f"std must be >= 0, got {std}")
    if family == NoiseFamily.GAUSSIAN:
        return std
    if family == NoiseFamily.LAPLACIAN:
        return std / np.sqrt(2.0)
    if family == NoiseFamily.EXPONENTIAL:
        if std == 0:
            raise ContractViolation("exponential family cannot represent zero std")
        return 1.0 / std
    raise ContractViolation(f"unknown family {family!r}")


def native_var(family: NoiseFamily, scale: float) -> float:
    """Variance of a single draw with the given native scale."""
    _check_scale(family, scale)
    if family == NoiseFamily.GAUSSIAN:
        return scale * scale
    if family == NoiseFamily.LAPLACIAN:
        return 2.0 * scale * scale
    return 1.0 / (scale * scale)


def _check_scale(family: NoiseFamily, scale: float) -> None:
    if family in (NoiseFamily.GAUSSIAN, NoiseFamily.LAPLACIAN):
        if scale < 0:
            raise ContractViolation(f"{family.value} scale must be >= 0, got {scale}")
    elif family == NoiseFamily.EXPONENTIAL:
        if scale <= 0:
            raise ContractViolation(f"exponential rate must be > 0, got {scale}")
    else:
        raise ContractViolation(f"unknown family {family!r}")


@dataclass
class NoiseModel:
    """Disturbance description for one plant.

    process_cov is the n-by-n PSD process covariance Q. meas_scale holds the
    native per-channel scale of the measurement noise (length m). The
    effective measurement covariance R is diagonal with the per-family
    variance of each channel; R must be positive definite wherever a filter
    consumes it, which simply means every channel scale is nonzero.
    """

    family: NoiseFamily
    process_cov: np.ndarray
    meas_scale: np.ndarray
    zero_mean_exponential: bool = True

    def __post_init__(self):
        self.process_cov = np.atleast_2d(np.asarray(self.process_cov, dtype=float))
        self.meas_scale = np.atleast_1d(np.asarray(self.meas_scale, dtype=float))
        q = self.process_cov
        if q.shape[0] != q.shape[1]:
            raise ContractViolation(f"process_cov must be square, got {q.shape}")
        if not np.allclose(q, q.T):
            raise ContractViolation("process_cov must be symmetric")
        if np.any(np.linalg.eigvalsh(q) < -1e-12):
            raise ContractViolation("process_cov must be positive semidefinite")
        for s in self.meas_scale:
            _check_scale(self.family, float(s))
        if self.family != NoiseFamily.GAUSSIAN:
            off = q - np.diag(np.diag(q))
            if np.any(off != 0.0):
                raise ContractViolation(
                    f"non-diagonal process covariance is only supported for the "
                    f"gaussian family, not {self.family.value}"
                )

    @classmethod
    def from_std(
        cls,
        family: NoiseFamily,
        process_std: float | np.ndarray,
        meas_std: np.ndarray,
        n: int | None = None,
        zero_mean_exponential: bool = True,
    ) -> "NoiseModel":
        """Build a model from std-equivalents (diagonal Q)."""
        p = np.atleast_1d(np.asarray(process_std, dtype=float))
        if n is not None and p.size == 1:
            p = np.full(n, p[0])
        meas_std = np.atleast_1d(np.asarray(meas_std, dtype=float))
        scale = np.array([std_to_native(family, float(s)) for s in meas_std])
        return cls(
            family=family,
            process_cov=np.diag(p * p),
            meas_scale=scale,
            zero_mean_exponential=zero_mean_exponential,
        )

    def meas_cov(self) -> np.ndarray:
        """Effective measurement covariance R (diagonal)."""
        return np.diag([native_var(self.family, float(s)) for s in self.meas_scale])


def _draw(family: NoiseFamily, scale: np.ndarray, rng: np.random.Generator,
          zero_mean_exponential: bool = True) -> np.ndarray:
    if family == NoiseFamily.GAUSSIAN:
        return rng.normal(0.0, 1.0, size=scale.shape) * scale
    if family == NoiseFamily.LAPLACIAN:
        return rng.laplace(0.0, 1.0, size=scale.shape) * scale
    # exponential: native scale is the rate lam, numpy wants the mean 1/lam
    mean = 1.0 / scale
    x = rng.exponential(1.0, size=scale.shape) * mean
    if zero_mean_exponential:
        x = x - mean
    return x


def sample_noise(nm: NoiseModel, rng: np.random.Generator, dim: int) -> np.ndarray:
    """One measurement-noise vector of length `dim`.

    `dim` must match the model's channel count (a scalar scale broadcasts).
    """
    scale = nm.meas_scale
    if scale.size == 1:
        scale = np.full(dim, scale[0])
    if scale.size != dim:
        raise ContractViolation(
            f"noise model has {scale.size} channel scales, asked for dim={dim}"
        )
    return _draw(nm.family, scale, rng, nm.zero_mean_exponential)


def sample_process_noise(nm: NoiseModel, rng: np.random.Generator) -> np.ndarray:
    """One process-noise vector w with covariance Q.

    Gaussian supports a full PSD Q via Cholesky; the other families require a
    diagonal Q (enforced at construction) and draw per-component.
    """
    q = nm.process_cov
    n = q.shape[0]
    if nm.family == NoiseFamily.GAUSSIAN:
        z = rng.normal(0.0, 1.0, size=n)
        # cholesky of a PSD (possibly singular) matrix: add nothing, use eigh fallback
        try:
            chol = np.linalg.cholesky(q)
            return chol @ z
        except np.linalg.LinAlgError:
            w_eig, v = np.linalg.eigh(q)
            w_eig = np.clip(w_eig, 0.0, None)
            return v @ (np.sqrt(w_eig) * z)
    stds = np.sqrt(np.diag(q))
    out = np.zeros(n)
    nonzero = stds > 0
    if np.any(nonzero):
        native = np.array([std_to_native(nm.family, float(s)) for s in stds[nonzero]])
        out[nonzero] = _draw(nm.family, native, rng, nm.zero_mean_exponential)
    return out
