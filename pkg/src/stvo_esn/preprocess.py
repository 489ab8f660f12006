"""PCA reduction, random-mask encoding and the drive-current mapping."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .ddtea import StvoConfig
from .errors import DegenerateData, DimensionMismatch

MASK_PRNG = "numpy.PCG64"
ARTIFACT_VERSION = 1


@dataclass(frozen=True, eq=False)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (n_f, n_i), orthonormal rows
    explained_variance: np.ndarray
    total_variance: float

    @property
    def n_f(self) -> int:
        return self.components.shape[0]

    @property
    def explained_variance_ratio(self) -> np.ndarray:
        return self.explained_variance / self.total_variance

    def to_arrays(self) -> dict:
        return {
            "pca_mean": self.mean,
            "pca_components": self.components,
            "pca_explained_variance": self.explained_variance,
            "pca_total_variance": np.array(self.total_variance),
        }

    @classmethod
    def from_arrays(cls, arrays) -> "PcaModel":
        return cls(
            mean=np.asarray(arrays["pca_mean"]),
            components=np.asarray(arrays["pca_components"]),
            explained_variance=np.asarray(arrays["pca_explained_variance"]),
            total_variance=float(arrays["pca_total_variance"]),
        )

    def save(self, path) -> None:
        np.savez(path, version=np.array(ARTIFACT_VERSION), **self.to_arrays())

    @classmethod
    def load(cls, path) -> "PcaModel":
        with np.load(path) as f:
            return cls.from_arrays(f)


def covariance(x: np.ndarray, block: int = 8192) -> tuple[np.ndarray, np.ndarray]:
    """Mean and sample covariance, accumulated in row blocks."""
    x = np.asarray(x)
    n = x.shape[0]
    mean = x.mean(axis=0, dtype=float)
    cov = np.zeros((x.shape[1], x.shape[1]))
    for lo in range(0, n, block):
        xc = x[lo:lo + block].astype(float) - mean
        cov += xc.T @ xc
    return mean, cov / (n - 1)


def fit_pca(x_train, variance_target: float | None = 0.8, n_components: int | None = None) -> PcaModel:
    """Principal directions of the mean-centred training rows.

    Keeps the smallest number of directions whose cumulative explained
    variance ratio reaches ``variance_target``, unless ``n_components`` is
    given explicitly.
    """
    x = np.asarray(x_train)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DegenerateData("need a 2-D matrix with at least two rows")
    mean, cov = covariance(x)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]
    total = float(evals.sum())
    if total <= 0.0:
        raise DegenerateData("training covariance is identically zero")
    if n_components is not None:
        if n_components < 1:
            raise ValueError("n_components must be >= 1")
        k = min(int(n_components), evals.size)
    else:
        if not 0.0 < variance_target <= 1.0:
            raise ValueError("variance_target must lie in (0, 1]")
        ratio = np.cumsum(evals) / total
        k = int(np.searchsorted(ratio, variance_target - 1e-12) + 1)
        k = min(k, evals.size)
    comps = evecs[:, :k].T.copy()
    # Sign convention: largest-magnitude loading of each direction is positive.
    flip = np.sign(comps[np.arange(k), np.argmax(np.abs(comps), axis=1)])
    comps *= flip[:, None]
    return PcaModel(mean=mean, components=comps, explained_variance=evals[:k].copy(), total_variance=total)


def project(model: PcaModel, x) -> np.ndarray:
    """``C (x - mean)`` for one image ``(n_i,)`` or a batch of rows ``(m, n_i)``."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.mean.shape[0]:
        raise DimensionMismatch(f"image has {x.shape[-1]} pixels, model expects {model.mean.shape[0]}")
    return (x - model.mean) @ model.components.T


@dataclass(frozen=True, eq=False)
class RandomMask:
    matrix: np.ndarray  # (n_theta, n_f)
    seed: int

    @property
    def n_theta(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_f(self) -> int:
        return self.matrix.shape[1]

    def to_dict(self) -> dict:
        return {"version": ARTIFACT_VERSION, "prng": MASK_PRNG, "seed": self.seed,
                "n_theta": self.n_theta, "n_f": self.n_f}

    @classmethod
    def from_dict(cls, d: dict) -> "RandomMask":
        if d.get("prng", MASK_PRNG) != MASK_PRNG:
            raise ValueError(f"mask was generated with {d['prng']}, only {MASK_PRNG} is available")
        return generate_mask(d["n_theta"], d["n_f"], d["seed"])

    def dumps(self) -> str:
        return json.dumps(self.to_dict())


def generate_mask(n_theta: int, n_f: int, seed: int) -> RandomMask:
    if n_theta < 1 or n_f < 1:
        raise ValueError("mask dimensions must be >= 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    return RandomMask(matrix=rng.uniform(-1.0, 1.0, size=(n_theta, n_f)), seed=int(seed))


def encode(mask: RandomMask, x_prime) -> np.ndarray:
    """``M x'`` for one reduced vector or a batch of rows."""
    x_prime = np.asarray(x_prime, dtype=float)
    if x_prime.shape[-1] != mask.n_f:
        raise DimensionMismatch(f"reduced vector has length {x_prime.shape[-1]}, mask expects {mask.n_f}")
    return x_prime @ mask.matrix.T


@dataclass(frozen=True)
class ScaleStats:
    """Training-set statistics of the masked values."""

    lo: float
    hi: float
    rms: float

    @classmethod
    def from_values(cls, x_dd) -> "ScaleStats":
        x_dd = np.asarray(x_dd, dtype=float)
        return cls(float(x_dd.min()), float(x_dd.max()), float(np.sqrt(np.mean(x_dd ** 2))))

    def merge(self, other: "ScaleStats", n_self: int, n_other: int) -> "ScaleStats":
        ms = (n_self * self.rms ** 2 + n_other * other.rms ** 2) / (n_self + n_other)
        return ScaleStats(min(self.lo, other.lo), max(self.hi, other.hi), float(np.sqrt(ms)))


def to_current(x_dd, config: StvoConfig, stats: ScaleStats) -> np.ndarray:
    """Affine map of masked values onto ``[j_dc - amplitude, j_dc + amplitude]``.

    Values outside the training range are clamped to the window.
    """
    x_dd = np.asarray(x_dd, dtype=float)
    span = stats.hi - stats.lo
    if span > 0:
        u = np.clip(2.0 * (x_dd - stats.lo) / span - 1.0, -1.0, 1.0)
    else:
        u = np.zeros_like(x_dd)
    return config.j_dc + config.amplitude * u
