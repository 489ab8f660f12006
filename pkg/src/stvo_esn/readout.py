"""One-shot linear readout: pseudoinverse / ridge training, scores, argmax.

Matrices follow the column-per-sample convention: reservoir states ``S`` are
``(n_theta, n_samples)`` and targets ``T`` are ``(n_classes, n_samples)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NumericalFailure

PINV_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class ReadoutWeights:
    w_out: np.ndarray  # (n_classes, n_theta)
    ridge_lambda: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite(self.w_out)):
            raise NumericalFailure("readout weights contain non-finite entries")


def pseudoinverse(a, rtol: float = PINV_RTOL) -> np.ndarray:
    """Moore-Penrose inverse via SVD; singular values below ``rtol * s_max`` count as zero."""
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return np.zeros(a.shape[::-1])
    try:
        u, sv, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"SVD did not converge: {exc}") from exc
    keep = sv > rtol * sv[0] if sv.size else sv.astype(bool)
    inv = np.zeros_like(sv)
    inv[keep] = 1.0 / sv[keep]
    return (vt.T * inv) @ u.T


def _check(s, t):
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if s.ndim != 2 or t.ndim != 2 or s.shape[1] != t.shape[1]:
        raise DimensionMismatch(f"states {s.shape} and targets {t.shape} disagree on sample count")
    return s, t


def solve_gram(gram, cross, ridge_lambda: float = 0.0) -> np.ndarray:
    """``W = B (G + lambda I)^+`` from ``G = S S^T`` and ``B = T S^T``.

    At ``lambda = 0`` this is ``T S^+``: eigenvalues of ``G`` below
    ``n_theta * eps * lambda_max`` are dropped.
    """
    gram = np.asarray(gram, dtype=float)
    cross = np.asarray(cross, dtype=float)
    if ridge_lambda < 0:
        raise ValueError("ridge_lambda must be >= 0")
    try:
        if ridge_lambda > 0:
            g = gram + ridge_lambda * np.eye(gram.shape[0])
            return np.linalg.solve(g, cross.T).T
        evals, evecs = np.linalg.eigh(gram)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"normal equations failed: {exc}") from exc
    cutoff = gram.shape[0] * np.finfo(float).eps * max(evals.max(initial=0.0), 0.0)
    keep = evals > cutoff
    inv = np.zeros_like(evals)
    inv[keep] = 1.0 / evals[keep]
    return ((cross @ evecs) * inv) @ evecs.T


class GramAccumulator:
    """Streams ``S S^T`` and ``T S^T`` over column blocks of samples."""

    def __init__(self, n_theta: int, n_classes: int):
        self.gram = np.zeros((n_theta, n_theta))
        self.cross = np.zeros((n_classes, n_theta))
        self.n_samples = 0

    def add(self, s_block, t_block) -> None:
        s_block, t_block = _check(s_block, t_block)
        self.gram += s_block @ s_block.T
        self.cross += t_block @ s_block.T
        self.n_samples += s_block.shape[1]

    def solve(self, ridge_lambda: float = 0.0) -> ReadoutWeights:
        return ReadoutWeights(solve_gram(self.gram, self.cross, ridge_lambda), float(ridge_lambda))


def train_readout(s_train, t_train, ridge_lambda: float = 0.0, method: str = "auto") -> ReadoutWeights:
    """Fit ``W_out``.

    ``lambda = 0`` gives ``T S^+``; ``lambda > 0`` gives ``T S^T (S S^T + lambda I)^-1``.
    ``method="auto"`` uses the normal equations when samples outnumber
    reservoir nodes four to one, the SVD otherwise.
    """
    s, t = _check(s_train, t_train)
    if ridge_lambda < 0:
        raise ValueError("ridge_lambda must be >= 0")
    if method == "auto":
        method = "gram" if s.shape[1] >= 4 * s.shape[0] else "svd"
    if method == "gram" or ridge_lambda > 0:
        w = solve_gram(s @ s.T, t @ s.T, ridge_lambda)
    elif method == "svd":
        w = t @ pseudoinverse(s)
    else:
        raise ValueError(f"unknown method {method!r}")
    return ReadoutWeights(w, float(ridge_lambda))


def predict(w: ReadoutWeights, s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    if s.shape[0] != w.w_out.shape[1]:
        raise DimensionMismatch(f"state has {s.shape[0]} nodes, readout expects {w.w_out.shape[1]}")
    return w.w_out @ s


def classify(y) -> np.ndarray | int:
    """Row index of the maximum score; ties go to the lowest index.

    Accepts a score vector or a ``(n_classes, n_samples)`` matrix.
    """
    y = np.asarray(y)
    if y.shape[0] == 0:
        raise ValueError("empty score vector")
    idx = np.argmax(y, axis=0)  # argmax returns the first maximum
    return int(idx) if y.ndim == 1 else idx
