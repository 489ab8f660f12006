"""Closed-form vortex-core dynamics of a spin-torque oscillator.

The reduced core position ``s`` obeys the autonomous ODE

    ds/dt = alpha * s + beta * s**(n + 1)

with ``alpha``, ``beta`` and ``n`` polynomials of the drive current density
``J``. Substituting ``u = s**-n`` makes the ODE linear, so one sampling
interval can be propagated exactly; :func:`step` evaluates that propagator.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import DomainError, SubcriticalError

S_FLOOR = 1e-12
S_CEIL = 1.0 - 1e-12


@dataclass(frozen=True)
class StvoCoefficients:
    """Polynomial coefficients in ascending powers of ``J``."""

    alpha: tuple = (-39.97, 6.64)
    beta: tuple = (-25.92, -0.43)
    n: tuple = (157.14, -95.97, 25.54, -2.87, 0.18)


DEFAULT_COEFFICIENTS = StvoCoefficients()


def _horner(coeffs, j):
    out = coeffs[-1] * np.ones_like(j, dtype=float) if np.ndim(j) else float(coeffs[-1])
    for c in reversed(coeffs[:-1]):
        out = out * j + c
    return out


def alpha(j, coeffs: StvoCoefficients = DEFAULT_COEFFICIENTS):
    return _horner(coeffs.alpha, j)


def beta(j, coeffs: StvoCoefficients = DEFAULT_COEFFICIENTS):
    return _horner(coeffs.beta, j)


def n_exponent(j, coeffs: StvoCoefficients = DEFAULT_COEFFICIENTS):
    return _horner(coeffs.n, j)


def steady_state(j: float, coeffs: StvoCoefficients = DEFAULT_COEFFICIENTS) -> float:
    """Nonzero fixed point ``(alpha / -beta) ** (1 / n)`` of the dynamics at constant ``j``."""
    a, b, n = float(alpha(j, coeffs)), float(beta(j, coeffs)), float(n_exponent(j, coeffs))
    if not a > 0:
        raise SubcriticalError(f"alpha({j}) = {a:.6g} <= 0: no oscillating steady state", j=j)
    if not b < 0 or not n > 0:
        raise DomainError(f"J = {j}: beta = {b:.6g}, n = {n:.6g} outside the valid window")
    s = math.exp(math.log(a / -b) / n)
    if s >= 1.0:
        raise DomainError(f"J = {j}: steady state {s:.6g} >= 1 (core leaves the disc)")
    return s


def _advance(s, a, b, n, d_t):
    """Vectorised propagator. Returns (s_new, bad_mask)."""
    with np.errstate(over="ignore", under="ignore", invalid="ignore", divide="ignore"):
        x = -n * d_t
        em1 = np.expm1(x * a)
        safe_a = np.where(a == 0.0, 1.0, a)
        phi = np.where(a == 0.0, x * b, b * em1 / safe_a)
        # s**n via logs; underflow to 0 leaves pure exponential growth.
        log_p = n * np.log(s)
        p = np.exp(log_p)
        q = em1 + np.where(p > 0.0, p * phi, 0.0)
        # log of the bracket: log1p near 1, log-sum-exp once exp(x*a) has decayed.
        direct = np.log(np.exp(x * a) + np.where(p > 0.0, p * phi, 0.0))
        lse = np.logaddexp(x * a, log_p + np.log(np.where(phi > 0.0, phi, 1.0)))
        log_bracket = np.where(np.abs(q) <= 0.5, np.log1p(q), np.where(phi > 0.0, lse, direct))
        bad = np.logical_not((q > -1.0) | (phi > 0.0)) | np.logical_not(n > 0.0)
        s_new = s * np.exp(-log_bracket / n)
    s_new = np.where(np.isnan(s_new), S_FLOOR, s_new)
    return np.clip(s_new, S_FLOOR, S_CEIL), bad


def step(s_prev, j, d_t, coeffs: StvoCoefficients = DEFAULT_COEFFICIENTS):
    """Propagate the core position over ``d_t`` at constant drive ``j``.

    Works elementwise on arrays. Raises :class:`DomainError` when the
    bracket of the propagator is non-positive or ``n(j) <= 0``.
    """
    scalar = np.ndim(s_prev) == 0 and np.ndim(j) == 0 and np.ndim(d_t) == 0
    s = np.asarray(s_prev, dtype=float)
    jj = np.asarray(j, dtype=float)
    if np.any((s <= 0.0) | (s >= 1.0)):
        raise ValueError("s_prev must lie in the open interval (0, 1)")
    s_new, bad = _advance(s, alpha(jj, coeffs), beta(jj, coeffs), n_exponent(jj, coeffs),
                          np.asarray(d_t, dtype=float))
    if np.any(bad):
        idx = np.argwhere(np.atleast_1d(bad))[0]
        raise DomainError(f"propagator undefined at J = {np.atleast_1d(jj * np.ones_like(s))[tuple(idx)]!r}",
                          index=tuple(int(i) for i in idx) if not scalar else None)
    return float(s_new) if scalar else s_new


class Activation(str, enum.Enum):
    STVO = "stvo"
    RELU = "relu"
    SIGMOID = "sigmoid"
    IDENTITY = "identity"


@dataclass(frozen=True)
class StvoConfig:
    """Operating point of the oscillator.

    ``d_t=None`` resolves to ``1 / (n(j_dc) * alpha(j_dc))`` so the exponential
    factor of the propagator sits at ``exp(-1)`` at bias.
    """

    j_dc: float = 7.0
    amplitude: float = 0.5
    d_t: float | None = None
    coefficients: StvoCoefficients = field(default=DEFAULT_COEFFICIENTS)
    reset_per_sample_block: bool = True

    def __post_init__(self):
        if not self.amplitude >= 0:
            raise ValueError(f"amplitude must be >= 0, got {self.amplitude}")
        a = float(alpha(self.j_dc, self.coefficients))
        if not a > 0:
            raise SubcriticalError(f"bias j_dc = {self.j_dc} is subcritical (alpha = {a:.6g})", j=self.j_dc)
        if self.d_t is None:
            n = float(n_exponent(self.j_dc, self.coefficients))
            object.__setattr__(self, "d_t", 1.0 / (n * a))
        if not self.d_t > 0:
            raise ValueError(f"d_t must be > 0, got {self.d_t}")
        window = np.linspace(self.j_dc - self.amplitude, self.j_dc + self.amplitude, 65)
        n_w = n_exponent(window, self.coefficients)
        if np.any(n_w <= 0):
            raise DomainError(f"n(J) <= 0 inside the operating window at J = {window[np.argmin(n_w)]:.4g}")

    @property
    def s0(self) -> float:
        return steady_state(self.j_dc, self.coefficients)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["coefficients"] = {k: list(v) for k, v in d["coefficients"].items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StvoConfig":
        d = dict(d)
        coeffs = d.pop("coefficients", None)
        if coeffs is not None:
            d["coefficients"] = StvoCoefficients(**{k: tuple(v) for k, v in coeffs.items()})
        return cls(**d)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


POINTWISE = {
    Activation.RELU: lambda x: np.maximum(x, 0.0),
    Activation.SIGMOID: _sigmoid,
    Activation.IDENTITY: lambda x: np.array(x, dtype=float, copy=True),
}


def run_reservoir(signal, config: StvoConfig, activation=Activation.STVO) -> np.ndarray:
    """Time-multiplexed reservoir response.

    ``signal`` is one image block of shape ``(n_theta,)`` or a batch of shape
    ``(n_images, n_theta)``. For the oscillator it holds drive current
    densities; the pointwise activations receive masked values directly.
    Output has the shape of ``signal``.
    """
    activation = Activation(activation)
    x = np.asarray(signal, dtype=float)
    if activation is not Activation.STVO:
        return POINTWISE[activation](x)
    batch = x.reshape(1, -1) if x.ndim == 1 else x
    if config.reset_per_sample_block:
        out = _run_blocks(batch.T, config).T
    else:
        try:
            out = _run_blocks(batch.reshape(-1, 1), config).reshape(batch.shape)
        except DomainError as exc:
            if x.ndim == 2:
                exc.index = divmod(exc.index, batch.shape[1])
            raise
    return out.reshape(x.shape)


def _run_blocks(j_slots: np.ndarray, config: StvoConfig) -> np.ndarray:
    """Iterate the propagator down axis 0; columns are independent chains."""
    c = config.coefficients
    a, b, n = alpha(j_slots, c), beta(j_slots, c), n_exponent(j_slots, c)
    out = np.empty_like(j_slots, dtype=float)
    s = np.full(j_slots.shape[1], config.s0)
    for i in range(j_slots.shape[0]):
        s, bad = _advance(s, a[i], b[i], n[i], config.d_t)
        if np.any(bad):
            col = int(np.argmax(bad))
            where = i if j_slots.shape[1] == 1 else (col, i)
            raise DomainError(f"propagator undefined at sample {where}, J = {j_slots[i, col]!r}", index=where)
        out[i] = s
    return out
