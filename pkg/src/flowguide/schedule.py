"""Variance-preserving noise schedule and probability-flow ODE coefficients.

The forward kernel is x_t = alpha_t x_0 + sigma_t eps with
log alpha_t = -t^2 (beta_max - beta_min)/4 - t beta_min / 2 and
sigma_t = sqrt(1 - alpha_t^2), so alpha^2 + sigma^2 = 1 on t in [0, T].
The reverse dynamics use f(t) = d log alpha / dt and
g(t)^2 = d sigma^2/dt - 2 f sigma^2, both evaluated in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# training/sampling floor; f(t) is singular only at t = 0 for this family,
# but sigma -> 0 makes epsilon-parameterized scores blow up near 0
DEFAULT_T_MIN = 1e-3


@dataclass(frozen=True)
class NoiseSchedule:
    kind: str = "vp_linear"
    beta_min: float = 0.1
    beta_max: float = 20.0
    T: float = 1.0
    t_min: float = DEFAULT_T_MIN

    def __post_init__(self):
        if self.kind != "vp_linear":
            raise ValueError(f"unsupported schedule kind {self.kind!r}")
        if not (0 < self.beta_min < self.beta_max):
            raise ValueError("need 0 < beta_min < beta_max")
        if not (0 < self.t_min < self.T):
            raise ValueError("need 0 < t_min < T")


def _check_range(s: NoiseSchedule, t, lo: float) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < lo) or np.any(t > s.T):
        raise ValueError(f"t={t} outside [{lo}, {s.T}]")
    return t


def log_alpha(s: NoiseSchedule, t):
    t = np.asarray(t, dtype=np.float64)
    return -0.25 * t * t * (s.beta_max - s.beta_min) - 0.5 * t * s.beta_min


def alpha_sigma(s: NoiseSchedule, t):
    """(alpha_t, sigma_t); defined on the closed interval [0, T]."""
    t = _check_range(s, t, 0.0)
    a = np.exp(log_alpha(s, t))
    sig = np.sqrt(np.maximum(1.0 - a * a, 0.0))
    return a, sig


def ode_coeffs(s: NoiseSchedule, t):
    """Drift f(t) and squared diffusion g(t)^2 of the flow ODE; t must be > 0."""
    t = np.asarray(t, dtype=np.float64)
    if np.any(t <= 0.0) or np.any(t > s.T):
        raise ValueError(f"t={t} outside (0, {s.T}]")
    f = -0.5 * (s.beta_min + t * (s.beta_max - s.beta_min))
    a, sig = alpha_sigma(s, t)
    dsigma_sq = -2.0 * a * a * f          # sigma^2 = 1 - alpha^2
    g_sq = dsigma_sq - 2.0 * f * sig * sig
    return f, g_sq


def perturb(s: NoiseSchedule, x0: np.ndarray, t, eps: np.ndarray) -> np.ndarray:
    """Forward kernel sample alpha_t x0 + sigma_t eps, elementwise."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ValueError(f"shape mismatch: x0 {x0.shape} vs eps {eps.shape}")
    a, sig = alpha_sigma(s, t)
    a = np.asarray(a)
    sig = np.asarray(sig)
    if a.ndim == 1 and x0.ndim == 2:
        # per-row t for a batch of rows
        if a.shape[0] != x0.shape[0]:
            raise ValueError("per-item t length does not match batch")
        a = a[:, None]
        sig = sig[:, None]
    return a * x0 + sig * eps


def lam(s: NoiseSchedule, t):
    """Half log-SNR lambda_t = log(alpha_t / sigma_t)."""
    la = log_alpha(s, _check_range(s, t, 0.0))
    # log sigma = 0.5 log(1 - alpha^2) = 0.5 log(-expm1(2 log alpha))
    return la - 0.5 * np.log(-np.expm1(2.0 * la))


def t_from_lam(s: NoiseSchedule, lam_val):
    """Invert lambda(t) for the vp_linear family (closed form)."""
    lam_val = np.asarray(lam_val, dtype=np.float64)
    bd = s.beta_max - s.beta_min
    # log alpha = -0.5 log(1 + e^{-2 lambda}); solve the quadratic in t
    tmp = 2.0 * bd * np.logaddexp(-2.0 * lam_val, 0.0)
    delta = s.beta_min ** 2 + tmp
    return tmp / (np.sqrt(delta) + s.beta_min) / bd


def sample_t(s: NoiseSchedule, rng: np.random.Generator, n: int) -> np.ndarray:
    """Training times t ~ U(t_min, T)."""
    return rng.uniform(s.t_min, s.T, size=n)
