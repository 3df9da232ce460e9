"""State-conditioned noise-prediction model for the behavior policy.

The network eps(s, a_t, t) is trained with the standard denoising loss and
exposes the behavior score -eps/sigma_t and the posterior mean
(a_t - sigma_t eps)/alpha_t of the clean action given a noisy one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import schedule as sched
from . import tensornet as tn


@dataclass
class NoiseModel:
    spec: tn.MlpSpec
    params: tn.MlpParams
    schedule: sched.NoiseSchedule
    state_dim: int
    action_dim: int

    def __post_init__(self):
        want = self.state_dim + self.action_dim + tn.time_feature_dim(self.spec.time_features)
        if self.spec.input_dim != want:
            raise tn.ShapeError(
                f"spec input_dim {self.spec.input_dim} != state+action+time dims {want}")
        if self.spec.output_dim != self.action_dim:
            raise tn.ShapeError("output_dim must equal action_dim")

    def _inputs(self, s: np.ndarray, a_t: np.ndarray, t) -> np.ndarray:
        s = np.atleast_2d(np.asarray(s, dtype=np.float64))
        a_t = np.atleast_2d(np.asarray(a_t, dtype=np.float64))
        tcols = tn.time_features(np.broadcast_to(np.asarray(t, dtype=np.float64), (s.shape[0],)),
                                 self.spec.time_features)
        return np.concatenate([s, a_t, tcols], axis=1)

    def epsilon(self, s: np.ndarray, a_t: np.ndarray, t) -> np.ndarray:
        """Predicted noise, shape (batch, action_dim); 1-D in, 1-D out."""
        squeeze = np.asarray(a_t).ndim == 1
        out = tn.forward(self.params, self.spec, self._inputs(s, a_t, t))
        return out[0] if squeeze else out

    def copy(self) -> "NoiseModel":
        return NoiseModel(self.spec, self.params.copy(), self.schedule,
                          self.state_dim, self.action_dim)


def make_noise_model(
    state_dim: int,
    action_dim: int,
    noise_schedule: sched.NoiseSchedule,
    hidden_widths: tuple[int, ...] = (256,) * 7,
    activation: str = "gelu",
    time_features: int = 4,
    seed: int = 0,
) -> NoiseModel:
    input_dim = state_dim + action_dim + tn.time_feature_dim(time_features)
    spec = tn.MlpSpec(input_dim, tuple(hidden_widths), action_dim, activation, time_features)
    return NoiseModel(spec, tn.init_params(spec, seed), noise_schedule, state_dim, action_dim)


def diffusion_loss(
    m: NoiseModel,
    states: np.ndarray,
    actions: np.ndarray,
    rng: np.random.Generator,
) -> tuple[float, np.ndarray]:
    """Denoising loss on one batch: mean over items of ||eps_hat - eps||^2.

    Each item gets a fresh t ~ U(t_min, T) and eps ~ N(0, I); returns the
    loss and the flat parameter gradient.
    """
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
    n = states.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    t = sched.sample_t(m.schedule, rng, n)
    eps = rng.standard_normal(actions.shape)
    a_t = sched.perturb(m.schedule, actions, t, eps)
    x = m._inputs(states, a_t, t)
    pred = tn.forward(m.params, m.spec, x)
    resid = pred - eps
    loss = float(np.mean(np.sum(resid * resid, axis=1)))
    grads = tn.grad_params(m.params, m.spec, x, 2.0 * resid / n)
    return loss, grads


def behavior_score(m: NoiseModel, s: np.ndarray, a_t: np.ndarray, t) -> np.ndarray:
    """Score of the behavior marginal at time t: -eps(s, a_t, t) / sigma_t."""
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < m.schedule.t_min):
        raise ValueError(f"t={t} below floor {m.schedule.t_min}")
    _, sig = sched.alpha_sigma(m.schedule, t_arr)
    eps = m.epsilon(s, a_t, t)
    if np.ndim(sig) == 1 and eps.ndim == 2:
        sig = np.asarray(sig)[:, None]
    return -eps / sig


def posterior_mean(m: NoiseModel, s: np.ndarray, a_t: np.ndarray, t) -> np.ndarray:
    """Estimated mean of the clean action given a_t: (a_t - sigma_t eps)/alpha_t."""
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < m.schedule.t_min):
        raise ValueError(f"t={t} below floor {m.schedule.t_min}")
    a, sig = sched.alpha_sigma(m.schedule, t_arr)
    eps = m.epsilon(s, a_t, t)
    a_t = np.asarray(a_t, dtype=np.float64)
    if np.ndim(a) == 1 and eps.ndim == 2:
        a = np.asarray(a)[:, None]
        sig = np.asarray(sig)[:, None]
    return (a_t - sig * eps) / a
