"""Q/V critics trained by expectile regression, plus ISQL/CQL ablation losses.

V is pulled toward an upper expectile of the lagged target Q over dataset
actions; Q regresses on r + gamma (1-done) V(s').  The printed form of the
Bellman target in the source material carries no discount; setting
``literal_bellman=True`` reproduces that exact form (r + V(s')) instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensornet as tn


@dataclass
class CriticPair:
    q: tn.Mlp            # (s, a) -> scalar
    q_target: tn.Mlp     # lagged copy of q
    v: tn.Mlp            # s -> scalar
    tau: float = 0.7
    gamma: float = 0.99
    polyak: float = 0.005
    state_dim: int = 1
    action_dim: int = 1

    def __post_init__(self):
        if not (0.0 < self.tau < 1.0):
            raise ValueError("tau must lie in (0, 1)")
        if not (0.0 <= self.gamma < 1.0):
            raise ValueError("gamma must lie in [0, 1)")
        if self.q.spec != self.q_target.spec:
            raise ValueError("q and q_target must share one spec")


def make_critics(
    state_dim: int,
    action_dim: int,
    hidden_widths: tuple[int, ...] = (256, 256, 256),
    activation: str = "relu",
    tau: float = 0.7,
    gamma: float = 0.99,
    polyak: float = 0.005,
    seed: int = 0,
) -> CriticPair:
    q = tn.make_mlp(state_dim + action_dim, hidden_widths, 1, activation, seed)
    v = tn.make_mlp(state_dim, hidden_widths, 1, activation, seed + 1)
    return CriticPair(q, q.copy(), v, tau, gamma, polyak, state_dim, action_dim)


def expectile_penalty(y, tau: float):
    """Asymmetric squared penalty |tau - 1(y<0)| * y^2."""
    if not (0.0 < tau < 1.0):
        raise ValueError("tau must lie in (0, 1)")
    y = np.asarray(y, dtype=np.float64)
    w = np.abs(tau - (y < 0.0))
    return w * y * y


def _sa(states, actions):
    s = np.atleast_2d(np.asarray(states, dtype=np.float64))
    a = np.atleast_2d(np.asarray(actions, dtype=np.float64))
    return np.concatenate([s, a], axis=1)


def q_values(c: CriticPair, states, actions, target: bool = False) -> np.ndarray:
    net = c.q_target if target else c.q
    return net(_sa(states, actions))[:, 0]


def v_values(c: CriticPair, states) -> np.ndarray:
    return c.v(np.atleast_2d(np.asarray(states, dtype=np.float64)))[:, 0]


def v_loss(c: CriticPair, states, actions) -> tuple[float, np.ndarray]:
    """Expectile loss on V(s) - Q_target(s, a); gradients for V only."""
    s = np.atleast_2d(np.asarray(states, dtype=np.float64))
    if s.shape[0] == 0:
        raise ValueError("empty batch")
    qbar = q_values(c, s, actions, target=True)     # detached by construction
    vs = v_values(c, s)
    y = vs - qbar
    loss = float(np.mean(expectile_penalty(y, c.tau)))
    w = np.abs(c.tau - (y < 0.0))
    upstream = (2.0 * w * y / s.shape[0])[:, None]
    grads = tn.grad_params(c.v.params, c.v.spec, s, upstream)
    return loss, grads


def q_loss(
    c: CriticPair,
    states,
    actions,
    rewards,
    next_states,
    dones,
    literal_bellman: bool = False,
) -> tuple[float, np.ndarray]:
    """Squared TD error toward r + gamma (1-done) V(s'); gradients for Q only."""
    x = _sa(states, actions)
    n = x.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    rewards = np.asarray(rewards, dtype=np.float64).reshape(n)
    vs_next = v_values(c, next_states)              # detached
    if literal_bellman:
        target = rewards + vs_next
    else:
        mask = 1.0 - np.asarray(dones, dtype=np.float64).reshape(n)
        target = rewards + c.gamma * mask * vs_next
    qs = c.q(x)[:, 0]
    resid = qs - target
    loss = float(np.mean(resid * resid))
    grads = tn.grad_params(c.q.params, c.q.spec, x, (2.0 * resid / n)[:, None])
    return loss, grads


def update_target(c: CriticPair) -> CriticPair:
    """Polyak step psi_bar <- (1-polyak) psi_bar + polyak psi, in place."""
    p = c.polyak
    for wt, w in zip(c.q_target.params.weights, c.q.params.weights):
        wt *= 1.0 - p
        wt += p * w
    for bt, b in zip(c.q_target.params.biases, c.q.params.biases):
        bt *= 1.0 - p
        bt += p * b
    return c


def q_and_grad(c: CriticPair, states, actions) -> tuple[np.ndarray, np.ndarray]:
    """Q(s, a) and dQ/da; batched, so (B,) values and (B, action_dim) gradients."""
    squeeze = np.asarray(actions).ndim == 1
    x = _sa(states, actions)
    q = c.q(x)[:, 0]
    gin = tn.grad_input(c.q.params, c.q.spec, x, np.ones((x.shape[0], 1)))
    qp = gin[:, c.state_dim:]
    if squeeze:
        return float(q[0]), qp[0]
    return q, qp


def isql_loss(
    c: CriticPair,
    m,
    states,
    actions,
    rewards,
    next_states,
    dones,
    n_fake: int,
    beta: float,
    rng: np.random.Generator,
    gen_cfg=None,
) -> tuple[float, np.ndarray]:
    """In-support softmax Q-learning step.

    The target is r + gamma (1-done) * sum_j softmax(beta Qbar_j) Qbar_j over
    ``n_fake`` actions drawn from the unguided behavior sampler at s'.
    """
    from . import sampler as smp  # late import: sampler builds on behavior only

    if n_fake < 1:
        raise ValueError("need at least one sampled action")
    s = np.atleast_2d(np.asarray(states, dtype=np.float64))
    s_next = np.atleast_2d(np.asarray(next_states, dtype=np.float64))
    n = s.shape[0]
    rewards = np.asarray(rewards, dtype=np.float64).reshape(n)
    mask = 1.0 - np.asarray(dones, dtype=np.float64).reshape(n)
    cfg = gen_cfg if gen_cfg is not None else smp.GuidanceConfig(
        omega=0.0, rescale=False, t_min=m.schedule.t_min, T=m.schedule.T)
    if cfg.omega != 0.0:
        cfg = smp.GuidanceConfig(0.0, cfg.rescale, cfg.steps, cfg.t_min, cfg.T)

    rep = np.repeat(s_next, n_fake, axis=0)
    fake = smp.generate(m, None, cfg, rep, rng)
    qf = q_values(c, rep, fake, target=True).reshape(n, n_fake)
    z = beta * qf
    z -= z.max(axis=1, keepdims=True)
    w = np.exp(z)
    w /= w.sum(axis=1, keepdims=True)
    soft_q = np.sum(w * qf, axis=1)
    target = rewards + c.gamma * mask * soft_q

    x = _sa(s, actions)
    qs = c.q(x)[:, 0]
    resid = qs - target
    loss = float(np.mean(resid * resid))
    grads = tn.grad_params(c.q.params, c.q.spec, x, (2.0 * resid / n)[:, None])
    return loss, grads


def cql_loss(
    c: CriticPair,
    policy_actions_sampler,
    states,
    actions,
    rewards,
    next_states,
    dones,
    lam: float,
    rng: np.random.Generator,
) -> tuple[float, np.ndarray]:
    """Conservative penalty on top of TD: lam * (mean Q on policy actions - mean Q on data)."""
    if lam < 0.0:
        raise ValueError("lambda must be >= 0")
    s = np.atleast_2d(np.asarray(states, dtype=np.float64))
    s_next = np.atleast_2d(np.asarray(next_states, dtype=np.float64))
    n = s.shape[0]
    rewards = np.asarray(rewards, dtype=np.float64).reshape(n)
    mask = 1.0 - np.asarray(dones, dtype=np.float64).reshape(n)

    a_next = policy_actions_sampler(s_next, rng)
    target = rewards + c.gamma * mask * q_values(c, s_next, a_next, target=True)

    x_data = _sa(s, actions)
    q_data = c.q(x_data)[:, 0]
    resid = q_data - target
    td = float(np.mean(resid * resid))

    a_pol = policy_actions_sampler(s, rng)
    x_pol = _sa(s, a_pol)
    q_pol = c.q(x_pol)[:, 0]
    penalty = float(np.mean(q_pol) - np.mean(q_data))
    loss = td + lam * penalty

    g_td = tn.grad_params(c.q.params, c.q.spec, x_data, (2.0 * resid / n)[:, None])
    g_pol = tn.grad_params(c.q.params, c.q.spec, x_pol, np.full((n, 1), lam / n))
    g_dat = tn.grad_params(c.q.params, c.q.spec, x_data, np.full((n, 1), -lam / n))
    return loss, g_td + g_pol + g_dat
