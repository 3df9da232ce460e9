"""Dense float64 feedforward networks with explicit reverse-mode gradients.

Everything here operates on plain C-order ``numpy.float64`` arrays.  A
network is a list of ``(W, b)`` pairs applied as ``h @ W + b`` with an
activation after every layer except the last.  Gradients with respect to
both the parameters and the input are computed by a single hand-written
backward pass, which keeps the whole stack deterministic and easy to
check against finite differences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

ACTIVATIONS = ("relu", "gelu", "tanh")


class ShapeError(ValueError):
    """Raised when an array does not match the dimensions a spec demands."""


@dataclass(frozen=True)
class MlpSpec:
    """Architecture of one feedforward network.

    ``input_dim`` counts the columns actually fed to the first layer, i.e.
    after any time-feature expansion done by the caller.  ``time_features``
    records how many Fourier frequencies the owning model uses when it
    builds the time block (0 means the raw scalar t only); it does not
    change the layer shapes by itself.
    """

    input_dim: int
    hidden_widths: tuple[int, ...]
    output_dim: int
    activation: str = "relu"
    time_features: int = 0

    def __post_init__(self):
        widths = (self.input_dim, *self.hidden_widths, self.output_dim)
        if any(w < 1 for w in widths):
            raise ValueError(f"all widths must be >= 1, got {widths}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.time_features < 0:
            raise ValueError("time_features must be >= 0")
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))

    @property
    def layer_dims(self) -> list[int]:
        return [self.input_dim, *self.hidden_widths, self.output_dim]


@dataclass
class MlpParams:
    """Weights and biases per layer; ``weights[i]`` has shape (fan_in, fan_out)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def parameter_count(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def to_flat(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts) if parts else np.zeros(0)

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])


def params_from_flat(spec: MlpSpec, flat: np.ndarray) -> MlpParams:
    dims = spec.layer_dims
    weights, biases = [], []
    k = 0
    for i in range(len(dims) - 1):
        n_in, n_out = dims[i], dims[i + 1]
        weights.append(flat[k : k + n_in * n_out].reshape(n_in, n_out).copy())
        k += n_in * n_out
        biases.append(flat[k : k + n_out].copy())
        k += n_out
    if k != flat.size:
        raise ShapeError(f"flat vector has {flat.size} entries, spec needs {k}")
    return MlpParams(weights, biases)


def init_params(spec: MlpSpec, seed: int) -> MlpParams:
    """Fan-in-scaled uniform weights, zero biases; deterministic in (spec, seed)."""
    rng = np.random.default_rng(seed)
    dims = spec.layer_dims
    weights, biases = [], []
    for i in range(len(dims) - 1):
        n_in, n_out = dims[i], dims[i + 1]
        bound = 1.0 / np.sqrt(n_in)
        weights.append(rng.uniform(-bound, bound, size=(n_in, n_out)))
        biases.append(np.zeros(n_out))
    return MlpParams(weights, biases)


def _check_consistent(spec: MlpSpec, params: MlpParams) -> None:
    dims = spec.layer_dims
    if len(params.weights) != len(dims) - 1:
        raise ShapeError("layer count mismatch between spec and params")
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        if w.shape != (dims[i], dims[i + 1]) or b.shape != (dims[i + 1],):
            raise ShapeError(f"layer {i} shape {w.shape}/{b.shape} inconsistent with spec")


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    # exact (erf-based) GELU
    return 0.5 * z * (1.0 + erf(z / _SQRT2))


def _act_deriv(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    if name == "tanh":
        th = np.tanh(z)
        return 1.0 - th * th
    cdf = 0.5 * (1.0 + erf(z / _SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * z * z)
    return cdf + z * pdf


def _as_batch(x: np.ndarray, dim: int, what: str) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise ShapeError(f"{what} must have last dimension {dim}, got shape {x.shape}")
    return x, squeeze


def forward(params: MlpParams, spec: MlpSpec, x: np.ndarray) -> np.ndarray:
    """Batched forward pass; accepts (input_dim,) or (batch, input_dim)."""
    x, squeeze = _as_batch(x, spec.input_dim, "input")
    _check_consistent(spec, params)
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i != last:
            h = _act(spec.activation, h)
    return h[0] if squeeze else h


def _forward_cached(params: MlpParams, spec: MlpSpec, x: np.ndarray):
    """Forward pass keeping pre-activations and layer inputs for backprop."""
    pre, inputs = [], []
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        z = h @ w + b
        pre.append(z)
        h = _act(spec.activation, z) if i != last else z
    return h, pre, inputs


def backprop(
    params: MlpParams,
    spec: MlpSpec,
    x: np.ndarray,
    upstream: np.ndarray,
    *,
    need_params: bool = True,
    need_input: bool = True,
) -> tuple[np.ndarray | None, np.ndarray | None]:
    """Reverse-mode gradients of <upstream, forward(x)>.

    Returns ``(flat_param_grads, input_grads)``; either entry is None when
    not requested.  ``upstream`` must match the output shape.
    """
    x2, squeeze = _as_batch(x, spec.input_dim, "input")
    _check_consistent(spec, params)
    up, sq_up = _as_batch(upstream, spec.output_dim, "upstream")
    if sq_up != squeeze or up.shape[0] != x2.shape[0]:
        raise ShapeError(f"upstream shape {np.shape(upstream)} does not match output")

    _, pre, inputs = _forward_cached(params, spec, x2)
    n_layers = len(params.weights)
    gw = [None] * n_layers
    gb = [None] * n_layers
    delta = up
    for i in range(n_layers - 1, -1, -1):
        if i != n_layers - 1:
            delta = delta * _act_deriv(spec.activation, pre[i])
        if need_params:
            gw[i] = inputs[i].T @ delta
            gb[i] = delta.sum(axis=0)
        delta = delta @ params.weights[i].T

    flat = None
    if need_params:
        flat = MlpParams(gw, gb).to_flat()
    gin = None
    if need_input:
        gin = delta[0] if squeeze else delta
    return flat, gin


def grad_params(params: MlpParams, spec: MlpSpec, x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Flat gradient of <upstream, forward(x)> with respect to all parameters."""
    flat, _ = backprop(params, spec, x, upstream, need_input=False)
    return flat


def grad_input(params: MlpParams, spec: MlpSpec, x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Gradient of <upstream, forward(x)> with respect to the raw input columns."""
    _, gin = backprop(params, spec, x, upstream, need_params=False)
    return gin


@dataclass
class Mlp:
    """A spec/params bundle, callable on batched inputs."""

    spec: MlpSpec
    params: MlpParams

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return forward(self.params, self.spec, x)

    def copy(self) -> "Mlp":
        return Mlp(self.spec, self.params.copy())


def make_mlp(
    input_dim: int,
    hidden_widths: tuple[int, ...],
    output_dim: int,
    activation: str,
    seed: int,
    time_features: int = 0,
) -> Mlp:
    spec = MlpSpec(input_dim, tuple(hidden_widths), output_dim, activation, time_features)
    return Mlp(spec, init_params(spec, seed))


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    step: int
    first_moment: np.ndarray
    second_moment: np.ndarray
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(params: MlpParams, lr: float = 3e-4, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    n = params.parameter_count
    return AdamState(0, np.zeros(n), np.zeros(n), lr, beta1, beta2, eps)


def adam_step(params: MlpParams, spec: MlpSpec, grads: np.ndarray,
              state: AdamState) -> tuple[MlpParams, AdamState]:
    """One bias-corrected Adam update; returns fresh params and state."""
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != state.first_moment.shape:
        raise ShapeError("gradient length does not match optimizer state")
    step = state.step + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * grads
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1 ** step)
    v_hat = v / (1.0 - state.beta2 ** step)
    flat = params.to_flat() - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new_params = params_from_flat(spec, flat)
    new_state = AdamState(step, m, v, state.lr, state.beta1, state.beta2, state.eps)
    return new_params, new_state


# ---------------------------------------------------------------------------
# Time features
# ---------------------------------------------------------------------------

def time_feature_dim(n_frequencies: int) -> int:
    return 1 if n_frequencies == 0 else 1 + 2 * n_frequencies


def time_features(t, n_frequencies: int) -> np.ndarray:
    """Columns [t, sin(2pi 2^k t), cos(2pi 2^k t)] for k = 0..n-1; (B, dim)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    cols = [t]
    for k in range(n_frequencies):
        w = 2.0 * np.pi * (2.0 ** k)
        cols.append(np.sin(w * t))
        cols.append(np.cos(w * t))
    return np.stack(cols, axis=-1)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    # 17 significant decimal digits round-trips IEEE doubles exactly
    return format(float(x), ".17g")


def _fmt_array(a: np.ndarray) -> str:
    return "[" + ",".join(_fmt(v) for v in np.asarray(a, dtype=np.float64).ravel()) + "]"


def save_checkpoint(path, spec: MlpSpec, params: MlpParams) -> None:
    """Write the JSON checkpoint; parameter arrays alternate weight/bias per layer."""
    spec_doc = json.dumps({
        "input_dim": spec.input_dim,
        "hidden_widths": list(spec.hidden_widths),
        "output_dim": spec.output_dim,
        "activation": spec.activation,
        "time_features": spec.time_features,
    })
    arrays = []
    for w, b in zip(params.weights, params.biases):
        arrays.append(_fmt_array(w))
        arrays.append(_fmt_array(b))
    doc = '{"version":1,"spec":' + spec_doc + ',"params":[' + ",".join(arrays) + "]}"
    with open(path, "w") as fh:
        fh.write(doc)


def load_checkpoint(path) -> tuple[MlpSpec, MlpParams]:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("version") != 1:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    sd = doc["spec"]
    spec = MlpSpec(
        input_dim=int(sd["input_dim"]),
        hidden_widths=tuple(int(w) for w in sd["hidden_widths"]),
        output_dim=int(sd["output_dim"]),
        activation=sd["activation"],
        time_features=int(sd.get("time_features", 0)),
    )
    dims = spec.layer_dims
    arrays = doc["params"]
    if len(arrays) != 2 * (len(dims) - 1):
        raise ShapeError("checkpoint has wrong number of parameter arrays")
    weights, biases = [], []
    for i in range(len(dims) - 1):
        n_in, n_out = dims[i], dims[i + 1]
        w = np.asarray(arrays[2 * i], dtype=np.float64)
        b = np.asarray(arrays[2 * i + 1], dtype=np.float64)
        if w.size != n_in * n_out or b.size != n_out:
            raise ShapeError(f"layer {i} arrays do not match spec dims")
        weights.append(w.reshape(n_in, n_out))
        biases.append(b)
    return spec, MlpParams(weights, biases)
