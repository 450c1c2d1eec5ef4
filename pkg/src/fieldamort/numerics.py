"""Dense tanh MLPs with hand-derived gradients, Adam, seeded init and checkpoints.

Weights are stored (out, in) so a layer computes ``x @ W.T + b`` on row
batches. Every function also accepts stacked parameters with a leading
collection axis, weights (B, out, in) with inputs (B, P, in); the FC-INR
model evaluates B generated networks that way in one call.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, List, Sequence, Tuple

import numpy as np

from .config import ADAM_BETA1, ADAM_BETA2, ADAM_EPS, CHECKPOINT_FORMAT_VERSION
from .errors import CheckpointIOError, NumericalError, ShapeError

ACTIVATIONS = ("tanh",)
_MASK64 = (1 << 64) - 1

Rng = np.random.Generator


def make_rng(seed: int, stream: int = 0) -> Rng:
    """Philox (counter-based) generator keyed on (stream, seed).

    The same (seed, stream) pair yields the same stream on every platform,
    so work split per stream is reproducible in any order.
    """
    key = ((int(stream) & _MASK64) << 64) | (int(seed) & _MASK64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class MlpParams:
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]
    activation: str = "tanh"
    # Apply the activation after the final layer too (feature trunks).
    activate_last: bool = False

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ShapeError(f"unsupported activation {self.activation!r}")
        if not self.weights or len(self.weights) != len(self.biases):
            raise ShapeError("weights and biases must be non-empty and of equal count")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim < 2 or b.shape[-1] != w.shape[-2]:
                raise ShapeError(f"layer {k}: bias {b.shape} does not match weight {w.shape}")
            if k and w.shape[-1] != self.weights[k - 1].shape[-2]:
                raise ShapeError(f"layer {k}: input {w.shape[-1]} does not chain to {self.weights[k - 1].shape[-2]}")

    @property
    def dims(self) -> List[int]:
        return [int(self.weights[0].shape[-1])] + [int(w.shape[-2]) for w in self.weights]

    @property
    def stacked(self) -> bool:
        return self.weights[0].ndim > 2

    @property
    def n_params(self) -> int:
        return int(sum(w.shape[-1] * w.shape[-2] + b.shape[-1] for w, b in zip(self.weights, self.biases)))

    def tensors(self) -> List[np.ndarray]:
        """Tensors in declaration order: W0, b0, W1, b1, ..."""
        out: List[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def replace_tensors(self, tensors: Sequence[np.ndarray]) -> "MlpParams":
        return MlpParams(tuple(tensors[0::2]), tuple(tensors[1::2]), self.activation, self.activate_last)

    def flat(self) -> np.ndarray:
        lead = self.weights[0].shape[:-2]
        return np.concatenate([t.reshape(lead + (-1,)) for t in self.tensors()], axis=-1)

    @classmethod
    def from_flat(cls, flat: np.ndarray, dims: Sequence[int], activation: str = "tanh",
                  activate_last: bool = False) -> "MlpParams":
        """Unflatten a (..., n_params) vector; leading axes become stacked networks."""
        flat = np.asarray(flat, dtype=np.float64)
        need = mlp_param_count(dims)
        if flat.shape[-1] != need:
            raise ShapeError(f"flat parameter length {flat.shape[-1]} != {need} for dims {list(dims)}")
        lead = flat.shape[:-1]
        weights, biases, at = [], [], 0
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            weights.append(flat[..., at:at + fan_in * fan_out].reshape(lead + (fan_out, fan_in)))
            at += fan_in * fan_out
            biases.append(flat[..., at:at + fan_out])
            at += fan_out
        return cls(tuple(weights), tuple(biases), activation, activate_last)


def mlp_param_count(dims: Sequence[int]) -> int:
    return int(sum(i * o + o for i, o in zip(dims[:-1], dims[1:])))


def _rows(p: MlpParams, x) -> Tuple[np.ndarray, Tuple[int, ...]]:
    """Return inputs as rows, and the leading shape to restore on output."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0 or x.shape[-1] != p.dims[0]:
        raise ShapeError(f"input width {x.shape[-1] if x.ndim else 0} != network input {p.dims[0]}")
    lead = x.shape[:-1]
    if p.stacked:
        if x.ndim != p.weights[0].ndim or x.shape[0] != p.weights[0].shape[0]:
            raise ShapeError(f"stacked networks {p.weights[0].shape[:-2]} need inputs (B, P, in), got {x.shape}")
        return x, lead
    return x.reshape(-1, x.shape[-1]), lead


def _activated(p: MlpParams, k: int) -> bool:
    return k < len(p.weights) - 1 or p.activate_last


def mlp_trace(p: MlpParams, x) -> List[np.ndarray]:
    """Layer outputs, input first; activations are post-tanh."""
    rows, _ = _rows(p, x)
    acts = [rows]
    for k, (w, b) in enumerate(zip(p.weights, p.biases)):
        z = acts[-1] @ np.swapaxes(w, -1, -2) + b[..., None, :]
        acts.append(np.tanh(z) if _activated(p, k) else z)
    return acts


def mlp_forward(p: MlpParams, x) -> np.ndarray:
    _, lead = _rows(p, x)
    out = mlp_trace(p, x)[-1]
    return out.reshape(lead + (out.shape[-1],))


def mlp_backward(p: MlpParams, x, cotangent) -> Tuple[MlpParams, np.ndarray]:
    """Gradients of sum(cotangent * output) w.r.t. parameters and input.

    Parameter gradients are summed over all input rows (per network when
    stacked); the input gradient keeps the input's shape.
    """
    _, lead = _rows(p, x)
    acts = mlp_trace(p, x)
    cot = np.asarray(cotangent, dtype=np.float64)
    if cot.shape != lead + (p.dims[-1],):
        raise ShapeError(f"cotangent shape {cot.shape} != output shape {lead + (p.dims[-1],)}")
    g = cot if p.stacked else cot.reshape(-1, p.dims[-1])
    n_layers = len(p.weights)
    grad_w: List[np.ndarray] = [np.empty(0)] * n_layers
    grad_b: List[np.ndarray] = [np.empty(0)] * n_layers
    for k in reversed(range(n_layers)):
        if _activated(p, k):
            g = g * (1.0 - acts[k + 1] ** 2)
        grad_w[k] = np.swapaxes(g, -1, -2) @ acts[k]
        grad_b[k] = g.sum(axis=-2)
        g = g @ p.weights[k]
    grads = MlpParams(tuple(grad_w), tuple(grad_b), p.activation, p.activate_last)
    return grads, g.reshape(lead + (p.dims[0],))


def mlp_input_gradient(p: MlpParams, x) -> np.ndarray:
    """Jacobian d(output)/d(input), shape lead + (out, in)."""
    _, lead = _rows(p, x)
    acts = mlp_trace(p, x)
    jac = None
    for k, w in enumerate(p.weights):
        w_rows = w[:, None] if p.stacked else w
        jac = np.broadcast_to(w_rows, acts[0].shape[:-1] + w.shape[-2:]) if jac is None else w_rows @ jac
        if _activated(p, k):
            jac = (1.0 - acts[k + 1] ** 2)[..., None] * jac
    return np.array(jac).reshape(lead + (p.dims[-1], p.dims[0]))


def init_mlp(dims: Sequence[int], rng: Rng, activation: str = "tanh", activate_last: bool = False) -> MlpParams:
    """Weights uniform in +-sqrt(1/fan_in), zero biases, drawn layer by layer."""
    if len(dims) < 2 or any(int(d) <= 0 for d in dims):
        raise ShapeError(f"need at least two positive layer sizes, got {list(dims)}")
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(1.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(int(fan_out), int(fan_in))))
        biases.append(np.zeros(int(fan_out)))
    return MlpParams(tuple(weights), tuple(biases), activation, activate_last)


@dataclass(frozen=True)
class AdamState:
    first_moment: Tuple[np.ndarray, ...]
    second_moment: Tuple[np.ndarray, ...]
    step_count: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    epsilon: float = ADAM_EPS

    @classmethod
    def init(cls, params: Sequence[np.ndarray], beta1: float = ADAM_BETA1, beta2: float = ADAM_BETA2,
             epsilon: float = ADAM_EPS) -> "AdamState":
        zeros = tuple(np.zeros_like(p, dtype=np.float64) for p in params)
        return cls(zeros, tuple(np.zeros_like(z) for z in zeros), 0, beta1, beta2, epsilon)


def adam_step(state: AdamState, params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
              lr: float) -> Tuple[List[np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns new parameters and state."""
    if not (len(params) == len(grads) == len(state.first_moment)):
        raise ShapeError(f"{len(params)} params, {len(grads)} grads, {len(state.first_moment)} moments")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape or p.shape != state.first_moment[i].shape:
            raise ShapeError(f"tensor {i}: param {p.shape}, grad {g.shape}, moment {state.first_moment[i].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in tensor {i} at Adam step {state.step_count + 1}")
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        new_params.append(p - lr * m_hat / (np.sqrt(v_hat) + state.epsilon))
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(tuple(new_m), tuple(new_v), t, b1, b2, state.epsilon)


def finite_difference_gradient(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central differences (f(x + h e_i) - f(x - h e_i)) / 2h per coordinate."""
    if not h > 0:
        raise ValueError(f"step must be positive, got {h}")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat_x, flat_g = x.reshape(-1), grad.reshape(-1)
    for i in range(flat_x.size):
        orig = flat_x[i]
        flat_x[i] = orig + h
        up = float(f(x))
        flat_x[i] = orig - h
        down = float(f(x))
        flat_x[i] = orig
        flat_g[i] = (up - down) / (2.0 * h)
    return grad


def save_checkpoint(directory: "str | Path", meta: dict, tensors: Sequence[np.ndarray]) -> Path:
    """Write meta.json and params.f64 (little-endian float64, declaration order)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = dict(meta)
    meta["format_version"] = CHECKPOINT_FORMAT_VERSION
    meta["tensor_shapes"] = [list(t.shape) for t in tensors]
    payload = np.concatenate([np.asarray(t, dtype=np.float64).ravel() for t in tensors]) if tensors else np.zeros(0)
    payload.astype("<f8").tofile(directory / "params.f64")
    with open(directory / "meta.json", "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2)
    return directory


def load_checkpoint(directory: "str | Path") -> Tuple[dict, List[np.ndarray]]:
    directory = Path(directory)
    try:
        with open(directory / "meta.json", "r", encoding="utf-8") as f:
            meta = json.load(f)
        payload = np.fromfile(directory / "params.f64", dtype="<f8")
    except FileNotFoundError as e:
        raise CheckpointIOError(f"checkpoint not found: {e.filename}")
    except json.JSONDecodeError as e:
        raise CheckpointIOError(f"unreadable checkpoint meta in {directory}: {e}")
    if meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointIOError(f"unknown checkpoint version {meta.get('format_version')!r} in {directory}")
    try:
        shapes = [tuple(int(n) for n in s) for s in meta["tensor_shapes"]]
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointIOError(f"malformed checkpoint meta in {directory}: missing or invalid tensor_shapes ({e})")
    need = int(sum(np.prod(s, dtype=np.int64) for s in shapes))
    if payload.size != need:
        raise CheckpointIOError(f"params.f64 in {directory} holds {payload.size} values, expected {need}")
    tensors, at = [], 0
    for s in shapes:
        n = int(np.prod(s, dtype=np.int64))
        tensors.append(payload[at:at + n].astype(np.float64).reshape(s))
        at += n
    return meta, tensors
