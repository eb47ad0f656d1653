"""Minimal fully-connected energy network with hand-derived gradients.

Affine -> SELU -> affine -> SELU -> affine(1), double precision throughout,
LeCun-normal initialization (the standard pairing for SELU), and an Adam
optimizer. forward/backward are pure given the parameters; training mutates
nothing in place, so parameter values may be shared read-only across threads
for inference.

forward() is bitwise row-stable: evaluating a subset of rows gives exactly
the same energies as evaluating them inside a larger batch. Batched-GEMM
libraries do not guarantee that (accumulation order varies with the batch
shape), so the matrix products here go through einsum's fixed-order path.
Training uses the fast GEMM path internally; only inference-facing energies
need row stability.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ArtifactMismatchError, NumericalError, UsageError
from .rng import substream

SELU_LAMBDA = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772

_ACTIVATIONS = ("selu", "identity")


def selu(x):
    """SELU: lambda*x for x > 0, lambda*alpha*(exp(x) - 1) otherwise."""
    x = np.asarray(x, dtype=float)
    out = np.where(x > 0.0, SELU_LAMBDA * x, SELU_LAMBDA * SELU_ALPHA * np.expm1(np.minimum(x, 0.0)))
    return float(out) if out.ndim == 0 else out


def selu_grad(x):
    x = np.asarray(x, dtype=float)
    return np.where(x > 0.0, SELU_LAMBDA, SELU_LAMBDA * SELU_ALPHA * np.exp(np.minimum(x, 0.0)))


@dataclass
class MlpParams:
    """Weights and biases for the energy network. weights[k] has shape
    (layer_sizes[k], layer_sizes[k+1]); the final layer is linear."""

    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    init_seed: int
    activation: str = "selu"

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    def copy(self) -> "MlpParams":
        return MlpParams(
            layer_sizes=self.layer_sizes,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            init_seed=self.init_seed,
            activation=self.activation,
        )


def init_params(layer_sizes: tuple[int, ...], seed: int, activation: str = "selu") -> MlpParams:
    """LeCun-normal weights (variance 1/fan_in), zero biases."""
    if len(layer_sizes) < 2 or layer_sizes[-1] != 1:
        raise UsageError("layer_sizes must end in an output width of 1")
    if activation not in _ACTIVATIONS:
        raise UsageError(f"unknown activation {activation!r}")
    rng = substream(seed, "init")
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        weights.append(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(tuple(layer_sizes), weights, biases, seed, activation)


def _check_batch(params: MlpParams, batch: np.ndarray) -> np.ndarray:
    x = np.asarray(batch, dtype=float)
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise UsageError(f"batch shape {x.shape} incompatible with input dim {params.input_dim}")
    return x


def _act(params: MlpParams, z: np.ndarray) -> np.ndarray:
    return selu(z) if params.activation == "selu" else z


def _act_grad(params: MlpParams, z: np.ndarray) -> np.ndarray:
    return selu_grad(z) if params.activation == "selu" else np.ones_like(z)


def _mm_stable(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum("ij,jk->ik", a, b, optimize=False)


def _forward_core(params: MlpParams, x: np.ndarray, mm) -> tuple[np.ndarray, list, list]:
    pre, post = [], [x]
    h = x
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = mm(h, w) + b
        pre.append(z)
        h = z if k == last else _act(params, z)
        post.append(h)
    return h[:, 0], pre, post


def forward(params: MlpParams, batch) -> np.ndarray:
    """Energy per row, shape (n,). Bitwise row-stable across batch sizes."""
    x = _check_batch(params, batch)
    return _forward_core(params, x, _mm_stable)[0]


def forward_fast(params: MlpParams, batch) -> np.ndarray:
    """GEMM-backed forward for training loops; not row-stable across shapes."""
    x = _check_batch(params, batch)
    return _forward_core(params, x, np.matmul)[0]


def hidden_preactivations(params: MlpParams, batch) -> list[np.ndarray]:
    """Pre-activation values of the hidden layers (testing hook for
    excluding inputs near the SELU kink from finite-difference checks)."""
    x = _check_batch(params, batch)
    return _forward_core(params, x, _mm_stable)[1][:-1]


@dataclass
class Grads:
    weights: list[np.ndarray]
    biases: list[np.ndarray]


def backward(params: MlpParams, batch, upstream) -> Grads:
    """Exact reverse-mode gradients of forward() under per-row upstream
    sensitivities d(loss)/d(energy), shape (n,)."""
    x = _check_batch(params, batch)
    u = np.asarray(upstream, dtype=float)
    if u.shape != (x.shape[0],):
        raise UsageError(f"upstream shape {u.shape} must be ({x.shape[0]},)")
    _, pre, post = _forward_core(params, x, np.matmul)
    n_layers = len(params.weights)
    dw = [None] * n_layers
    db = [None] * n_layers
    delta = u[:, None]
    for k in range(n_layers - 1, -1, -1):
        dw[k] = post[k].T @ delta
        db[k] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ params.weights[k].T) * _act_grad(params, pre[k - 1])
    return Grads(dw, db)


def flatten_params(params: MlpParams) -> np.ndarray:
    return np.concatenate([a.ravel() for a in params.weights + params.biases])


def unflatten_like(params: MlpParams, flat: np.ndarray) -> MlpParams:
    out = params.copy()
    pos = 0
    arrays = out.weights + out.biases
    for a in arrays:
        a[...] = flat[pos : pos + a.size].reshape(a.shape)
        pos += a.size
    if pos != flat.size:
        raise UsageError("flat vector size mismatch")
    return out


def flatten_grads(grads: Grads) -> np.ndarray:
    return np.concatenate([a.ravel() for a in grads.weights + grads.biases])


@dataclass
class OptimState:
    """Adam moment accumulators; shapes mirror MlpParams."""

    m_weights: list[np.ndarray]
    m_biases: list[np.ndarray]
    v_weights: list[np.ndarray]
    v_biases: list[np.ndarray]
    step: int = 0


def init_optim_state(params: MlpParams) -> OptimState:
    return OptimState(
        m_weights=[np.zeros_like(w) for w in params.weights],
        m_biases=[np.zeros_like(b) for b in params.biases],
        v_weights=[np.zeros_like(w) for w in params.weights],
        v_biases=[np.zeros_like(b) for b in params.biases],
        step=0,
    )


ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def optimizer_step(
    params: MlpParams, grads: Grads, state: OptimState, lr: float
) -> tuple[MlpParams, OptimState]:
    """One bias-corrected Adam update. Returns fresh params and state."""
    for g in grads.weights + grads.biases:
        if not np.all(np.isfinite(g)):
            raise NumericalError("non-finite gradient; check the loss inputs")
    t = state.step + 1
    c1 = 1.0 - ADAM_BETA1**t
    c2 = 1.0 - ADAM_BETA2**t
    new_params = params.copy()
    new_state = OptimState([], [], [], [], step=t)
    for kind in ("weights", "biases"):
        ps = getattr(new_params, kind)
        gs = getattr(grads, kind)
        ms = getattr(state, "m_" + kind)
        vs = getattr(state, "v_" + kind)
        for i, (p, g, m, v) in enumerate(zip(ps, gs, ms, vs)):
            m_new = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * g
            v_new = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * g * g
            p -= lr * (m_new / c1) / (np.sqrt(v_new / c2) + ADAM_EPS)
            getattr(new_state, "m_" + kind).append(m_new)
            getattr(new_state, "v_" + kind).append(v_new)
    return new_params, new_state


def save_checkpoint(params: MlpParams, path: str | Path, meta: dict | None = None) -> None:
    """JSON checkpoint: header plus base64 row-major float64 payload."""
    payload = flatten_params(params)
    doc = {
        "layer_sizes": list(params.layer_sizes),
        "activation": params.activation,
        "init_seed": params.init_seed,
        "n_params": int(payload.size),
        "meta": meta or {},
        "payload": base64.b64encode(payload.astype("<f8").tobytes()).decode("ascii"),
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_checkpoint(path: str | Path) -> tuple[MlpParams, dict]:
    doc = json.loads(Path(path).read_text())
    layer_sizes = tuple(doc["layer_sizes"])
    template = init_params(layer_sizes, seed=doc["init_seed"], activation=doc["activation"])
    flat = np.frombuffer(base64.b64decode(doc["payload"]), dtype="<f8").copy()
    if flat.size != doc["n_params"] or flat.size != flatten_params(template).size:
        raise ArtifactMismatchError(f"checkpoint {path} payload size mismatch")
    return unflatten_like(template, flat), doc["meta"]
