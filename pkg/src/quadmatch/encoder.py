"""A small MLP encoder with hand-written backward pass.

Maps raw keypoint features to unit-norm embedding rows:
``linear -> activation`` blocks followed by a final linear layer and
row-wise L2 normalization.  Parameters are immutable value objects so
optimizer and momentum-teacher updates are pure functions -- the
teacher/student pair in the trainer can never alias each other.

The default hidden activation is the ramp function ``max(0, z)``;
``tanh`` is available as an alternative.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numcore import as_matrix

__all__ = [
    "EncoderParams",
    "EncoderGrads",
    "ForwardCache",
    "init_params",
    "forward",
    "backward",
    "ema_update",
    "save_params",
    "load_params",
]

_ACTIVATIONS = ("ramp", "tanh")


def _frozen_copy(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class EncoderParams:
    """Weights and biases of the encoder, layer by layer.

    ``weights[k]`` has shape ``(d_in_k, d_out_k)`` and consecutive
    layers must chain; ``biases[k]`` has shape ``(d_out_k,)``.
    """

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    activation: str = "ramp"

    def __post_init__(self):
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation: {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight and at least one layer")
        ws, bs = [], []
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            w = np.asarray(w, dtype=np.float64)
            b = np.asarray(b, dtype=np.float64)
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {k}: weight {w.shape} / bias {b.shape} mismatch")
            if k > 0 and w.shape[0] != ws[-1].shape[1]:
                raise ValueError(f"layer {k}: input dim {w.shape[0]} does not chain")
            ws.append(_frozen_copy(w))
            bs.append(_frozen_copy(b))
        object.__setattr__(self, "weights", tuple(ws))
        object.__setattr__(self, "biases", tuple(bs))

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)


@dataclass(frozen=True)
class EncoderGrads:
    """Parameter gradients, mirroring :class:`EncoderParams` layout."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]


@dataclass(frozen=True)
class ForwardCache:
    """Intermediates kept by :func:`forward` for the backward pass."""

    params: EncoderParams
    inputs: tuple[np.ndarray, ...]  # input to each linear layer
    norms: np.ndarray               # per-row norm of the last linear output
    output: np.ndarray              # normalized embeddings


def init_params(layer_dims, seed, activation: str = "ramp") -> EncoderParams:
    """Fresh parameters for the given ``[d_in, ..., d_out]`` sizes.

    Weights are drawn uniformly from ``+-1/sqrt(d_in)`` of their layer,
    biases start at zero.
    """
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or min(dims) < 1:
        raise ValueError(f"layer_dims needs >= 2 positive entries, got {layer_dims}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(d_in)
        weights.append(rng.uniform(-bound, bound, size=(d_in, d_out)))
        biases.append(np.zeros(d_out))
    return EncoderParams(tuple(weights), tuple(biases), activation)


def forward(params: EncoderParams, x) -> tuple[np.ndarray, ForwardCache]:
    """Embed feature rows; returns the embeddings and a backward cache.

    Raises if a row maps to the exact zero vector before normalization,
    which cannot be normalized.
    """
    h = as_matrix(x, "x")
    if h.shape[1] != params.weights[0].shape[0]:
        raise ValueError(
            f"input dim {h.shape[1]} != encoder input dim {params.weights[0].shape[0]}"
        )
    inputs = [h]
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        if k < last:
            h = np.maximum(z, 0.0) if params.activation == "ramp" else np.tanh(z)
            inputs.append(h)
        else:
            h = z
    norms = np.linalg.norm(h, axis=1)
    if np.any(norms == 0.0):
        raise ValueError("a row collapsed to zero before normalization")
    out = h / norms[:, None]
    return out, ForwardCache(params, tuple(inputs), norms, out)


def backward(cache: ForwardCache, grad_p) -> EncoderGrads:
    """Parameter gradients given the gradient at the normalized output."""
    g = as_matrix(grad_p, "grad_p")
    p = cache.output
    if g.shape != p.shape:
        raise ValueError(f"grad shape {g.shape} != output shape {p.shape}")
    params = cache.params
    # Through row normalization: project out the radial component.
    gy = (g - np.sum(g * p, axis=1, keepdims=True) * p) / cache.norms[:, None]
    n_layers = len(params.weights)
    gw: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    gz = gy
    for k in range(n_layers - 1, -1, -1):
        gw[k] = cache.inputs[k].T @ gz
        gb[k] = gz.sum(axis=0)
        if k == 0:
            break
        gh = gz @ params.weights[k].T
        act_out = cache.inputs[k]
        if params.activation == "ramp":
            gz = gh * (act_out > 0.0)
        else:
            gz = gh * (1.0 - act_out * act_out)
    return EncoderGrads(tuple(gw), tuple(gb))


def ema_update(teacher: EncoderParams, student: EncoderParams, t: float) -> EncoderParams:
    """One exponential-moving-average step toward the student.

    Returns ``t * teacher + (1 - t) * student`` parameter-wise; both
    inputs are left untouched.
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"momentum t must lie in [0, 1], got {t}")
    if teacher.layer_dims != student.layer_dims:
        raise ValueError("teacher and student architectures differ")
    if teacher.activation != student.activation:
        raise ValueError("teacher and student activations differ")
    weights = tuple(
        t * tw + (1.0 - t) * sw for tw, sw in zip(teacher.weights, student.weights)
    )
    biases = tuple(
        t * tb + (1.0 - t) * sb for tb, sb in zip(teacher.biases, student.biases)
    )
    return EncoderParams(weights, biases, teacher.activation)


def save_params(params: EncoderParams, path) -> None:
    """Write parameters as JSON; floats round-trip bit-exactly."""
    payload = {
        "activation": params.activation,
        "layers": [
            {"weight": w.tolist(), "bias": b.tolist()}
            for w, b in zip(params.weights, params.biases)
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def load_params(path) -> EncoderParams:
    payload = json.loads(Path(path).read_text())
    layers = payload["layers"]
    return EncoderParams(
        tuple(np.asarray(layer["weight"], dtype=np.float64) for layer in layers),
        tuple(np.asarray(layer["bias"], dtype=np.float64) for layer in layers),
        payload["activation"],
    )
