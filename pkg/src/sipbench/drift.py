"""Fully-connected drift/noise/velocity predictor with exact gradients.

A small MLP on flattened fields: the noised state and the conditioning
state are flattened, concatenated with a sinusoidal time embedding, and
pushed through GELU hidden layers. The same parameter container serves
every framework; only the loss head and the meaning of the time slot
change (diffusion steps are normalised to [0, 1], the denoiser head
receives log sigma).

Gradients are computed by hand in reverse mode so they can be checked
against finite differences; no autodiff framework is involved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import erf

from . import container
from .errors import ShapeMismatchError, UnknownLossError
from .rng import as_rng

__all__ = [
    "TimeEmbedding",
    "DriftNetwork",
    "AdamState",
    "init_drift_network",
    "backward",
    "adam_update",
    "param_count",
    "save_checkpoint",
    "load_checkpoint",
    "LOSS_KINDS",
    "HEADS",
]

HEADS = ("drift", "epsilon", "denoiser", "velocity", "regression")
LOSS_KINDS = ("si", "si_expanded", "epsilon", "denoiser", "velocity", "regression")
_MSE_KINDS = ("epsilon", "denoiser", "velocity", "regression")

_SQRT2 = math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _gelu(x):
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def _dgelu(x):
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * _INV_SQRT2PI * np.exp(-0.5 * x * x)


@dataclass(frozen=True)
class TimeEmbedding:
    """Sinusoidal embedding with geometrically spaced frequencies.

    embed(t)[2i] = sin(f_i t), embed(t)[2i+1] = cos(f_i t); the norm is
    bounded by sqrt(dim).
    """

    dim: int
    f_min: float = 1.0
    f_max: float = 1000.0

    def __post_init__(self):
        if self.dim < 2 or self.dim % 2 != 0:
            raise ValueError(f"embedding dim must be even and >= 2, got {self.dim}")

    @property
    def frequencies(self) -> np.ndarray:
        half = self.dim // 2
        if half == 1:
            return np.array([self.f_min])
        ratio = (self.f_max / self.f_min) ** (1.0 / (half - 1))
        return self.f_min * ratio ** np.arange(half)

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        phase = t[..., None] * self.frequencies
        out = np.empty(phase.shape[:-1] + (self.dim,), dtype=float)
        out[..., 0::2] = np.sin(phase)
        out[..., 1::2] = np.cos(phase)
        return out


@dataclass
class DriftNetwork:
    """MLP parameters plus layout metadata.

    ``weights[i]`` has shape (fan_in, fan_out); ``depth`` counts hidden
    layers, so there are depth + 1 linear layers. ``head`` tags what the
    output means (which framework objective trained it).
    """

    weights: list
    biases: list
    state_shape: tuple
    hidden_width: int
    depth: int
    time_embed: TimeEmbedding
    head: str = "drift"

    @property
    def state_size(self) -> int:
        return int(np.prod(self.state_shape))

    @property
    def in_dim(self) -> int:
        return 2 * self.state_size + self.time_embed.dim

    def parameters(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def with_parameters(self, params: list) -> "DriftNetwork":
        n = len(self.weights)
        if len(params) != 2 * n:
            raise ShapeMismatchError(f"expected {2 * n} parameter arrays, got {len(params)}")
        return replace(self, weights=list(params[0::2]), biases=list(params[1::2]))

    def _features(self, x, cond, t, scalar):
        x = np.asarray(x, dtype=float)
        cond = np.asarray(cond, dtype=float)
        if x.shape != cond.shape:
            raise ShapeMismatchError(f"state {x.shape} vs condition {cond.shape}")
        nd = len(self.state_shape)
        if x.shape[-nd:] != tuple(self.state_shape):
            raise ShapeMismatchError(f"field shape {x.shape} incompatible with {self.state_shape}")
        batched = x.ndim == nd + 1
        if not (x.ndim == nd or batched):
            raise ShapeMismatchError(f"expected {nd}D field or a batch thereof, got {x.shape}")
        if batched and x.shape[0] == 0:
            raise ShapeMismatchError("empty batch")
        if not (np.isfinite(x).all() and np.isfinite(cond).all() and np.all(np.isfinite(t))):
            raise ValueError("non-finite network input")
        B = x.shape[0] if batched else 1
        t = np.asarray(t, dtype=float)
        emb = self.time_embed(t) + self.time_embed(np.asarray(scalar, dtype=float))
        emb = np.broadcast_to(emb, (B, self.time_embed.dim))
        feats = np.concatenate(
            [x.reshape(B, -1), cond.reshape(B, -1), emb], axis=1
        )
        return feats, batched, x.shape

    def _forward_trace(self, feats):
        """Returns (output, pre-activations, activations) for backprop."""
        zs, acts = [], [feats]
        a = feats
        for i in range(self.depth):
            z = a @ self.weights[i] + self.biases[i]
            zs.append(z)
            a = _gelu(z)
            acts.append(a)
        out = a @ self.weights[-1] + self.biases[-1]
        return out, zs, acts

    def predict(self, x, cond, t, scalar=0.0) -> np.ndarray:
        """Deterministic forward pass; identical inputs give identical bits."""
        feats, batched, xshape = self._features(x, cond, t, scalar)
        out, _, _ = self._forward_trace(feats)
        return out.reshape(xshape) if batched else out.reshape(self.state_shape)

    __call__ = predict


def init_drift_network(
    state_shape,
    hidden_width: int = 256,
    depth: int = 4,
    time_embed_dim: int = 64,
    head: str = "drift",
    seed=0,
) -> DriftNetwork:
    """He-scaled Gaussian init; depth = number of hidden GELU layers (0 gives
    a single linear map)."""
    if head not in HEADS:
        raise UnknownLossError(f"unknown head {head!r}, expected one of {HEADS}")
    if depth < 0:
        raise ValueError("depth must be >= 0")
    rng = as_rng(seed)
    state_shape = tuple(int(s) for s in state_shape)
    embed = TimeEmbedding(time_embed_dim)
    in_dim = 2 * int(np.prod(state_shape)) + time_embed_dim
    dims = [in_dim] + [hidden_width] * depth + [int(np.prod(state_shape))]
    weights, biases = [], []
    for layer, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        w = rng.standard_normal((fan_in, fan_out)) / math.sqrt(fan_in)
        if depth > 0 and layer == depth:
            # Zero-initialised head: the network starts at the constant
            # zero map and learns the mean response through the bias first.
            w = np.zeros((fan_in, fan_out))
        weights.append(w)
        biases.append(np.zeros(fan_out))
    return DriftNetwork(
        weights=weights,
        biases=biases,
        state_shape=state_shape,
        hidden_width=hidden_width,
        depth=depth,
        time_embed=embed,
        head=head,
    )


def param_count(net: DriftNetwork) -> int:
    return sum(p.size for p in net.parameters())


def _loss_and_grad_out(out: np.ndarray, target: np.ndarray, loss_kind: str):
    n = out.size
    r = out - target
    if loss_kind == "si":
        # 0.5 * mean (b - R)^2; same gradient as the expanded form below,
        # offset by a parameter-independent constant.
        return 0.5 * np.mean(r * r), r / n
    if loss_kind == "si_expanded":
        return np.mean(0.5 * out * out - out * target), r / n
    if loss_kind in _MSE_KINDS:
        return np.mean(r * r), 2.0 * r / n
    raise UnknownLossError(f"unknown loss kind {loss_kind!r}, expected one of {LOSS_KINDS}")


def backward(net: DriftNetwork, x, cond, t, target, loss_kind: str, scalar=0.0):
    """Batch loss and exact reverse-mode parameter gradients.

    The loss is the batch mean of the per-element objective; gradients
    are returned in ``net.parameters()`` order. The reduction is a single
    fixed-order matrix product, so repeated calls are bit-reproducible.
    """
    target = np.asarray(target, dtype=float)
    feats, batched, _ = net._features(x, cond, t, scalar)
    if feats.shape[0] == 0:
        raise ShapeMismatchError("empty batch")
    out, zs, acts = net._forward_trace(feats)
    flat_target = target.reshape(out.shape)
    loss, d_out = _loss_and_grad_out(out, flat_target, loss_kind)

    grads_w = [None] * len(net.weights)
    grads_b = [None] * len(net.biases)
    delta = d_out
    grads_w[-1] = acts[-1].T @ delta
    grads_b[-1] = delta.sum(axis=0)
    for i in range(net.depth - 1, -1, -1):
        delta = (delta @ net.weights[i + 1].T) * _dgelu(zs[i])
        grads_w[i] = acts[i].T @ delta
        grads_b[i] = delta.sum(axis=0)

    grads = []
    for gw, gb in zip(grads_w, grads_b):
        grads.extend([gw, gb])
    return float(loss), grads


@dataclass
class AdamState:
    m: list
    v: list

    @classmethod
    def zeros_like(cls, params: list) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_update(
    params: list,
    grads: list,
    state: AdamState,
    step: int,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
):
    """Bias-corrected adaptive-moment update, elementwise per tensor.

    Pure: returns (new_params, new_state) without touching the inputs.
    """
    if step < 1:
        raise ValueError(f"step must be >= 1, got {step}")
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ShapeMismatchError("params/grads/moments length mismatch")
    new_params, new_m, new_v = [], [], []
    c1 = 1.0 - beta1**step
    c2 = 1.0 - beta2**step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ShapeMismatchError(f"param {p.shape} vs grad {g.shape}")
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        new_params.append(p - lr * (m / c1) / (np.sqrt(v / c2) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(new_m, new_v)


CHECKPOINT_KIND = "checkpoint"


def save_checkpoint(path, net: DriftNetwork, extra: dict | None = None) -> None:
    """Serialise layout + parameters (f32le) to the shared container format."""
    params = net.parameters()
    header = {
        "kind": CHECKPOINT_KIND,
        "state_shape": list(net.state_shape),
        "hidden_width": net.hidden_width,
        "depth": net.depth,
        "time_embed_dim": net.time_embed.dim,
        "head": net.head,
        "layer_shapes": [list(p.shape) for p in params],
    }
    if extra:
        overlap = set(extra) & set(header)
        if overlap:
            raise ValueError(f"extra header keys collide: {sorted(overlap)}")
        header.update(extra)
    flat = np.concatenate([p.ravel() for p in params])
    container.write_container(path, header, flat)


def load_checkpoint(path) -> tuple[DriftNetwork, dict]:
    """Inverse of save_checkpoint; parameters come back as float64 upcast
    from the stored f32."""
    header, payload = container.read_container(path)
    if header.get("kind") != CHECKPOINT_KIND:
        raise container.ContainerFormatError(f"{path}: not a checkpoint container")
    shapes = [tuple(s) for s in header["layer_shapes"]]
    params, offset = [], 0
    for shape in shapes:
        size = int(np.prod(shape))
        params.append(payload[offset : offset + size].astype(float).reshape(shape))
        offset += size
    net = DriftNetwork(
        weights=list(params[0::2]),
        biases=list(params[1::2]),
        state_shape=tuple(header["state_shape"]),
        hidden_width=int(header["hidden_width"]),
        depth=int(header["depth"]),
        time_embed=TimeEmbedding(int(header["time_embed_dim"])),
        head=header["head"],
    )
    return net, header
