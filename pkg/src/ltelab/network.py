"""Small trainable networks of LoRA linear layers.

Columns are samples: a batch of b inputs is an (n x b) matrix and losses
average over the batch, so gradients match the per-sample formulas divided
by b. Four forward modes exist, one per training regime:

  full    -- base weights only (standard training; W receives gradients)
  single  -- one head at coefficient s (plain single-adapter training)
  multi   -- all heads at coefficient s/N (joint multi-head training)
  worker  -- one head at coefficient s/N, optionally with per-layer
             stale-product corrections (one worker's local view)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import LayerGradients, LoraLinear
from .numerics import Matrix, RandomSource, as_matrix

ACTIVATIONS = ("identity", "relu")
LOSSES = ("mse", "softmax_ce")
MODE_KINDS = ("full", "single", "multi", "worker")


@dataclass(frozen=True)
class Mode:
    kind: str
    head: int | None = None

    def __post_init__(self):
        if self.kind not in MODE_KINDS:
            raise ValueError(f"mode kind must be one of {MODE_KINDS}, got {self.kind!r}")
        needs_head = self.kind in ("single", "worker")
        if needs_head and self.head is None:
            raise ValueError(f"mode {self.kind!r} needs a head index")
        if not needs_head and self.head is not None:
            raise ValueError(f"mode {self.kind!r} takes no head index")

    @classmethod
    def full(cls) -> "Mode":
        return cls("full")

    @classmethod
    def single(cls, head: int) -> "Mode":
        return cls("single", head)

    @classmethod
    def multi(cls) -> "Mode":
        return cls("multi")

    @classmethod
    def worker(cls, head: int) -> "Mode":
        return cls("worker", head)


@dataclass
class Batch:
    """inputs is (n x b); targets is (m x b) for mse or a length-b integer
    class vector for softmax_ce."""

    inputs: Matrix
    targets: np.ndarray

    def __post_init__(self):
        self.inputs = as_matrix(self.inputs, "batch inputs")

    @property
    def size(self) -> int:
        return self.inputs.shape[1]


class Network:
    """Ordered LoRA layers with a nonlinearity after each layer and a loss.

    activations[i] is applied to layer i's output; a network whose gaps are
    all "identity" composes to a single linear map.
    """

    def __init__(self, layers: list[LoraLinear], activations: list[str] | None = None, loss: str = "mse"):
        if not layers:
            raise ValueError("network needs at least one layer")
        self.layers = list(layers)
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.n != prev.m:
                raise ValueError(f"layer dims do not chain: {prev.m} feeds {nxt.n}")
        if activations is None:
            activations = ["identity"] * len(self.layers)
        if len(activations) != len(self.layers):
            raise ValueError("need one activation per layer")
        for a in activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"activation must be one of {ACTIVATIONS}, got {a!r}")
        if loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}, got {loss!r}")
        self.activations = list(activations)
        self.loss = loss

    @property
    def in_dim(self) -> int:
        return self.layers[0].n

    @property
    def out_dim(self) -> int:
        return self.layers[-1].m


def _check_corrections(net: Network, corrections) -> list[Matrix | None]:
    if corrections is None:
        return [None] * len(net.layers)
    if len(corrections) != len(net.layers):
        raise ValueError("need one correction entry (or None) per layer")
    return list(corrections)


def _layer_forward(layer: LoraLinear, x: Matrix, mode: Mode, correction: Matrix | None) -> Matrix:
    out = layer.W @ x
    if mode.kind == "full":
        return out
    if mode.kind == "single":
        h = layer.heads[mode.head]
        return out + layer.s * (h.B @ (h.A @ x))
    c = layer.s / layer.num_heads
    if mode.kind == "multi":
        for h in layer.heads:
            out = out + c * (h.B @ (h.A @ x))
        return out
    h = layer.heads[mode.head]
    out = out + c * (h.B @ (h.A @ x))
    if correction is not None:
        out = out - c * (correction @ x)
    return out


def forward(
    net: Network, inputs: Matrix, mode: Mode, corrections=None
) -> tuple[Matrix, list[dict]]:
    """Run the network; returns the output and per-layer cached intermediates.

    The cache holds each layer's input and pre-activation output, which is
    exactly what the backward pass needs.
    """
    x = as_matrix(inputs, "network inputs")
    if x.shape[0] != net.in_dim:
        raise ValueError(f"input rows {x.shape[0]} do not match network fan-in {net.in_dim}")
    corrections = _check_corrections(net, corrections)
    cache = []
    for layer, act, corr in zip(net.layers, net.activations, corrections):
        z = _layer_forward(layer, x, mode, corr)
        cache.append({"x": x, "z": z})
        x = np.maximum(z, 0.0) if act == "relu" else z
    return x, cache


def _loss_and_output_grad(out: Matrix, batch: Batch, loss: str) -> tuple[float, Matrix]:
    b = batch.size
    if loss == "mse":
        targets = as_matrix(batch.targets, "mse targets")
        if targets.shape != out.shape:
            raise ValueError(f"target shape {targets.shape} does not match output {out.shape}")
        diff = out - targets
        return float(0.5 / b * np.sum(diff * diff)), diff / b
    targets = np.asarray(batch.targets)
    if targets.ndim != 1 or targets.shape[0] != b:
        raise ValueError("softmax_ce targets must be a length-b class index vector")
    if targets.dtype.kind not in "iu" or targets.min() < 0 or targets.max() >= out.shape[0]:
        raise ValueError("softmax_ce targets must be integer classes in range")
    shifted = out - out.max(axis=0, keepdims=True)
    expz = np.exp(shifted)
    probs = expz / expz.sum(axis=0, keepdims=True)
    picked = probs[targets, np.arange(b)]
    loss_val = float(-np.mean(np.log(picked)))
    grad = probs.copy()
    grad[targets, np.arange(b)] -= 1.0
    return loss_val, grad / b


def loss_value(net: Network, batch: Batch, mode: Mode, corrections=None) -> float:
    out, _ = forward(net, batch.inputs, mode, corrections)
    val, _ = _loss_and_output_grad(out, batch, net.loss)
    return val


def loss_and_grad(
    net: Network,
    batch: Batch,
    mode: Mode,
    corrections=None,
    include_base: bool | None = None,
    heads=None,
) -> tuple[float, list[LayerGradients]]:
    """Loss plus gradients for every parameter the mode trains.

    include_base forces dW on or off regardless of mode (default: on only in
    full mode). In multi mode, `heads` restricts which heads' gradients are
    materialized; the backpropagated signal is unaffected.
    """
    corrections = _check_corrections(net, corrections)
    out, cache = forward(net, batch.inputs, mode, corrections)
    loss_val, u = _loss_and_output_grad(out, batch, net.loss)
    if include_base is None:
        include_base = mode.kind == "full"
    grads = [LayerGradients() for _ in net.layers]
    for i in reversed(range(len(net.layers))):
        layer = net.layers[i]
        x, z = cache[i]["x"], cache[i]["z"]
        if net.activations[i] == "relu":
            u = u * (z > 0.0)
        g = grads[i]
        if include_base:
            g.dW = u @ x.T
        if mode.kind == "single":
            _head_grads(g, layer, mode.head, x, u, layer.s)
        elif mode.kind == "worker":
            _head_grads(g, layer, mode.head, x, u, layer.s / layer.num_heads)
        elif mode.kind == "multi":
            c = layer.s / layer.num_heads
            wanted = range(layer.num_heads) if heads is None else heads
            for h_idx in wanted:
                _head_grads(g, layer, h_idx, x, u, c)
        if i > 0:
            u = _input_grad(layer, mode, corrections[i], u)
    return loss_val, grads


def _head_grads(g: LayerGradients, layer: LoraLinear, h_idx: int, x, u, c: float) -> None:
    h = layer.heads[h_idx]
    ax = h.A @ x
    g.dB[h_idx] = c * (u @ ax.T)
    g.dA[h_idx] = c * ((h.B.T @ u) @ x.T)


def _input_grad(layer: LoraLinear, mode: Mode, correction, u: Matrix) -> Matrix:
    dx = layer.W.T @ u
    if mode.kind == "full":
        return dx
    if mode.kind == "single":
        h = layer.heads[mode.head]
        return dx + layer.s * (h.A.T @ (h.B.T @ u))
    c = layer.s / layer.num_heads
    if mode.kind == "multi":
        for h in layer.heads:
            dx = dx + c * (h.A.T @ (h.B.T @ u))
        return dx
    h = layer.heads[mode.head]
    dx = dx + c * (h.A.T @ (h.B.T @ u))
    if correction is not None:
        dx = dx - c * (correction.T @ u)
    return dx


def _trainable_slots(net: Network, mode: Mode, include_base: bool):
    """(layer index, kind, head index, array) for every trained tensor."""
    slots = []
    for i, layer in enumerate(net.layers):
        if include_base:
            slots.append((i, "W", None, layer.W))
        if mode.kind == "single" or mode.kind == "worker":
            h = layer.heads[mode.head]
            slots.append((i, "A", mode.head, h.A))
            slots.append((i, "B", mode.head, h.B))
        elif mode.kind == "multi":
            for h_idx, h in enumerate(layer.heads):
                slots.append((i, "A", h_idx, h.A))
                slots.append((i, "B", h_idx, h.B))
    return slots


def fd_check(
    net: Network,
    batch: Batch,
    mode: Mode,
    step: float = 1e-6,
    corrections=None,
    num_params: int = 32,
    rng: RandomSource | None = None,
) -> float:
    """Worst relative error between analytic and central-difference gradients.

    Probes a random subset of at least num_params trainable coordinates
    (all of them if fewer exist). The error is |g_a - g_fd| / (|g_a| + |g_fd|)
    while the denominator exceeds 1e-12; below that both gradients are noise
    around zero and the absolute difference is reported instead (dividing by
    a floor would inflate rounding noise by twelve orders of magnitude).
    The network is restored bit-for-bit afterwards.
    """
    if not step > 0:
        raise ValueError(f"step must be > 0, got {step}")
    include_base = mode.kind == "full"
    _, grads = loss_and_grad(net, batch, mode, corrections, include_base=include_base)
    slots = _trainable_slots(net, mode, include_base)
    coords = []
    for s_idx, (li, kind, h_idx, arr) in enumerate(slots):
        for flat in range(arr.size):
            coords.append((s_idx, flat))
    rng = rng or RandomSource(0)
    if len(coords) > num_params:
        picked = rng.choice(len(coords), size=num_params, replace=False)
        coords = [coords[int(i)] for i in picked]
    worst = 0.0
    for s_idx, flat in coords:
        li, kind, h_idx, arr = slots[s_idx]
        if kind == "W":
            analytic = grads[li].dW.flat[flat]
        elif kind == "A":
            analytic = grads[li].dA[h_idx].flat[flat]
        else:
            analytic = grads[li].dB[h_idx].flat[flat]
        old = arr.flat[flat]
        arr.flat[flat] = old + step
        hi = loss_value(net, batch, mode, corrections)
        arr.flat[flat] = old - step
        lo = loss_value(net, batch, mode, corrections)
        arr.flat[flat] = old
        fd = (hi - lo) / (2.0 * step)
        scale = abs(analytic) + abs(fd)
        err = abs(analytic - fd) / scale if scale > 1e-12 else abs(analytic - fd)
        worst = max(worst, err)
    return worst
