"""Small numerical core: dense MLPs with manual backprop, Adam, Polyak averaging.

All parameters of an :class:`Mlp` live in one flat float64 buffer; the
per-layer weight and bias arrays are views into it. Gradients use the same
flat layout, so optimizer and target-network updates are single kernel calls.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .kernels import ACTIVATIONS


class DivergenceError(FloatingPointError):
    """Raised when a loss, gradient or parameter becomes non-finite."""


def make_rng(seed: int) -> np.random.Generator:
    """Seeded PCG64 generator; identical seeds give bit-identical draws."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def spawn_rngs(seed: int, n: int) -> list[np.random.Generator]:
    """Independent child streams derived from one seed."""
    children = np.random.SeedSequence(int(seed)).spawn(n)
    return [np.random.Generator(np.random.PCG64(c)) for c in children]


def check_finite(name: str, arr) -> None:
    if not np.all(np.isfinite(arr)):
        raise DivergenceError(f"non-finite values in {name}")


class Mlp:
    """Dense feedforward network.

    Parameters
    ----------
    sizes : sequence of int
        Layer widths including input and output, e.g. ``[4, 64, 64, 1]``.
    activations : sequence of str
        One of ``"relu"``, ``"tanh"``, ``"identity"`` per layer
        (``len(sizes) - 1`` entries).
    rng : numpy Generator, optional
        Initialisation source. Weights and biases are drawn from
        ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``; the last layer is scaled by
        ``last_scale``.
    """

    def __init__(self, sizes, activations, rng=None, last_scale=1.0):
        sizes = [int(s) for s in sizes]
        activations = list(activations)
        if len(sizes) < 2:
            raise ValueError("an Mlp needs at least an input and an output size")
        if len(activations) != len(sizes) - 1:
            raise ValueError(f"{len(sizes) - 1} layers but {len(activations)} activations")
        for a in activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        self.sizes = sizes
        self.activations = activations
        self._codes = [ACTIVATIONS[a] for a in activations]
        self.params = np.zeros(self.n_params)
        self.weights, self.biases = self.unflatten(self.params)
        self.version = 0
        if rng is not None:
            n_layers = len(self.weights)
            for k, (w, b) in enumerate(zip(self.weights, self.biases)):
                bound = 1.0 / np.sqrt(w.shape[1])
                if k == n_layers - 1:
                    bound *= last_scale
                w[...] = rng.uniform(-bound, bound, size=w.shape)
                b[...] = rng.uniform(-bound, bound, size=b.shape)

    @property
    def n_params(self) -> int:
        return sum(o * i + o for i, o in zip(self.sizes[:-1], self.sizes[1:]))

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    def unflatten(self, flat: np.ndarray):
        """Per-layer ``(weights, biases)`` views into a flat buffer of this layout."""
        if flat.shape != (self.n_params,):
            raise ValueError(f"flat buffer has shape {flat.shape}, expected ({self.n_params},)")
        ws, bs = [], []
        off = 0
        for i, o in zip(self.sizes[:-1], self.sizes[1:]):
            ws.append(flat[off:off + o * i].reshape(o, i))
            off += o * i
            bs.append(flat[off:off + o])
            off += o
        return ws, bs

    def copy(self) -> "Mlp":
        other = Mlp(self.sizes, self.activations)
        other.params[...] = self.params
        return other

    def touch(self) -> None:
        """Mark parameters as changed; caches from earlier forwards go stale."""
        self.version += 1

    def load_flat(self, flat) -> None:
        self.params[...] = flat
        self.touch()

    def to_layers(self) -> list[dict]:
        return [
            {"w": w.tolist(), "b": b.tolist(), "act": a}
            for w, b, a in zip(self.weights, self.biases, self.activations)
        ]

    @classmethod
    def from_layers(cls, layers: list[dict]) -> "Mlp":
        if not layers:
            raise ValueError("empty layer list")
        ws = [np.asarray(layer["w"], dtype=np.float64) for layer in layers]
        sizes = [ws[0].shape[1]] + [w.shape[0] for w in ws]
        net = cls(sizes, [layer["act"] for layer in layers])
        for k, layer in enumerate(layers):
            if ws[k].shape != net.weights[k].shape:
                raise ValueError(f"layer {k}: weights {ws[k].shape} do not chain")
            net.weights[k][...] = ws[k]
            net.biases[k][...] = np.asarray(layer["b"], dtype=np.float64)
        check_finite("loaded parameters", net.params)
        return net

    def __call__(self, x):
        return forward(self, x)[0]

    def __repr__(self) -> str:
        return f"Mlp(sizes={self.sizes}, activations={self.activations})"


@dataclass
class ForwardCache:
    net_id: int
    version: int
    squeeze: bool
    inputs: list = field(default_factory=list)
    pre: list = field(default_factory=list)
    post: list = field(default_factory=list)


def forward(net: Mlp, x):
    """Run ``net`` on a vector ``(in,)`` or a batch ``(n, in)``.

    Returns the output and a cache for :func:`backward`.
    """
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise ValueError(f"input shape {x.shape} does not match network input dim {net.in_dim}")
    x = np.ascontiguousarray(x)
    cache = ForwardCache(id(net), net.version, squeeze)
    h = x
    for w, b, code in zip(net.weights, net.biases, net._codes):
        cache.inputs.append(h)
        z, h = kernels.dense_forward(h, w, b, code)
        cache.pre.append(z)
        cache.post.append(h)
    return (h[0] if squeeze else h), cache


def backward(net: Mlp, cache: ForwardCache, grad_out):
    """Backpropagate ``grad_out`` (dL/dy) through the cached forward pass.

    Returns ``(grads, grad_in)``: ``grads`` is a flat array in the layout of
    ``net.params`` (summed over the batch) and ``grad_in`` is dL/dx.
    """
    if cache.net_id != id(net) or cache.version != net.version:
        raise ValueError("stale forward cache: network changed since the forward pass")
    g = np.asarray(grad_out, dtype=np.float64)
    if cache.squeeze:
        g = g[None, :]
    expected = cache.post[-1].shape
    if g.shape != expected:
        raise ValueError(f"grad_out shape {g.shape} does not match output shape {expected}")
    g = np.ascontiguousarray(g)
    grads = np.empty(net.n_params)
    gws, gbs = net.unflatten(grads)
    for k in range(len(net.weights) - 1, -1, -1):
        g = kernels.dense_backward(
            cache.inputs[k], net.weights[k], cache.pre[k], cache.post[k], net._codes[k], g, gws[k], gbs[k]
        )
    return grads, (g[0] if cache.squeeze else g)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def like(cls, params: np.ndarray, learning_rate: float = 1e-3, **kw) -> "AdamState":
        return cls(np.zeros_like(params), np.zeros_like(params), learning_rate=learning_rate, **kw)

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "learning_rate": self.learning_rate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "m": self.m.tolist(),
            "v": self.v.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AdamState":
        return cls(
            np.asarray(d["m"], dtype=np.float64),
            np.asarray(d["v"], dtype=np.float64),
            step=int(d["step"]),
            learning_rate=float(d["learning_rate"]),
            beta1=float(d["beta1"]),
            beta2=float(d["beta2"]),
            eps=float(d["eps"]),
        )


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState):
    """Bias-corrected Adam descent step, applied in place.

    Raises :class:`DivergenceError` on non-finite gradients.
    """
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise ValueError(f"shape mismatch: params {params.shape}, grads {grads.shape}, moments {state.m.shape}")
    check_finite("gradient", grads)
    state.step += 1
    kernels.adam_update(
        params, grads, state.m, state.v, state.learning_rate, state.beta1, state.beta2, state.eps, float(state.step)
    )
    return params, state


def adam_net_step(net: Mlp, grads: np.ndarray, state: AdamState) -> None:
    adam_step(net.params, grads, state)
    net.touch()


def polyak_update(target, main, coeff: float):
    """``target <- coeff * target + (1 - coeff) * main`` in place.

    Accepts flat arrays or two :class:`Mlp` of identical layout.
    """
    if not 0.0 <= coeff <= 1.0:
        raise ValueError(f"polyak coefficient must lie in [0, 1], got {coeff}")
    if isinstance(target, Mlp):
        polyak_update(target.params, main.params, coeff)
        target.touch()
        return target
    if target.shape != main.shape:
        raise ValueError(f"shape mismatch: target {target.shape}, main {main.shape}")
    kernels.polyak(target, main, float(coeff))
    return target
