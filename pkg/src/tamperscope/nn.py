"""Transformer building blocks on top of the autodiff tensor core.

Layers are plain classes holding parameter tensors; ``named_parameters``
returns a flat dotted-name map used by the optimizer and the checkpoint
format.  Attention blocks use pre-norm residuals throughout.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError

LN_EPS = 1e-12


def init_param(rng: np.random.Generator, shape, scale: float | None = None) -> Tensor:
    """Gaussian init scaled by 1/sqrt(fan_in) unless an explicit scale is given."""
    if scale is None:
        fan_in = shape[0] if len(shape) == 1 else int(np.prod(shape[:-1]))
        scale = 1.0 / np.sqrt(max(fan_in, 1))
    return Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True)


def zeros_param(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


class Linear:
    def __init__(self, rng, d_in: int, d_out: int):
        self.w = init_param(rng, (d_in, d_out))
        self.b = zeros_param((d_out,))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.matmul(x, self.w) + self.b

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        return {prefix + "w": self.w, prefix + "b": self.b}


class LayerNorm:
    def __init__(self, dim: int):
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = zeros_param((dim,))

    def __call__(self, x: Tensor) -> Tensor:
        m = ad.tmean(x, axis=-1, keepdims=True)
        centered = x - m
        var = ad.tmean(centered * centered, axis=-1, keepdims=True)
        y = centered / ad.sqrt(var + LN_EPS)
        return y * self.gamma + self.beta

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        return {prefix + "gamma": self.gamma, prefix + "beta": self.beta}


class MultiHeadAttention:
    """Scaled dot-product attention over (L, d) sequences, no batch axis.

    Queries may come from a different sequence than keys/values (cross
    attention); ``kv_dim`` configures a key/value input width different from
    the query width, in which case the k/v projections act as the bridge.
    """

    def __init__(self, rng, dim: int, heads: int, kv_dim: int | None = None):
        if dim % heads != 0:
            raise ConfigurationError(f"embedding dim {dim} not divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.kv_dim = kv_dim if kv_dim is not None else dim
        self.wq = Linear(rng, dim, dim)
        self.wk = Linear(rng, self.kv_dim, dim)
        self.wv = Linear(rng, self.kv_dim, dim)
        self.wo = Linear(rng, dim, dim)

    def __call__(self, q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None) -> Tensor:
        if k.shape[-1] != self.kv_dim:
            raise ConfigurationError(
                f"key/value width {k.shape[-1]} does not match configured kv width {self.kv_dim}"
            )
        lq, lk = q.shape[0], k.shape[0]
        h, hd = self.heads, self.head_dim

        def split(t: Tensor, length: int) -> Tensor:
            return ad.transpose(ad.reshape(t, (length, h, hd)), (1, 0, 2))

        qh = split(self.wq(q), lq)  # (h, Lq, hd)
        kh = split(self.wk(k), lk)
        vh = split(self.wv(v), lk)
        scores = ad.matmul(qh, ad.transpose(kh, (0, 2, 1))) * (1.0 / np.sqrt(hd))
        if mask is not None:
            scores = scores + Tensor(mask)
        attn = ad.softmax(scores, axis=-1)
        mixed = ad.matmul(attn, vh)  # (h, Lq, hd)
        merged = ad.reshape(ad.transpose(mixed, (1, 0, 2)), (lq, self.dim))
        return self.wo(merged)

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, layer in (("wq", self.wq), ("wk", self.wk), ("wv", self.wv), ("wo", self.wo)):
            out.update(layer.named_parameters(f"{prefix}{name}."))
        return out


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, heads: int, layer: MultiHeadAttention) -> Tensor:
    """Functional form: run ``layer``'s projections and attention on q/k/v."""
    if layer.heads != heads:
        raise ConfigurationError(f"layer built for {layer.heads} heads, called with {heads}")
    return layer(q, k, v)


class Mlp:
    def __init__(self, rng, dim: int, hidden: int):
        self.fc1 = Linear(rng, dim, hidden)
        self.fc2 = Linear(rng, hidden, dim)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ad.gelu(self.fc1(x)))

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        return {**self.fc1.named_parameters(prefix + "fc1."), **self.fc2.named_parameters(prefix + "fc2.")}


class TransformerBlock:
    """Pre-norm self-attention block: x + attn(ln(x)), then x + mlp(ln(x))."""

    def __init__(self, rng, dim: int, heads: int, mlp_ratio: int = 4):
        self.ln1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(rng, dim, heads)
        self.ln2 = LayerNorm(dim)
        self.mlp = Mlp(rng, dim, mlp_ratio * dim)

    def __call__(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        normed = self.ln1(x)
        x = x + self.attn(normed, normed, normed, mask=mask)
        return x + self.mlp(self.ln2(x))

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {}
        out.update(self.ln1.named_parameters(prefix + "ln1."))
        out.update(self.attn.named_parameters(prefix + "attn."))
        out.update(self.ln2.named_parameters(prefix + "ln2."))
        out.update(self.mlp.named_parameters(prefix + "mlp."))
        return out


class CrossAttentionBlock:
    """Pre-norm residual cross attention: q + attn(ln(q), kv, kv)."""

    def __init__(self, rng, dim: int, heads: int, kv_dim: int | None = None):
        self.ln = LayerNorm(dim)
        self.attn = MultiHeadAttention(rng, dim, heads, kv_dim=kv_dim)

    def __call__(self, q: Tensor, kv: Tensor) -> Tensor:
        return q + self.attn(self.ln(q), kv, kv)

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        return {**self.ln.named_parameters(prefix + "ln."), **self.attn.named_parameters(prefix + "attn.")}


def causal_mask(length: int) -> np.ndarray:
    """Additive mask forbidding attention to later positions."""
    mask = np.zeros((length, length))
    mask[np.triu_indices(length, k=1)] = -1e9
    return mask


def collect_parameters(parts: dict[str, object]) -> dict[str, Tensor]:
    """Merge named_parameters() of several sub-modules under their given prefixes."""
    out: dict[str, Tensor] = {}
    for prefix, part in parts.items():
        if isinstance(part, Tensor):
            out[prefix] = part
        else:
            out.update(part.named_parameters(prefix + "."))
    return out
