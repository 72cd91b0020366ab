"""Region prompter: dual-branch encoder over face images with a 21-way
multi-label head, plus its training losses.

The trunk is a patch-token transformer.  For the first ``m`` levels a parallel
convolution stack (a 3x3 coordinate convolution followed by 5x5 convolutions)
runs on the raw image; after each of those levels the convolutional feature
map is average-pooled onto the token grid and summed into the token stream
before the next attention block.  The classifier head mean-pools tokens into
21 logits, and the final token features are exposed for downstream cross
attention.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError, ContractError
from .nn import Linear, LayerNorm, TransformerBlock, collect_parameters, init_param
from .regions import NUM_REGIONS, RegionRegistry

DICE_SMOOTHING = 1e-6


@dataclass
class PrompterConfig:
    image_size: int = 48
    in_channels: int = 3
    patch_size: int = 8
    embed_dim: int = 64
    depth: int = 4
    heads: int = 4
    m: int = 2  # number of early levels fused with the convolution branch
    conv_kernels: tuple[int, ...] = (3, 5)  # level 0 is the coordinate conv
    conv_strides: tuple[int, ...] = (2, 2)
    conv_activation: str = "square"  # texture-energy style; "gelu" also supported
    mlp_ratio: int = 4
    omega: float = 0.2
    threshold: float = 0.5

    def __post_init__(self):
        if self.m > self.depth:
            raise ConfigurationError(f"fused levels m={self.m} exceed depth={self.depth}")
        if not (0.0 < self.omega <= 1.0):
            raise ConfigurationError(f"omega must lie in (0, 1], got {self.omega}")
        if self.embed_dim % self.heads != 0:
            raise ConfigurationError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")

    def kernel_for(self, level: int) -> int:
        return self.conv_kernels[level] if level < len(self.conv_kernels) else 3

    def stride_for(self, level: int) -> int:
        return self.conv_strides[level] if level < len(self.conv_strides) else 1


class RegionPrompter:
    def __init__(self, cfg: PrompterConfig, registry: RegionRegistry, rng: np.random.Generator):
        self.cfg = cfg
        self.registry = registry
        p, d = cfg.patch_size, cfg.embed_dim
        grid = cfg.image_size // p
        self.grid = grid
        self.patch_embed = Linear(rng, cfg.in_channels * p * p, d)
        self.pos_emb = init_param(rng, (grid * grid, d), scale=0.02)
        self.blocks = [TransformerBlock(rng, d, cfg.heads, cfg.mlp_ratio) for _ in range(cfg.depth)]
        self.conv_kernels: list[Tensor] = []
        self.conv_biases: list[Tensor] = []
        in_ch = cfg.in_channels + 2  # level 0 sees the two coordinate planes
        for level in range(cfg.m):
            k = cfg.kernel_for(level)
            fan_in = in_ch * k * k
            self.conv_kernels.append(init_param(rng, (d, in_ch, k, k), scale=1.0 / np.sqrt(fan_in)))
            self.conv_biases.append(Tensor(np.zeros(d), requires_grad=True))
            in_ch = d
        self.norm = LayerNorm(d)
        # position-aware readout: every token keeps its own head weights, so
        # "which patch looks wrong" survives into the 21 region logits
        self.head = Linear(rng, grid * grid * d, NUM_REGIONS)

    def named_parameters(self) -> dict[str, Tensor]:
        parts: dict[str, object] = {"patch_embed": self.patch_embed, "pos_emb": self.pos_emb, "norm": self.norm, "head": self.head}
        for i, blk in enumerate(self.blocks):
            parts[f"blocks.{i}"] = blk
        for i, (k, b) in enumerate(zip(self.conv_kernels, self.conv_biases)):
            parts[f"conv.{i}.kernel"] = k
            parts[f"conv.{i}.bias"] = b
        return collect_parameters(parts)

    def _patchify(self, image: Tensor) -> Tensor:
        c, h, w = image.shape
        p, g = self.cfg.patch_size, self.grid
        x = ad.reshape(image, (c, g, p, g, p))
        x = ad.transpose(x, (1, 3, 0, 2, 4))
        return ad.reshape(x, (g * g, c * p * p))

    def _pool_to_tokens(self, fmap: Tensor) -> Tensor:
        d = self.cfg.embed_dim
        _, fh, fw = fmap.shape
        g = self.grid
        if fh % g or fw % g:
            raise ConfigurationError(
                f"conv feature map {fh}x{fw} does not pool onto the {g}x{g} token grid"
            )
        ph, pw = fh // g, fw // g
        x = ad.reshape(fmap, (d, g, ph, g, pw))
        x = ad.tmean(ad.tmean(x, axis=4), axis=2)  # (d, g, g)
        return ad.transpose(ad.reshape(x, (d, g * g)), (1, 0))

    def _conv_level(self, level: int, fmap: Tensor) -> Tensor:
        cfg = self.cfg
        k, s = cfg.kernel_for(level), cfg.stride_for(level)
        pad = k // 2
        conv = ad.coordconv2d if level == 0 else ad.conv2d
        out = conv(fmap, self.conv_kernels[level], stride=s, padding=pad)
        out = out + ad.reshape(self.conv_biases[level], (cfg.embed_dim, 1, 1))
        if cfg.conv_activation == "square":
            # energy-style activation: squares turn the coordinate channels into
            # position-gated local-texture statistics in a single layer
            return out * out
        return ad.gelu(out)

    def forward(self, image: Tensor) -> tuple[Tensor, Tensor]:
        """Return (pre-sigmoid logits over 21 regions, final token features)."""
        image = ad.as_tensor(image)
        c, h, w = image.shape
        cfg = self.cfg
        if h % cfg.patch_size or w % cfg.patch_size:
            raise ConfigurationError(f"image {h}x{w} not divisible by patch size {cfg.patch_size}")
        if h != cfg.image_size or w != cfg.image_size or c != cfg.in_channels:
            raise ConfigurationError(
                f"image shape {image.shape} does not match configured "
                f"({cfg.in_channels},{cfg.image_size},{cfg.image_size})"
            )
        tokens = self._patchify(image)
        tokens = self.patch_embed(tokens) + self.pos_emb
        fmap = image
        for i, blk in enumerate(self.blocks):
            tokens = blk(tokens)
            if i < cfg.m:
                fmap = self._conv_level(i, fmap)
                tokens = tokens + self._pool_to_tokens(fmap)
        tokens = self.norm(tokens)
        flat = ad.reshape(tokens, (1, self.grid * self.grid * cfg.embed_dim))
        logits = ad.reshape(self.head(flat), (NUM_REGIONS,))
        return logits, tokens


def _check_binary(gt: np.ndarray) -> np.ndarray:
    gt = np.asarray(gt, dtype=np.float64)
    if not np.all((gt == 0.0) | (gt == 1.0)):
        raise ContractError("ground-truth region vector must be binary")
    return gt


def bce_loss(pred: Tensor, gt, omega: float) -> Tensor:
    """Discounted binary cross entropy over region probabilities.

    The negative-class term is scaled by ``omega`` to counter the prevalence
    of unmodified regions; ``omega=1`` recovers plain mean BCE.  Logs are
    clamped so endpoint probabilities stay finite.
    """
    if not (0.0 < omega <= 1.0):
        raise ContractError(f"omega must lie in (0, 1], got {omega}")
    gt = _check_binary(gt)
    pred = ad.as_tensor(pred)
    pos = Tensor(gt) * ad.log_clamped(pred)
    neg = Tensor(1.0 - gt) * ad.log_clamped(1.0 - pred) * omega
    return -ad.tmean(pos + neg)


def dice_loss(pred: Tensor, gt) -> Tensor:
    """1 minus twice the soft overlap over the magnitude sum, smoothed at 1e-6."""
    gt = np.asarray(gt, dtype=np.float64)
    pred = ad.as_tensor(pred)
    inter = ad.tsum(pred * Tensor(gt))
    total = ad.tsum(pred) + float(gt.sum())
    return 1.0 - (2.0 * inter + DICE_SMOOTHING) / (total + DICE_SMOOTHING)


def prompter_loss(pred: Tensor, gt, omega: float) -> Tensor:
    """Arithmetic mean of the discounted BCE and the dice loss."""
    return (bce_loss(pred, gt, omega) + dice_loss(pred, gt)) * 0.5


def predict_regions(logits, registry: RegionRegistry, threshold: float = 0.5) -> list[str]:
    """Region names whose sigmoid probability exceeds ``threshold``.

    Falls back to the single most probable region when nothing crosses the
    threshold, so downstream instruction templates always have content.
    Output order follows the registry index order.
    """
    raw = logits.data if isinstance(logits, Tensor) else np.asarray(logits, dtype=np.float64)
    probs = 1.0 / (1.0 + np.exp(-raw))
    picked = [registry.names[i] for i in range(len(registry)) if probs[i] > threshold]
    if not picked:
        picked = [registry.names[int(np.argmax(probs))]]
    return picked
