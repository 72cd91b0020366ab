"""Two-way transformer mask head and the per-pixel mask loss.

Each decoder block lets the enriched query features attend to the image
tokens, refines the queries with an MLP, and then lets the tokens attend back
to the queries.  The updated tokens are finally projected per patch to
patch_size^2 logits, reassembled into the full-resolution grid, and squashed
through a sigmoid.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DimensionError
from .nn import CrossAttentionBlock, LayerNorm, Linear, Mlp, collect_parameters


class TwoWayMaskDecoder:
    def __init__(self, dim: int, heads: int, patch_size: int, rng: np.random.Generator, depth: int = 2, mlp_ratio: int = 4):
        self.dim = dim
        self.patch_size = patch_size
        self.depth = depth
        self.blocks = []
        for _ in range(depth):
            self.blocks.append(
                (
                    CrossAttentionBlock(rng, dim, heads),  # queries -> tokens
                    LayerNorm(dim),
                    Mlp(rng, dim, mlp_ratio * dim),
                    CrossAttentionBlock(rng, dim, heads),  # tokens -> queries
                )
            )
        self.pixel_head = Linear(rng, dim, patch_size * patch_size)

    def named_parameters(self) -> dict[str, Tensor]:
        parts: dict[str, object] = {"pixel_head": self.pixel_head}
        for i, (q_cross, ln, mlp, t_cross) in enumerate(self.blocks):
            parts[f"blocks.{i}.q_cross"] = q_cross
            parts[f"blocks.{i}.ln"] = ln
            parts[f"blocks.{i}.mlp"] = mlp
            parts[f"blocks.{i}.t_cross"] = t_cross
        return collect_parameters(parts)

    def __call__(self, queries: Tensor, image_tokens: Tensor, grid: tuple[int, int]) -> Tensor:
        """Predicted mask probabilities of shape (grid_h*p, grid_w*p)."""
        gh, gw = grid
        p = self.patch_size
        image_tokens = ad.as_tensor(image_tokens)
        if image_tokens.shape[0] != gh * gw:
            raise DimensionError(
                f"{image_tokens.shape[0]} image tokens cannot tile a {gh}x{gw} patch grid"
            )
        q, tokens = queries, image_tokens
        for q_cross, ln, mlp, t_cross in self.blocks:
            q = q_cross(q, tokens)
            q = q + mlp(ln(q))
            tokens = t_cross(tokens, q)
        logits = self.pixel_head(tokens)  # (gh*gw, p*p)
        logits = ad.reshape(logits, (gh, gw, p, p))
        logits = ad.transpose(logits, (0, 2, 1, 3))
        logits = ad.reshape(logits, (gh * p, gw * p))
        return ad.sigmoid(logits)


def _check_mask(grid: np.ndarray, name: str) -> np.ndarray:
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {grid.shape}")
    return grid


def mask_loss(pred: Tensor, gt) -> Tensor:
    """Per-pixel binary cross entropy, mean over the grid.

    Probabilities are squashed affinely into [eps, 1-eps] (eps=1e-7) before
    the logs, so endpoint predictions stay finite and a perfect prediction
    scores log(1/(1-eps)) per pixel.
    """
    gt = _check_mask(np.asarray(gt, dtype=np.float64), "ground-truth mask")
    pred = ad.as_tensor(pred)
    if pred.shape != gt.shape:
        raise DimensionError(f"mask shapes disagree: {pred.shape} vs {gt.shape}")
    if not np.all((gt == 0.0) | (gt == 1.0)):
        raise ContractError("ground-truth mask must be binary")
    eps = ad.LOG_EPS
    squashed = pred * (1.0 - 2.0 * eps) + eps
    pos = Tensor(gt) * ad.log_clamped(squashed)
    neg = Tensor(1.0 - gt) * ad.log_clamped(1.0 - squashed)
    return -ad.tmean(pos + neg)


def binarize(pred, threshold: float = 0.5) -> np.ndarray:
    """Threshold mask probabilities into a {0,1} grid (strictly greater wins)."""
    arr = pred.data if isinstance(pred, Tensor) else np.asarray(pred, dtype=np.float64)
    return (arr > threshold).astype(np.float64)
