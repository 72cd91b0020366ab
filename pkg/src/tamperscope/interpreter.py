"""Second-stage model: joint mask prediction and interpretation generation.

A lightweight patch encoder turns the image into tokens; the query fuser
distills them under the region instruction; one cross-attention block enriches
the fused queries with the (frozen) region prompter's token features; the
two-way decoder turns tokens+queries into a mask, and the causal text decoder
generates the interpretation conditioned on the enriched queries with the
instruction as its prompt prefix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError
from .instruct import (
    BOS,
    EOS,
    FuserConfig,
    Instruction,
    PromptCrossAttention,
    QueryFuser,
    TextDecoder,
    Vocabulary,
    generate,
    lm_loss,
    stage2_loss,
)
from .maskdec import TwoWayMaskDecoder, mask_loss
from .nn import TransformerBlock, collect_parameters, init_param, Linear
from .instruct import PAD


def normalize_image(rgb: np.ndarray) -> np.ndarray:
    """uint8 (H,W,3) -> float64 (3,H,W) scaled to [-1, 1]."""
    return (np.asarray(rgb, dtype=np.float64).transpose(2, 0, 1) / 127.5) - 1.0


@dataclass
class InterpreterConfig:
    image_size: int = 48
    in_channels: int = 3
    patch_size: int = 8
    enc_depth: int = 2
    fuser: FuserConfig = None  # type: ignore[assignment]
    prompt_dim: int | None = None  # width of the region-prompt tokens, if different

    def __post_init__(self):
        if self.fuser is None:
            self.fuser = FuserConfig()
        if self.image_size % self.patch_size:
            raise ConfigurationError(
                f"image size {self.image_size} not divisible by patch size {self.patch_size}"
            )


class ForgeryInterpreter:
    def __init__(self, cfg: InterpreterConfig, vocab_size: int, rng: np.random.Generator):
        self.cfg = cfg
        f = cfg.fuser
        d = f.embed_dim
        p = cfg.patch_size
        self.grid = cfg.image_size // p
        n_tokens = self.grid * self.grid
        self.patch_embed = Linear(rng, cfg.in_channels * p * p, d)
        self.pos_emb = init_param(rng, (n_tokens, d), scale=0.02)
        self.enc_blocks = [TransformerBlock(rng, d, f.heads, f.mlp_ratio) for _ in range(cfg.enc_depth)]
        self.fuser = QueryFuser(f, vocab_size, rng)
        self.prompt_attn = PromptCrossAttention(d, f.heads, rng, prompt_dim=cfg.prompt_dim)
        self.decoder = TextDecoder(f, vocab_size, rng)
        self.mask_head = TwoWayMaskDecoder(d, f.heads, p, rng)

    def named_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        enc_parts: dict[str, object] = {"patch_embed": self.patch_embed, "pos_emb": self.pos_emb}
        for i, blk in enumerate(self.enc_blocks):
            enc_parts[f"blocks.{i}"] = blk
        out.update({f"enc.{k}": v for k, v in collect_parameters(enc_parts).items()})
        out.update({f"fuser.{k}": v for k, v in self.fuser.named_parameters().items()})
        out.update(self.prompt_attn.named_parameters("prompt_attn."))
        out.update({f"decoder.{k}": v for k, v in self.decoder.named_parameters().items()})
        out.update({f"mask_head.{k}": v for k, v in self.mask_head.named_parameters().items()})
        return out

    def encode_image(self, image: Tensor) -> Tensor:
        c, h, w = image.shape
        p, g = self.cfg.patch_size, self.grid
        x = ad.reshape(image, (c, g, p, g, p))
        x = ad.transpose(x, (1, 3, 0, 2, 4))
        x = ad.reshape(x, (g * g, c * p * p))
        x = self.patch_embed(x) + self.pos_emb
        for blk in self.enc_blocks:
            x = blk(x)
        return x

    def fuse(self, image: Tensor, instruction_ids, prompt_tokens) -> tuple[Tensor, Tensor]:
        """Return (enriched query features, image tokens)."""
        tokens = self.encode_image(ad.as_tensor(image))
        fused = self.fuser(tokens, instruction_ids)
        enriched = self.prompt_attn(fused, ad.as_tensor(prompt_tokens))
        return enriched, tokens

    def losses(self, image, instruction_ids, prompt_tokens, caption_ids, gt_mask) -> tuple[Tensor, Tensor, Tensor]:
        """(total, language, mask) losses for one teacher-forced sample."""
        enriched, tokens = self.fuse(image, instruction_ids, prompt_tokens)
        targets = list(caption_ids) + [EOS]
        seq = [BOS] + list(instruction_ids) + targets
        logits = self.decoder(seq[:-1], enriched)
        start = 1 + len(list(instruction_ids)) - 1  # row predicting the first caption token
        cap_logits = ad.narrow(logits, 0, start, len(targets))
        lm = lm_loss(cap_logits, targets, pad_id=PAD, max_len=self.cfg.fuser.max_caption_len + 1)
        pred_mask = self.mask_head(enriched, tokens, (self.grid, self.grid))
        m = mask_loss(pred_mask, gt_mask)
        return stage2_loss(lm, m), lm, m

    def predict(self, image, instruction: Instruction, prompt_tokens, vocab: Vocabulary, max_len: int) -> tuple[str, np.ndarray]:
        """Greedy caption and mask probabilities for one image."""
        enriched, tokens = self.fuse(image, instruction.token_ids, prompt_tokens)
        caption = generate(self.decoder, enriched, instruction, vocab, max_len)
        pred_mask = self.mask_head(enriched, tokens, (self.grid, self.grid))
        return caption, pred_mask.data
