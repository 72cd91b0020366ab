"""Instruction building, vocabulary, multimodal query fusion, and the caption
decoder.

The query fuser distills image patch features into a fixed set of learned
query tokens under a textual instruction: queries and embedded instruction
tokens share joint self-attention, and the query positions cross-attend to the
image features in every block.  A small causal transformer decoder then
generates the interpretation, cross-attending to the fused query features and
seeing the instruction as its prompt prefix.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError, ContractError
from .nn import (
    CrossAttentionBlock,
    LayerNorm,
    Linear,
    Mlp,
    MultiHeadAttention,
    TransformerBlock,
    causal_mask,
    collect_parameters,
    init_param,
)
from .text import join_tokens, word_tokens

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ("<pad>", "<bos>", "<eos>", "<unk>")

INSTRUCTION_PREFIX = "These facial areas may be manipulated by AI: "
INSTRUCTION_SUFFIX = ". Please describe the specific issues in these areas."


class Vocabulary:
    """Word-token vocabulary with ids 0..3 reserved for PAD/BOS/EOS/UNK."""

    def __init__(self, tokens):
        self.id_to_token = list(RESERVED)
        for tok in tokens:
            if tok in RESERVED:
                raise ContractError(f"token {tok!r} collides with a reserved entry")
            self.id_to_token.append(tok)
        if len(set(self.id_to_token)) != len(self.id_to_token):
            raise ContractError("vocabulary tokens must be unique")
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}

    def __len__(self) -> int:
        return len(self.id_to_token)

    @classmethod
    def from_texts(cls, texts, min_freq: int = 1) -> "Vocabulary":
        counts = Counter(tok for text in texts for tok in word_tokens(text))
        kept = sorted((t for t, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
        return cls(kept)

    def encode(self, text: str) -> list[int]:
        return [self.token_to_id.get(tok, UNK) for tok in word_tokens(text)]

    def decode(self, ids) -> str:
        tokens = [self.id_to_token[i] for i in ids if i not in (PAD, BOS, EOS)]
        return join_tokens(tokens)

    def to_json(self) -> str:
        return json.dumps(self.token_to_id, sort_keys=True)

    @classmethod
    def from_json(cls, blob: str) -> "Vocabulary":
        mapping = json.loads(blob)
        ordered = sorted(mapping, key=mapping.get)
        if tuple(ordered[:4]) != RESERVED:
            raise ContractError("serialized vocabulary lacks the reserved id block")
        return cls(ordered[4:])


@dataclass
class Instruction:
    regions: tuple[str, ...]
    text: str
    token_ids: list[int]


def build_instruction(regions, vocab: Vocabulary) -> Instruction:
    """Render the region-prompt template and encode it.

    The rendered text is the fixed template with the region names joined by
    ", "; callers must supply at least one region (the prompter's fallback
    guarantees this upstream).
    """
    regions = tuple(regions)
    if not regions:
        raise ContractError("instruction needs at least one region")
    text = INSTRUCTION_PREFIX + ", ".join(regions) + INSTRUCTION_SUFFIX
    return Instruction(regions=regions, text=text, token_ids=vocab.encode(text))


@dataclass
class FuserConfig:
    num_query_tokens: int = 8
    embed_dim: int = 64
    heads: int = 4
    depth: int = 2
    decoder_depth: int = 2
    max_caption_len: int = 120  # K: summation bound of the language-modeling loss
    max_seq_len: int = 224  # decoder positions: BOS + instruction + caption
    mlp_ratio: int = 4

    def __post_init__(self):
        for name in ("num_query_tokens", "embed_dim", "heads", "depth", "decoder_depth", "max_caption_len"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")


class QueryFuser:
    """Query-token transformer distilling image features under an instruction."""

    def __init__(self, cfg: FuserConfig, vocab_size: int, rng: np.random.Generator):
        self.cfg = cfg
        d = cfg.embed_dim
        self.query_tokens = init_param(rng, (cfg.num_query_tokens, d), scale=0.02)
        self.tok_emb = init_param(rng, (vocab_size, d), scale=0.02)
        self.txt_pos = init_param(rng, (cfg.max_seq_len, d), scale=0.02)
        self.blocks = []
        for _ in range(cfg.depth):
            self.blocks.append(
                (
                    TransformerBlock(rng, d, cfg.heads, cfg.mlp_ratio),
                    CrossAttentionBlock(rng, d, cfg.heads),
                )
            )

    def named_parameters(self) -> dict[str, Tensor]:
        parts: dict[str, object] = {
            "query_tokens": self.query_tokens,
            "tok_emb": self.tok_emb,
            "txt_pos": self.txt_pos,
        }
        for i, (joint, cross) in enumerate(self.blocks):
            parts[f"blocks.{i}.joint"] = joint
            parts[f"blocks.{i}.cross"] = cross
        return collect_parameters(parts)

    def __call__(self, image_features: Tensor, instruction_ids) -> Tensor:
        """Fused query features of shape (num_query_tokens, embed_dim)."""
        cfg = self.cfg
        image_features = ad.as_tensor(image_features)
        if image_features.shape[-1] != cfg.embed_dim:
            raise ConfigurationError(
                f"image feature width {image_features.shape[-1]} != embed dim {cfg.embed_dim}"
            )
        ids = list(instruction_ids)
        nq = cfg.num_query_tokens
        x = self.query_tokens
        if ids:
            txt = ad.embedding(self.tok_emb, ids) + ad.narrow(self.txt_pos, 0, 0, len(ids))
            x = ad.concat([x, txt], axis=0)
        for joint, cross in self.blocks:
            x = joint(x)
            q = cross(ad.narrow(x, 0, 0, nq), image_features)
            if x.shape[0] > nq:
                x = ad.concat([q, ad.narrow(x, 0, nq, x.shape[0] - nq)], axis=0)
            else:
                x = q
        return ad.narrow(x, 0, 0, nq)


class PromptCrossAttention:
    """Single cross-attention block mixing region-prompt token features into
    fused query features, residual preserved."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, prompt_dim: int | None = None):
        self.dim = dim
        self.prompt_dim = prompt_dim if prompt_dim is not None else dim
        self.block = CrossAttentionBlock(rng, dim, heads, kv_dim=self.prompt_dim)

    def __call__(self, fused: Tensor, prompt_tokens: Tensor) -> Tensor:
        prompt_tokens = ad.as_tensor(prompt_tokens)
        if prompt_tokens.shape[-1] != self.prompt_dim:
            raise ConfigurationError(
                f"prompt token width {prompt_tokens.shape[-1]} does not match configured "
                f"width {self.prompt_dim}; construct with prompt_dim to add a projection"
            )
        return self.block(fused, prompt_tokens)

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        return self.block.named_parameters(prefix)


class TextDecoder:
    """Causal word-level decoder with cross attention to fused query features."""

    def __init__(self, cfg: FuserConfig, vocab_size: int, rng: np.random.Generator):
        self.cfg = cfg
        d = cfg.embed_dim
        self.vocab_size = vocab_size
        self.tok_emb = init_param(rng, (vocab_size, d), scale=0.02)
        self.pos_emb = init_param(rng, (cfg.max_seq_len, d), scale=0.02)
        self.blocks = []
        for _ in range(cfg.decoder_depth):
            self.blocks.append(
                (
                    LayerNorm(d),
                    MultiHeadAttention(rng, d, cfg.heads),
                    CrossAttentionBlock(rng, d, cfg.heads),
                    LayerNorm(d),
                    Mlp(rng, d, cfg.mlp_ratio * d),
                )
            )
        self.norm = LayerNorm(d)
        self.out = Linear(rng, d, vocab_size)

    def named_parameters(self) -> dict[str, Tensor]:
        parts: dict[str, object] = {"tok_emb": self.tok_emb, "pos_emb": self.pos_emb, "norm": self.norm, "out": self.out}
        for i, (ln1, attn, cross, ln2, mlp) in enumerate(self.blocks):
            parts[f"blocks.{i}.ln1"] = ln1
            parts[f"blocks.{i}.attn"] = attn
            parts[f"blocks.{i}.cross"] = cross
            parts[f"blocks.{i}.ln2"] = ln2
            parts[f"blocks.{i}.mlp"] = mlp
        return collect_parameters(parts)

    def __call__(self, ids, fused: Tensor) -> Tensor:
        """Next-token logits, one row per input position."""
        ids = list(ids)
        if len(ids) > self.cfg.max_seq_len:
            raise ContractError(f"sequence length {len(ids)} exceeds max {self.cfg.max_seq_len}")
        x = ad.embedding(self.tok_emb, ids) + ad.narrow(self.pos_emb, 0, 0, len(ids))
        mask = causal_mask(len(ids))
        for ln1, attn, cross, ln2, mlp in self.blocks:
            normed = ln1(x)
            x = x + attn(normed, normed, normed, mask=mask)
            x = cross(x, fused)
            x = x + mlp(ln2(x))
        return self.out(self.norm(x))


def lm_loss(logits: Tensor, target_ids, pad_id: int = PAD, max_len: int | None = None) -> Tensor:
    """Mean negative log-likelihood of the targets under per-row softmax.

    ``logits`` holds one row per target position (teacher forcing on the gold
    prefix); PAD positions are excluded from the mean.
    """
    target_ids = np.asarray(list(target_ids), dtype=np.int64)
    if max_len is not None and len(target_ids) > max_len:
        raise ContractError(f"target length {len(target_ids)} exceeds bound {max_len}")
    if logits.shape[0] != len(target_ids):
        raise ContractError(f"{logits.shape[0]} logit rows for {len(target_ids)} targets")
    keep = target_ids != pad_id
    n = int(keep.sum())
    if n == 0:
        raise ContractError("no non-PAD target positions")
    pick = np.zeros(logits.shape)
    pick[np.arange(len(target_ids))[keep], target_ids[keep]] = 1.0
    logp = ad.log_clamped(ad.softmax(logits, axis=-1))
    return -ad.tsum(logp * Tensor(pick)) / float(n)


def stage2_loss(lm: Tensor, mask: Tensor) -> Tensor:
    """Joint second-stage objective: language loss plus mask loss."""
    return lm + mask


def generate(decoder: TextDecoder, fused: Tensor, instruction: Instruction, vocab: Vocabulary, max_len: int) -> str:
    """Greedy decoding from BOS + instruction prefix until EOS or ``max_len``."""
    if max_len > decoder.cfg.max_caption_len:
        raise ContractError(f"max_len {max_len} exceeds caption bound {decoder.cfg.max_caption_len}")
    prefix = [BOS] + list(instruction.token_ids)
    ids = list(prefix)
    produced: list[int] = []
    for _ in range(max_len):
        logits = decoder(ids, fused)
        nxt = int(np.argmax(logits.data[-1]))
        if nxt == EOS:
            break
        produced.append(nxt)
        ids.append(nxt)
        if len(ids) >= decoder.cfg.max_seq_len:
            break
    return vocab.decode(produced)
