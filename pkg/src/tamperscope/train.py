"""Two-stage training: region prompter first, then the frozen-prompter
interpreter (query fuser, text decoder, mask head) on the joint loss.

Optimization is plain SGD with momentum 0.9 under a linear-warmup,
cosine-decay learning-rate schedule.  Everything is seeded and single
threaded, so repeated runs with the same seed are bit-identical.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tensor, backward, sigmoid
from .checkpoint import load_checkpoint, parameter_hash, restore_into, save_checkpoint
from .errors import ConfigurationError, StorageError, TrainingDiverged
from .forge import load_manifest, read_triplet
from .instruct import INSTRUCTION_PREFIX, INSTRUCTION_SUFFIX, Vocabulary, build_instruction
from .interpreter import ForgeryInterpreter, InterpreterConfig, normalize_image
from .metrics import mask_iou_pr, plm
from .maskdec import binarize
from .prompter import PrompterConfig, RegionPrompter, predict_regions, prompter_loss
from .regions import RegionRegistry, extract_region_labels


@dataclass
class OptimConfig:
    lr: float = 3e-3
    warmup_steps: int = 60
    schedule: str = "cosine"
    optimizer: str = "adam"
    batch: int = 8
    epochs: int = 3
    samples_per_epoch: int | None = None


def make_lr_schedule(cfg: OptimConfig, total_steps: int):
    if cfg.schedule not in ("cosine", "constant"):
        raise ConfigurationError(f"unknown schedule {cfg.schedule!r}")

    def lr_at(step: int) -> float:
        if step < cfg.warmup_steps:
            return cfg.lr * (step + 1) / cfg.warmup_steps
        if cfg.schedule == "constant":
            return cfg.lr
        span = max(total_steps - cfg.warmup_steps, 1)
        progress = min((step - cfg.warmup_steps) / span, 1.0)
        return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * progress))

    return lr_at


class SGD:
    """Momentum SGD over a named parameter map; gradients accumulate between steps."""

    def __init__(self, params: dict[str, Tensor], lr_fn, momentum: float = 0.9):
        self.params = params
        self.lr_fn = lr_fn
        self.momentum = momentum
        self.velocity = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.step_count = 0

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def step(self, grad_scale: float = 1.0) -> float:
        lr = self.lr_fn(self.step_count)
        for name, t in self.params.items():
            if t.grad is None:
                continue
            v = self.velocity[name]
            v *= self.momentum
            v += t.grad * grad_scale
            t.data -= lr * v
        self.step_count += 1
        return lr


class Adam:
    """Adam over a named parameter map; the default trainer at this scale."""

    def __init__(self, params: dict[str, Tensor], lr_fn, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr_fn = lr_fn
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.step_count = 0

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def step(self, grad_scale: float = 1.0) -> float:
        lr = self.lr_fn(self.step_count)
        self.step_count += 1
        t = self.step_count
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad * grad_scale
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / (1.0 - self.beta1**t)
            v_hat = self.v[name] / (1.0 - self.beta2**t)
            p.data -= lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return lr


def make_optimizer(params: dict[str, Tensor], optim: OptimConfig, total_steps: int):
    lr_fn = make_lr_schedule(optim, total_steps)
    if optim.optimizer == "adam":
        return Adam(params, lr_fn)
    if optim.optimizer == "sgd":
        return SGD(params, lr_fn)
    raise ConfigurationError(f"unknown optimizer {optim.optimizer!r}")


# ---------------------------------------------------------------------------
# dataset access
# ---------------------------------------------------------------------------


class DatasetView:
    """Manifest + splits + lazily decoded samples for one dataset directory."""

    def __init__(self, root):
        self.root = Path(root)
        self.registry = RegionRegistry.load(self.root / "registry.json")
        self.records = {rec["id"]: rec for rec in load_manifest(self.root)}
        splits_path = self.root / "splits.json"
        if not splits_path.exists():
            raise StorageError(f"no splits.json in {self.root}; run synth first")
        self.splits = json.loads(splits_path.read_text())
        self._cache: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def ids(self, split: str) -> list[str]:
        if split not in self.splits:
            raise ConfigurationError(f"unknown split {split!r}; have {sorted(self.splits)}")
        return list(self.splits[split])

    def image_size(self) -> int:
        first = next(iter(self.records))
        return self.sample(first)[0].shape[1]

    def sample(self, sample_id: str):
        """(normalized image (3,H,W), binary mask, record) for one id."""
        rec = self.records[sample_id]
        if sample_id not in self._cache:
            triplet = read_triplet(self.root, rec)
            self._cache[sample_id] = (normalize_image(triplet.image), triplet.mask)
        image, mask = self._cache[sample_id]
        return image, mask, rec

    def gt_regions(self, sample_id: str) -> list[str]:
        return list(self.records[sample_id]["regions"])


# ---------------------------------------------------------------------------
# stage 1: region prompter
# ---------------------------------------------------------------------------


def eval_prompter(model: RegionPrompter, data: DatasetView, ids, threshold: float) -> float:
    """Mean positive-label Jaccard over the given sample ids."""
    scores = []
    for sid in ids:
        image, _, rec = data.sample(sid)
        logits, _ = model.forward(Tensor(image))
        pred = predict_regions(logits, model.registry, threshold)
        scores.append(plm(pred, rec["regions"], model.registry))
    return float(np.mean(scores)) if scores else 0.0


def train_prompter(
    data: DatasetView,
    cfg: PrompterConfig,
    optim: OptimConfig,
    seed: int,
    out_dir,
    log_name: str = "train_log.jsonl",
    val_limit: int | None = 200,
) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng([seed, 1])
    model = RegionPrompter(cfg, data.registry, np.random.default_rng([seed, 0]))
    params = model.named_parameters()

    train_ids = data.ids("train")
    val_ids = data.ids("val")
    if val_limit is not None:
        val_ids = val_ids[:val_limit]
    per_epoch = min(len(train_ids), optim.samples_per_epoch or len(train_ids))
    steps_per_epoch = math.ceil(per_epoch / optim.batch)
    opt = make_optimizer(params, optim, steps_per_epoch * optim.epochs)

    labels = {
        sid: extract_region_labels(data.records[sid]["caption"], data.registry).values
        for sid in train_ids
    }

    history = []
    best_plm = -1.0
    best_state = {name: t.data.copy() for name, t in params.items()}
    t0 = time.time()
    for epoch in range(optim.epochs):
        order = rng.permutation(len(train_ids))[:per_epoch]
        losses = []
        for start in range(0, per_epoch, optim.batch):
            chunk = order[start : start + optim.batch]
            opt.zero_grad()
            for idx in chunk:
                sid = train_ids[idx]
                image, _, _ = data.sample(sid)
                logits, _ = model.forward(Tensor(image))
                loss = prompter_loss(sigmoid(logits), labels[sid], cfg.omega)
                value = loss.item()
                if not math.isfinite(value):
                    raise TrainingDiverged(f"prompter loss became {value} at epoch {epoch}")
                losses.append(value)
                backward(loss)
            opt.step(grad_scale=1.0 / len(chunk))
        val_plm = eval_prompter(model, data, val_ids, cfg.threshold)
        history.append(
            {
                "epoch": epoch,
                "train_loss": float(np.mean(losses)),
                "val_plm": val_plm,
                "lr": opt.lr_fn(opt.step_count - 1),
            }
        )
        print(f"[train-fpn] epoch {epoch}: loss={history[-1]['train_loss']:.4f} "
              f"val_plm={val_plm:.4f} ({time.time() - t0:.0f}s)")
        if val_plm > best_plm:
            best_plm = val_plm
            best_state = {name: t.data.copy() for name, t in params.items()}

    for name, t in params.items():
        t.data = best_state[name]
    ckpt_path = out_dir / "fpn.ckpt"
    save_checkpoint(ckpt_path, params)
    data.registry.save(out_dir / "registry.json")
    with (out_dir / log_name).open("w") as fh:
        for row in history:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    return {"checkpoint": str(ckpt_path), "best_val_plm": best_plm, "history": history}


def load_prompter(ckpt_path, cfg: PrompterConfig, registry: RegionRegistry) -> RegionPrompter:
    model = RegionPrompter(cfg, registry, np.random.default_rng(0))
    restore_into(model.named_parameters(), load_checkpoint(ckpt_path))
    return model


# ---------------------------------------------------------------------------
# stage 2: interpreter with frozen prompter
# ---------------------------------------------------------------------------


def build_vocab(data: DatasetView, train_ids) -> Vocabulary:
    texts = [data.records[sid]["caption"] for sid in train_ids]
    texts.append(INSTRUCTION_PREFIX + ", ".join(data.registry.names) + INSTRUCTION_SUFFIX)
    return Vocabulary.from_texts(texts)


def _freeze(params: dict[str, Tensor]) -> None:
    for t in params.values():
        t.requires_grad = False


class PromptCache:
    """Frozen-prompter outputs (instruction ids, prompt tokens) per sample."""

    def __init__(self, prompter: RegionPrompter, data: DatasetView, vocab: Vocabulary, threshold: float, use_gt_regions: bool = False):
        self.prompter = prompter
        self.data = data
        self.vocab = vocab
        self.threshold = threshold
        self.use_gt_regions = use_gt_regions
        self._cache: dict[str, tuple[list[int], np.ndarray, list[str]]] = {}

    def get(self, sample_id: str) -> tuple[list[int], np.ndarray, list[str]]:
        if sample_id not in self._cache:
            image, _, rec = self.data.sample(sample_id)
            logits, tokens = self.prompter.forward(Tensor(image))
            if self.use_gt_regions:
                regions = [n for n in self.data.registry.names if n in set(rec["regions"])]
            else:
                regions = predict_regions(logits, self.data.registry, self.threshold)
            instruction = build_instruction(regions, self.vocab)
            self._cache[sample_id] = (instruction.token_ids, tokens.data.copy(), regions)
        return self._cache[sample_id]


def caption_mention_rate(caption: str, prompted, registry: RegionRegistry) -> float:
    """Fraction of the prompted regions that the caption names."""
    prompted = list(prompted)
    if not prompted:
        return 1.0
    try:
        mentioned = set(extract_region_labels(caption, registry).to_names(registry))
    except Exception:
        return 0.0
    return len(mentioned & set(prompted)) / len(prompted)


def eval_interpreter(
    model: ForgeryInterpreter,
    prompts: PromptCache,
    data: DatasetView,
    ids,
    vocab: Vocabulary,
    max_len: int | None = None,
) -> dict:
    if max_len is None:
        max_len = min(80, model.cfg.fuser.max_caption_len)
    ious, rates = [], []
    for sid in ids:
        image, gt_mask, _ = data.sample(sid)
        instr_ids, prompt_tokens, regions = prompts.get(sid)
        instruction = build_instruction(regions, vocab)
        caption, pred = model.predict(Tensor(image), instruction, prompt_tokens, vocab, max_len)
        iou, _, _ = mask_iou_pr(binarize(pred), gt_mask)
        ious.append(iou)
        rates.append(caption_mention_rate(caption, regions, data.registry))
    return {"iou": float(np.mean(ious)), "mention_rate": float(np.mean(rates))}


def train_interpreter(
    data: DatasetView,
    prompter: RegionPrompter,
    icfg: InterpreterConfig,
    optim: OptimConfig,
    seed: int,
    out_dir,
    val_limit: int | None = 40,
) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fpn_params = prompter.named_parameters()
    _freeze(fpn_params)
    fpn_hash_before = parameter_hash(fpn_params)

    train_ids = data.ids("train")
    val_ids = data.ids("val")
    if val_limit is not None:
        val_ids = val_ids[:val_limit]
    vocab = build_vocab(data, train_ids)
    (out_dir / "vocab.json").write_text(vocab.to_json() + "\n")

    model = ForgeryInterpreter(icfg, len(vocab), np.random.default_rng([seed, 2]))
    params = model.named_parameters()
    prompts = PromptCache(prompter, data, vocab, prompter.cfg.threshold)
    captions = {sid: vocab.encode(data.records[sid]["caption"])[: icfg.fuser.max_caption_len] for sid in train_ids}

    rng = np.random.default_rng([seed, 3])
    per_epoch = min(len(train_ids), optim.samples_per_epoch or len(train_ids))
    steps_per_epoch = math.ceil(per_epoch / optim.batch)
    opt = make_optimizer(params, optim, steps_per_epoch * optim.epochs)

    history = []
    best_score = -1.0
    best_state = {name: t.data.copy() for name, t in params.items()}
    t0 = time.time()
    for epoch in range(optim.epochs):
        order = rng.permutation(len(train_ids))[:per_epoch]
        totals, lms, masks = [], [], []
        for start in range(0, per_epoch, optim.batch):
            chunk = order[start : start + optim.batch]
            opt.zero_grad()
            for idx in chunk:
                sid = train_ids[idx]
                image, gt_mask, _ = data.sample(sid)
                instr_ids, prompt_tokens, _ = prompts.get(sid)
                total, lm, m = model.losses(Tensor(image), instr_ids, prompt_tokens, captions[sid], gt_mask)
                value = total.item()
                if not math.isfinite(value):
                    raise TrainingDiverged(f"stage-2 loss became {value} at epoch {epoch}")
                totals.append(value)
                lms.append(lm.item())
                masks.append(m.item())
                backward(total)
            opt.step(grad_scale=1.0 / len(chunk))
        val = eval_interpreter(model, prompts, data, val_ids, vocab)
        history.append(
            {
                "epoch": epoch,
                "train_loss": float(np.mean(totals)),
                "train_lm": float(np.mean(lms)),
                "train_mask": float(np.mean(masks)),
                "val_iou": val["iou"],
                "val_mention_rate": val["mention_rate"],
            }
        )
        print(f"[train-stage2] epoch {epoch}: loss={history[-1]['train_loss']:.4f} "
              f"val_iou={val['iou']:.4f} val_mention={val['mention_rate']:.4f} ({time.time() - t0:.0f}s)")
        score = val["iou"] + val["mention_rate"]
        if score > best_score:
            best_score = score
            best_state = {name: t.data.copy() for name, t in params.items()}

    for name, t in params.items():
        t.data = best_state[name]
    fpn_hash_after = parameter_hash(fpn_params)
    if fpn_hash_before != fpn_hash_after:
        raise TrainingDiverged("frozen prompter parameters changed during stage 2")
    ckpt_path = out_dir / "stage2.ckpt"
    save_checkpoint(ckpt_path, params)
    with (out_dir / "train_log.jsonl").open("w") as fh:
        for row in history:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    return {
        "checkpoint": str(ckpt_path),
        "history": history,
        "fpn_hash_before": fpn_hash_before,
        "fpn_hash_after": fpn_hash_after,
        "vocab": str(out_dir / "vocab.json"),
    }


def load_interpreter(ckpt_path, icfg: InterpreterConfig, vocab_size: int) -> ForgeryInterpreter:
    model = ForgeryInterpreter(icfg, vocab_size, np.random.default_rng(0))
    restore_into(model.named_parameters(), load_checkpoint(ckpt_path))
    return model
