"""Evaluation metrics: region-set Jaccard (PLM), mask IoU/precision/recall,
and the caption metrics BLEU-1..4, ROUGE-L, and CIDEr.

Caption metrics run over the shared word tokenizer.  BLEU is corpus-level
modified n-gram precision with clipping and brevity penalty, no smoothing.
CIDEr uses tf-idf n-gram vectors (idf from the reference corpus), cosine
similarity per order 1..4 with a Gaussian length penalty (sigma=6), scaled
by 10 and averaged over orders, then over samples.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, DimensionError, StorageError
from .maskdec import binarize
from .pngio import load_mask
from .regions import RegionRegistry
from .text import word_tokens

ROUGE_BETA = 1.2
CIDER_SIGMA = 6.0


# ---------------------------------------------------------------------------
# region sets and masks
# ---------------------------------------------------------------------------


def plm(pred, gt, registry: RegionRegistry) -> float:
    """Positive-label Jaccard: |pred ∩ gt| / |pred ∪ gt|; both empty -> 1.0."""
    pred_set, gt_set = set(pred), set(gt)
    for name in pred_set | gt_set:
        registry.index(name)  # raises on unknown names
    union = pred_set | gt_set
    if not union:
        return 1.0
    return len(pred_set & gt_set) / len(union)


def mask_iou_pr(pred: np.ndarray, gt: np.ndarray) -> tuple[float, float, float]:
    """(IoU, precision, recall) over binary masks.

    Empty-denominator conventions: precision with an empty prediction is 1.0
    when the ground truth is also empty, else 0.0; recall symmetric; IoU of
    two empty masks is 1.0.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise DimensionError(f"mask shapes disagree: {pred.shape} vs {gt.shape}")
    for name, grid in (("prediction", pred), ("ground truth", gt)):
        if not np.all((grid == 0.0) | (grid == 1.0)):
            raise ContractError(f"{name} mask must be binary")
    inter = float(np.sum((pred == 1) & (gt == 1)))
    p_count = float(pred.sum())
    g_count = float(gt.sum())
    union = p_count + g_count - inter
    iou = inter / union if union else 1.0
    precision = inter / p_count if p_count else (1.0 if g_count == 0 else 0.0)
    recall = inter / g_count if g_count else (1.0 if p_count == 0 else 0.0)
    return iou, precision, recall


# ---------------------------------------------------------------------------
# caption metrics
# ---------------------------------------------------------------------------


def _tokens(text_or_tokens) -> list[str]:
    if isinstance(text_or_tokens, str):
        return word_tokens(text_or_tokens)
    return list(text_or_tokens)


def _ngram_counts(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidates, references, n: int = 4) -> float:
    """Corpus-level BLEU-n: clipped n-gram precision, geometric mean over
    orders 1..n, brevity penalty exp(1 - r/c) when c < r; any zero order
    precision zeroes the score (no smoothing)."""
    cands = [_tokens(c) for c in candidates]
    refs = [_tokens(r) for r in references]
    if not cands:
        raise ContractError("empty candidate corpus")
    if len(cands) != len(refs):
        raise ContractError(f"{len(cands)} candidates vs {len(refs)} references")
    if not 1 <= n <= 4:
        raise ContractError(f"BLEU order must be in 1..4, got {n}")
    log_sum = 0.0
    for order in range(1, n + 1):
        matched = 0
        total = 0
        for cand, ref in zip(cands, refs):
            c_counts = _ngram_counts(cand, order)
            r_counts = _ngram_counts(ref, order)
            matched += sum(min(count, r_counts.get(gram, 0)) for gram, count in c_counts.items())
            total += max(len(cand) - order + 1, 0)
        if matched == 0 or total == 0:
            return 0.0
        log_sum += math.log(matched / total)
    c_len = sum(len(c) for c in cands)
    r_len = sum(len(r) for r in refs)
    bp = math.exp(1.0 - r_len / c_len) if c_len < r_len else 1.0
    return bp * math.exp(log_sum / n)


def _lcs_length(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, 1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l(candidate, reference, beta: float = ROUGE_BETA) -> float:
    """LCS F-measure between one candidate and one reference."""
    cand, ref = _tokens(candidate), _tokens(reference)
    if not cand or not ref:
        return 0.0
    lcs = _lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    p = lcs / len(cand)
    r = lcs / len(ref)
    return ((1 + beta**2) * p * r) / (r + beta**2 * p)


def _tfidf_vector(tokens: list[str], order: int, idf: dict, corpus_size: int) -> dict:
    counts = _ngram_counts(tokens, order)
    return {gram: count * idf.get(gram, math.log(corpus_size)) for gram, count in counts.items()}


def _cosine(u: dict, v: dict) -> float:
    nu = math.sqrt(sum(x * x for x in u.values()))
    nv = math.sqrt(sum(x * x for x in v.values()))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    dot = sum(x * v[g] for g, x in u.items() if g in v)
    return dot / (nu * nv)


def cider(candidates, references, max_n: int = 4, sigma: float = CIDER_SIGMA) -> tuple[float, list[float]]:
    """Consensus caption score: (corpus mean, per-sample scores).

    Per sample and order: cosine similarity of candidate/reference tf-idf
    n-gram vectors, damped by a Gaussian penalty on the token-length gap;
    the sample score is 10 times the mean over orders.
    """
    cands = [_tokens(c) for c in candidates]
    refs = [_tokens(r) for r in references]
    if not cands:
        raise ContractError("empty candidate corpus")
    if len(cands) != len(refs):
        raise ContractError(f"{len(cands)} candidates vs {len(refs)} references")
    distinct = {tuple(r) for r in refs}
    if len(distinct) < 2:
        raise ContractError("CIDEr needs at least 2 distinct reference documents for idf")
    corpus_size = len(refs)
    idf_by_order: list[dict] = []
    for order in range(1, max_n + 1):
        df: Counter = Counter()
        for ref in refs:
            df.update(set(_ngram_counts(ref, order)))
        idf_by_order.append({gram: math.log(corpus_size / count) for gram, count in df.items()})
    scores = []
    for cand, ref in zip(cands, refs):
        per_order = []
        penalty = math.exp(-((len(cand) - len(ref)) ** 2) / (2.0 * sigma**2))
        for order in range(1, max_n + 1):
            idf = idf_by_order[order - 1]
            u = _tfidf_vector(cand, order, idf, corpus_size)
            v = _tfidf_vector(ref, order, idf, corpus_size)
            per_order.append(_cosine(u, v) * penalty)
        scores.append(10.0 * float(np.mean(per_order)))
    return float(np.mean(scores)), scores


# ---------------------------------------------------------------------------
# whole-run evaluation
# ---------------------------------------------------------------------------


@dataclass
class MetricsReport:
    plm: float
    iou: float
    precision: float
    recall: float
    bleu: list[float]
    rouge_l: float
    cider: float
    per_sample: list[dict]

    def to_json(self) -> dict:
        return {
            "plm": self.plm,
            "iou": self.iou,
            "precision": self.precision,
            "recall": self.recall,
            "bleu": self.bleu,
            "rouge_l": self.rouge_l,
            "cider": self.cider,
            "per_sample": self.per_sample,
        }


def read_predictions(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise StorageError(f"no prediction file at {path}")
    out = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise StorageError(f"{path}:{lineno}: bad prediction line: {exc}") from exc
            for key in ("id", "mask", "caption", "regions"):
                if key not in rec:
                    raise StorageError(f"{path}:{lineno}: prediction record missing {key!r}")
            out.append(rec)
    return out


def evaluate_run(predictions_path, dataset_root, registry: RegionRegistry) -> MetricsReport:
    """Score a prediction file against the dataset manifest it targets."""
    from .forge import load_manifest  # late import to keep module load light

    predictions_path = Path(predictions_path)
    preds = read_predictions(predictions_path)
    if not preds:
        raise ContractError(f"prediction file {predictions_path} is empty")
    manifest = {rec["id"]: rec for rec in load_manifest(dataset_root)}
    missing = sorted(p["id"] for p in preds if p["id"] not in manifest)
    if missing:
        raise StorageError(f"prediction ids missing from manifest: {missing}")

    root = Path(dataset_root)
    pred_base = predictions_path.parent
    per_sample = []
    plms, ious, precs, recs, rouges = [], [], [], [], []
    cands, refs = [], []
    for rec in preds:
        gt = manifest[rec["id"]]
        pred_mask = binarize(load_mask(pred_base / rec["mask"]))
        gt_mask = load_mask(root / gt["mask"])
        iou, precision, recall = mask_iou_pr(pred_mask, gt_mask)
        sample_plm = plm(rec["regions"], gt["regions"], registry)
        sample_rouge = rouge_l(rec["caption"], gt["caption"])
        per_sample.append(
            {
                "id": rec["id"],
                "plm": sample_plm,
                "iou": iou,
                "precision": precision,
                "recall": recall,
                "rouge_l": sample_rouge,
            }
        )
        plms.append(sample_plm)
        ious.append(iou)
        precs.append(precision)
        recs.append(recall)
        rouges.append(sample_rouge)
        cands.append(rec["caption"])
        refs.append(gt["caption"])

    cider_corpus, cider_samples = cider(cands, refs)
    for entry, value in zip(per_sample, cider_samples):
        entry["cider"] = value
    return MetricsReport(
        plm=float(np.mean(plms)),
        iou=float(np.mean(ious)),
        precision=float(np.mean(precs)),
        recall=float(np.mean(recs)),
        bleu=[bleu(cands, refs, n) for n in (1, 2, 3, 4)],
        rouge_l=float(np.mean(rouges)),
        cider=cider_corpus,
        per_sample=per_sample,
    )
