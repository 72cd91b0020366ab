"""Annotation quality control and corpus statistics.

Validation flags three annotation defects: captions over 120 words, less than
a minute spent on the sample, and caption sentences naming regions the mask
never touched.  False-positive sentences are screened out (removed) and the
removal recorded; over-length and under-time cannot be repaired and fail the
triplet.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ContractError
from .forge import Triplet
from .regions import RegionRegistry, extract_region_labels
from .text import content_words, split_sentences

MAX_WORDS = 120
MIN_SECONDS = 60
VIOLATION_KINDS = ("over-length", "under-time", "false-positive-region", "empty-caption")


@dataclass
class TripletReport:
    triplet_id: str
    violations: list[dict]
    passed: bool
    screened_caption: str

    def to_json(self) -> dict:
        return {
            "id": self.triplet_id,
            "violations": self.violations,
            "passed": self.passed,
            "screened_caption": self.screened_caption,
        }


@dataclass
class QCReport:
    reports: list[TripletReport]
    counts: dict[str, int]
    all_passed: bool

    def to_json(self) -> dict:
        return {
            "triplets": [r.to_json() for r in self.reports],
            "violation_counts": self.counts,
            "all_passed": self.all_passed,
        }


def _caption_regions(text: str, registry: RegionRegistry) -> set[str]:
    if not text.strip():
        return set()
    return set(extract_region_labels(text, registry).to_names(registry))


def validate_triplet(triplet: Triplet, registry: RegionRegistry) -> TripletReport:
    violations: list[dict] = []
    caption = triplet.caption or ""
    words = content_words(caption)

    if not words:
        violations.append({"kind": "empty-caption", "detail": "caption has no words"})
    if len(words) > MAX_WORDS:
        violations.append({"kind": "over-length", "detail": f"{len(words)} words exceed the {MAX_WORDS}-word cap"})
    if triplet.annotation_seconds < MIN_SECONDS:
        violations.append(
            {"kind": "under-time", "detail": f"{triplet.annotation_seconds}s is under the {MIN_SECONDS}s minimum"}
        )

    screened = caption
    if triplet.modified_regions is None:
        warnings.warn(f"triplet {triplet.id}: no modified-region metadata, screening skipped", stacklevel=2)
    elif words:
        allowed = set(triplet.modified_regions)
        kept: list[str] = []
        for sentence in split_sentences(caption):
            named = _caption_regions(sentence, registry)
            false_positives = sorted(named - allowed)
            if false_positives:
                for region in false_positives:
                    violations.append(
                        {
                            "kind": "false-positive-region",
                            "detail": f"sentence names unmodified region {region!r}; sentence removed",
                            "region": region,
                        }
                    )
            else:
                kept.append(sentence)
        screened = " ".join(kept)
        if not content_words(screened):
            violations.append({"kind": "empty-caption", "detail": "screening removed every sentence"})

    unrepairable = {"over-length", "under-time", "empty-caption"}
    passed = not any(v["kind"] in unrepairable for v in violations)
    return TripletReport(triplet_id=triplet.id, violations=violations, passed=passed, screened_caption=screened)


def run_qc(corpus, registry: RegionRegistry) -> QCReport:
    reports = [validate_triplet(t, registry) for t in corpus]
    counts = {kind: 0 for kind in VIOLATION_KINDS}
    for rep in reports:
        for v in rep.violations:
            counts[v["kind"]] += 1
    return QCReport(reports=reports, counts=counts, all_passed=all(r.passed for r in reports))


# ---------------------------------------------------------------------------
# dataset statistics
# ---------------------------------------------------------------------------

LOCALIZED_K_MAX = 11  # modified-region histogram covers localized edits only


@dataclass
class DatasetStats:
    n: int
    per_method: dict[str, int]
    region_mask_counts: dict[str, int]
    region_caption_counts: dict[str, int]
    modified_count_hist: dict[int, int]
    full_face_count: int
    caption_words: dict[str, float]

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "per_method": self.per_method,
            "region_mask_counts": self.region_mask_counts,
            "region_caption_counts": self.region_caption_counts,
            "modified_count_hist": {str(k): v for k, v in sorted(self.modified_count_hist.items())},
            "full_face_count": self.full_face_count,
            "caption_words": self.caption_words,
        }


def _is_full_face(triplet: Triplet) -> bool:
    return triplet.method == "swap" or len(triplet.modified_regions) > LOCALIZED_K_MAX


def compute_stats(corpus, registry: RegionRegistry) -> DatasetStats:
    corpus = list(corpus)
    if not corpus:
        raise ContractError("cannot compute statistics over an empty corpus")
    per_method: dict[str, int] = {}
    mask_counts = {n: 0 for n in registry.names}
    caption_counts = {n: 0 for n in registry.names}
    hist: dict[int, int] = {}
    full_face = 0
    lengths: list[int] = []
    for t in corpus:
        per_method[t.method] = per_method.get(t.method, 0) + 1
        for name in t.modified_regions:
            mask_counts[name] += 1
        for name in _caption_regions(t.caption, registry):
            caption_counts[name] += 1
        if _is_full_face(t):
            full_face += 1
        else:
            k = len(t.modified_regions)
            hist[k] = hist.get(k, 0) + 1
        lengths.append(len(content_words(t.caption)))
    return DatasetStats(
        n=len(corpus),
        per_method=per_method,
        region_mask_counts=mask_counts,
        region_caption_counts=caption_counts,
        modified_count_hist=hist,
        full_face_count=full_face,
        caption_words={
            "mean": float(np.mean(lengths)),
            "min": int(min(lengths)),
            "max": int(max(lengths)),
            "total": int(sum(lengths)),
        },
    )


def split_dataset(items, ratios=(8, 1, 1), seed: int = 0) -> tuple[list, list, list]:
    """Seed-stable shuffle then contiguous train/val/test partition.

    Sizes are proportional to ``ratios`` with rounding remainders assigned to
    the training split.
    """
    items = list(items)
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ConfigurationError(f"ratios must be three positive numbers, got {ratios}")
    if len(items) < 10:
        raise ContractError(f"need at least 10 items to split, got {len(items)}")
    total = sum(ratios)
    n = len(items)
    n_val = n * ratios[1] // total
    n_test = n * ratios[2] // total
    n_train = n - n_val - n_test
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [items[i] for i in order]
    return shuffled[:n_train], shuffled[n_train : n_train + n_val], shuffled[n_train + n_val :]
