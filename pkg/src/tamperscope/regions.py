"""Face-part registry and region label vectors.

The registry is an ordered list of exactly 21 part names; its index order
defines the layout of every 21-dimensional label vector in the system and is
serialized (as a JSON array of names) alongside datasets and checkpoints.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError
from .text import word_tokens

NUM_REGIONS = 21

DEFAULT_REGIONS = (
    "skin",
    "nose",
    "left eye",
    "right eye",
    "left eyebrow",
    "right eyebrow",
    "left ear",
    "right ear",
    "mouth interior",
    "upper lip",
    "lower lip",
    "hair",
    "neck",
    "forehead",
    "chin",
    "cheek",
    "jaw",
    "eyeglasses",
    "earring",
    "necklace",
    "cloth",
)


def _derived_aliases(name: str) -> set[tuple[str, ...]]:
    """Token-sequence variants that should fold back onto ``name``.

    Generates a naive plural of the last word, and "left"/"right" prefixed
    forms for names that are not already lateralized.
    """
    toks = tuple(name.split())
    variants = {toks}
    if not toks[-1].endswith("s"):
        variants.add(toks[:-1] + (toks[-1] + "s",))
    if toks[0] not in ("left", "right"):
        for side in ("left", "right"):
            for v in list(variants):
                variants.add((side,) + v)
    return variants


class RegionRegistry:
    """Ordered face-part name list with per-entry matching aliases."""

    def __init__(self, names=DEFAULT_REGIONS, extra_aliases: dict[str, list[str]] | None = None):
        names = tuple(str(n).lower() for n in names)
        if len(names) != NUM_REGIONS:
            raise ContractError(f"registry must hold exactly {NUM_REGIONS} names, got {len(names)}")
        if len(set(names)) != len(names):
            raise ContractError("region names must be unique")
        self.names = names
        self._index = {n: i for i, n in enumerate(names)}

        name_tokens = {tuple(n.split()) for n in names}
        derived = {n: _derived_aliases(n) for n in names}
        # A derived alias colliding with another entry's own name, or derived
        # by more than one entry, is ambiguous; drop it from the derived set.
        counts: dict[tuple[str, ...], int] = {}
        for variants in derived.values():
            for v in variants:
                counts[v] = counts.get(v, 0) + 1
        self.aliases: dict[str, set[tuple[str, ...]]] = {}
        for n in names:
            own = tuple(n.split())
            keep = {v for v in derived[n] if v == own or (counts[v] == 1 and v not in name_tokens)}
            if extra_aliases and n in extra_aliases:
                keep.update(tuple(a.lower().split()) for a in extra_aliases[n])
            self.aliases[n] = keep

    def __len__(self) -> int:
        return len(self.names)

    def __iter__(self):
        return iter(self.names)

    def __eq__(self, other) -> bool:
        return isinstance(other, RegionRegistry) and self.names == other.names

    def index(self, name: str) -> int:
        key = name.lower()
        if key not in self._index:
            raise ContractError(f"unknown region name: {name!r}")
        return self._index[key]

    def to_json(self) -> str:
        return json.dumps(list(self.names), indent=0)

    @classmethod
    def from_json(cls, text: str) -> "RegionRegistry":
        return cls(json.loads(text))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "RegionRegistry":
        return cls.from_json(Path(path).read_text())


@dataclass
class RegionVector:
    """21 floats over the registry order: binary ground truth or probabilities."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (NUM_REGIONS,):
            raise ContractError(f"region vector must have shape ({NUM_REGIONS},), got {self.values.shape}")

    @property
    def is_binary(self) -> bool:
        return bool(np.all((self.values == 0.0) | (self.values == 1.0)))

    @classmethod
    def from_names(cls, names, registry: RegionRegistry) -> "RegionVector":
        values = np.zeros(len(registry))
        for name in names:
            values[registry.index(name)] = 1.0
        return cls(values)

    def to_names(self, registry: RegionRegistry) -> list[str]:
        return [registry.names[i] for i in range(len(registry)) if self.values[i] > 0.5]


def _contains_subsequence(tokens: list[str], phrase: tuple[str, ...]) -> bool:
    k = len(phrase)
    return any(tuple(tokens[i : i + k]) == phrase for i in range(len(tokens) - k + 1))


def extract_region_labels(caption: str, registry: RegionRegistry) -> RegionVector:
    """Binary vector with bit i set iff registry part i (or an alias) is named.

    Matching is case-insensitive and on whole-token sequences, so "eyebrow"
    never triggers an "eye" entry.
    """
    if not caption:
        raise ContractError("caption must be non-empty")
    tokens = word_tokens(caption)
    values = np.zeros(len(registry))
    for i, name in enumerate(registry.names):
        if any(_contains_subsequence(tokens, phrase) for phrase in registry.aliases[name]):
            values[i] = 1.0
    return RegionVector(values)
