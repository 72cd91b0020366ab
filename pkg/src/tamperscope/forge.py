"""Synthetic forged-face construction.

Renders procedural frontal faces with per-region occupancy grids, samples
forgery masks over those regions, composites perturbed content into the mask,
and writes captioned image/mask/text triplets in the dataset layout:

    dataset/
      manifest.jsonl   one record per triplet
      registry.json    region name order
      img/{id}.png     forged RGB image
      mask/{id}.png    binary forgery mask

Manifest record fields: id, image, mask, caption, method, regions, seed,
annotation_seconds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, DimensionError, StorageError
from .pngio import load_image, load_mask, save_image, save_mask
from .regions import DEFAULT_REGIONS, RegionRegistry
from .text import content_words

METHODS = ("swap", "inpaint-T", "inpaint-D")
PERTURBATION_KINDS = ("blur", "noise", "color-shift", "geometry-warp", "texture-swap")
KIND_TO_METHOD = {
    "texture-swap": "swap",
    "blur": "inpaint-T",
    "noise": "inpaint-T",
    "color-shift": "inpaint-D",
    "geometry-warp": "inpaint-D",
}
METHOD_KINDS = {
    "swap": ("texture-swap",),
    "inpaint-T": ("blur", "noise"),
    "inpaint-D": ("color-shift", "geometry-warp"),
}


@dataclass
class PerturbationSpec:
    kind: str
    strength: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in PERTURBATION_KINDS:
            raise ContractError(f"unknown perturbation kind {self.kind!r}")


@dataclass
class FaceLayout:
    size: int
    grids: dict[str, np.ndarray]  # region name -> (H,W) bool occupancy
    present: dict[str, bool]

    def present_regions(self, registry: RegionRegistry) -> list[str]:
        return [n for n in registry.names if self.present.get(n) and self.grids[n].any()]


@dataclass
class Triplet:
    id: str
    image: np.ndarray  # (H,W,3) uint8
    mask: np.ndarray  # (H,W) float {0,1}
    caption: str
    method: str
    seed: int
    modified_regions: list[str]
    annotation_seconds: int


# ---------------------------------------------------------------------------
# face rendering
# ---------------------------------------------------------------------------


def _ellipse(size: int, cx: float, cy: float, rx: float, ry: float) -> np.ndarray:
    ys, xs = np.mgrid[0:size, 0:size]
    rx_px = max(rx * size, 1.0)
    ry_px = max(ry * size, 1.0)
    return ((xs - cx * size) / rx_px) ** 2 + ((ys - cy * size) / ry_px) ** 2 <= 1.0


def _rect(size: int, x0: float, x1: float, y0: float, y1: float) -> np.ndarray:
    # shared fractional boundaries quantize identically, so adjacent bands
    # produced from the same boundary never overlap
    grid = np.zeros((size, size), dtype=bool)
    c0 = int(round(x0 * size))
    c1 = max(int(round(x1 * size)), c0 + 1)
    r0 = int(round(y0 * size))
    r1 = max(int(round(y1 * size)), r0 + 1)
    grid[r0:r1, c0:c1] = True
    return grid


def render_face(seed: int, size: int = 48, registry: RegionRegistry | None = None) -> tuple[np.ndarray, FaceLayout]:
    """Deterministic procedural portrait plus per-region occupancy grids.

    The layout is canonically frontal (eyes lateral to and above the nose,
    eyebrows above the eyes, lips below the nose) and fills the frame like a
    tight portrait crop, giving every part a footprint large enough to carry
    a detectable texture signature.
    """
    registry = registry or RegionRegistry(DEFAULT_REGIONS)
    rng = np.random.default_rng(seed)

    # identity palettes vary in a band narrow enough that a tonal anomaly
    # stands out from between-face variation
    skin = np.array([198, 160, 132]) + rng.integers(-8, 9, 3)
    hair_c = np.array([70, 50, 35]) + rng.integers(-10, 11, 3)
    eye_c = np.array([60, 90, 130]) + rng.integers(-12, 13, 3)
    lip_c = np.array([170, 85, 90]) + rng.integers(-8, 9, 3)
    cloth_c = np.array([80, 80, 140]) + rng.integers(-14, 15, 3)
    bg_c = np.array([120, 140, 150]) + rng.integers(-12, 13, 3)
    # texture strong enough that smoothing or re-noising a region is conspicuous,
    # in a band narrow enough that roughness thresholds transfer across identities
    tex_amp = float(rng.uniform(8.0, 12.0))

    jx = float(rng.uniform(-0.006, 0.006))  # whole-feature-set jitter
    jy = float(rng.uniform(-0.006, 0.006))
    has_glasses = rng.random() < 0.3
    has_earring = rng.random() < 0.3
    has_necklace = rng.random() < 0.3

    def j(x: float, y: float) -> tuple[float, float]:
        return x + jx, y + jy

    label = np.full((size, size), -1, dtype=np.int32)
    colors: dict[str, np.ndarray] = {}

    def paint(name: str, grid: np.ndarray, color) -> None:
        label[grid] = registry.index(name)
        colors[name] = np.asarray(color, dtype=np.float64)

    fx, fy = jx, jy
    paint("cloth", _rect(size, 0.0, 1.0, 0.94, 1.0) | _rect(size, 0.0, 0.14, 0.80, 1.0) | _rect(size, 0.86, 1.0, 0.80, 1.0), cloth_c)
    paint("skin", _ellipse(size, 0.5 + fx, 0.54 + fy, 0.40, 0.44), skin)
    paint("neck", _rect(size, 0.30 + fx, 0.70 + fx, 0.875, 0.95), skin * 0.92)
    paint("hair", _rect(size, 0.22 + fx, 0.78 + fx, 0.02, 0.16 + fy), hair_c)
    paint("left ear", _rect(size, 0.01, 0.105, 0.42 + fy, 0.60 + fy), skin * 0.97)
    paint("right ear", _rect(size, 0.895, 0.99, 0.42 + fy, 0.60 + fy), skin * 0.97)
    paint("forehead", _rect(size, 0.33 + fx, 0.67 + fx, 0.17 + fy, 0.33 + fy), skin * 1.04)
    paint("left eyebrow", _rect(size, 0.10 + fx, 0.29 + fx, 0.17 + fy, 0.31 + fy), hair_c * 0.9)
    paint("right eyebrow", _rect(size, 0.71 + fx, 0.90 + fx, 0.17 + fy, 0.31 + fy), hair_c * 0.9)
    if has_glasses:
        # represented by the bridge band between the eyes
        paint("eyeglasses", _rect(size, 0.30 + fx, 0.70 + fx, 0.35 + fy, 0.46 + fy), np.array([40, 40, 45]))
    paint("left eye", _ellipse(size, *j(0.195, 0.415), 0.075, 0.06), eye_c)
    paint("right eye", _ellipse(size, *j(0.805, 0.415), 0.075, 0.06), eye_c)
    paint("nose", _rect(size, 0.44 + fx, 0.56 + fx, 0.44 + fy, 0.65 + fy), skin * 0.90)
    paint("cheek", _rect(size, 0.15 + fx, 0.35 + fx, 0.52 + fy, 0.68 + fy) | _rect(size, 0.65 + fx, 0.85 + fx, 0.52 + fy, 0.68 + fy), skin * 1.07)
    paint("jaw", _rect(size, 0.13 + fx, 0.30 + fx, 0.72 + fy, 0.88 + fy) | _rect(size, 0.70 + fx, 0.87 + fx, 0.72 + fy, 0.88 + fy), skin * 0.95)
    paint("upper lip", _rect(size, 0.35 + fx, 0.65 + fx, 0.68 + fy, 0.74 + fy), lip_c)
    paint("mouth interior", _rect(size, 0.37 + fx, 0.63 + fx, 0.74 + fy, 0.79 + fy), lip_c * 0.55)
    paint("lower lip", _rect(size, 0.35 + fx, 0.65 + fx, 0.79 + fy, 0.85 + fy), lip_c * 0.9)
    paint("chin", _rect(size, 0.38 + fx, 0.62 + fx, 0.86 + fy, 0.94 + fy), skin * 1.02)
    if has_earring:
        paint("earring", _rect(size, 0.02, 0.09, 0.62 + fy, 0.70 + fy) | _rect(size, 0.91, 0.98, 0.62 + fy, 0.70 + fy), np.array([210, 180, 60]))
    if has_necklace:
        paint("necklace", _rect(size, 0.35 + fx, 0.65 + fx, 0.90, 0.935), np.array([190, 190, 200]))

    image = np.empty((size, size, 3), dtype=np.float64)
    image[:] = bg_c
    for name, color in colors.items():
        image[label == registry.index(name)] = color
    image += rng.normal(0.0, tex_amp, (size, size, 1))
    image = np.clip(np.round(image), 0, 255).astype(np.uint8)

    grids = {name: label == registry.index(name) for name in registry.names}
    present = {name: bool(grids[name].any()) for name in registry.names}
    return image, FaceLayout(size=size, grids=grids, present=present)


# ---------------------------------------------------------------------------
# mask sampling and compositing
# ---------------------------------------------------------------------------


def sample_mask(
    layout: FaceLayout,
    rng: np.random.Generator,
    registry: RegionRegistry,
    full_face_prob: float = 0.2,
    k_min: int = 1,
    k_max: int = 11,
) -> tuple[np.ndarray, list[str]]:
    """Union mask over sampled regions.

    With probability ``full_face_prob`` the mask covers every present region;
    otherwise k is drawn uniformly from [k_min, min(k_max, available)] and k
    distinct regions are sampled.
    """
    present = layout.present_regions(registry)
    if len(present) < max(k_min, 1):
        raise ContractError("layout has no sampleable regions")
    if rng.random() < full_face_prob:
        chosen = list(present)
    else:
        hi = min(k_max, len(present))
        k = int(rng.integers(k_min, hi + 1))
        idx = rng.choice(len(present), size=k, replace=False)
        chosen = [present[i] for i in sorted(idx)]
    mask = np.zeros((layout.size, layout.size), dtype=np.float64)
    for name in chosen:
        mask[layout.grids[name]] = 1.0
    return mask, chosen


def make_perturbation(kind: str, rng: np.random.Generator) -> PerturbationSpec:
    """Draw bounded strength parameters for one perturbation."""
    if kind == "blur":
        # regenerated smooth content reads flatter and washed out
        strength = {"radius": 3, "lift": float(rng.uniform(28.0, 48.0))}
    elif kind == "noise":
        # resynthesized grain comes with a tonal bias, not pure zero-mean noise
        strength = {"sigma": float(rng.uniform(55.0, 85.0)), "bias": float(rng.uniform(26.0, 46.0) * rng.choice([-1.0, 1.0]))}
    elif kind == "color-shift":
        shift = rng.uniform(50.0, 90.0, 3) * rng.choice([-1.0, 1.0], 3)
        strength = {"shift": [float(v) for v in shift]}
    elif kind == "geometry-warp":
        # displaced copy blended over the original: morph-style double edges
        # with the displaced layer tinted
        dx, dy = 0, 0
        while abs(dx) + abs(dy) < 6:
            dx, dy = int(rng.integers(-7, 8)), int(rng.integers(-7, 8))
        tint = rng.uniform(38.0, 62.0) * rng.choice([-1.0, 1.0])
        strength = {"dx": dx, "dy": dy, "ghost": float(rng.uniform(0.45, 0.55)), "tint": float(tint)}
    elif kind == "texture-swap":
        # blending in a second identity leaves double-exposure seams, the
        # visible artifact a wholesale replacement is detected by
        strength = {"source_seed": int(rng.integers(0, 2**31)), "alpha": float(rng.uniform(0.4, 0.6))}
    else:
        raise ContractError(f"unknown perturbation kind {kind!r}")
    return PerturbationSpec(kind=kind, strength=strength)


def _box_blur(img: np.ndarray, radius: int) -> np.ndarray:
    k = 2 * radius + 1
    padded = np.pad(img.astype(np.float64), ((radius, radius), (radius, radius), (0, 0)), mode="edge")
    csum = padded.cumsum(axis=0).cumsum(axis=1)
    csum = np.pad(csum, ((1, 0), (1, 0), (0, 0)))
    h, w = img.shape[:2]
    total = csum[k : k + h, k : k + w] - csum[0:h, k : k + w] - csum[k : k + h, 0:w] + csum[0:h, 0:w]
    return total / (k * k)


def synthesize_content(image: np.ndarray, spec: PerturbationSpec, rng: np.random.Generator) -> np.ndarray:
    """Produce the replacement content image for one perturbation."""
    img = np.asarray(image)
    if spec.kind == "blur":
        out = _box_blur(img, spec.strength["radius"]) + spec.strength.get("lift", 0.0)
    elif spec.kind == "noise":
        bias = spec.strength.get("bias", 0.0)
        out = img.astype(np.float64) + rng.normal(bias, spec.strength["sigma"], img.shape)
    elif spec.kind == "color-shift":
        out = img.astype(np.float64) + np.asarray(spec.strength["shift"])
    elif spec.kind == "geometry-warp":
        rolled = np.roll(img, (spec.strength["dy"], spec.strength["dx"]), axis=(0, 1)).astype(np.float64)
        rolled += spec.strength.get("tint", 0.0)
        ghost = spec.strength.get("ghost", 0.5)
        out = ghost * rolled + (1.0 - ghost) * img.astype(np.float64)
    elif spec.kind == "texture-swap":
        source = render_face(spec.strength["source_seed"], size=img.shape[0])[0].astype(np.float64)
        alpha = spec.strength.get("alpha", 0.5)
        out = alpha * source + (1.0 - alpha) * img.astype(np.float64)
    else:
        raise ContractError(f"unknown perturbation kind {spec.kind!r}")
    return np.clip(np.round(out), 0, 255).astype(np.uint8)


def composite_forgery(image: np.ndarray, mask: np.ndarray, spec: PerturbationSpec, rng: np.random.Generator) -> np.ndarray:
    """Blend generated content into the masked region: (1-M)*I + M*I_g, bit-exact."""
    image = np.asarray(image)
    mask = np.asarray(mask)
    if mask.shape != image.shape[:2]:
        raise DimensionError(f"mask shape {mask.shape} does not match image {image.shape[:2]}")
    generated = synthesize_content(image, spec, rng)
    return np.where(mask[..., None] > 0, generated, image)


# ---------------------------------------------------------------------------
# captions
# ---------------------------------------------------------------------------

CAPTION_TEMPLATES = {
    "blur": (
        "The {r} looks unnaturally blurred.",
        "The {r} appears smeared and soft.",
        "The {r} has lost all fine detail.",
    ),
    "noise": (
        "The {r} shows grainy speckled artifacts.",
        "The {r} is covered in odd speckles.",
        "The {r} texture looks noisy and rough.",
    ),
    "color-shift": (
        "The {r} carries an unnatural color cast.",
        "The {r} tone looks artificially shifted.",
        "The {r} color clashes with its surroundings.",
    ),
    "geometry-warp": (
        "The {r} appears displaced and warped.",
        "The {r} alignment looks subtly wrong.",
        "The {r} seems shifted out of place.",
    ),
    "texture-swap": (
        "The {r} texture looks wholly replaced.",
        "The {r} appears pasted from elsewhere.",
        "The {r} blends poorly with its surroundings.",
    ),
}

GROUPED_TEMPLATE = "The {rs} regions all look artificially resynthesized."
MAX_CAPTION_WORDS = 120


def synth_caption(regions, spec: PerturbationSpec, rng: np.random.Generator) -> str:
    """One caption mentioning every modified region exactly once, <= 120 words."""
    regions = list(regions)
    if not regions:
        raise ContractError("caption needs at least one modified region")
    bank = CAPTION_TEMPLATES[spec.kind]
    sentences = [bank[int(rng.integers(0, len(bank)))].format(r=name) for name in regions]
    caption = " ".join(sentences)
    if len(content_words(caption)) > MAX_CAPTION_WORDS:
        joined = ", ".join(regions[:-1]) + " and " + regions[-1] if len(regions) > 1 else regions[0]
        caption = GROUPED_TEMPLATE.format(rs=joined)
    return caption


# ---------------------------------------------------------------------------
# triplet pipeline and storage
# ---------------------------------------------------------------------------

DEFAULT_METHOD_PROBS = (0.34, 0.29, 0.37)  # swap, inpaint-T, inpaint-D


def make_triplet(
    index: int,
    seed: int,
    registry: RegionRegistry,
    size: int = 48,
    full_face_prob: float = 0.2,
    method_probs=DEFAULT_METHOD_PROBS,
    k_min: int = 1,
    k_max: int = 11,
) -> Triplet:
    """Generate triplet ``index`` of the corpus keyed by ``seed``; pure per (seed, index)."""
    rng = np.random.default_rng([seed, index])
    face_seed = int(rng.integers(0, 2**31))
    image, layout = render_face(face_seed, size=size, registry=registry)
    method = METHODS[int(rng.choice(len(METHODS), p=np.asarray(method_probs) / np.sum(method_probs)))]
    kinds = METHOD_KINDS[method]
    kind = kinds[int(rng.integers(0, len(kinds)))]
    spec = make_perturbation(kind, rng)
    if method == "swap":
        regions = layout.present_regions(registry)
        mask = np.zeros((size, size), dtype=np.float64)
        for name in regions:
            mask[layout.grids[name]] = 1.0
    else:
        mask, regions = sample_mask(layout, rng, registry, full_face_prob=full_face_prob, k_min=k_min, k_max=k_max)
    forged = composite_forgery(image, mask, spec, rng)
    caption = synth_caption(regions, spec, rng)
    seconds = int(rng.integers(60, 241))
    return Triplet(
        id=f"t{index:06d}",
        image=forged,
        mask=mask,
        caption=caption,
        method=method,
        seed=face_seed,
        modified_regions=list(regions),
        annotation_seconds=seconds,
    )


def write_triplet(root, triplet: Triplet) -> dict:
    """Write the triplet's PNGs under ``root`` and return its manifest record."""
    root = Path(root)
    image_rel = f"img/{triplet.id}.png"
    mask_rel = f"mask/{triplet.id}.png"
    save_image(root / image_rel, triplet.image)
    save_mask(root / mask_rel, triplet.mask)
    return {
        "id": triplet.id,
        "image": image_rel,
        "mask": mask_rel,
        "caption": triplet.caption,
        "method": triplet.method,
        "regions": list(triplet.modified_regions),
        "seed": triplet.seed,
        "annotation_seconds": triplet.annotation_seconds,
    }


def read_triplet(root, record: dict) -> Triplet:
    root = Path(root)
    for key in ("id", "image", "mask", "caption", "method", "regions", "seed", "annotation_seconds"):
        if key not in record:
            raise StorageError(f"manifest record missing field {key!r}: {record}")
    image = load_image(root / record["image"])
    mask = load_mask(root / record["mask"])
    return Triplet(
        id=record["id"],
        image=image,
        mask=mask,
        caption=record["caption"],
        method=record["method"],
        seed=int(record["seed"]),
        modified_regions=list(record["regions"]),
        annotation_seconds=int(record["annotation_seconds"]),
    )


def write_manifest(root, records: list[dict]) -> Path:
    path = Path(root) / "manifest.jsonl"
    with path.open("w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return path


def load_manifest(root) -> list[dict]:
    path = Path(root) / "manifest.jsonl"
    if not path.exists():
        raise StorageError(f"no manifest at {path}")
    records = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise StorageError(f"{path}:{lineno}: bad manifest line: {exc}") from exc
    return records


def generate_dataset(
    out_dir,
    n: int,
    seed: int,
    registry: RegionRegistry | None = None,
    size: int = 48,
    full_face_prob: float = 0.2,
    method_probs=DEFAULT_METHOD_PROBS,
    k_min: int = 1,
    k_max: int = 11,
) -> list[dict]:
    """Generate ``n`` triplets and write the full dataset layout."""
    if n <= 0:
        raise ContractError(f"dataset size must be positive, got {n}")
    registry = registry or RegionRegistry(DEFAULT_REGIONS)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for i in range(n):
        trip = make_triplet(
            i, seed, registry, size=size, full_face_prob=full_face_prob,
            method_probs=method_probs, k_min=k_min, k_max=k_max,
        )
        records.append(write_triplet(out_dir, trip))
    write_manifest(out_dir, records)
    registry.save(out_dir / "registry.json")
    return records
