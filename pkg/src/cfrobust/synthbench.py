"""Synthetic images whose background style is spuriously correlated with the label.

The label is the identity of a procedurally drawn glyph (its shape only; the
glyph colour is random). The background is an oriented grating whose
orientation is the background class; its two tones are random, so the
spurious cue is spatial structure rather than colour.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .augment import mixed_rand_background

GLYPHS = ("disk", "plus", "triangle", "ring", "bars", "square", "cross", "frame", "diamond", "ell")


class SplitMode(str, enum.Enum):
    ORIGINAL = "Original"
    MIXED_SAME = "MixedSame"
    MIXED_RAND = "MixedRand"
    MIXED_NEXT = "MixedNext"
    FLIP = "Flip"


@dataclass(frozen=True)
class SynthSpec:
    num_classes: int = 5
    image_size: int = 32
    samples_per_class: int = 1000
    correlation: float = 0.95
    seed: int = 0
    glyph_scale: tuple[float, float] = (0.6, 0.8)
    grating_period: float = 4.0
    grating_contrast: float = 0.8
    noise: float = 0.04

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("need at least two classes")
        if self.num_classes > len(GLYPHS):
            raise ValueError(f"at most {len(GLYPHS)} glyph classes are available")
        if not 0.0 <= self.correlation <= 1.0:
            raise ValueError("correlation must be in [0, 1]")
        lo, hi = self.glyph_scale
        if not 0 < lo <= hi:
            raise ValueError("glyph_scale must be an increasing positive pair")
        if round(hi * self.image_size) > self.image_size:
            raise ValueError("glyph larger than image")
        if not 0.0 < self.grating_contrast <= 1.0:
            raise ValueError("grating_contrast must be in (0, 1]")
        if self.samples_per_class < 1:
            raise ValueError("samples_per_class must be positive")


@dataclass
class LabeledExample:
    id: str
    image: np.ndarray
    region: np.ndarray
    label: int
    background_class: int
    split: str = "train"
    meta: dict = field(default_factory=dict)


# ------------------------------------------------------------------ rendering
def glyph_mask(kind: str, size: int) -> np.ndarray:
    """Boolean size x size mask of a glyph drawn on [-1, 1]^2."""
    c = (np.arange(size) + 0.5) / size * 2.0 - 1.0
    v, u = np.meshgrid(c, c, indexing="ij")  # v: rows (down), u: columns
    r = np.hypot(u, v)
    box = np.maximum(np.abs(u), np.abs(v))
    if kind == "disk":
        m = r <= 0.9
    elif kind == "square":
        m = box <= 0.75
    elif kind == "triangle":
        m = (v >= -0.85) & (v <= 0.8) & (np.abs(u) <= (v + 0.85) / 1.65 * 0.95)
    elif kind == "plus":
        m = ((np.abs(u) <= 0.3) | (np.abs(v) <= 0.3)) & (box <= 0.95)
    elif kind == "ring":
        m = (r <= 0.95) & (r >= 0.5)
    elif kind == "diamond":
        m = np.abs(u) + np.abs(v) <= 0.95
    elif kind == "frame":
        m = (box <= 0.9) & (box >= 0.5)
    elif kind == "cross":
        m = ((np.abs(u - v) <= 0.4) | (np.abs(u + v) <= 0.4)) & (box <= 0.9)
    elif kind == "ell":
        m = (box <= 0.9) & ((u <= -0.3) | (v >= 0.3))
    elif kind == "bars":
        m = (np.abs(u) <= 0.9) & ((np.abs(v - 0.5) <= 0.22) | (np.abs(v + 0.5) <= 0.22))
    else:
        raise ValueError(f"unknown glyph {kind!r}")
    if not m.any():
        m[size // 2, size // 2] = True
    return m


def grating(style: int, num_styles: int, size: int, period: float, rng: np.random.Generator,
            contrast: float = 0.8):
    """Two-tone oriented grating; orientation encodes ``style``. Returns (image, tones).

    The two tones differ by at most ``contrast`` in any channel.
    """
    theta = np.pi * style / num_styles
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    phase = rng.uniform(0, 2 * np.pi)
    wave = 0.5 + 0.5 * np.sin(2 * np.pi * (xx * np.cos(theta) + yy * np.sin(theta)) / period + phase)
    mid = rng.uniform(0.25, 0.75, size=3)
    direction = rng.uniform(-1.0, 1.0, size=3)
    direction /= max(np.abs(direction).max(), 1e-12)
    tone_a = np.clip(mid + 0.5 * contrast * direction, 0.0, 1.0)
    tone_b = np.clip(mid - 0.5 * contrast * direction, 0.0, 1.0)
    return wave[..., None] * tone_a + (1.0 - wave[..., None]) * tone_b, (tone_a, tone_b)


def _glyph_colour(tones, rng: np.random.Generator) -> np.ndarray:
    for _ in range(100):
        colour = rng.uniform(0.0, 1.0, size=3)
        if min(np.abs(colour - t).max() for t in tones) >= 0.35:
            return colour
    return 1.0 - np.mean(tones, axis=0)


def render(label: int, background_class: int, spec: SynthSpec, rng: np.random.Generator):
    """One (image, region) pair."""
    n = spec.image_size
    bg, tones = grating(background_class, spec.num_classes, n, spec.grating_period, rng, spec.grating_contrast)
    size = int(round(rng.uniform(*spec.glyph_scale) * n))
    size = max(3, min(size, n))
    top = int(rng.integers(0, n - size + 1))
    left = int(rng.integers(0, n - size + 1))
    region = np.zeros((n, n), dtype=bool)
    region[top:top + size, left:left + size] = glyph_mask(GLYPHS[label], size)
    image = np.where(region[..., None], _glyph_colour(tones, rng), bg)
    image = image + rng.normal(0.0, spec.noise, size=image.shape)
    return np.clip(image, 0.0, 1.0), region


# ----------------------------------------------------------------- generation
def generate_dataset(spec: SynthSpec, split: str = "train", correlation: float | None = None) -> list[LabeledExample]:
    """Balanced classes; background_class == label with probability ``correlation``."""
    rho = spec.correlation if correlation is None else correlation
    rng = np.random.default_rng([spec.seed, _split_key(split)])
    k = spec.num_classes
    examples = []
    for y in range(k):
        for _ in range(spec.samples_per_class):
            if rng.uniform() < rho:
                b = y
            else:
                b = int(rng.choice([c for c in range(k) if c != y]))
            image, region = render(y, b, spec, rng)
            examples.append(LabeledExample(f"{split}_{len(examples):05d}", image, region, y, b, split))
    order = rng.permutation(len(examples))
    out = [examples[i] for i in order]
    for i, ex in enumerate(out):
        ex.id = f"{split}_{i:05d}"
    return out


def _split_key(split: str) -> int:
    return int.from_bytes(split.encode("utf-8")[:8].ljust(8, b"\0"), "little")


def generate_benchmark(spec: SynthSpec, val_per_class: int = 200, test_per_class: int = 500) -> dict:
    """Train at ``spec.correlation``; validation balanced (background independent of label);
    test pool at the training correlation, later partitioned into Original/Flip."""
    k = spec.num_classes
    return {
        "train": generate_dataset(spec, "train"),
        "val": generate_dataset(replace(spec, samples_per_class=val_per_class), "val", correlation=1.0 / k),
        "test": generate_dataset(replace(spec, samples_per_class=test_per_class), "test"),
    }


# --------------------------------------------------------------------- splits
def _donor_pools(examples):
    pools: dict[int, list[int]] = {}
    for i, ex in enumerate(examples):
        pools.setdefault(ex.background_class, []).append(i)
    return pools


def _swap(ex: LabeledExample, donor: LabeledExample, split: str) -> LabeledExample:
    image = mixed_rand_background(ex.image, ex.region, donor.image, donor.region)
    return LabeledExample(f"{ex.id}:{split}", image, ex.region.copy(), ex.label, donor.background_class,
                          split, {"source": ex.id, "donor": donor.id})


def _pick(pool: list[int], exclude: int, rng: np.random.Generator) -> int:
    choices = [i for i in pool if i != exclude]
    if not choices:
        raise ValueError("insufficient donors")
    return choices[int(rng.integers(len(choices)))]


def build_mixed_split(examples, mode, rng: np.random.Generator, donors=None,
                      num_classes: int | None = None) -> list[LabeledExample]:
    """Swap every background for a tiled donor background.

    The donor's background class is the label (MixedSame), a uniformly random
    other class (MixedRand) or (label + 1) mod K (MixedNext). Donors come from
    ``donors`` (default: ``examples``) and are selected by background class.
    """
    mode = SplitMode(mode)
    if mode not in (SplitMode.MIXED_SAME, SplitMode.MIXED_RAND, SplitMode.MIXED_NEXT):
        raise ValueError(f"{mode.value} is not a mixed split")
    donors = list(examples if donors is None else donors)
    pools = _donor_pools(donors)
    k = num_classes or 1 + max(max(ex.label for ex in examples), max(pools))
    position = {id(d): i for i, d in enumerate(donors)}
    out = []
    for ex in examples:
        if mode is SplitMode.MIXED_SAME:
            target = ex.label
        elif mode is SplitMode.MIXED_NEXT:
            target = (ex.label + 1) % k
        else:
            target = int(rng.choice([c for c in range(k) if c != ex.label]))
        donor = donors[_pick(pools.get(target, []), position.get(id(ex), -1), rng)]
        out.append(_swap(ex, donor, mode.value))
    return out


def next_class(label: int, num_classes: int) -> int:
    return (label + 1) % num_classes


def build_flip_split(examples, rng: np.random.Generator, num_classes: int | None = None):
    """Partition into (original, flip).

    ``original`` keeps examples whose background matches the label; ``flip``
    holds natural mismatches, topped up with donor swaps of original examples
    until both partitions have the same size.
    """
    examples = list(examples)
    k = num_classes or 1 + max(max(e.label for e in examples), max(e.background_class for e in examples))
    original = [replace(e, split=SplitMode.ORIGINAL.value) for e in examples if e.background_class == e.label]
    flip = [replace(e, split=SplitMode.FLIP.value) for e in examples if e.background_class != e.label]
    if not original:
        raise ValueError("no examples with matching backgrounds")
    pools = _donor_pools(examples)
    i = 0
    while len(flip) < len(original):
        ex = original[i]
        target = int(rng.choice([c for c in range(k) if c != ex.label and c in pools]))
        donor = examples[_pick(pools[target], -1, rng)]
        flip.append(_swap(ex, donor, SplitMode.FLIP.value))
        i += 1
    if not flip:
        raise ValueError("flip partition is empty")
    return original, flip
