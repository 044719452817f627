"""Counterfactual and factual infilling.

Images are float arrays of shape (H, W, C) with values in [0, 1]; regions are
(H, W) boolean masks where True marks causal (foreground) pixels. Everything
here works in [0, 1] space; :func:`normalize` maps to the model's [-1, 1].
"""
from __future__ import annotations

import math
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .imageio import read_image

CF_METHODS = ("grey", "random", "shuffle", "tile", "external")
F_METHODS = ("random", "shuffle", "mixed-rand", "fgsm")


class DegenerateMaskError(ValueError):
    """A mask has no pixels of the kind an operation needs."""


class Rect(NamedTuple):
    top: int
    left: int
    height: int
    width: int

    @property
    def area(self) -> int:
        return self.height * self.width

    def slices(self) -> tuple[slice, slice]:
        return slice(self.top, self.top + self.height), slice(self.left, self.left + self.width)


# ----------------------------------------------------------------- validation
def check_image(image) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[-1] not in (1, 3):
        raise ValueError(f"image must be (H, W, 1|3), got {image.shape}")
    if not np.all(np.isfinite(image)):
        raise ValueError("image has non-finite values")
    return image


def check_region(region, image=None) -> np.ndarray:
    region = np.asarray(region)
    if region.ndim != 2:
        raise ValueError(f"region must be (H, W), got {region.shape}")
    if image is not None and np.shape(image)[:2] != region.shape:
        raise ValueError(f"region {region.shape} does not match image {np.shape(image)[:2]}")
    return region.astype(bool)


def normalize(image) -> np.ndarray:
    """[0, 1] -> [-1, 1]."""
    return np.asarray(image) * 2.0 - 1.0


def denormalize(image) -> np.ndarray:
    return (np.asarray(image) + 1.0) / 2.0


# ---------------------------------------------------------------- composition
def _mix(keep_mask: np.ndarray, image: np.ndarray, infill: np.ndarray) -> np.ndarray:
    image = check_image(image)
    infill = np.asarray(infill)
    if infill.shape != image.shape:
        raise ValueError(f"infill shape {infill.shape} does not match image {image.shape}")
    keep = check_region(keep_mask, image)[..., None]
    return np.where(keep, image, infill.astype(image.dtype, copy=False))


def compose_counterfactual(image, region, infill) -> np.ndarray:
    """(1 - r) * x + r * infill: the causal region is replaced."""
    return _mix(~check_region(region), image, infill)


def compose_factual(image, region, infill) -> np.ndarray:
    """r * x + (1 - r) * infill: the background is replaced."""
    return _mix(check_region(region), image, infill)


def bounding_box(region) -> Rect:
    """Tightest axis-aligned rectangle around the True pixels."""
    region = check_region(region)
    rows = np.flatnonzero(region.any(axis=1))
    cols = np.flatnonzero(region.any(axis=0))
    if rows.size == 0:
        raise DegenerateMaskError("region has no foreground pixels")
    return Rect(int(rows[0]), int(cols[0]), int(rows[-1] - rows[0] + 1), int(cols[-1] - cols[0] + 1))


def bbox_mask(region) -> np.ndarray:
    region = check_region(region)
    out = np.zeros_like(region)
    out[bounding_box(region).slices()] = True
    return out


# -------------------------------------------------------------------- infills
def infill_grey(shape) -> np.ndarray:
    return np.full(shape, 0.5)


def random_infill_parts(shape, rng: np.random.Generator, sigma: float = 0.2):
    """Untruncated pieces of the random infill: (per-channel base, pixel noise)."""
    h, w, c = shape
    base = np.broadcast_to(rng.uniform(0.0, 1.0, size=(1, 1, c)), shape)
    noise = rng.normal(0.0, sigma, size=shape)
    return base, noise


def infill_random(shape, rng: np.random.Generator, sigma: float = 0.2) -> np.ndarray:
    """Low-frequency base (one uniform value per channel) plus N(0, sigma) per value, clipped."""
    base, noise = random_infill_parts(shape, rng, sigma)
    return np.clip(base + noise, 0.0, 1.0)


def infill_shuffle(image, region, rng: np.random.Generator, per_channel: bool = False) -> np.ndarray:
    """Permute the pixels inside ``region``; everything outside is copied.

    By default whole pixels (channel vectors) move together, so colours are
    kept. ``per_channel=True`` permutes each channel independently.
    """
    image = check_image(image)
    region = check_region(region, image)
    idx = np.flatnonzero(region.ravel())
    if idx.size == 0:
        raise DegenerateMaskError("cannot shuffle an empty region")
    out = image.copy()
    flat = out.reshape(-1, image.shape[-1])
    src = image.reshape(-1, image.shape[-1])
    if per_channel:
        for ch in range(image.shape[-1]):
            flat[idx, ch] = src[rng.permutation(idx), ch]
    else:
        flat[idx] = src[rng.permutation(idx)]
    return out


def largest_background_rectangle(region) -> Rect:
    """Largest all-background (False) axis-aligned rectangle.

    Row-by-row histogram of background run lengths with monotonic stacks,
    O(H*W). Among equal areas the smallest top, then smallest left wins.
    """
    region = check_region(region)
    h, w = region.shape
    heights = np.zeros(w, dtype=np.int64)
    best: tuple[int, int, int] | None = None  # (-area, top, left)
    best_rect = None
    for i in range(h):
        heights = np.where(region[i], 0, heights + 1)
        hs = heights.tolist()
        left = [0] * w
        right = [w - 1] * w
        stack: list[int] = []
        for j in range(w):
            while stack and hs[stack[-1]] >= hs[j]:
                stack.pop()
            left[j] = stack[-1] + 1 if stack else 0
            stack.append(j)
        stack = []
        for j in range(w - 1, -1, -1):
            while stack and hs[stack[-1]] >= hs[j]:
                stack.pop()
            right[j] = stack[-1] - 1 if stack else w - 1
            stack.append(j)
        for j in range(w):
            if hs[j] == 0:
                continue
            area = hs[j] * (right[j] - left[j] + 1)
            key = (-area, i - hs[j] + 1, left[j])
            if best is None or key < best:
                best = key
                best_rect = Rect(i - hs[j] + 1, left[j], hs[j], right[j] - left[j] + 1)
    if best_rect is None:
        raise DegenerateMaskError("mask has no background pixels")
    return best_rect


def infill_tile(image, region) -> np.ndarray:
    """Tile the largest background rectangle over the whole frame."""
    image = check_image(image)
    rect = largest_background_rectangle(check_region(region, image))
    patch = image[rect.slices()]
    h, w = image.shape[:2]
    reps_v = math.ceil(h / rect.height) if rect.height < h else 1
    reps_h = math.ceil(w / rect.width) if rect.width < w else 1
    return np.tile(patch, (reps_v, reps_h, 1))[:h, :w].copy()


def mixed_rand_background(image, region, donor_image, donor_region) -> np.ndarray:
    """Keep the foreground, swap in the donor's tiled background."""
    return compose_factual(image, region, infill_tile(donor_image, donor_region))


def load_external_infill(path, image, region) -> np.ndarray:
    """Replace ``region`` with the matching pixels of an externally inpainted frame."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    image = check_image(image)
    external = read_image(path, channels=image.shape[-1])
    if external.shape != image.shape:
        raise ValueError(f"{path}: external infill {external.shape} does not match image {image.shape}")
    return compose_counterfactual(image, region, external)


# ------------------------------------------------------------------ recipes
def counterfactual(image, region, method: str, rng: np.random.Generator | None = None,
                   region_mode: str = "bbox", external_path=None) -> np.ndarray:
    """Remove the causal content of ``image`` with one of :data:`CF_METHODS`."""
    image = check_image(image)
    region = check_region(region, image)
    target = bbox_mask(region) if region_mode == "bbox" else region
    if method == "grey":
        fill = infill_grey(image.shape)
    elif method == "random":
        fill = infill_random(image.shape, rng)
    elif method == "shuffle":
        fill = infill_shuffle(image, target, rng)
    elif method == "tile":
        fill = infill_tile(image, target)
    elif method == "external":
        if external_path is None:
            raise ValueError("external infill needs a file path")
        return load_external_infill(external_path, image, target)
    else:
        raise ValueError(f"unknown counterfactual method {method!r}; expected one of {CF_METHODS}")
    return compose_counterfactual(image, target, fill)


def factual(image, region, method: str, rng: np.random.Generator | None = None,
            region_mode: str = "mask", donor=None) -> np.ndarray:
    """Perturb the background of ``image``; ``donor`` is (image, region) for mixed-rand.

    FGSM needs a model and lives in :mod:`cfrobust.objectives`.
    """
    image = check_image(image)
    region = check_region(region, image)
    keep = bbox_mask(region) if region_mode == "bbox" else region
    if method == "random":
        fill = infill_random(image.shape, rng)
    elif method == "shuffle":
        fill = infill_shuffle(image, ~keep, rng)
    elif method == "mixed-rand":
        if donor is None:
            raise ValueError("mixed-rand needs a donor (image, region)")
        return mixed_rand_background(image, keep, *donor)
    elif method == "fgsm":
        raise ValueError("fgsm needs a model; use cfrobust.objectives.fgsm_background")
    else:
        raise ValueError(f"unknown factual method {method!r}; expected one of {F_METHODS}")
    return compose_factual(image, keep, fill)
