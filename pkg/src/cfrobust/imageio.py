"""PNG reading/writing and the on-disk dataset layout.

Dataset directory::

    images/<id>.png   8-bit RGB or grayscale
    masks/<id>.png    single channel, nonzero = foreground
    labels.csv        id,label,background_class,split
"""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from PIL import Image

LABEL_COLUMNS = ["id", "label", "background_class", "split"]


def read_image(path, channels: int | None = None) -> np.ndarray:
    """Decode a PNG to float64 (H, W, C) in [0, 1] via v / 255."""
    try:
        with Image.open(path) as im:
            if channels == 1 or (channels is None and im.mode in ("L", "I", "1")):
                arr = np.asarray(im.convert("L"))[..., None]
            else:
                arr = np.asarray(im.convert("RGB"))
    except (OSError, ValueError) as exc:
        raise ValueError(f"{path}: cannot decode image ({exc})") from exc
    return arr.astype(np.float64) / 255.0


def write_image(path, image) -> None:
    image = np.asarray(image)
    arr = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    if arr.shape[-1] == 1:
        arr = arr[..., 0]
    Image.fromarray(arr).save(path)


def read_mask(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("L")) > 0
    except (OSError, ValueError) as exc:
        raise ValueError(f"{path}: cannot decode mask ({exc})") from exc


def write_mask(path, mask) -> None:
    Image.fromarray(np.asarray(mask, dtype=np.uint8) * 255).save(path)


def quantize(image) -> np.ndarray:
    """Round-trip values through 8 bits, as writing then reading a PNG would."""
    return np.clip(np.rint(np.asarray(image) * 255.0), 0, 255) / 255.0


def write_dataset(root, examples, split_of=None) -> Path:
    """Write examples (objects with id/image/region/label/background_class/split)."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    with open(root / "labels.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(LABEL_COLUMNS)
        for ex in examples:
            write_image(root / "images" / f"{ex.id}.png", ex.image)
            write_mask(root / "masks" / f"{ex.id}.png", ex.region)
            split = split_of(ex) if split_of else ex.split
            writer.writerow([ex.id, ex.label, ex.background_class, split])
    return root


def read_labels(root) -> list[dict]:
    path = Path(root) / "labels.csv"
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(LABEL_COLUMNS) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        return list(reader)
