"""Render a few synthetic images and every background augmentation of them.

Run from the repository root:

    python demos/01_augmentations.py [out_dir]

Writes a PNG grid per example (original, counterfactuals, factuals) so the
infills can be inspected by eye.
"""
import sys
from pathlib import Path

import numpy as np

from cfrobust import augment
from cfrobust.imageio import write_image
from cfrobust.synthbench import SynthSpec, generate_dataset

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_augmentations")
out.mkdir(parents=True, exist_ok=True)
rng = np.random.default_rng(0)

# %% a handful of images; the label is the glyph, the grating orientation is the background class
data = generate_dataset(SynthSpec(samples_per_class=2, image_size=32))
print(f"{len(data)} examples, e.g. {data[0].id}: label={data[0].label} background={data[0].background_class}")

# %% counterfactuals hide the glyph's bounding box, factuals rewrite the background
for ex in data[::3]:
    donor = data[(data.index(ex) + 1) % len(data)]
    panels = [ex.image]
    panels += [augment.counterfactual(ex.image, ex.region, m, rng) for m in ("grey", "random", "shuffle", "tile")]
    panels += [augment.factual(ex.image, ex.region, m, rng) for m in ("random", "shuffle")]
    panels.append(augment.factual(ex.image, ex.region, "mixed-rand", donor=(donor.image, donor.region)))
    write_image(out / f"{ex.id}.png", np.concatenate(panels, axis=1))

# %% the tile infill repeats the largest rectangle that avoids the object
rect = augment.largest_background_rectangle(augment.bbox_mask(data[0].region))
print(f"largest background rectangle of {data[0].id}: {rect} (area {rect.area})")
print(f"wrote grids to {out}/  columns: original | CF grey, random, shuffle, tile | F random, shuffle, mixed-rand")
