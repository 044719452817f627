import numpy as np
import pytest
from scipy.stats import chisquare

from cfrobust.augment import bounding_box
from cfrobust.synthbench import (
    GLYPHS,
    LabeledExample,
    SplitMode,
    SynthSpec,
    build_flip_split,
    build_mixed_split,
    generate_benchmark,
    generate_dataset,
    glyph_mask,
    next_class,
    render,
)


def small(**kw):
    base = dict(samples_per_class=20, image_size=16)
    base.update(kw)
    return SynthSpec(**base)


def fake(i, label, bg, size=8):
    rng = np.random.default_rng(i)
    region = np.zeros((size, size), bool)
    region[2:5, 2:5] = True
    return LabeledExample(f"x{i}", rng.uniform(size=(size, size, 3)), region, label, bg)


# ------------------------------------------------------------------ rendering
@pytest.mark.parametrize("kind", GLYPHS)
def test_glyph_masks_nonempty_and_distinct(kind):
    m = glyph_mask(kind, 16)
    assert m.shape == (16, 16) and 0 < m.sum() < m.size
    for other in GLYPHS:
        if other != kind:
            assert not np.array_equal(m, glyph_mask(other, 16))


def test_render_ranges(rng):
    spec = SynthSpec()
    for y in range(spec.num_classes):
        image, region = render(y, (y + 2) % spec.num_classes, spec, rng)
        assert image.shape == (32, 32, 3) and region.shape == (32, 32)
        assert image.min() >= 0 and image.max() <= 1
        box = bounding_box(region)
        assert round(0.6 * 32) - 1 <= max(box.height, box.width) <= round(0.8 * 32)


def test_spec_validation():
    for bad in (dict(num_classes=1), dict(num_classes=11), dict(correlation=1.5),
                dict(glyph_scale=(0.5, 1.2)), dict(samples_per_class=0), dict(grating_contrast=0.0)):
        with pytest.raises(ValueError):
            SynthSpec(**bad)


# ----------------------------------------------------------------- generation
def test_full_correlation():
    data = generate_dataset(small(correlation=1.0))
    assert all(e.background_class == e.label for e in data)
    assert len(data) == 100 and len({e.id for e in data}) == 100


def test_correlation_rate():
    data = generate_dataset(SynthSpec(samples_per_class=1000, image_size=8, glyph_scale=(0.5, 0.75)))
    rate = np.mean([e.background_class == e.label for e in data])
    assert abs(rate - 0.95) <= 0.02


def test_independent_background_chi_square():
    k = 5
    data = generate_dataset(SynthSpec(samples_per_class=400, image_size=8, glyph_scale=(0.5, 0.75),
                                      correlation=1.0 / k))
    table = np.zeros((k, k))
    for e in data:
        table[e.label, e.background_class] += 1
    for row in table:
        assert chisquare(row).pvalue > 1e-3


def test_generation_reproducible_and_split_dependent():
    a = generate_dataset(small())
    b = generate_dataset(small())
    for x, y in zip(a, b):
        assert x.id == y.id and np.array_equal(x.image, y.image) and np.array_equal(x.region, y.region)
    c = generate_dataset(small(), split="test")
    assert not np.array_equal(a[0].image, c[0].image)
    d = generate_dataset(small(seed=1))
    assert not np.array_equal(a[0].image, d[0].image)


def test_benchmark_sizes():
    data = generate_benchmark(small(), val_per_class=4, test_per_class=6)
    assert [len(data[s]) for s in ("train", "val", "test")] == [100, 20, 30]
    labels = np.bincount([e.label for e in data["train"]])
    assert np.all(labels == 20)


# --------------------------------------------------------------------- splits
def test_next_class():
    assert next_class(5, 9) == 6
    assert next_class(8, 9) == 0


def test_mixed_next_nine_classes():
    k = 9
    pool = [fake(i, i % k, i % k) for i in range(3 * k)]
    src = [e for e in pool if e.label in (5, 8)]
    out = build_mixed_split(src, SplitMode.MIXED_NEXT, np.random.default_rng(0), donors=pool, num_classes=k)
    for s, m in zip(src, out):
        assert m.background_class == (6 if s.label == 5 else 0)
        assert m.label == s.label and m.meta["source"] == s.id and m.id == f"{s.id}:MixedNext"
        assert np.array_equal(m.image[m.region], s.image[s.region])


@pytest.mark.parametrize("mode", [SplitMode.MIXED_SAME, SplitMode.MIXED_RAND])
def test_mixed_same_and_rand(mode):
    k = 4
    pool = [fake(i, i % k, i % k) for i in range(4 * k)]
    out = build_mixed_split(pool, mode, np.random.default_rng(1), num_classes=k)
    assert len(out) == len(pool)
    for s, m in zip(pool, out):
        if mode is SplitMode.MIXED_SAME:
            assert m.background_class == s.label and m.meta["donor"] != s.id
        else:
            assert m.background_class != s.label


def test_mixed_split_rejects_non_mixed_mode():
    with pytest.raises(ValueError):
        build_mixed_split([fake(0, 0, 0)], SplitMode.FLIP, np.random.default_rng(0))


def test_mixed_split_missing_donors():
    pool = [fake(0, 0, 0), fake(1, 1, 1)]
    with pytest.raises(ValueError):
        build_mixed_split(pool, SplitMode.MIXED_SAME, np.random.default_rng(0))


def test_flip_split_properties():
    data = generate_dataset(small(samples_per_class=30))
    original, flip = build_flip_split(data, np.random.default_rng(0), 5)
    assert all(e.background_class == e.label for e in original)
    assert all(e.background_class != e.label for e in flip)
    assert len(original) == len(flip)
    assert len({e.id for e in flip}) == len(flip)
    swapped = [e for e in flip if "source" in e.meta]
    by_id = {e.id: e for e in data}
    for e in swapped:
        src = by_id[e.meta["source"]]
        assert np.array_equal(e.image[e.region], src.image[src.region])


def test_flip_split_tops_up_with_unique_ids():
    pool = [fake(i, i % 2, i % 2) for i in range(6)] + [fake(9, 0, 1)]
    original, flip = build_flip_split(pool, np.random.default_rng(0), 2)
    assert len(flip) == len(original) == 6
    assert len({e.id for e in flip}) == 6
