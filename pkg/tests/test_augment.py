import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cfrobust import augment
from cfrobust.augment import (
    DegenerateMaskError,
    Rect,
    compose_counterfactual,
    compose_factual,
    infill_grey,
    infill_random,
    infill_shuffle,
    infill_tile,
    largest_background_rectangle,
    load_external_infill,
    mixed_rand_background,
)
from cfrobust.imageio import write_image
from conftest import random_case
from oracles import brute_force_largest_rectangle


# ---------------------------------------------------------------- composition
def test_counterfactual_empty_region_is_identity(rng):
    image, _, infill = random_case(rng, 5, 6, 3)
    out = compose_counterfactual(image, np.zeros((5, 6), bool), infill)
    assert np.array_equal(out, image)


def test_counterfactual_full_region_grey_is_constant():
    image = np.random.default_rng(0).uniform(size=(4, 4, 3))
    out = compose_counterfactual(image, np.ones((4, 4), bool), infill_grey(image.shape))
    assert np.all(out == 0.5)


def test_counterfactual_hand_case():
    image = np.array([[0.2, 0.4], [0.6, 0.8]])[..., None]
    region = np.array([[1, 0], [0, 0]], bool)
    out = compose_counterfactual(image, region, np.zeros_like(image))
    assert out[..., 0].tolist() == [[0.0, 0.4], [0.6, 0.8]]


def test_factual_identities(rng):
    image, _, infill = random_case(rng, 4, 5, 3)
    assert np.array_equal(compose_factual(image, np.ones((4, 5), bool), infill), image)
    out = compose_factual(image, np.zeros((4, 5), bool), np.full(image.shape, 0.25))
    assert np.all(out == 0.25)


def test_shape_mismatch_rejected(rng):
    image, region, infill = random_case(rng, 4, 4, 3)
    with pytest.raises(ValueError):
        compose_counterfactual(image, region[:3], infill)
    with pytest.raises(ValueError):
        compose_factual(image, region, infill[:, :3])


def test_complement_duality_and_preservation_random(rng):
    for _ in range(500):
        image, region, infill = random_case(rng)
        cf = compose_counterfactual(image, region, infill)
        f = compose_factual(image, region, infill)
        assert np.array_equal(f, compose_counterfactual(image, ~region, infill))
        assert np.array_equal(cf[~region], image[~region])
        assert np.array_equal(f[region], image[region])


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (4, 5, 3), elements=st.floats(0, 1)),
       arrays(np.bool_, (4, 5)),
       arrays(np.float64, (4, 5, 3), elements=st.floats(0, 1)))
def test_duality_property(image, region, infill):
    assert np.array_equal(compose_factual(image, region, infill),
                          compose_counterfactual(image, ~region, infill))


def test_bounding_box():
    region = np.zeros((6, 7), bool)
    region[2, 3] = region[4, 1] = True
    assert augment.bounding_box(region) == Rect(2, 1, 3, 3)
    assert augment.bbox_mask(region).sum() == 9
    with pytest.raises(DegenerateMaskError):
        augment.bounding_box(np.zeros((3, 3), bool))


# --------------------------------------------------------------------- infills
def test_grey():
    assert infill_grey((1, 1, 1)).tolist() == [[[0.5]]]
    g = infill_grey((3, 4, 3))
    assert g.min() == g.max() == 0.5
    assert np.all(augment.normalize(g) == 0.0)


def test_random_infill_range_and_determinism():
    a = infill_random((16, 16, 3), np.random.default_rng(3))
    b = infill_random((16, 16, 3), np.random.default_rng(3))
    assert np.array_equal(a, b)
    assert a.min() >= 0.0 and a.max() <= 1.0


def test_random_infill_noise_std():
    base, noise = augment.random_infill_parts((200, 200, 3), np.random.default_rng(0))
    # base is constant per channel
    assert np.all(base == base[:1, :1])
    stds = noise.reshape(-1, 3).std(axis=0)
    assert np.all(np.abs(stds - 0.2) <= 0.02)


def test_shuffle_single_pixel_and_constant_region(rng):
    image, _, _ = random_case(rng, 5, 5, 3)
    region = np.zeros((5, 5), bool)
    region[2, 2] = True
    assert np.array_equal(infill_shuffle(image, region, rng), image)
    const = image.copy()
    big = np.zeros((5, 5), bool)
    big[1:4, 1:4] = True
    const[big] = 0.3
    assert np.array_equal(infill_shuffle(const, big, rng), const)


@pytest.mark.parametrize("per_channel", [False, True])
def test_shuffle_preserves_multiset(rng, per_channel):
    for _ in range(50):
        image, region, _ = random_case(rng, 6, 6, 3)
        if not region.any():
            continue
        out = infill_shuffle(image, region, rng, per_channel=per_channel)
        assert np.array_equal(out[~region], image[~region])
        if per_channel:
            for ch in range(3):
                assert np.array_equal(np.sort(out[region][:, ch]), np.sort(image[region][:, ch]))
        else:
            before = sorted(map(tuple, image[region]))
            after = sorted(map(tuple, out[region]))
            assert before == after


def test_shuffle_empty_region_rejected(rng):
    image, _, _ = random_case(rng, 3, 3, 1)
    with pytest.raises(DegenerateMaskError):
        infill_shuffle(image, np.zeros((3, 3), bool), rng)


# ------------------------------------------------------------------ rectangles
def test_rectangle_all_background():
    assert largest_background_rectangle(np.zeros((4, 4), bool)) == Rect(0, 0, 4, 4)


def test_rectangle_corner_foreground():
    region = np.zeros((4, 4), bool)
    region[:2, :2] = True
    rect = largest_background_rectangle(region)
    assert rect.area == 8
    # the 2x4 band at the bottom starts at row 2; the 4x2 band starts at row 0
    assert rect == Rect(0, 2, 4, 2)


def test_rectangle_no_background():
    with pytest.raises(DegenerateMaskError):
        largest_background_rectangle(np.ones((3, 3), bool))


def test_rectangle_matches_brute_force(rng):
    for _ in range(1000):
        h, w = rng.integers(1, 13, size=2)
        mask = rng.uniform(size=(h, w)) < rng.uniform(0.05, 0.7)
        expected = brute_force_largest_rectangle(mask)
        if expected is None:
            with pytest.raises(DegenerateMaskError):
                largest_background_rectangle(mask)
            continue
        rect = largest_background_rectangle(mask)
        assert (rect.area, rect.top, rect.left, rect.height, rect.width) == expected


# ------------------------------------------------------------------------ tile
def test_tile_full_background_is_original(rng):
    image, _, _ = random_case(rng, 5, 6, 3)
    assert np.array_equal(infill_tile(image, np.zeros((5, 6), bool)), image)


def test_tile_hand_case():
    image = np.arange(16, dtype=float).reshape(4, 4, 1) / 16
    region = np.zeros((4, 4), bool)
    region[:, :2] = True  # background patch: columns 2..3, full height
    out = infill_tile(image, region)[..., 0]
    patch = image[:, 2:, 0]
    assert np.array_equal(out[:, :2], patch)
    assert np.array_equal(out[:, 2:], patch)


def test_tile_modular_period(rng):
    for _ in range(200):
        image, region, _ = random_case(rng, int(rng.integers(2, 10)), int(rng.integers(2, 10)), 3, p=0.5)
        if region.all():
            continue
        rect = largest_background_rectangle(region)
        patch = image[rect.slices()]
        out = infill_tile(image, region)
        h, w = image.shape[:2]
        for i in range(h):
            for j in range(w):
                assert np.array_equal(out[i, j], patch[i % rect.height, j % rect.width])


# ------------------------------------------------------------------ mixed-rand
def test_mixed_rand(rng):
    image, region, _ = random_case(rng, 8, 8, 3, p=0.3)
    donor, donor_region, _ = random_case(rng, 8, 8, 3, p=0.3)
    out = mixed_rand_background(image, region, image, region)
    assert np.array_equal(out, compose_factual(image, region, infill_tile(image, region)))
    out = mixed_rand_background(image, region, donor, donor_region)
    assert np.array_equal(out[region], image[region])
    donor_bg = {tuple(v) for v in donor[~donor_region]}
    assert all(tuple(v) in donor_bg for v in out[~region])


# -------------------------------------------------------------------- external
def _quantized(rng, shape):
    return np.rint(rng.uniform(size=shape) * 255) / 255


def test_external_infill(tmp_path, rng):
    image = _quantized(rng, (6, 6, 3))
    region = np.zeros((6, 6), bool)
    region[1:4, 2:5] = True
    write_image(tmp_path / "same.png", image)
    assert np.allclose(load_external_infill(tmp_path / "same.png", image, region), image)
    write_image(tmp_path / "grey.png", np.full((6, 6, 3), 128 / 255))
    got = load_external_infill(tmp_path / "grey.png", image, region)
    expected = compose_counterfactual(image, region, np.full(image.shape, 128 / 255))
    assert np.allclose(got, expected)
    for k in range(5):
        write_image(tmp_path / f"r{k}.png", _quantized(rng, (6, 6, 3)))
        got = load_external_infill(tmp_path / f"r{k}.png", image, region)
        assert np.array_equal(got[~region], image[~region])


def test_external_infill_errors(tmp_path, rng):
    image = _quantized(rng, (6, 6, 3))
    region = np.zeros((6, 6), bool)
    region[0, 0] = True
    with pytest.raises(FileNotFoundError):
        load_external_infill(tmp_path / "missing.png", image, region)
    write_image(tmp_path / "small.png", image[:4])
    with pytest.raises(ValueError):
        load_external_infill(tmp_path / "small.png", image, region)
    (tmp_path / "junk.png").write_bytes(b"not a png")
    with pytest.raises(ValueError):
        load_external_infill(tmp_path / "junk.png", image, region)


# --------------------------------------------------------------------- recipes
@pytest.mark.parametrize("method", ["grey", "random", "shuffle", "tile"])
def test_counterfactual_recipe_keeps_outside_bbox(rng, method):
    image, _, _ = random_case(rng, 10, 10, 3)
    region = np.zeros((10, 10), bool)
    region[3:6, 4:7] = True
    region[4, 5] = False
    out = augment.counterfactual(image, region, method, rng)
    box = augment.bbox_mask(region)
    assert np.array_equal(out[~box], image[~box])


@pytest.mark.parametrize("method", ["random", "shuffle"])
def test_factual_recipe_keeps_foreground(rng, method):
    image, _, _ = random_case(rng, 10, 10, 3)
    region = rng.uniform(size=(10, 10)) < 0.3
    out = augment.factual(image, region, method, rng)
    assert np.array_equal(out[region], image[region])


def test_recipes_deterministic_given_seed():
    image, region, _ = random_case(np.random.default_rng(1), 8, 8, 3)
    for method in ["random", "shuffle"]:
        a = augment.factual(image, region, method, np.random.default_rng(5))
        b = augment.factual(image, region, method, np.random.default_rng(5))
        assert np.array_equal(a, b)


def test_unknown_method():
    image = np.zeros((3, 3, 1))
    region = np.zeros((3, 3), bool)
    region[1, 1] = True
    with pytest.raises(ValueError):
        augment.counterfactual(image, region, "cagan")
    with pytest.raises(ValueError):
        augment.factual(image, region, "fgsm")
