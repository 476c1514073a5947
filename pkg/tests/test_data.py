import logging

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fanet.data import (Building, DatasetManifest, SynthSpec, augment, epoch_batches,
                        gaussian_blur, gaussian_kernel, generate_synthetic, hflip, load_image,
                        load_mask, load_split, render_scene, save_image, save_mask,
                        synthetic_samples, tile, untile)
from fanet.errors import ConfigError, FanetIOError, ValidationError


def pair(h, w, seed=0):
    rng = np.random.default_rng(seed)
    return rng.random((3, h, w)).astype(np.float32), (rng.random((1, h, w)) < 0.5).astype(np.float32)


@pytest.mark.parametrize("h,w,s,count", [(1024, 1024, 512, 4), (1500, 1100, 512, 4),
                                         (128, 96, 32, 12), (64, 64, 64, 1)])
def test_tile_counts(h, w, s, count):
    img, mask = pair(h, w)
    tiles = tile(img, mask, s)
    assert len(tiles) == count == (h // s) * (w // s)
    assert all(t[0].shape == (3, s, s) and t[1].shape == (1, s, s) for t in tiles)


def test_single_tile_equals_input():
    img, mask = pair(512, 512)
    [(ti, tm)] = tile(img, mask, 512)
    npt.assert_array_equal(ti, img)
    npt.assert_array_equal(tm, mask)


def test_small_image_warns_and_gives_nothing(caplog):
    img, mask = pair(20, 40)
    with caplog.at_level(logging.WARNING):
        assert tile(img, mask, 32) == []
    assert "smaller than one" in caplog.text


def test_tile_shape_mismatch():
    with pytest.raises(ValidationError):
        tile(np.zeros((3, 32, 32)), np.zeros((1, 32, 64)), 32)


@settings(max_examples=20, deadline=None)
@given(st.integers(32, 140), st.integers(32, 140), st.sampled_from([32, 64]))
def test_untile_reproduces_cropped_mask(h, w, s):
    img, mask = pair(h, w)
    tiles = tile(img, mask, s)
    rows, cols = h // s, w // s
    if not tiles:
        return
    npt.assert_array_equal(untile([t[1] for t in tiles], rows, cols), mask[:, :rows * s, :cols * s])
    npt.assert_array_equal(untile([t[0] for t in tiles], rows, cols), img[:, :rows * s, :cols * s])


def test_flip_is_involution():
    img, mask = pair(8, 9)
    npt.assert_array_equal(hflip(hflip(img)), img)
    npt.assert_array_equal(hflip(hflip(mask)), mask)


def test_blur_constant_image_unchanged():
    img = np.full((3, 16, 16), 0.37, np.float32)
    for sigma in (0.1, 0.7, 2.0):
        npt.assert_allclose(gaussian_blur(img, sigma), img, rtol=1e-6)


def test_gaussian_kernel_radius_and_normalisation():
    for sigma in (0.1, 0.5, 1.3, 2.0):
        k = gaussian_kernel(sigma)
        assert len(k) == 2 * int(np.ceil(3 * sigma)) + 1
        assert abs(k.sum() - 1) < 1e-12
        npt.assert_array_equal(k, k[::-1])


def test_augment_is_seeded_and_label_preserving():
    sample = pair(32, 32, seed=3)
    for seed in range(20):
        a1, m1 = augment(sample, seed)
        a2, m2 = augment(sample, seed)
        npt.assert_array_equal(a1, a2)
        npt.assert_array_equal(m1, m2)
        assert set(np.unique(m1)) <= {0.0, 1.0}
        # mask is either untouched or flipped, never blurred
        assert np.array_equal(m1, sample[1]) or np.array_equal(m1, hflip(sample[1]))


def test_augment_hits_both_branches():
    sample = pair(16, 16, seed=4)
    flips = blurs = 0
    for seed in range(200):
        img, mask = augment(sample, seed)
        flipped = not np.array_equal(mask, sample[1])
        flips += flipped
        base = hflip(sample[0]) if flipped else sample[0]
        blurs += not np.array_equal(img, base)
    assert 60 < flips < 140 and 60 < blurs < 140


def test_epoch_batches_deterministic_and_worker_independent():
    samples = synthetic_samples(SynthSpec(canvas=32), 10)
    runs = [list(epoch_batches(samples, 3, seed=5, epoch=2, workers=w)) for w in (1, 3, 1)]
    for other in runs[1:]:
        for a, b in zip(runs[0], other):
            npt.assert_array_equal(a.images, b.images)
            npt.assert_array_equal(a.masks, b.masks)
    assert [len(b.images) for b in runs[0]] == [3, 3, 3, 1]
    epoch3 = list(epoch_batches(samples, 3, seed=5, epoch=3))
    assert not np.array_equal(epoch3[0].images, runs[0][0].images)


def test_no_buildings_gives_empty_mask():
    spec = SynthSpec(buildings=(0, 0))
    for image, mask in synthetic_samples(spec, 3):
        assert mask.sum() == 0
        assert image.shape == (3, 64, 64) and image.min() >= 0 and image.max() <= 1


def test_full_canvas_building_gives_full_mask():
    spec = SynthSpec(canvas=32, buildings=(1, 1), building_size=(32, 32))
    for _, mask in synthetic_samples(spec, 3):
        assert mask.min() == 1


def test_three_rectangles_union_area():
    spec = SynthSpec(buildings=(3, 3), occluders=(2, 2), seed=11)
    image, mask, buildings = render_scene(spec, np.random.default_rng(7))
    assert len(buildings) == 3
    # clipped union area by inclusion-exclusion over the integer boxes
    boxes = []
    for b in buildings:
        y0, x0, y1, x1 = b.box()
        boxes.append((max(y0, 0), max(x0, 0), min(y1, 64), min(x1, 64)))

    def area(bs):
        y0 = max(b[0] for b in bs)
        x0 = max(b[1] for b in bs)
        y1 = min(b[2] for b in bs)
        x1 = min(b[3] for b in bs)
        return max(0, y1 - y0) * max(0, x1 - x0)

    a, b, c = boxes
    union = (area([a]) + area([b]) + area([c]) - area([a, b]) - area([a, c]) - area([b, c])
             + area([a, b, c]))
    assert int(mask.sum()) == union


def test_occluders_touch_image_not_mask():
    spec = SynthSpec(occluders=(3, 3), occluder_opacity=1.0, noise=0.0)
    plain = SynthSpec(occluders=(0, 0), occluder_opacity=1.0, noise=0.0)
    # same seed stream; the mask depends only on the buildings
    img_o, mask_o, b_o = render_scene(spec, np.random.default_rng(5))
    img_p, mask_p, b_p = render_scene(plain, np.random.default_rng(5))
    assert b_o == b_p
    npt.assert_array_equal(mask_o, mask_p)
    assert not np.array_equal(img_o, img_p)


def test_rotated_buildings_stay_binary():
    spec = SynthSpec(rotation=True, seed=2)
    for _, mask in synthetic_samples(spec, 4):
        assert set(np.unique(mask)) <= {0.0, 1.0}
    b = Building(16, 16, 8, 8, angle=0.3)
    assert 50 < b.coverage(32).sum() < 80


def test_synth_spec_validation():
    with pytest.raises(ConfigError):
        SynthSpec(buildings=(4, 2))
    with pytest.raises(ConfigError):
        SynthSpec(occluder_opacity=1.5)


def test_generate_and_reload(tmp_path):
    spec = SynthSpec(n_train=3, n_val=1, n_test=2, seed=9)
    manifest = generate_synthetic(spec, tmp_path / "ds")
    again = DatasetManifest.read(tmp_path / "ds" / "manifest.tsv")
    assert again.entries == manifest.entries
    assert [len(again.split(s)) for s in ("train", "val", "test")] == [3, 1, 2]
    loaded = load_split(again, "test")
    direct = synthetic_samples(spec, 2, stream=2)
    for (img, mask), (dimg, dmask) in zip(loaded, direct):
        npt.assert_array_equal(mask, dmask)
        assert np.max(np.abs(img - dimg)) <= 0.5 / 255 + 1e-6


def test_png_round_trip(tmp_path):
    img, mask = pair(8, 8)
    save_image(tmp_path / "i.png", img)
    save_mask(tmp_path / "m.png", mask)
    assert np.max(np.abs(load_image(tmp_path / "i.png") - img)) <= 0.5 / 255 + 1e-6
    npt.assert_array_equal(load_mask(tmp_path / "m.png"), mask)


def test_io_errors(tmp_path):
    with pytest.raises(FanetIOError):
        load_image(tmp_path / "missing.png")
    (tmp_path / "bad.png").write_text("not a png")
    with pytest.raises(FanetIOError):
        load_image(tmp_path / "bad.png")
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(FanetIOError):
        generate_synthetic(SynthSpec(n_train=1, n_test=0), blocker / "sub")


def test_manifest_validation(tmp_path):
    with pytest.raises(ConfigError):
        DatasetManifest([], tile_size=48)
    with pytest.raises(ValidationError):
        DatasetManifest([("a.png", "a_m.png", "holdout")])
    with pytest.raises(ValidationError):
        DatasetManifest([("a.png", "m1.png", "train"), ("a.png", "m2.png", "test")])
    (tmp_path / "m.tsv").write_text("only-two\tcolumns\n")
    with pytest.raises(ValidationError):
        DatasetManifest.read(tmp_path / "m.tsv")
