import colorsys

import numpy as np
import pytest
from conftest import random_sample

from freebies.core import BBox, DomainError, ObjectLabel, Sample, make_rng, sample_rng
from freebies.augment import (INTERPOLATIONS, AugmentPolicy, ColorJitterConfig, CropConstraint, Step,
                              adjust_brightness, apply_jitter, apply_policy, color_jitter, crop_sample,
                              expand_sample, hsv_to_rgb, random_crop, random_expand, resize_image,
                              resize_sample, rgb_to_hsv, rotate_hue, short_side_size)


def _two_box_sample():
    return Sample(np.full((100, 100, 3), 0.5),
                  [ObjectLabel(BBox(15, 15, 35, 35), 0), ObjectLabel(BBox(65, 65, 85, 85), 1)])


def test_crop_center_rule():
    out = crop_sample(_two_box_sample(), (0, 0, 50, 50))
    assert out.image.shape == (50, 50, 3)
    assert [lab.class_id for lab in out.labels] == [0]
    assert out.labels[0].bbox == BBox(15, 15, 35, 35)


def test_crop_clips_retained_boxes():
    s = Sample(np.zeros((100, 100, 3)), [ObjectLabel(BBox(30, 30, 60, 60), 0, 0.4)])
    out = crop_sample(s, (10, 10, 50, 50))
    assert out.labels[0].bbox == BBox(20, 20, 40, 40)
    assert out.labels[0].weight == 0.4


def test_full_crop_is_identity():
    s = _two_box_sample()
    c = CropConstraint(min_iou=0.0, min_scale=1.0, max_scale=1.0, aspect_range=(1.0, 1.0))
    out = random_crop(s, c, make_rng(0))
    np.testing.assert_array_equal(out.image, s.image)
    assert out.labels == s.labels


def test_crop_fallback_returns_input():
    s = _two_box_sample()
    c = CropConstraint(min_iou=0.99, min_scale=0.01, max_scale=0.02)
    assert random_crop(s, c, make_rng(0)) is s


@pytest.mark.parametrize("seed", range(30))
def test_crop_never_keeps_outside_centers(seed):
    rng = np.random.default_rng(seed)
    s = random_sample(rng, 40, 40, max_labels=8)
    out = random_crop(s, CropConstraint(min_scale=0.1), make_rng(seed))
    out.validate()
    assert len(out.labels) <= len(s.labels)


def test_crop_constraint_validation():
    with pytest.raises(DomainError):
        CropConstraint(min_scale=0.8, max_scale=0.5)
    with pytest.raises(DomainError):
        CropConstraint(aspect_range=(2.0, 1.0))


def test_expand_translation():
    s = Sample(np.full((100, 100, 3), 0.2), [ObjectLabel(BBox(10, 10, 20, 20), 3, 0.7)])
    out = expand_sample(s, 2.0, (50, 30), fill=(0.1, 0.2, 0.3))
    assert out.image.shape == (200, 200, 3)
    assert out.labels == [ObjectLabel(BBox(60, 40, 70, 50), 3, 0.7)]
    np.testing.assert_array_equal(out.image[0, 0], [0.1, 0.2, 0.3])
    np.testing.assert_array_equal(out.image[30:130, 50:150], s.image)


def test_expand_ratio_one_is_identity():
    s = _two_box_sample()
    out = expand_sample(s, 1.0, (0, 0))
    np.testing.assert_array_equal(out.image, s.image)
    assert out.labels == s.labels


def test_expand_mean_area():
    s = Sample(np.zeros((200, 200, 3)), [])
    rng = make_rng(9)
    areas = [random_expand(s, 4.0, rng=rng).image.shape[:2] for _ in range(3000)]
    mean_area = np.mean([h * w for h, w in areas])
    expected = (4.0 ** 3 - 1) / (3 * (4.0 - 1)) * 200 * 200
    assert abs(mean_area / expected - 1) < 0.02


def test_nearest_upscale_checker(checker):
    out = resize_image(checker, 4, 4, "nearest")
    expected = np.kron(checker[..., 0], np.ones((2, 2)))
    np.testing.assert_array_equal(out[..., 0], expected)


@pytest.mark.parametrize("interp", [k for k in INTERPOLATIONS if k != "lanczos"])
def test_identity_size(interp):
    img = np.random.default_rng(0).random((13, 17, 3))
    np.testing.assert_array_equal(resize_image(img, 13, 17, interp), img)


def test_box_scaling():
    s = Sample(np.zeros((100, 100, 3)), [ObjectLabel(BBox(10, 20, 30, 40), 0)])
    out = resize_sample(s, 50, 200, "bilinear")
    assert out.image.shape == (50, 200, 3)
    assert out.labels[0].bbox == BBox(20, 10, 60, 20)


@pytest.mark.parametrize("interp", list(INTERPOLATIONS))
def test_resize_stays_in_range(interp):
    img = np.random.default_rng(1).integers(0, 2, size=(9, 11, 3)).astype(float)
    out = resize_image(img, 23, 5, interp)
    assert out.shape == (23, 5, 3)
    assert out.min() >= 0 and out.max() <= 1


def test_short_side_sizes():
    assert short_side_size(600, 800) == (600, 800)
    assert short_side_size(300, 400) == (600, 800)
    # long side would reach 1200, so the cap binds
    assert short_side_size(600, 1200) == (500, 1000)


def test_brightness():
    img = np.array([[[0.5, 0.95, 0.0]]])
    np.testing.assert_allclose(apply_jitter(img, brightness=0.1), [[[0.6, 1.0, 0.1]]], atol=1e-15)
    np.testing.assert_allclose(adjust_brightness(img, 0.1)[0, 0, 1], 1.05)


def test_zero_saturation():
    out = apply_jitter(np.array([[[0.2, 0.4, 0.6]]]), saturation=0.0)
    # 0.0598 + 0.2348 + 0.0684
    np.testing.assert_allclose(out[0, 0], 0.363, atol=1e-12)
    assert round(out[0, 0, 0], 3) == 0.363


def test_contrast_keeps_mean_luma():
    img = np.random.default_rng(2).random((8, 8, 3)) * 0.5 + 0.25
    out = apply_jitter(img, contrast=1.3)
    assert (out @ [0.299, 0.587, 0.114]).mean() == pytest.approx((img @ [0.299, 0.587, 0.114]).mean())


def test_hsv_matches_scalar_reference():
    rng = np.random.default_rng(3)
    img = rng.random((40, 40, 3))
    img[0, :3] = [[0.5, 0.5, 0.5], [0, 0, 0], [1, 0, 0]]
    hsv = rgb_to_hsv(img)
    ref = np.array([colorsys.rgb_to_hsv(*px) for px in img.reshape(-1, 3)]).reshape(img.shape)
    np.testing.assert_allclose(hsv[..., 0] / 360.0, ref[..., 0], atol=1e-12)
    np.testing.assert_allclose(hsv[..., 1:], ref[..., 1:], atol=1e-12)
    np.testing.assert_allclose(hsv_to_rgb(hsv), img, atol=1e-12)


def test_full_hue_turn():
    img = np.random.default_rng(4).random((32, 32, 3))
    np.testing.assert_allclose(rotate_hue(img, 360.0), img, atol=1e-6)
    np.testing.assert_allclose(apply_jitter(img, hue=360.0), img, atol=1e-6)


def test_hue_rotation_matches_colorsys():
    px = (0.8, 0.3, 0.1)
    h, s, v = colorsys.rgb_to_hsv(*px)
    ref = colorsys.hsv_to_rgb((h + 120 / 360) % 1.0, s, v)
    np.testing.assert_allclose(rotate_hue(np.array([[px]]), 120.0)[0, 0], ref, atol=1e-12)


def test_jitter_range_and_determinism():
    img = np.random.default_rng(5).random((16, 16, 3))
    cfg = ColorJitterConfig()
    a = color_jitter(img, cfg, make_rng(1))
    b = color_jitter(img, cfg, make_rng(1))
    assert a.tobytes() == b.tobytes()
    assert a.min() >= 0 and a.max() <= 1


def test_all_zero_probabilities_identity():
    s = _two_box_sample()
    p = AugmentPolicy("single_stage", [Step(st.name, 0.0, st.params)
                                       for st in AugmentPolicy.single_stage().steps])
    out = apply_policy(s, p, make_rng(0))
    assert out is s


def test_multi_stage_rejects_crop():
    with pytest.raises(DomainError):
        AugmentPolicy("multi_stage", [Step("random_crop", 0.5)])
    with pytest.raises(DomainError):
        AugmentPolicy("multi_stage", [Step("random_expand", 1.0)])


def test_multi_stage_default():
    p = AugmentPolicy.multi_stage()
    assert [st.name for st in p.steps] == ["resize_short_side", "hflip"]
    assert p.steps[1].prob == 0.5
    s = Sample(np.zeros((600, 800, 3)), [ObjectLabel(BBox(0, 0, 800, 600), 0)])
    out = apply_policy(s, p, make_rng(0))
    assert out.image.shape == (600, 800, 3)
    wide = Sample(np.zeros((300, 900, 3)), [])
    assert apply_policy(wide, p, make_rng(0)).image.shape == (333, 1000, 3)


def test_single_stage_order():
    assert [st.name for st in AugmentPolicy.single_stage().steps] == [
        "color_jitter", "random_expand", "random_crop", "random_resize", "hflip"]


def test_policy_deterministic():
    s = random_sample(np.random.default_rng(6), 50, 60)
    p = AugmentPolicy.single_stage(64)
    a, b = apply_policy(s, p, make_rng(3)), apply_policy(s, p, make_rng(3))
    assert a.image.tobytes() == b.image.tobytes()
    assert a.labels == b.labels


def test_fuzz_outputs_valid():
    data = np.random.default_rng(7)
    policies = [AugmentPolicy.single_stage(32), AugmentPolicy.multi_stage(24, 40)]
    for i in range(10_000):
        s = random_sample(data, max_labels=3)
        out = apply_policy(s, policies[i % 2], sample_rng(7, i))
        out.validate()
        assert out.image.min() >= 0 and out.image.max() <= 1


def test_composition_closure():
    data = np.random.default_rng(8)
    p = AugmentPolicy.single_stage(48)
    for i in range(200):
        s = random_sample(data)
        rng = sample_rng(8, i)
        apply_policy(apply_policy(s, p, rng), p, rng).validate()
