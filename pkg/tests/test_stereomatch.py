import numpy as np
import pytest

from stereo_pose.errors import ConfigurationError
from stereo_pose.geometry import Pose, StereoRig
from stereo_pose.stereomatch import DisparityMap, block_match, disparity_from_depth, to_grayscale

SHIFT = 7


@pytest.fixture
def shifted_pair():

    rng = np.random.default_rng(7)
    H, W = 60, 96
    texture = rng.uniform(0.0, 255.0, size=(H, W + SHIFT))

    return texture[:, :W], texture[:, SHIFT:SHIFT + W]


def _lr_inconsistent(disp:DisparityMap) -> int:

    H, W = disp.shape
    cols = np.arange(W)[None, :] - np.rint(disp.values).astype(np.int64)
    rows = np.broadcast_to(np.arange(H)[:, None], (H, W))
    inside = cols >= 0
    diff = np.abs(disp.values[inside] - disp.right_values[rows[inside], cols[inside]])

    return int((diff > 1.0).sum())


def test_integer_shift_is_recovered(shifted_pair):
    left, right = shifted_pair
    disp = block_match(left, right, max_disp=16, window=9)

    valid = disp.values[disp.valid]
    assert disp.valid[:, SHIFT:].mean() > 0.9
    assert np.mean(np.abs(valid - SHIFT) <= 0.25) >= 0.99


def test_zero_shift(shifted_pair):
    left, _ = shifted_pair
    disp = block_match(left, left.copy(), max_disp=16, window=9)

    assert disp.valid.mean() > 0.9
    np.testing.assert_array_equal(disp.values[disp.valid], 0.0)


def test_textureless_images_are_invalid():
    flat = np.full((40, 64), 128.0)
    disp = block_match(flat, flat, max_disp=16, window=9)

    assert np.mean(~disp.valid | (disp.confidence < 0.05)) >= 0.9


def test_invalid_pixels_carry_zero(shifted_pair):
    left, right = shifted_pair
    disp = block_match(left, right, max_disp=16, window=9)

    assert np.all(disp.values[~disp.valid] == 0.0)
    assert np.all(disp.values <= disp.max_disp)


def test_window_checks(shifted_pair):
    left, right = shifted_pair

    with pytest.raises(ValueError):
        block_match(left, right, window=left.shape[1])
    with pytest.raises(ValueError):
        block_match(left, right, window=4)
    with pytest.raises(ValueError):
        block_match(left, right[:, :-1])


def test_mirrored_pair_gives_mirrored_disparity(shifted_pair):
    left, right = shifted_pair
    disp = block_match(left, right, max_disp=16, window=9)
    mirrored = block_match(np.fliplr(right), np.fliplr(left), max_disp=16, window=9)

    agree = np.abs(mirrored.values - np.fliplr(disp.right_values)) <= 0.1
    assert agree.mean() >= 0.98


def test_larger_window_is_not_less_consistent(shifted_pair):
    left, right = shifted_pair
    n_pixels = left.size

    counts = [_lr_inconsistent(block_match(left, right, max_disp=16, window=w)) for w in (5, 9, 15)]

    for smaller, larger in zip(counts, counts[1:]):
        assert larger <= smaller + 0.01 * n_pixels


def test_rgb_input_uses_luma():
    rgb = np.zeros((2, 2, 3), dtype=np.uint8)
    rgb[0, 0] = [255, 255, 255]

    gray = to_grayscale(rgb)
    assert gray.shape == (2, 2)
    assert gray[0, 0] == pytest.approx(255.0)
    assert gray[1, 1] == 0.0


def test_disparity_from_depth_noiseless(rig):
    depth = np.full((20, 30), 600.0)
    depth[:, :5] = 0.0

    disp = disparity_from_depth(depth, rig)

    np.testing.assert_allclose(disp.values[:, 5:], 50.0)
    assert not disp.valid[:, :5].any()
    np.testing.assert_allclose(disp.to_depth(rig)[:, 5:], 600.0)


def test_disparity_noise_statistics(rig):
    depth = np.full((250, 400), 600.0)

    disp = disparity_from_depth(depth, rig, noise_sigma=1.0, seed=3)

    assert np.std(disp.values - 50.0) == pytest.approx(1.0, abs=0.02)
    again = disparity_from_depth(depth, rig, noise_sigma=1.0, seed=3)
    np.testing.assert_array_equal(disp.values, again.values)


def test_disparity_respects_mask(rig):
    depth = np.full((10, 10), 800.0)
    mask = np.zeros((10, 10), dtype=bool)
    mask[2:5, 2:5] = True

    disp = disparity_from_depth(depth, rig, mask=mask)

    np.testing.assert_array_equal(disp.valid, mask)


def test_disparity_requires_rectified_rig(K):
    angle = 0.1
    R = np.array([[np.cos(angle), 0.0, np.sin(angle)], [0.0, 1.0, 0.0], [-np.sin(angle), 0.0, np.cos(angle)]])
    rig = StereoRig(K, K, Pose(R, np.array([-50.0, 0.0, 0.0])), rectified=False)

    with pytest.raises(ConfigurationError):
        disparity_from_depth(np.full((4, 4), 600.0), rig)


def test_sample_outside_is_invalid():
    disp = DisparityMap(values=np.full((4, 4), 3.0), valid=np.ones((4, 4), dtype=bool), confidence=np.ones((4, 4)))

    values, valid = disp.sample(np.array([[1.2, 2.7], [-3.0, 0.0], [10.0, 1.0]]))

    np.testing.assert_array_equal(valid, [True, False, False])
    np.testing.assert_array_equal(values, [3.0, 0.0, 0.0])
