import numpy as np
import pytest

from stereo_pose.errors import ConfigurationError
from stereo_pose.estimate_ds import EstimateDS, estimates_path, inject_noise
from stereo_pose.evaluate_ds import noise_axis
from stereo_pose.geometry import RIGHT, BoundingBox
from stereo_pose.Helpers import default_config
from stereo_pose.posesolve import CorrespondenceSet


@pytest.fixture
def corrs(rng):
    pixels = np.stack([rng.uniform(40, 80, 200), rng.uniform(30, 60, 200)], axis=1)
    return CorrespondenceSet(pixels, rng.uniform(-30, 30, size=(200, 3)), views=np.full(200, RIGHT, dtype=np.int8))


def test_zero_noise_is_identity(corrs, small_K):
    out = inject_noise(corrs, np.random.default_rng(0), small_K)

    np.testing.assert_array_equal(out.pixels, corrs.pixels)
    np.testing.assert_array_equal(out.points, corrs.points)
    np.testing.assert_array_equal(out.views, corrs.views)


def test_noise_leaves_input_untouched(corrs, small_K):
    before = corrs.pixels.copy()
    inject_noise(corrs, np.random.default_rng(0), small_K, noise_px=2.0, noise_mm=1.0, outlier_fraction=0.3)

    np.testing.assert_array_equal(corrs.pixels, before)


def test_noise_is_seeded(corrs, small_K):
    a = inject_noise(corrs, np.random.default_rng(9), small_K, noise_px=1.0, outlier_fraction=0.2)
    b = inject_noise(corrs, np.random.default_rng(9), small_K, noise_px=1.0, outlier_fraction=0.2)

    np.testing.assert_array_equal(a.pixels, b.pixels)


def test_pixel_and_point_noise_levels(corrs, small_K):
    out = inject_noise(corrs, np.random.default_rng(1), small_K, noise_px=1.5, noise_mm=4.0)

    assert np.std(out.pixels - corrs.pixels) == pytest.approx(1.5, rel=0.1)
    assert np.std(out.points - corrs.points) == pytest.approx(4.0, rel=0.1)


def test_outliers_fall_inside_box(corrs, small_K):
    box = BoundingBox(100, 80, 140, 110)
    out = inject_noise(corrs, np.random.default_rng(2), small_K, bbox=box, outlier_fraction=0.25)

    moved = np.any(out.pixels != corrs.pixels, axis=1)
    assert moved.sum() == 50
    assert np.all((out.pixels[moved, 0] >= 100) & (out.pixels[moved, 0] <= 139))
    assert np.all((out.pixels[moved, 1] >= 80) & (out.pixels[moved, 1] <= 109))


def test_noisy_pixels_stay_in_image(small_K, rng):
    edge = CorrespondenceSet(np.array([[0.0, 0.0], [159.0, 119.0]] * 20), rng.uniform(-1, 1, size=(40, 3)))
    out = inject_noise(edge, rng, small_K, noise_px=5.0)

    assert out.pixels[:, 0].min() >= 0 and out.pixels[:, 0].max() <= 159
    assert out.pixels[:, 1].min() >= 0 and out.pixels[:, 1].max() <= 119


def test_empty_set(small_K):
    out = inject_noise(CorrespondenceSet.empty(), np.random.default_rng(0), small_K, noise_px=1.0, outlier_fraction=0.5)
    assert len(out) == 0


@pytest.mark.parametrize('section, key, value', [
    ('estimate', 'noise_px', -1.0),
    ('estimate', 'outlier_fraction', 1.0),
    ('estimate', 'disparity', 'sgm'),
    ('estimate', 'window', 4),
    ('estimate', 'strategies', ['STEREO_MAGIC']),
    ('solver', 'ransac_threshold_px', 0.0),
])
def test_estimate_rejects_bad_knobs(tmp_path, section, key, value):
    config = default_config()
    config[section][key] = value

    with pytest.raises(ConfigurationError):
        EstimateDS(str(tmp_path), str(tmp_path / 'run'), config)


def test_estimate_requires_dataset(tmp_path):
    with pytest.raises(FileNotFoundError):
        EstimateDS(str(tmp_path / 'missing'), str(tmp_path / 'run'))


def test_estimate_on_empty_root(tmp_path):
    est = EstimateDS(str(tmp_path), str(tmp_path / 'run'))

    with pytest.raises(FileNotFoundError):
        est.load_dataset()


def test_estimates_path():
    assert estimates_path('runs/a', 'MONO_LEFT').endswith('estimates_MONO_LEFT.csv')


def _summary(**noise):
    values = {'noise_px': 0.0, 'noise_mm': 0.0, 'outlier_fraction': 0.0, 'disparity_sigma': 0.0}
    values.update(noise)
    return {'noise': values}


def test_noise_axis_picks_the_varying_knob():
    assert noise_axis([_summary(), _summary()]) == 'noise_px'
    assert noise_axis([_summary(outlier_fraction=0.1), _summary(outlier_fraction=0.3)]) == 'outlier_fraction'
    assert noise_axis([_summary(noise_mm=1.0, disparity_sigma=1.0), _summary(disparity_sigma=2.0)]) == 'noise_mm'
