import numpy as np
import pytest
from scipy.spatial.distance import pdist

from conftest import make_cloud
from treekit.augment import AugmentConfig, augment, jitter, reflect, rotate_z, scale_aniso, stage_seeds
from treekit.cloud import hull_area_xy
from treekit.evaluate import instance_heights


@pytest.fixture
def cloud():
    rng = np.random.default_rng(21)
    xyz = np.column_stack([rng.uniform(0, 30, (300, 2)), rng.uniform(0, 25, 300)])
    instance = rng.integers(0, 8, 300)
    return make_cloud(xyz, instance=instance)


def _assert_labels_kept(a, b):
    assert len(a) == len(b)
    assert np.array_equal(a.semantic, b.semantic)
    assert np.array_equal(a.instance, b.instance)


class TestJitter:
    def test_zero_sigma_is_identity(self, cloud):
        assert jitter(cloud, 0.0, seed=1).equals(cloud)

    def test_displacement_std(self):
        big = make_cloud(np.zeros((100_000, 3)))
        displacement = jitter(big, 0.01, seed=2).xyz
        for axis in range(3):
            assert 0.0098 <= displacement[:, axis].std() <= 0.0102

    def test_deterministic(self, cloud):
        assert jitter(cloud, 0.01, 3).equals(jitter(cloud, 0.01, 3))
        _assert_labels_kept(cloud, jitter(cloud, 0.01, 3))

    def test_negative_sigma(self, cloud):
        with pytest.raises(ValueError):
            jitter(cloud, -0.1, 1)


class TestRotateZ:
    def test_zero_degrees_is_identity(self, cloud):
        assert rotate_z(cloud, 0.0, seed=4).equals(cloud)

    def test_quarter_turn(self):
        pair = make_cloud([[1, 0, 5], [-1, 0, 5]])  # XY centroid at the origin
        out = rotate_z(pair, 180, seed=0, angle_degrees=90)
        np.testing.assert_allclose(out.xyz[0], [0, 1, 5], atol=1e-12)

    def test_isometry(self, cloud):
        out = rotate_z(cloud, 180, seed=5)
        np.testing.assert_allclose(pdist(out.xyz), pdist(cloud.xyz), rtol=1e-9)
        assert np.array_equal(out.xyz[:, 2], cloud.xyz[:, 2])
        _assert_labels_kept(cloud, out)

    def test_angle_range(self, cloud):
        # With max 10 degrees no point may move by more than its radius times 2 sin(5 degrees).
        center = cloud.xyz[:, :2].mean(axis=0)
        radius = np.linalg.norm(cloud.xyz[:, :2] - center, axis=1)
        for seed in range(20):
            moved = np.linalg.norm(rotate_z(cloud, 10, seed).xyz[:, :2] - cloud.xyz[:, :2], axis=1)
            assert np.all(moved <= radius * 2 * np.sin(np.radians(5)) + 1e-9)

    def test_out_of_range(self, cloud):
        with pytest.raises(ValueError):
            rotate_z(cloud, 181, 1)


class TestScaleAniso:
    def test_unit_range_is_identity(self, cloud):
        assert scale_aniso(cloud, (1, 1), seed=6).equals(cloud)

    def test_instance_heights_scale_with_z_factor(self, cloud):
        out = scale_aniso(cloud, (0.9, 1.1), seed=0, factors=(1.0, 1.0, 1.1))
        before = instance_heights(cloud.instance, cloud.xyz[:, 2])
        after = instance_heights(out.instance, out.xyz[:, 2])
        for instance_id, height in before.items():
            assert after[instance_id] == pytest.approx(1.1 * height, rel=1e-12)

    def test_hull_area_scales_with_xy_factors(self, cloud):
        out = scale_aniso(cloud, (0.9, 1.1), seed=0, factors=(0.93, 1.07, 1.0))
        assert hull_area_xy(out) == pytest.approx(0.93 * 1.07 * hull_area_xy(cloud), rel=1e-9)

    def test_drawn_factors_lie_in_range(self, cloud):
        center = cloud.xyz.mean(axis=0)
        for seed in range(20):
            out = scale_aniso(cloud, (0.9, 1.1), seed)
            ratio = (out.xyz - center) / (cloud.xyz - center)
            assert np.all((ratio > 0.9 - 1e-9) & (ratio < 1.1 + 1e-9))

    def test_invalid_range(self, cloud):
        with pytest.raises(ValueError):
            scale_aniso(cloud, (1.1, 0.9), 1)
        with pytest.raises(ValueError):
            scale_aniso(cloud, (0.0, 1.0), 1)


class TestReflect:
    def test_zero_probability_is_identity(self, cloud):
        assert reflect(cloud, (0, 0), seed=7).equals(cloud)

    def test_involution(self, cloud):
        twice = reflect(reflect(cloud, (1, 1), 0, flips=(True, False)), (1, 1), 0, flips=(True, False))
        np.testing.assert_allclose(twice.xyz, cloud.xyz, rtol=0, atol=1e-12)

    def test_isometry_and_z_untouched(self, cloud):
        out = reflect(cloud, (1, 1), seed=8)
        np.testing.assert_allclose(pdist(out.xyz), pdist(cloud.xyz), rtol=1e-9)
        assert np.array_equal(out.xyz[:, 2], cloud.xyz[:, 2])

    def test_probabilities_validated(self, cloud):
        with pytest.raises(ValueError):
            reflect(cloud, (1.5, 0), 1)
        with pytest.raises(ValueError):
            reflect(cloud, (0.5, 0.5, 0.5), 1)

    def test_reflection_frequency(self, cloud):
        flips = [reflect(cloud, (0.25, 0.0), s).xyz[0, 0] != cloud.xyz[0, 0] for s in range(2000)]
        assert 0.21 <= np.mean(flips) <= 0.29


class TestAugment:
    def test_identity_config(self, cloud):
        assert augment(cloud, AugmentConfig.identity(seed=3)).equals(cloud)

    def test_rotation_only_equals_rotate_z(self, cloud):
        config = AugmentConfig(0.0, 90.0, (1, 1), (0, 0), seed=12)
        assert augment(cloud, config).equals(rotate_z(cloud, 90.0, stage_seeds(12)["rotate"]))

    def test_composition_order(self, cloud):
        config = AugmentConfig(seed=13)
        seeds = stage_seeds(13)
        manual = reflect(cloud, config.symmetry_axes, seeds["reflect"])
        manual = scale_aniso(manual, config.scale_range, seeds["scale"])
        manual = rotate_z(manual, config.rotation_max_degrees, seeds["rotate"])
        manual = jitter(manual, config.noise_sigma, seeds["jitter"])
        assert augment(cloud, config).equals(manual)

    def test_deterministic_and_labels_kept(self, cloud):
        config = AugmentConfig(seed=14)
        out = augment(cloud, config)
        assert out.equals(augment(cloud, config))
        _assert_labels_kept(cloud, out)

    def test_defaults(self):
        config = AugmentConfig()
        assert (config.noise_sigma, config.rotation_max_degrees, config.scale_range) == (0.01, 180.0, (0.9, 1.1))

    def test_config_round_trip(self):
        config = AugmentConfig(0.02, 45.0, (0.8, 1.2), (0.1, 0.9), seed=5)
        assert AugmentConfig.from_dict(config.to_dict()) == config
        with pytest.raises(ValueError):
            AugmentConfig.from_dict({"sigma": 1})
