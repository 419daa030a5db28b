import itertools

import numpy as np
import pytest

from scenarios import mean_detection
from treekit.cloud import NON_TREE, TREE, validate
from treekit.evaluate import evaluate
from treekit.grouping import GroupingConfig, segment, shift_points
from treekit.synthgen import (
    ForestConfig,
    OracleNoise,
    PlacementError,
    embedding_code,
    generate_forest,
    instance_centroids,
    oracle_predictions,
)


def _stem_positions(cloud):
    # The first point of every tree is its stem base, offset from the stem axis by the stem radius.
    n_trees = int(cloud.instance.max())
    per_tree = int(np.sum(cloud.instance == 1))
    return cloud.xyz[np.arange(n_trees) * per_tree, :2]


class TestForest:
    def test_two_trees_spaced(self):
        config = ForestConfig(plot_size=20, n_trees=2, min_spacing=5, points_per_tree=50, ground_points=100)
        cloud = generate_forest(config, seed=3)
        assert sorted(set(cloud.instance.tolist()) - {0}) == [1, 2]
        a, b = _stem_positions(cloud)
        assert np.hypot(*(a - b)) >= 5 - 2 * 0.15

    def test_ground_labels(self):
        cloud = generate_forest(ForestConfig(), seed=1)
        ground = cloud.instance == 0
        assert ground.sum() == 2000
        assert np.all(cloud.semantic[ground] == NON_TREE)
        assert np.all(cloud.semantic[~ground] == TREE)

    def test_deterministic(self):
        assert generate_forest(ForestConfig(), seed=5).equals(generate_forest(ForestConfig(), seed=5))
        assert not generate_forest(ForestConfig(), seed=5).equals(generate_forest(ForestConfig(), seed=6))

    def test_infeasible_placement(self):
        with pytest.raises(PlacementError):
            generate_forest(ForestConfig(plot_size=5, n_trees=10, min_spacing=4))

    @pytest.mark.parametrize("seed", range(5))
    def test_validates(self, seed):
        assert validate(generate_forest(ForestConfig(), seed=seed)) == []

    def test_heights_in_range(self):
        cloud = generate_forest(ForestConfig(), seed=2)
        tops = np.array([cloud.xyz[cloud.instance == i, 2].max() for i in range(1, 26)])
        assert np.all((tops >= 8 - 1e-9) & (tops <= 25 + 1e-9))

    def test_config_round_trip(self):
        config = ForestConfig(n_trees=3, height_range=(5, 6))
        assert ForestConfig.from_dict(config.to_dict()) == config
        with pytest.raises(ValueError):
            ForestConfig.from_dict({"trees": 3})
        with pytest.raises(ValueError):
            ForestConfig(height_range=(10, 5))


class TestOracle:
    def test_zero_noise_shifts_onto_centroids(self):
        cloud = generate_forest(ForestConfig(), seed=0)
        preds = oracle_predictions(cloud, OracleNoise(), seed=0)
        tree = np.flatnonzero(cloud.instance > 0)
        shifted = shift_points(cloud, preds, tree)
        centroids = instance_centroids(cloud)
        expected = np.array([centroids[i] for i in cloud.instance[tree]])
        np.testing.assert_allclose(shifted, expected, atol=1e-9)
        assert np.all(preds.semantic_prob == (cloud.instance > 0))

    def test_embedding_codes_separated(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            a, b = rng.choice(10**6, size=2, replace=False) + 1
            assert np.linalg.norm(embedding_code(a) - embedding_code(b)) >= 1.0

    def test_embedding_codes_on_sphere(self):
        for i in range(1, 50):
            assert np.linalg.norm(embedding_code(i)) == pytest.approx(10.0)

    def test_noise_streams_independent(self):
        cloud = generate_forest(ForestConfig(n_trees=3, plot_size=20), seed=0)
        a = oracle_predictions(cloud, OracleNoise(offset_sigma=0.3), seed=4)
        b = oracle_predictions(cloud, OracleNoise(offset_sigma=0.3, embedding_sigma=1.0), seed=4)
        assert np.array_equal(a.offset, b.offset)

    def test_flip_rate(self):
        cloud = generate_forest(ForestConfig(), seed=0)
        preds = oracle_predictions(cloud, OracleNoise(semantic_flip_prob=0.2), seed=0)
        flipped = np.mean(preds.semantic_prob != (cloud.instance > 0))
        assert flipped == pytest.approx(0.2, abs=0.02)

    def test_noise_validation(self):
        with pytest.raises(ValueError):
            OracleNoise(offset_sigma=-1)
        with pytest.raises(ValueError):
            OracleNoise(semantic_flip_prob=1.5)


class TestEndToEnd:
    @pytest.mark.parametrize("seed", range(3))
    def test_zero_noise_is_perfect(self, seed):
        cloud = generate_forest(ForestConfig(), seed=seed)
        ids = segment(cloud, oracle_predictions(cloud, OracleNoise(), seed), GroupingConfig())
        report = evaluate(cloud.instance, ids, cloud.xyz[:, 2])
        assert (report.detection_rate, report.omission_rate, report.commission_rate, report.f1_tree) == (1, 0, 0, 1)
        assert report.rmse_h == 0.0

    def test_offset_noise_degrades_monotonically(self):
        config = ForestConfig(n_trees=10, plot_size=25, points_per_tree=100, ground_points=300)
        detection = []
        for sigma in (0.0, 0.5, 2.0):
            rates = []
            for seed in range(10):
                cloud = generate_forest(config, seed=seed)
                noise = OracleNoise(offset_sigma=sigma, embedding_sigma=1.0)
                ids = segment(cloud, oracle_predictions(cloud, noise, seed))
                rates.append(evaluate(cloud.instance, ids, cloud.xyz[:, 2]).detection_rate)
            detection.append(np.mean(rates))
        assert all(later <= earlier for earlier, later in itertools.pairwise(detection)), detection

    def test_sparsest_density_no_better(self):
        full, dense, sparse = mean_detection(range(10))
        assert sparse <= dense
