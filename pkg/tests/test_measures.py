import json

import numpy as np
import pytest

from truncflow.errors import EmptyCluster
from truncflow.manifold import OrthogonalMatrix, random_orthogonal
from truncflow.measures import (
    TrainingSet,
    check_cluster_separation,
    compute_moments,
    pushforward_points,
    truncated_counts,
)
from truncflow.model import LayerParams, SectorMask
from truncflow.scenarios import make_separated_config

RNG = np.random.default_rng(99)


def identity_layer(q, beta=None):
    return LayerParams(OrthogonalMatrix(np.eye(q)), np.zeros(q) if beta is None else np.asarray(beta, float))


class TestPushforward:
    def test_identity(self):
        pts = RNG.normal(size=(4, 3))
        np.testing.assert_array_equal(pushforward_points(identity_layer(3), pts), pts)

    def test_beta_cancels_single_point(self):
        x = RNG.normal(size=3)
        layer = LayerParams(random_orthogonal(3, RNG), -x)
        out = pushforward_points(layer, x[None, :])
        np.testing.assert_allclose(out, np.zeros((1, 3)), atol=1e-12)

    def test_isometry(self):
        layer = LayerParams(random_orthogonal(4, RNG), RNG.normal(size=4))
        pts = RNG.normal(size=(6, 4))
        z = pushforward_points(layer, pts)
        np.testing.assert_allclose(
            np.linalg.norm(z, axis=1), np.linalg.norm(pts + layer.beta, axis=1), rtol=1e-12
        )


class TestComputeMoments:
    def test_all_positive(self):
        pts = np.abs(RNG.normal(size=(5, 3))) + 0.5
        mom = compute_moments(identity_layer(3), pts)
        np.testing.assert_array_equal(mom.j0, np.ones(3))
        np.testing.assert_array_equal(mom.j0_perp, np.zeros(3))
        assert list(mom.j1_by_sector) == [SectorMask((True, True, True))]
        np.testing.assert_allclose(mom.j1_by_sector[SectorMask((True, True, True))], mom.i1, rtol=1e-12)

    def test_all_negative(self):
        pts = -np.abs(RNG.normal(size=(5, 3))) - 0.5
        mom = compute_moments(identity_layer(3), pts)
        np.testing.assert_array_equal(mom.j0_perp, np.ones(3))

    def test_truncated_fraction_counts(self):
        # 4 points, 3 of them with first coordinate <= 0
        pts = np.array([[-1.0, 1.0], [-2.0, 1.0], [0.0, 1.0], [3.0, 1.0]])
        mom = compute_moments(identity_layer(2), pts)
        assert mom.j0_perp[0] == pytest.approx(3.0 / 4.0)
        assert mom.j0_perp[1] == 0.0

    def test_invariants_random(self):
        for _ in range(200):
            q = int(RNG.integers(1, 5))
            n = int(RNG.integers(1, 9))
            layer = LayerParams(random_orthogonal(q, RNG), RNG.normal(size=q))
            pts = RNG.normal(size=(n, q)) * 2
            mom = compute_moments(layer, pts)
            assert mom.i0 == 1.0
            np.testing.assert_allclose(mom.j0 + mom.j0_perp, np.ones(q), atol=1e-15)
            assert np.all(mom.j0 >= 0) and np.all(mom.j0 <= 1)
            assert np.all(mom.j0_perp >= 0) and np.all(mom.j0_perp <= 1)
            # exact rational structure: n * j0_perp is an integer count
            np.testing.assert_allclose(
                np.round(mom.j0_perp * n), mom.j0_perp * n, atol=1e-9
            )
            # sector partition: first moments sum to the free first moment
            total = sum(mom.j1_by_sector.values())
            np.testing.assert_allclose(total, mom.i1, atol=1e-12)
            # second moments sum to the full second moment
            z = pushforward_points(layer, pts)
            np.testing.assert_allclose(
                sum(mom.j2_by_sector.values()), z.T @ z / n, atol=1e-12
            )
            assert len(mom.j1_by_sector) <= n  # only occupied sectors stored

    def test_empty_raises(self):
        with pytest.raises(EmptyCluster):
            compute_moments(identity_layer(2), np.zeros((0, 2)))


class TestTruncatedCounts:
    def test_counts(self):
        pts = np.array([[-1.0, 1.0], [0.5, -0.5], [0.0, 2.0]])
        np.testing.assert_array_equal(truncated_counts(identity_layer(2), pts), [2, 1])


class TestClusterSeparation:
    def test_separated_construction(self):
        state, data = make_separated_config(3, n_per=4, seed=11)
        ok, violations = check_cluster_separation(state, data)
        assert ok and violations == []

    def test_all_positive_placement_is_separated(self):
        from truncflow.scenarios import make_equilibrium_data, named_initial_state

        data, labels = make_equilibrium_data(3, "all-positive", seed=2)
        state = named_initial_state("all-positive", data, labels)
        ok, _ = check_cluster_separation(state, data)
        assert ok

    def test_violation_reported(self):
        state, data = make_separated_config(2, n_per=3, seed=12)
        clusters = [c.copy() for c in data.clusters]
        # drag one point of cluster 1 into layer 0's truncation region
        corner = -state.layers[0].beta
        clusters[1][0] = corner - 1.0
        bad = TrainingSet(clusters)
        ok, violations = check_cluster_separation(state, bad)
        assert not ok
        assert (0, 1, 0) in violations


class TestTrainingSetIO:
    def test_round_trip(self, tmp_path):
        data = TrainingSet([RNG.normal(size=(3, 2)), RNG.normal(size=(4, 2))])
        labels = RNG.normal(size=(2, 2))
        doc = data.to_dict(labels)
        path = tmp_path / "data.json"
        path.write_text(json.dumps(doc))
        loaded, loaded_labels = TrainingSet.load(path)
        assert loaded.q == 2 and loaded.counts == [3, 4] and loaded.total == 7
        for a, b in zip(loaded.clusters, data.clusters):
            np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(loaded_labels, labels)

    def test_schema_validation(self):
        with pytest.raises(ValueError):
            TrainingSet.from_dict({"q": 3, "clusters": [[[0.0, 1.0]], [[2.0, 3.0]]]})
        with pytest.raises(ValueError):
            TrainingSet.from_dict({"clusters": [[[0.0, 1.0]]], "labels": [[1.0]]})
