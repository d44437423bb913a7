import numpy as np
import pytest

from aspinn import problems
from aspinn.model import sigma
from aspinn.sampling import BatchPlan, SampleSet, batches, generate_samples, init_nodes


def box():
    return problems.poisson2d().domain


def slit():
    return problems.square_slit().domain


def strip():
    return problems.advection1d().domain


class TestGenerateSamples:
    @pytest.mark.parametrize("domain", [box(), slit(), strip()], ids=["box", "slit", "strip"])
    def test_geometry_and_disjoint(self, domain):
        s = generate_samples(domain, 300, 80, seed=3)
        assert domain.is_interior(s.interior_train).all()
        assert domain.is_interior(s.interior_test).all()
        assert domain.is_boundary(s.boundary_train).all()
        assert domain.is_boundary(s.boundary_test).all()
        train = {tuple(p) for p in s.interior_train}
        assert not any(tuple(p) in train for p in s.interior_test)
        btrain = {tuple(p) for p in s.boundary_train}
        assert not any(tuple(p) in btrain for p in s.boundary_test)

    def test_default_test_counts(self):
        s = generate_samples(box(), 201, 33, seed=0)
        assert s.interior_train.shape == (201, 2)
        assert s.boundary_train.shape == (33, 2)
        assert len(s.interior_test) == 51
        assert len(s.boundary_test) == 9

    def test_deterministic(self):
        a = generate_samples(slit(), 100, 40, seed=11)
        b = generate_samples(slit(), 100, 40, seed=11)
        for field in ("interior_train", "boundary_train", "interior_test", "boundary_test"):
            assert np.array_equal(getattr(a, field), getattr(b, field))
        c = generate_samples(slit(), 100, 40, seed=12)
        assert not np.array_equal(a.interior_train, c.interior_train)

    def test_slit_clearance(self):
        s = generate_samples(slit(), 2000, 10, seed=0)
        assert slit().slit_distance(s.interior_train).min() >= 1e-3

    def test_boundary_proportional_to_length(self):
        # initial line has length 2, each side 0.8
        s = generate_samples(strip(), 1, 10_000, seed=5)
        b = s.boundary_train
        initial = np.isclose(b[:, 1], 0.0)
        left = np.isclose(b[:, 0], -1.0) & ~initial
        right = np.isclose(b[:, 0], 1.0) & ~initial
        frac = np.array([initial.mean(), left.mean(), right.mean()])
        assert np.allclose(frac, np.array([2.0, 0.8, 0.8]) / 3.6, atol=0.02)

    def test_slit_boundary_is_sampled(self):
        s = generate_samples(slit(), 10, 2000, seed=1)
        on = slit().on_slit(s.boundary_train)
        assert 0.1 < on.mean() < 0.25  # slit length 1 of total 9

    def test_rejects_zero_counts(self):
        with pytest.raises(ValueError):
            generate_samples(box(), 0, 10)


class TestInitNodes:
    def test_four_by_two(self):
        nodes = init_nodes(box(), (4, 2), seed=0)
        centers = np.array([n.center for n in nodes])
        assert sorted(set(np.round(centers[:, 0], 12))) == [-0.75, -0.25, 0.25, 0.75]
        assert sorted(set(np.round(centers[:, 1], 12))) == [-0.5, 0.5]
        assert len(nodes) == 8

    def test_single_node_at_origin(self):
        (node,) = init_nodes(box(), (1, 1))
        assert np.array_equal(node.center, [0.0, 0.0])

    def test_isotropic_and_small_weights(self):
        nodes = init_nodes(box(), (3, 3), seed=4)
        for n in nodes:
            S = sigma(n, 0.5)
            assert S[0, 1] == 0.0 and S[0, 0] == pytest.approx(S[1, 1], rel=1e-15)
            assert abs(n.weight) <= 0.1

    def test_slit_nodes_displaced(self):
        nodes = init_nodes(slit(), (7, 7), seed=0)
        centers = np.array([n.center for n in nodes])
        assert len(nodes) == 49
        assert not slit().on_slit(centers).any()
        shifted = np.isclose(centers[:, 1], 1e-2) & (centers[:, 0] > 0)
        assert shifted.sum() == 3

    def test_rejects_bad_counts(self):
        with pytest.raises(ValueError):
            init_nodes(box(), (0, 2))
        with pytest.raises(ValueError):
            init_nodes(box(), (2,))


class TestBatches:
    def test_partition_sizes(self):
        slices = batches(10, BatchPlan(4, seed=0), epoch=0)
        assert [len(s) for s in slices] == [4, 4, 2]

    def test_full_fraction_single_slice(self):
        slices = batches(17, BatchPlan(1.0), epoch=3)
        assert len(slices) == 1
        assert sorted(slices[0]) == list(range(17))

    @pytest.mark.parametrize("size", [1, 3, 7, 0.3])
    def test_coverage(self, size):
        slices = batches(23, BatchPlan(size, seed=2), epoch=1)
        assert np.array_equal(np.sort(np.concatenate(slices)), np.arange(23))

    def test_epochs_differ_but_rerun_identical(self):
        plan = BatchPlan(5, seed=9)
        e0 = np.concatenate(batches(40, plan, 0))
        e1 = np.concatenate(batches(40, plan, 1))
        assert not np.array_equal(e0, e1)
        assert np.array_equal(e0, np.concatenate(batches(40, plan, 0)))

    def test_accepts_sample_set(self):
        s = generate_samples(box(), 12, 4, seed=0)
        assert isinstance(s, SampleSet)
        assert sum(len(b) for b in batches(s, BatchPlan(5), 0)) == 12

    def test_batch_larger_than_set(self):
        with pytest.raises(ValueError):
            batches(4, BatchPlan(5), 0)
