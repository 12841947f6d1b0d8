import math

import numpy as np
import pytest

from sinkbisim import measures


class TestMetricValueGap:
    def test_exact_value_difference_matrix(self, rng):
        v = rng.random(6)
        dv = np.abs(v[:, None] - v[None, :])
        assert measures.metric_value_gap(dv, v) == 0.0

    def test_zero_metric_against_spread_values(self):
        v = np.array([0.0, 10.0])
        assert measures.metric_value_gap(np.zeros((2, 2)), v) == pytest.approx(10.0)

    def test_signed_gap_orientation(self, rng):
        v = rng.random(5)
        d = np.abs(v[:, None] - v[None, :]) + 0.25
        np.fill_diagonal(d, 0.0)
        signed = measures.signed_metric_value_gap(d, v)
        off = ~np.eye(5, dtype=bool)
        assert np.all(signed[off] >= 0.25 - 1e-12)


class TestNmi:
    def test_identical_labelings(self):
        labels = np.array([0, 0, 1, 2, 2, 1])
        assert measures.nmi(labels, labels) == pytest.approx(1.0)

    def test_permuted_labelings(self):
        a = np.array([0, 0, 1, 1, 2, 2])
        b = np.array([2, 2, 0, 0, 1, 1])
        assert measures.nmi(a, b) == pytest.approx(1.0)

    def test_constant_labeling_convention(self):
        a = np.zeros(6, dtype=int)
        b = np.array([0, 1, 2, 0, 1, 2])
        assert measures.nmi(a, b) == 0.0

    def test_independent_contingency(self):
        a = np.array([0, 0, 1, 1])
        b = np.array([0, 1, 0, 1])
        assert measures.nmi(a, b) == pytest.approx(0.0, abs=1e-12)

    def test_symmetry(self, rng):
        a = rng.integers(0, 3, size=30)
        b = rng.integers(0, 4, size=30)
        assert measures.nmi(a, b) == pytest.approx(measures.nmi(b, a))

    def test_rejects_length_mismatch(self):
        with pytest.raises(ValueError):
            measures.nmi(np.zeros(3, int), np.zeros(4, int))


class TestSpherePoints:
    def test_norms_exact(self, rng):
        pts = measures.sample_sphere_points(32, 8, 0.5, rng)
        assert np.abs(np.linalg.norm(pts, axis=1) - 0.5).max() < 1e-12

    def test_diameter_bound(self, rng):
        pts = measures.sample_sphere_points(16, 2, 0.5, rng)
        d = np.linalg.norm(pts[:, None] - pts[None, :], axis=-1)
        assert d.max() <= 1.0 + 1e-12
        assert np.allclose(d, d.T)
        assert np.all(np.diag(d) == 0)

    def test_high_dim_concentration(self, rng):
        pts = measures.sample_sphere_points(64, 32, 0.5, rng)
        d = np.linalg.norm(pts[:, None] - pts[None, :], axis=-1)
        off = d[~np.eye(64, dtype=bool)]
        # pairwise distances concentrate near radius * sqrt(2)
        assert abs(np.median(off) - 0.5 * math.sqrt(2)) < 0.05


class TestEntropySampling:
    def test_uniform_shortcut(self, rng):
        out = measures.sample_simplex_with_entropy(16, 4.0, 0.01, rng)
        assert np.allclose(out, 1.0 / 16)

    def test_point_mass_shortcut(self, rng):
        out = measures.sample_simplex_with_entropy(16, 0.0, 0.01, rng)
        assert sorted(out)[-1] == 1.0
        assert measures.entropy_bits(out) == 0.0

    def test_hits_target_within_tolerance(self, rng):
        out = measures.sample_simplex_with_entropy(32, 2.5, 0.01, rng)
        assert abs(measures.entropy_bits(out) - 2.5) <= 0.01

    def test_sampler_class_matches_contract(self, rng):
        sampler = measures.EntropyTargetedSampler(32, rng)
        for target in (0.5, 1.5, 3.0, 4.2):
            out = sampler.sample(target, 0.01)
            assert abs(measures.entropy_bits(out) - target) <= 0.01
            assert out.sum() == pytest.approx(1.0)

    def test_rejects_unreachable_target(self, rng):
        with pytest.raises(ValueError):
            measures.sample_simplex_with_entropy(8, 4.0, 0.01, rng)


class TestSharpnessBench:
    def test_small_bench_properties(self):
        config = measures.SharpnessConfig(
            support=16,
            ambient_dims=(2,),
            lams=(0.1, 1.0, math.inf),
            entropy_targets=(0.0, 1.0, 2.0),
            num_mu1=3,
            num_mu2=3,
            entropy_cap_bits=4.0,
            seed=1,
        )
        records = measures.sinkhorn_sharpness_bench(config)
        assert records
        for rec in records:
            assert rec.entropy_mu2_bits >= rec.entropy_mu1_bits - 0.021
            assert rec.relative_error >= -1e-9  # lam >= lam_ref
        zero_bucket = [r for r in records if r.entropy_mu1_bits == 0.0]
        assert zero_bucket
        for rec in zero_bucket:
            assert abs(rec.relative_error) <= 1e-7
