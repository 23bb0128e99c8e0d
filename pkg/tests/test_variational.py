import numpy as np
import pytest

from rcg_uda.exception import EmptyGroupError, ShapeError
from rcg_uda.prior import JointGaussianChain, RcgParams, build_joint
from rcg_uda.tensor_math import Rng
from rcg_uda.variational import (
    LOGVAR_MIN,
    DiagGaussian,
    GroupPosterior,
    clamp_mask,
    elbo_terms,
    kl_content,
    kl_content_mc,
    kl_content_with_grad,
    kl_style,
    kl_style_mc,
    poe_fuse,
    reparam_backward,
    reparam_from_noise,
    reparam_sample,
)


def gaussian(mean: list[float], variance: list[float]) -> DiagGaussian:
    return DiagGaussian.from_variance(mean, variance)


def random_setup(rng: Rng, k: int, d: int) -> tuple[GroupPosterior, RcgParams]:
    shape = (d, k - 1)
    params = RcgParams(
        mu1=rng.normal(d), delta_raw=0.5 * rng.normal(shape), sigma_raw=rng.normal(shape)
    )
    joint = build_joint(params)
    labels = np.concatenate([np.arange(k), rng.integers(k, 2 * k)])
    members = DiagGaussian(
        joint.mean.T[labels] + rng.normal((labels.size, d)),
        rng.uniform(-1.5, 0.5, (labels.size, d)),
    )
    return GroupPosterior.fuse(members, labels, k), params


class TestPoeFuse:
    def test_equal_experts_halve_variance(self) -> None:
        fused = poe_fuse([gaussian([0.0], [1.0]), gaussian([0.0], [1.0])])
        assert fused.mean[0] == 0.0
        assert fused.variance[0] == pytest.approx(0.5)

    def test_precision_weighted_mean(self) -> None:
        fused = poe_fuse([gaussian([1.0], [1.0]), gaussian([3.0], [1.0])])
        assert fused.mean[0] == pytest.approx(2.0)
        assert fused.variance[0] == pytest.approx(0.5)

    def test_single_expert_unchanged(self) -> None:
        q = gaussian([0.3, -1.2], [0.5, 2.0])
        fused = poe_fuse([q])
        np.testing.assert_allclose(fused.mean, q.mean)
        np.testing.assert_allclose(fused.variance, q.variance)

    def test_empty(self) -> None:
        with pytest.raises(EmptyGroupError):
            poe_fuse([])

    def test_dimension_mismatch(self) -> None:
        with pytest.raises(ShapeError):
            poe_fuse([gaussian([0.0], [1.0]), gaussian([0.0, 1.0], [1.0, 1.0])])

    def test_density_ratio_is_constant(self, rng: Rng) -> None:
        members = [DiagGaussian(rng.normal(3), rng.uniform(-1, 1, 3)) for _ in range(4)]
        fused = poe_fuse(members)
        x = rng.normal((10, 3))
        ratio = sum(m.log_density(x) for m in members) - fused.log_density(x)
        assert np.ptp(ratio) < 1e-8 * max(1.0, float(np.mean(np.abs(ratio))))


class TestReparameterization:
    def test_clamped_variance_returns_mean(self, rng: Rng) -> None:
        q = DiagGaussian(np.array([1.5, -2.0]), np.array([-1e6, -np.inf]))
        assert np.all(q.logvar == LOGVAR_MIN)
        np.testing.assert_allclose(reparam_sample(q, rng), q.mean, atol=1e-3)

    def test_moments(self) -> None:
        q = gaussian([0.5, -1.0], [0.25, 4.0])
        draws = reparam_from_noise(q, Rng(2).normal((100_000, 2)))
        se = np.sqrt(q.variance / draws.shape[0])
        assert np.all(np.abs(draws.mean(axis=0) - q.mean) < 4 * se)
        np.testing.assert_allclose(draws.var(axis=0), q.variance, rtol=0.02)

    def test_reproducible(self) -> None:
        q = gaussian([0.0], [1.0])
        np.testing.assert_array_equal(reparam_sample(q, Rng(3)), reparam_sample(q, Rng(3)))

    def test_backward_matches_finite_differences(self, rng: Rng) -> None:
        mean, logvar, eps, weight = rng.normal((4, 3))
        _, g_logvar = reparam_backward(DiagGaussian(mean, logvar), eps, weight)
        step = 1e-6

        def value(lv: np.ndarray) -> float:
            return float(weight @ reparam_from_noise(DiagGaussian(mean, lv), eps))

        numeric = [
            (value(logvar + step * e) - value(logvar - step * e)) / (2 * step)
            for e in np.eye(3)
        ]
        np.testing.assert_allclose(g_logvar, numeric, rtol=1e-6)

    def test_clamp_mask(self) -> None:
        np.testing.assert_array_equal(clamp_mask(np.array([-25.0, 0.0, 20.0, 21.0])), [0, 1, 1, 0])


class TestStyleKl:
    def test_standard_normal(self) -> None:
        assert kl_style(gaussian([0.0, 0.0], [1.0, 1.0])) == 0.0

    def test_shifted_mean(self) -> None:
        assert kl_style(gaussian([1.0], [1.0])) == pytest.approx(0.5)

    def test_matches_monte_carlo(self, rng: Rng) -> None:
        q = DiagGaussian(rng.normal(4), rng.uniform(-1.0, 1.0, 4))
        assert kl_style_mc(q, 200_000, rng) == pytest.approx(kl_style(q), rel=0.02)


class TestGroupPosterior:
    def test_fuses_per_class(self) -> None:
        members = DiagGaussian(np.array([[1.0], [3.0], [5.0]]), np.zeros((3, 1)))
        group = GroupPosterior.fuse(members, [0, 0, 1], 2)
        np.testing.assert_allclose(group.mean, [[2.0], [5.0]])
        np.testing.assert_allclose(group.variance, [[0.5], [1.0]])
        assert group.empty_classes == []

    def test_reports_missing_classes(self) -> None:
        members = DiagGaussian(np.zeros((2, 1)), np.zeros((2, 1)))
        group = GroupPosterior.fuse(members, [0, 0], 3)
        assert group.empty_classes == [1, 2]
        with pytest.raises(EmptyGroupError) as exc:
            group.require_complete()
        assert exc.value.classes == [1, 2]

    def test_backward_matches_finite_differences(self, rng: Rng) -> None:
        group, _ = random_setup(rng, 3, 2)
        w_mean, w_var = rng.normal((2, 3, 2))
        d_mean, d_logvar = group.backward(w_mean, w_var)
        labels = group.labels
        step = 1e-6

        def objective(mean: np.ndarray, logvar: np.ndarray) -> float:
            fused = GroupPosterior.fuse(DiagGaussian(mean, logvar), labels, 3)
            return float(np.sum(w_mean * fused.mean) + np.sum(w_var * fused.variance))

        for analytic, which in ((d_mean, 0), (d_logvar, 1)):
            numeric = np.zeros_like(analytic)
            for idx in np.ndindex(analytic.shape):
                args_hi = [group.member_mean.copy(), group.member_logvar.copy()]
                args_lo = [group.member_mean.copy(), group.member_logvar.copy()]
                args_hi[which][idx] += step
                args_lo[which][idx] -= step
                numeric[idx] = (objective(*args_hi) - objective(*args_lo)) / (2 * step)
            np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-8)


class TestContentKl:
    def test_single_class_matching_prior(self) -> None:
        params = RcgParams(mu1=[0.4], delta_raw=np.zeros((1, 0)), sigma_raw=np.zeros((1, 0)))
        group = GroupPosterior.fuse(gaussian([[0.4]], [[1.0]]), [0], 1)
        assert kl_content(group, build_joint(params)) == pytest.approx(0.0, abs=1e-14)

    def test_non_negative(self, rng: Rng) -> None:
        for _ in range(20):
            group, params = random_setup(rng, 4, 3)
            assert kl_content(group, build_joint(params)) >= 0

    def test_matches_monte_carlo(self, rng: Rng) -> None:
        for _ in range(5):
            group, params = random_setup(rng, 4, 2)
            joint = build_joint(params)
            exact = kl_content(group, joint)
            assert kl_content_mc(group, joint, 200_000, rng) == pytest.approx(exact, rel=0.02)

    def test_missing_class_is_an_error(self, rng: Rng) -> None:
        _, params = random_setup(rng, 3, 1)
        group = GroupPosterior.fuse(gaussian([[0.0]], [[1.0]]), [0], 3)
        with pytest.raises(EmptyGroupError, match="class-complete"):
            kl_content(group, build_joint(params))

    def test_gradients_match_finite_differences(self, rng: Rng) -> None:
        group, params = random_setup(rng, 3, 2)
        joint = build_joint(params)
        _, grads = kl_content_with_grad(group, joint)
        step = 1e-6

        def kl_at(mean: np.ndarray, variance: np.ndarray) -> float:
            moved = GroupPosterior(
                group.labels, group.member_mean, group.member_logvar, mean, variance, group.counts
            )
            return kl_content(moved, joint)

        for analytic, which in ((grads.mean, 0), (grads.variance, 1)):
            numeric = np.zeros_like(analytic)
            for idx in np.ndindex(analytic.shape):
                hi = [group.mean.copy(), group.variance.copy()]
                lo = [group.mean.copy(), group.variance.copy()]
                hi[which][idx] += step
                lo[which][idx] -= step
                numeric[idx] = (kl_at(*hi) - kl_at(*lo)) / (2 * step)
            np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-8)

    def test_iid_prior_reduces_to_factorized_kl(self, rng: Rng) -> None:
        group, _ = random_setup(rng, 3, 2)
        fused = DiagGaussian.from_variance(group.mean, group.variance)
        assert kl_content(group, JointGaussianChain.iid(3, 2)) == pytest.approx(kl_style(fused), rel=1e-12)


def test_elbo_terms() -> None:
    assert elbo_terms(0.0, 0.0, 0.0, 0.0, 0.0) == 0.0
    assert elbo_terms(-1.0, -1.0, 0.5, 0.5, 1.0) == -4.0
