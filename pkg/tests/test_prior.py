from collections.abc import Callable

import numpy as np
import pytest
from scipy.stats import norm

from rcg_uda.config import PriorConfig
from rcg_uda.exception import ConfigError, DomainError, ShapeError
from rcg_uda.prior import (
    LOG_2PI,
    JointGaussianChain,
    RcgParams,
    build_joint,
    chain_log_density,
    expected_violation_rate,
    is_poset_aligned,
    joint_backward,
    log_density,
    moment_check,
    poset_violation_rate,
    sample_chain,
    sample_chains,
    triplet_check,
)
from rcg_uda.tensor_math import Rng, cholesky

ParamsFactory = Callable[..., RcgParams]


def random_params(rng: Rng, num_classes: int, content_dim: int) -> RcgParams:
    shape = (content_dim, num_classes - 1)
    return RcgParams(
        mu1=rng.normal(content_dim),
        delta_raw=0.5 * rng.normal(shape),
        sigma_raw=rng.normal(shape),
    )


class TestBuildJoint:
    def test_three_class_chain(self, chain_params: ParamsFactory) -> None:
        joint = build_joint(chain_params())
        np.testing.assert_allclose(joint.mean, [[0.0, 3.0, 6.0]], atol=1e-14)
        np.testing.assert_allclose(
            joint.cov[0], [[1, 1, 1], [1, 2, 2], [1, 2, 3]], atol=1e-14
        )

    def test_single_class(self) -> None:
        params = RcgParams(mu1=[0.7], delta_raw=np.zeros((1, 0)), sigma_raw=np.zeros((1, 0)))
        joint = build_joint(params)
        assert params.num_classes == 1
        np.testing.assert_array_equal(joint.mean, [[0.7]])
        np.testing.assert_array_equal(joint.cov, [[[1.0]]])

    def test_structured_factor_matches_generic_cholesky(self, rng: Rng) -> None:
        for _ in range(100):
            k = 2 + int(rng.integers(5))
            d = 1 + int(rng.integers(4))
            joint = build_joint(random_params(rng, k, d))
            for dim in range(d):
                np.testing.assert_allclose(
                    joint.chol[dim], cholesky(joint.cov[dim]), rtol=0, atol=1e-10
                )

    def test_sigma_rule_holds_for_any_raw_value(self, rng: Rng) -> None:
        params = RcgParams(
            mu1=np.zeros(3),
            delta_raw=5 * rng.normal((3, 4)),
            sigma_raw=50 * rng.normal((3, 4)),
            sigma_rule=2.5,
        )
        assert np.all(params.delta >= 2.5 * params.sigma[:, 1:] * (1 - 1e-12))
        assert np.all(params.sigma[:, 0] == 1.0)

    def test_iid_chain_is_standard_normal(self) -> None:
        joint = JointGaussianChain.iid(4, 2)
        np.testing.assert_array_equal(joint.mean, np.zeros((2, 4)))
        np.testing.assert_array_equal(joint.chol[1], np.eye(4))


class TestJointBackward:
    def test_matches_finite_differences(self, rng: Rng) -> None:
        params = random_params(rng, 4, 2)
        g_mean = rng.normal((2, 4))
        g_cov = rng.normal((2, 4, 4))

        def objective(p: RcgParams) -> float:
            joint = build_joint(p)
            return float(np.sum(g_mean * joint.mean) + np.sum(g_cov * joint.cov))

        grads = joint_backward(params, g_mean, g_cov)
        step = 1e-6
        for name in ("mu1", "delta_raw", "sigma_raw"):
            base = np.array(getattr(params, name))
            numeric = np.zeros_like(base)
            for idx in np.ndindex(base.shape):
                hi, lo = base.copy(), base.copy()
                hi[idx] += step
                lo[idx] -= step
                numeric[idx] = (
                    objective(_replace(params, name, hi)) - objective(_replace(params, name, lo))
                ) / (2 * step)
            np.testing.assert_allclose(getattr(grads, name), numeric, rtol=1e-6, atol=1e-7)


def _replace(params: RcgParams, name: str, value: np.ndarray) -> RcgParams:
    fields = {
        "mu1": params.mu1,
        "delta_raw": params.delta_raw,
        "sigma_raw": params.sigma_raw,
        "sigma_rule": params.sigma_rule,
    }
    fields[name] = value
    return RcgParams(**fields)


class TestSampling:
    def test_mean_and_covariance(self, chain_params: ParamsFactory) -> None:
        params = chain_params()
        draws = sample_chains(params, Rng(5), 100_000)[:, :, 0]
        se = draws.std(axis=0, ddof=1) / np.sqrt(draws.shape[0])
        assert np.all(np.abs(draws.mean(axis=0) - [0.0, 3.0, 6.0]) < 4 * se)
        prods = (draws[:, 0] - draws[:, 0].mean()) * (draws[:, 2] - draws[:, 2].mean())
        cov_se = prods.std(ddof=1) / np.sqrt(prods.size)
        assert abs(prods.mean() - 1.0) < 4 * cov_se

    def test_moment_check_within_standard_errors(self, rng: Rng) -> None:
        report = moment_check(random_params(rng, 3, 2), 50_000, Rng(2))
        assert report.max_mean_z < 5
        assert report.max_cov_z < 5

    def test_degenerate_conditionals_step_by_delta(self) -> None:
        params = RcgParams(
            mu1=[1.0, -1.0],
            delta_raw=[[0.0, np.log(2.0)], [np.log(0.5), 0.0]],
            sigma_raw=np.full((2, 2), -np.inf),
        )
        c = sample_chain(params, Rng(1)).c
        np.testing.assert_allclose(np.diff(c, axis=0), params.delta.T, rtol=1e-12)

    def test_reproducible(self, chain_params: ParamsFactory) -> None:
        a = sample_chains(chain_params(4, 2), Rng(9), 10)
        b = sample_chains(chain_params(4, 2), Rng(9), 10)
        np.testing.assert_array_equal(a, b)


class TestLogDensity:
    def test_at_the_mean(self, chain_params: ParamsFactory) -> None:
        params = chain_params(num_classes=3, content_dim=2)
        joint = build_joint(params)
        expected = -sum(
            0.5 * (3 * LOG_2PI + np.linalg.slogdet(joint.cov[d])[1]) for d in range(2)
        )
        assert log_density(joint, joint.mean.T) == pytest.approx(expected, rel=1e-12)

    def test_single_class_at_zero(self) -> None:
        params = RcgParams(mu1=[0.0], delta_raw=np.zeros((1, 0)), sigma_raw=np.zeros((1, 0)))
        assert log_density(build_joint(params), [[0.0]]) == pytest.approx(-0.9189385, abs=1e-7)

    def test_agrees_with_conditional_factorization(self, rng: Rng) -> None:
        params = random_params(rng, 5, 3)
        joint = build_joint(params)
        for _ in range(5):
            c = sample_chain(params, rng).c
            assert log_density(joint, c) == pytest.approx(chain_log_density(params, c), rel=1e-10)

    def test_shape_mismatch(self, chain_params: ParamsFactory) -> None:
        with pytest.raises(ShapeError):
            log_density(build_joint(chain_params()), np.zeros((2, 1)))


class TestViolationRate:
    def test_three_sigma(self, chain_params: ParamsFactory) -> None:
        rates = poset_violation_rate(chain_params(4, 2, ratio=3.0), 100_000, Rng(1))
        assert rates.shape == (3, 2)
        assert np.all(np.abs(rates - norm.cdf(-3)) < 0.0012)
        assert np.all(rates <= 0.004)

    def test_two_sigma(self, chain_params: ParamsFactory) -> None:
        rates = poset_violation_rate(chain_params(4, 2, ratio=2.0), 100_000, Rng(2))
        assert np.all(np.abs(rates - norm.cdf(-2)) < 0.003)
        assert np.all((rates >= 0.015) & (rates <= 0.031))

    def test_fractional_rule(self, chain_params: ParamsFactory) -> None:
        params = chain_params(3, 1, ratio=2.4)
        rates = poset_violation_rate(params, 100_000, Rng(3))
        np.testing.assert_allclose(expected_violation_rate(params), norm.cdf(-2.4))
        assert np.all(np.abs(rates - norm.cdf(-2.4)) < 0.003)

    def test_vanishing_deviation_never_violates(self) -> None:
        params = RcgParams(
            mu1=np.zeros(2),
            delta_raw=np.zeros((2, 3)),
            sigma_raw=np.full((2, 3), -np.inf),
        )
        assert np.all(poset_violation_rate(params, 10_000, Rng(4)) == 0)
        assert np.all(expected_violation_rate(params) == 0)

    def test_threads_are_deterministic(self, chain_params: ParamsFactory) -> None:
        params = chain_params(3, 2, ratio=2.0)
        a = poset_violation_rate(params, 20_000, Rng(8), threads=3)
        b = poset_violation_rate(params, 20_000, Rng(8), threads=3)
        np.testing.assert_array_equal(a, b)

    def test_needs_enough_draws(self, chain_params: ParamsFactory) -> None:
        with pytest.raises(DomainError):
            poset_violation_rate(chain_params(), 100, Rng(1))


class TestOrdering:
    def test_increasing_rows_pass_triplet_check(self, rng: Rng) -> None:
        for _ in range(1000):
            c = np.cumsum(rng.uniform(0.01, 2.0, (3, 2)), axis=0)
            assert is_poset_aligned(c)
            assert triplet_check(c)

    def test_equal_anchors_fail(self) -> None:
        assert not triplet_check(np.ones((3, 2)))

    def test_unordered_anchors_fail(self) -> None:
        assert not triplet_check([[0.0], [5.0], [1.0]])
        assert not is_poset_aligned([[0.0], [5.0], [1.0]])

    def test_triplet_check_needs_three_rows(self) -> None:
        with pytest.raises(DomainError):
            triplet_check(np.zeros((2, 1)))


class TestConfigRoundTrip:
    def test_defaults_fill_missing_arrays(self) -> None:
        params = RcgParams.from_config(PriorConfig(), 4, 2, 3.0)
        np.testing.assert_allclose(params.delta, 1.0)
        np.testing.assert_allclose(params.sigma[:, 1:], 1.0 / 6.0)
        np.testing.assert_allclose(build_joint(params).mean.mean(axis=1), 0.0, atol=1e-12)

    def test_to_config_restores_parameters(self, rng: Rng) -> None:
        params = random_params(rng, 3, 2)
        restored = RcgParams.from_config(params.to_config(), 3, 2, params.sigma_rule)
        np.testing.assert_array_equal(restored.delta_raw, params.delta_raw)
        np.testing.assert_array_equal(restored.mu1, params.mu1)

    def test_wrong_shape_names_key(self) -> None:
        with pytest.raises(ConfigError) as exc:
            RcgParams.from_config(PriorConfig(mu1=[0.0]), 3, 2, 3.0)
        assert exc.value.key == "prior.mu1"

    def test_rejects_nan(self) -> None:
        with pytest.raises(DomainError):
            RcgParams(mu1=[0.0], delta_raw=[[np.nan]], sigma_raw=[[0.0]])

    def test_snapshot_is_read_only(self, chain_params: ParamsFactory) -> None:
        params = chain_params()
        with pytest.raises(ValueError, match="read-only"):
            params.mu1[0] = 1.0
