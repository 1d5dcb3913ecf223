import numpy as np
import numpy.testing as npt
import pytest

from ssue import (
    ContractError,
    FusedEstimate,
    HypothesisBank,
    JointBelief,
    assemble_joint_covariance,
    belief_from_joint,
    fuse,
    identify_location,
)


def make_belief(delta=0.0, x=(0.0,), p_delta=1.0, p_dx=None, p_x=None):
    n = len(x)
    return JointBelief(
        delta_mean=delta,
        x_mean=np.asarray(x, dtype=float),
        p_delta=p_delta,
        p_delta_x=np.zeros(n) if p_dx is None else np.asarray(p_dx, dtype=float),
        p_x=np.eye(n) if p_x is None else np.asarray(p_x, dtype=float),
    )


def mixture_moments(means, covs, weights):
    """Exact first two moments of a Gaussian mixture (independent oracle)."""
    means = np.asarray(means, dtype=float)
    weights = np.asarray(weights, dtype=float)
    mean = sum(w * m for w, m in zip(weights, means))
    cov = sum(w * (np.asarray(c) + np.outer(m - mean, m - mean))
              for w, m, c in zip(weights, means, covs))
    return mean, cov


class TestAssemble:
    def test_identity_blocks(self):
        b = make_belief()
        npt.assert_array_equal(assemble_joint_covariance(b), np.eye(2))

    def test_block_layout(self):
        b = make_belief(p_delta=2.0, p_dx=[0.5], p_x=[[3.0]])
        npt.assert_array_equal(assemble_joint_covariance(b), [[2.0, 0.5], [0.5, 3.0]])

    def test_round_trip_exact(self, rng):
        A = rng.normal(size=(4, 4))
        P = A @ A.T + 4 * np.eye(4)
        xi = rng.normal(size=4)
        b = belief_from_joint(xi, P)
        npt.assert_array_equal(assemble_joint_covariance(b), 0.5 * (P + P.T))
        npt.assert_array_equal(b.xi_mean, xi)

    def test_transpose_exactly_symmetric(self, rng):
        b = make_belief(x=(1.0, -2.0, 0.5), p_x=np.diag([1.0, 2.0, 3.0]),
                        p_dx=rng.normal(size=3))
        P = assemble_joint_covariance(b)
        npt.assert_array_equal(P, P.T)

    def test_nonpositive_p_delta_rejected(self):
        with pytest.raises(ContractError):
            make_belief(p_delta=0.0)


class TestFuse:
    def test_single_component_identity(self):
        b = make_belief(delta=-0.1, x=(2.0, 1.0), p_x=np.diag([2.0, 3.0]))
        bank = HypothesisBank(beliefs=(b,), weights=np.array([1.0]))
        fused = fuse(bank)
        npt.assert_array_equal(fused.xi_mean, b.xi_mean)
        npt.assert_array_equal(fused.xi_cov, assemble_joint_covariance(b))

    def test_identical_components_zero_spread(self):
        b = make_belief(delta=0.2, x=(1.0,), p_x=[[4.0]])
        bank = HypothesisBank(beliefs=(b, b), weights=np.array([0.5, 0.5]))
        fused = fuse(bank)
        npt.assert_allclose(fused.xi_mean, b.xi_mean, rtol=0, atol=1e-15)
        npt.assert_allclose(fused.xi_cov, assemble_joint_covariance(b), rtol=0, atol=1e-15)

    def test_scalar_two_component_hand_case(self):
        # means 0 and 2 (in the delta slot), unit variances, equal weights:
        # mixture mean 1, variance 1 + 1 = 2
        b1 = make_belief(delta=0.0, x=(), p_delta=1.0, p_dx=[], p_x=np.zeros((0, 0)))
        b2 = make_belief(delta=2.0, x=(), p_delta=1.0, p_dx=[], p_x=np.zeros((0, 0)))
        bank = HypothesisBank(beliefs=(b1, b2), weights=np.array([0.5, 0.5]))
        fused = fuse(bank)
        npt.assert_allclose(fused.xi_mean, [1.0], atol=1e-15)
        npt.assert_allclose(fused.xi_cov, [[2.0]], atol=1e-15)

    def test_one_hot_returns_selected_hypothesis(self, rng):
        beliefs = tuple(
            make_belief(delta=rng.normal(), x=rng.normal(size=2),
                        p_x=np.diag(rng.uniform(1, 2, 2)))
            for _ in range(3)
        )
        bank = HypothesisBank(beliefs=beliefs, weights=np.array([0.0, 1.0, 0.0]))
        fused = fuse(bank)
        npt.assert_array_equal(fused.xi_mean, beliefs[1].xi_mean)
        npt.assert_array_equal(fused.xi_cov, assemble_joint_covariance(beliefs[1]))

    def test_matches_exact_mixture_moment_oracle(self, rng):
        beliefs = []
        for _ in range(3):
            W = rng.normal(size=(3, 3))
            beliefs.append(belief_from_joint(rng.normal(size=3), W @ W.T + np.eye(3)))
        w = rng.uniform(0.5, 2.0, 3)
        w = w / w.sum()
        bank = HypothesisBank(beliefs=tuple(beliefs), weights=w)
        fused = fuse(bank)
        mean, cov = mixture_moments([b.xi_mean for b in beliefs],
                                    [assemble_joint_covariance(b) for b in beliefs], w)
        npt.assert_allclose(fused.xi_mean, mean, rtol=0, atol=1e-12)
        npt.assert_allclose(fused.xi_cov, cov, rtol=0, atol=1e-12)

    def test_matches_monte_carlo_mixture_moments(self):
        rng = np.random.default_rng(7)
        means = [np.array([0.0, 1.0, -1.0]), np.array([2.0, -1.0, 0.5])]
        covs = []
        for scale in (1.0, 2.0):
            W = rng.normal(size=(3, 3))
            covs.append(scale * (W @ W.T + np.eye(3)))
        w = np.array([0.3, 0.7])
        bank = HypothesisBank(
            beliefs=tuple(belief_from_joint(m, c) for m, c in zip(means, covs)),
            weights=w,
        )
        fused = fuse(bank)

        n_samples = 1_000_000
        counts = rng.multinomial(n_samples, w)
        samples = np.vstack([
            rng.standard_normal((cnt, 3)) @ np.linalg.cholesky(c).T + m
            for cnt, m, c in zip(counts, means, covs)
        ])
        sample_mean = samples.mean(axis=0)
        se_mean = samples.std(axis=0, ddof=1) / np.sqrt(n_samples)
        assert np.all(np.abs(sample_mean - fused.xi_mean) <= 3 * se_mean)

        centered = samples - fused.xi_mean
        sample_cov = centered.T @ centered / n_samples
        second_moment = np.einsum("si,sj->ij", centered ** 2, centered ** 2) / n_samples
        se_cov = np.sqrt(second_moment - sample_cov ** 2) / np.sqrt(n_samples)
        assert np.all(np.abs(sample_cov - fused.xi_cov) <= 3 * se_cov)

    def test_weight_sum_violation_is_contract_error(self):
        b = make_belief()
        with pytest.raises(ContractError):
            HypothesisBank(beliefs=(b, b), weights=np.array([0.6, 0.6]))


class TestIdentifyLocation:
    def test_unique_max(self):
        bank = HypothesisBank(beliefs=(make_belief(),) * 3,
                              weights=np.array([0.2, 0.7, 0.1]))
        assert identify_location(bank) == 1

    def test_tie_breaks_to_lowest_index(self):
        bank = HypothesisBank(beliefs=(make_belief(),) * 2, weights=np.array([0.5, 0.5]))
        assert identify_location(bank) == 0
        uniform = HypothesisBank(beliefs=(make_belief(),) * 3, weights=np.full(3, 1 / 3))
        assert identify_location(uniform) == 0

    def test_invariant_under_positive_scaling(self, rng):
        for _ in range(20):
            w = rng.uniform(0.01, 1.0, 4)
            w = w / w.sum()
            bank = HypothesisBank(beliefs=(make_belief(),) * 4, weights=w)
            scaled = w * rng.uniform(0.1, 10.0)
            scaled_bank = HypothesisBank(beliefs=(make_belief(),) * 4,
                                         weights=scaled / scaled.sum())
            assert identify_location(bank) == identify_location(scaled_bank)


def test_fused_estimate_symmetrizes():
    f = FusedEstimate(xi_mean=np.zeros(2), xi_cov=np.array([[1.0, 1e-14], [0.0, 1.0]]))
    npt.assert_array_equal(f.xi_cov, f.xi_cov.T)
