import itertools
import math

import numpy as np
import pytest
from scipy import stats
from hypothesis import given, settings
from hypothesis import strategies as st

from softer.model import (
    Dataset,
    Layout,
    NumericError,
    ParameterState,
    SofterConfig,
    compose_B,
    default_config,
    linear_predictor,
    log_joint,
    log_joint_blocks,
    sample_prior_entries,
    sample_prior_state,
)
from softer.tensor import ShapeError, parafac_compose

from conftest import make_problem


def _zero_state(config, p=0):
    L = Layout(config)
    s = sample_prior_state(config, np.random.default_rng(0), p=p, layout=L)
    s.mu = 0.0
    s.delta = np.zeros(p)
    s.beta = np.zeros_like(s.beta)
    return s, L


class TestDataset:
    def test_valid(self, rng):
        ds = Dataset(rng.standard_normal(4), rng.standard_normal((4, 2, 3)))
        assert (ds.n, ds.dims, ds.p) == (4, (2, 3), 0)

    def test_differing_dims(self):
        with pytest.raises(ShapeError):
            Dataset(np.zeros(2), [np.zeros((2, 3)), np.zeros((3, 2))])

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            Dataset(np.zeros(3), np.zeros((2, 2, 2)))
        with pytest.raises(ShapeError):
            Dataset(np.zeros(2), np.zeros((2, 2, 2)), np.zeros((3, 1)))

    def test_non_finite(self):
        X = np.zeros((2, 2, 2))
        X[1, 0, 1] = np.nan
        with pytest.raises(ValueError):
            Dataset(np.zeros(2), X)


class TestConfig:
    def test_symmetric_requires_square_matrix(self):
        with pytest.raises(ShapeError):
            SofterConfig(dims=(3, 4), symmetry="symmetric")
        with pytest.raises(ShapeError):
            SofterConfig(dims=(3, 3, 3), symmetry="symmetric")

    def test_semisymmetric_requires_three_modes(self):
        with pytest.raises(ShapeError):
            SofterConfig(dims=(3, 3), symmetry="semi-symmetric")
        SofterConfig(dims=(3, 3, 2), symmetry="semi-symmetric")

    def test_family(self):
        with pytest.raises(ValueError):
            SofterConfig(dims=(2, 2), family="poisson")

    def test_dict_round_trip(self):
        config = default_config((3, 4), D=2, hard_mode=True)
        again = SofterConfig.from_dict(config.to_dict())
        assert again == config
        assert again.model_hash() == config.model_hash()


class TestLinearPredictor:
    def test_zero_state(self, rng):
        config = default_config((2, 3), D=2)
        s, L = _zero_state(config, p=2)
        s.mu = 1.25
        ds = Dataset(np.zeros(3), rng.standard_normal((3, 2, 3)), rng.standard_normal((3, 2)))
        assert linear_predictor(s, ds, 1, L) == 1.25

    def test_all_ones(self, rng):
        config = default_config((2, 3, 4), D=1)
        s, L = _zero_state(config, p=2)
        s.beta[:] = 1.0
        s.mu, s.delta = 0.5, np.array([1.0, -2.0])
        C = np.array([[3.0, 1.0]])
        ds = Dataset(np.zeros(1), np.ones((1, 2, 3, 4)), C)
        assert linear_predictor(s, ds, 0, L) == 0.5 + 1.0 + 24

    def test_loop_oracle(self, rng):
        config, ds = make_problem(rng, dims=(2, 3, 2), n=4)
        L = Layout(config)
        s = sample_prior_state(config, rng, p=ds.p, layout=L)
        for i in range(ds.n):
            total = s.mu + sum(ds.covariates[i, c] * s.delta[c] for c in range(ds.p))
            for j in itertools.product(range(2), range(3), range(2)):
                coef = sum(s.beta[d, 0][j] * s.beta[d, 1][j] * s.beta[d, 2][j] for d in range(L.D))
                total += ds.predictors[i][j] * coef
            assert linear_predictor(s, ds, i, L) == pytest.approx(total, rel=1e-12, abs=1e-12)

    def test_shape_mismatch(self, rng):
        config = default_config((2, 3))
        s, L = _zero_state(config)
        with pytest.raises(ShapeError):
            linear_predictor(s, Dataset(np.zeros(1), np.zeros((1, 3, 2))), 0, L)


class TestLogJoint:
    def test_doubling_tau2(self, rng):
        config = default_config((2, 2), D=1)
        s, L = _zero_state(config)
        ds = Dataset(np.zeros(5), rng.standard_normal((5, 2, 2)))
        s2 = s.copy()
        s2.tau2 = 2 * s.tau2
        h = config.hyper
        prior_delta = -(h.a_tau2 + 1) * math.log(2) - h.b_tau2 / s2.tau2 + h.b_tau2 / s.tau2
        diff = log_joint(s2, ds, config, L) - log_joint(s, ds, config, L)
        assert diff == pytest.approx(-2.5 * math.log(2) + prior_delta, abs=1e-10)

    def test_single_gamma_entry(self, rng):
        config, ds = make_problem(rng, dims=(3, 2), D=2)
        L = Layout(config)
        s1 = sample_prior_state(config, rng, p=ds.p, layout=L)
        s2 = s1.copy()
        s2.gamma[0][1, 2] += 0.7
        # Gaussian prior on γ and Gaussian β children in mode 0, slice 2
        def part(s):
            g = s.gamma[0][1, 2]
            var_g = s.tau_gamma * s.zeta[1] * s.w[0][1, 2]
            dev = s.beta[1, 0][2] - g
            return -0.5 * g**2 / var_g - 0.5 * float(dev @ dev) / (s.sigma2[0] * s.zeta[1])
        expected = part(s2) - part(s1)
        assert log_joint(s2, ds, config, L) - log_joint(s1, ds, config, L) == pytest.approx(expected, abs=1e-9)

    def test_hard_mode_has_no_beta_block(self, rng):
        config, ds = make_problem(rng, hard_mode=True)
        L = Layout(config)
        s = sample_prior_state(config, rng, p=ds.p, layout=L)
        blocks = log_joint_blocks(s, ds, config, L)
        assert "beta" not in blocks and "sigma2" not in blocks

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_names_block(self, rng):
        config, ds = make_problem(rng)
        L = Layout(config)
        s = sample_prior_state(config, rng, p=ds.p, layout=L)
        s.sigma2[1] = 0.0
        with pytest.raises(NumericError) as err:
            log_joint(s, ds, config, L)
        assert err.value.block == "beta"


class TestPriorState:
    def test_invariants(self, rng):
        config = default_config((3, 4, 2), D=3)
        L = Layout(config)
        for _ in range(20):
            s = sample_prior_state(config, rng, p=2, layout=L)
            assert s.zeta.sum() == pytest.approx(1.0, abs=1e-12)
            assert s.tau2 > 0 and s.tau_gamma > 0 and np.all(s.sigma2 > 0) and np.all(s.lam > 0)
            assert all(np.all(w > 0) for w in s.w)
            assert s.beta.shape == (3, 3, 3, 4, 2)
            assert s.xi is None

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31), st.sampled_from([(3,), (2, 3), (2, 2, 3)]), st.integers(1, 3))
    def test_hard_mode_equals_parafac(self, seed, dims, D):
        config = default_config(dims, D=D, hard_mode=True)
        L = Layout(config)
        s = sample_prior_state(config, np.random.default_rng(seed), layout=L)
        factors = [[s.gamma[k][d] for k in range(L.K)] for d in range(D)]
        np.testing.assert_array_equal(compose_B(s, L), parafac_compose(factors))

    def test_array_round_trip(self, rng):
        config = default_config((4, 4), symmetry="symmetric")
        L = Layout(config)
        s = sample_prior_state(config, rng, p=1, layout=L)
        again = ParameterState.from_arrays(s.to_arrays())
        for key, value in s.to_arrays().items():
            np.testing.assert_array_equal(again.to_arrays()[key], value)


class TestPriorEntries:
    @pytest.mark.parametrize("hard", [False, True])
    def test_matches_full_state_draws(self, hard):
        config = default_config((2, 3), D=3, hard_mode=hard)
        L = Layout(config)
        entries = [(0, 1), (1, 1), (1, 2)]
        fast = sample_prior_entries(config, entries, 8000, np.random.default_rng(1))
        r = np.random.default_rng(2)
        slow = np.array([compose_B(sample_prior_state(config, r, layout=L), L)[tuple(np.transpose(entries))]
                         for _ in range(8000)])
        assert fast.shape == (8000, 3)
        for j in range(3):
            assert stats.ks_2samp(fast[:, j], slow[:, j]).pvalue > 1e-3
        # shared row index couples the magnitudes of entries 0 and 1
        assert stats.ks_2samp(np.abs(fast[:, 0] * fast[:, 1]), np.abs(slow[:, 0] * slow[:, 1])).pvalue > 1e-3

    def test_deterministic(self):
        config = default_config((3, 3))
        a = sample_prior_entries(config, [(0, 0)], 100, np.random.default_rng(5))
        np.testing.assert_array_equal(a, sample_prior_entries(config, [(0, 0)], 100, np.random.default_rng(5)))

    def test_errors(self, rng):
        with pytest.raises(ShapeError):
            sample_prior_entries(default_config((3, 3)), [(0, 3)], 10, rng)
        with pytest.raises(ShapeError):
            sample_prior_entries(default_config((3, 3)), [(0, 0, 0)], 10, rng)
        with pytest.raises(ValueError):
            sample_prior_entries(default_config((3, 3), symmetry="symmetric"), [(1, 0)], 10, rng)
