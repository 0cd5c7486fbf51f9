import io
import json
from itertools import combinations

import numpy as np
import pytest
from scipy.stats import chisquare

from sdidlab.dgp import (
    DgpSpec,
    NonstationaryError,
    calibrate_dgp,
    decompose_additive,
    fit_ar2_covariance,
    fit_assignment,
    fit_low_rank,
    load_state_laws,
    simulate_panel,
)
from sdidlab.panel import validate_block
from sdidlab.surrogate import additive_spec, wage_panel, wage_spec


class TestFitLowRank:
    def test_full_rank_reproduces_input(self, rng):
        y = rng.normal(size=(5, 7))
        assert np.allclose(fit_low_rank(y, 5), y, atol=1e-10)

    def test_exact_rank_two_recovery(self, rng):
        g = rng.normal(size=(6, 2))
        u = rng.normal(size=(2, 8))
        y = g @ u
        assert np.max(np.abs(fit_low_rank(y, 2) - y)) < 1e-10

    def test_rank_one_matches_power_iteration(self, rng):
        y = rng.normal(size=(3, 3))
        # independent dominant-singular-triple computation
        v = np.ones(3) / np.sqrt(3)
        for _ in range(500):
            v = y.T @ (y @ v)
            v /= np.linalg.norm(v)
        sigma = np.linalg.norm(y @ v)
        u = y @ v / sigma
        oracle = sigma * np.outer(u, v)
        assert np.max(np.abs(fit_low_rank(y, 1) - oracle)) < 1e-8

    def test_rank_bounds(self, rng):
        with pytest.raises(ValueError):
            fit_low_rank(rng.normal(size=(3, 4)), 4)


class TestDecomposeAdditive:
    def test_additive_input_gives_zero_interactive(self, rng):
        a = rng.normal(size=6)
        b = rng.normal(size=5)
        f, m = decompose_additive(a[:, None] + b[None, :])
        assert np.max(np.abs(m)) < 1e-12

    def test_centered_outer_product(self, rng):
        g = rng.normal(size=4)
        g -= g.mean()
        u = rng.normal(size=4)
        u -= u.mean()
        l_mat = np.outer(g, u)
        f, m = decompose_additive(l_mat)
        # direct computation: centered factors leave only the grand-mean part in F
        assert np.max(np.abs(f - l_mat.mean())) < 1e-12
        assert np.allclose(m, l_mat - l_mat.mean(), atol=1e-12)

    def test_double_centering_identity(self, rng):
        _, m = decompose_additive(rng.normal(size=(7, 9)) * 5)
        assert np.max(np.abs(m.mean(axis=0))) < 1e-12
        assert np.max(np.abs(m.mean(axis=1))) < 1e-12


class TestFitAr2:
    def test_white_noise(self, rng):
        r = rng.normal(size=(300, 80))
        sigma, (r1, r2) = fit_ar2_covariance(r)
        assert abs(r1) < 0.03 and abs(r2) < 0.03
        off = sigma - np.diag(np.diagonal(sigma))
        assert np.max(np.abs(np.diagonal(sigma) - 1.0)) < 0.05
        assert np.max(np.abs(off)) < 0.05

    def test_simulate_then_fit_recovery(self):
        rng = np.random.default_rng(9)
        n, t, burn = 100, 200, 100
        e = np.zeros((n, t + burn))
        innov = rng.normal(size=(n, t + burn))
        for k in range(2, t + burn):
            e[:, k] = 0.5 * e[:, k - 1] - 0.2 * e[:, k - 2] + innov[:, k]
        _, (r1, r2) = fit_ar2_covariance(e[:, burn:])
        assert r1 == pytest.approx(0.5, abs=0.05)
        assert r2 == pytest.approx(-0.2, abs=0.05)

    def test_sigma_is_consistent_toeplitz(self):
        rng = np.random.default_rng(10)
        e = rng.normal(size=(50, 60))
        sigma, _ = fit_ar2_covariance(e)
        assert np.allclose(sigma, sigma.T)
        assert np.min(np.linalg.eigvalsh(sigma)) > -1e-10

    def test_nonstationary_fit_raises_with_roots(self):
        # minimal-length geometric rows give a lag-2 autocovariance larger in
        # magnitude than the variance, pushing the fit outside the triangle
        r = np.array([[1.0, 2.0, 4.0], [1.0, 2.0, 4.0]])
        with pytest.raises(NonstationaryError) as err:
            fit_ar2_covariance(r)
        assert err.value.roots is not None and len(err.value.roots) == 2


class TestFitAssignment:
    def test_independent_trait(self):
        rng = np.random.default_rng(5)
        alpha = rng.normal(size=400)
        m = rng.normal(size=(400, 6))
        d = (rng.random(400) < 0.3).astype(float)
        fit = fit_assignment(d, alpha, m)
        assert abs(fit.phi_alpha) < 0.4
        assert np.max(np.abs(fit.phi_m)) < 0.4
        assert fit.pi.mean() == pytest.approx(d.mean(), abs=0.02)

    def test_synthetic_coefficient_recovery(self):
        rng = np.random.default_rng(42)
        n, t = 500, 8
        alpha = rng.normal(size=n)
        m = rng.normal(size=(n, t)) * 0.8
        phi_alpha = 1.5
        phi_m = np.array([0.5, -0.4, 0.3, -0.2, 0.1, 0.0, 0.0, 0.0])
        eta = phi_alpha * alpha + m @ phi_m
        d = (rng.random(n) < 1 / (1 + np.exp(-eta))).astype(float)
        fit = fit_assignment(d, alpha, m)
        assert fit.phi_alpha == pytest.approx(phi_alpha, abs=0.2)
        rms = float(np.sqrt(np.mean((fit.phi_m - phi_m) ** 2)))
        assert rms <= 0.2
        assert not fit.separated

    def test_median_split_high_predictive_power(self):
        rng = np.random.default_rng(8)
        alpha = rng.normal(size=600)
        m = rng.normal(size=(600, 6)) * 0.1
        d = (alpha > np.median(alpha)).astype(float)
        with pytest.warns(RuntimeWarning, match="separates"):
            fit = fit_assignment(d, alpha, m)
        assert fit.separated
        assert 0.5 <= fit.pseudo_r2 <= 1.0
        assert np.all((fit.pi > 0) & (fit.pi < 1))

    def test_rejects_non_binary_trait(self, rng):
        with pytest.raises(ValueError, match="binary"):
            fit_assignment(np.array([0.0, 0.5, 1.0]), np.zeros(3), np.zeros((3, 2)))


class TestDgpSpec:
    def test_invariants_enforced(self, rng):
        l_mat = rng.normal(size=(4, 5))
        f, m = decompose_additive(l_mat)
        good = dict(
            l_mat=l_mat, f_mat=f, m_mat=m, sigma=np.eye(5),
            ar_coefs=(0.1, -0.05), pi=np.full(4, 0.5),
        )
        DgpSpec(**good)
        with pytest.raises(ValueError, match="F \\+ M"):
            DgpSpec(**{**good, "f_mat": f + 1.0})
        with pytest.raises(ValueError, match="symmetric"):
            bad = np.eye(5)
            bad[0, 1] = 0.5
            DgpSpec(**{**good, "sigma": bad})
        with pytest.raises(ValueError, match="PSD"):
            DgpSpec(**{**good, "sigma": -np.eye(5)})
        with pytest.raises(NonstationaryError):
            DgpSpec(**{**good, "ar_coefs": (1.2, 0.3)})
        with pytest.raises(ValueError, match="strictly"):
            DgpSpec(**{**good, "pi": np.array([0.5, 0.0, 0.5, 0.5])})

    def test_json_round_trip(self, rng):
        spec = additive_spec(n=6, t=5, seed=1)
        back = DgpSpec.from_json(io.StringIO(spec.to_json()))
        assert np.array_equal(back.l_mat, spec.l_mat)
        assert np.array_equal(back.sigma, spec.sigma)
        assert back.ar_coefs == spec.ar_coefs
        assert back.scale == spec.scale


class TestSimulate:
    def test_zero_noise_returns_systematic_part(self, rng):
        spec = additive_spec(n=6, t=5, noise_sd=0.0, seed=3)
        panel = simulate_panel(spec, n_tr=2, t_post=2, seed=1)
        design = validate_block(panel)
        # control rows of the simulated panel appear verbatim in L
        for row in design.y:
            assert any(np.allclose(row[: 3], spec.l_mat[i, :3]) for i in range(6))

    def test_uniform_propensities_make_subsets_equally_likely(self):
        spec = additive_spec(n=6, t=5, seed=4)
        counts = {c: 0 for c in combinations(range(6), 2)}
        root = np.random.SeedSequence(99)
        for child in root.spawn(10_000):
            panel = simulate_panel(spec, n_tr=2, t_post=2, seed=child)
            treated = tuple(
                sorted(int(u[1:]) for u, w in zip(panel.unit_labels, panel.treatment[:, -1])
                       if w == 1)
            )
            counts[treated] += 1
        stat, pvalue = chisquare(list(counts.values()))
        assert pvalue > 0.001

    def test_deterministic_per_seed(self):
        spec = additive_spec(seed=5)
        p1 = simulate_panel(spec, 3, 4, seed=123)
        p2 = simulate_panel(spec, 3, 4, seed=123)
        p3 = simulate_panel(spec, 3, 4, seed=124)
        assert np.array_equal(p1.outcomes, p2.outcomes)
        assert not np.array_equal(p1.outcomes, p3.outcomes)

    def test_treatment_effect_applied_to_block(self, rng):
        spec = additive_spec(n=5, t=4, noise_sd=0.0, seed=6, tau=2.5)
        panel = simulate_panel(spec, n_tr=2, t_post=1, seed=0)
        design = validate_block(panel)
        from sdidlab.estimators import did

        assert did(panel, design).tau_hat == pytest.approx(2.5, abs=1e-12)


class TestCalibration:
    def test_wage_surrogate_echo_scales(self):
        with pytest.warns(RuntimeWarning):
            spec = wage_spec()
        echo = spec.scales()
        assert echo["f_scale"] == pytest.approx(0.99, abs=0.05)
        assert echo["m_scale"] == pytest.approx(0.10, abs=0.05)
        assert echo["noise_scale"] == pytest.approx(0.08, abs=0.03)
        assert abs(echo["ar_coefs"][0]) < 0.15
        assert abs(echo["ar_coefs"][1]) < 0.15

    def test_normalization_recorded(self):
        panel, _ = wage_panel()
        spec = calibrate_dgp(panel, rank=4)
        assert spec.scale["mean"] == pytest.approx(float(panel.outcomes.mean()))
        assert spec.scale["sd"] == pytest.approx(float(panel.outcomes.std()))
        # calibration happens on normalized data
        total = np.linalg.norm(spec.l_mat) ** 2 / spec.l_mat.size
        assert total < 1.5

    def test_state_laws_fixture(self):
        laws = load_state_laws()
        assert len(laws["state"]) == 50
        assert laws["min_wage"].sum() == 7
        assert laws["state"] == sorted(laws["state"])
        assert set(laws["open_carry"]) <= {0, 1}

    def test_law_based_propensities_favor_law_states(self):
        with pytest.warns(RuntimeWarning):
            spec = wage_spec(assignment="min_wage")
        laws = load_state_laws()
        pi_law = spec.pi[laws["min_wage"] == 1].mean()
        pi_other = spec.pi[laws["min_wage"] == 0].mean()
        assert pi_law > pi_other
