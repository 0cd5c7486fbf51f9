import numpy as np
import pytest

from sdidlab.completion import (
    cross_validate_penalty,
    default_penalty_grid,
    mc_estimate,
    soft_impute,
)
from sdidlab.panel import design_from_matrix
from sdidlab.solver import ConvergenceError


def rank_one_design(rng, n=8, t=7, n_co=6, t_pre=5, tau=1.5):
    g = rng.normal(size=n)
    u = rng.normal(size=t)
    y = np.outer(g, u)
    y[n_co:, t_pre:] += tau
    return design_from_matrix(y, n_co, t_pre), tau


def test_noiseless_rank_one_recovery(rng):
    design, tau = rank_one_design(rng)
    top = float(np.linalg.svd(design.y, compute_uv=False)[0])
    est = mc_estimate(None, design, penalty_grid=[1e-4 * top], max_sweeps=3000)
    assert est.tau_hat == pytest.approx(tau, abs=1e-3)
    assert est.method == "mc" and est.weights is None


def test_recovery_improves_as_penalty_shrinks(rng):
    design, tau = rank_one_design(rng)
    top = float(np.linalg.svd(design.y, compute_uv=False)[0])
    errs = [
        abs(mc_estimate(None, design, penalty_grid=[c * top],
                        max_sweeps=3000).tau_hat - tau)
        for c in (1e-2, 1e-3, 1e-4)
    ]
    assert errs[2] < errs[1] < errs[0]


def test_cv_curve_dips_then_rises(rng):
    # rank-2 signal plus noise: the held-out error curve over a descending
    # penalty path falls until the fit starts absorbing noise
    g = rng.normal(size=(12, 2))
    u = rng.normal(size=(2, 10))
    y = g @ u + 0.05 * rng.normal(size=(12, 10))
    treated = np.zeros(y.shape, dtype=bool)
    treated[-2:, -2:] = True
    grid = default_penalty_grid(y, treated, size=8)
    best, mse = cross_validate_penalty(y, treated, grid, seed=3)
    best_idx = int(np.argmin(mse))
    assert 0 < best_idx < len(grid) - 1  # interior optimum
    assert mse[0] < mse[-1] or mse[best_idx] < mse[-1]
    assert best == pytest.approx(grid[best_idx])


def test_empty_grid_errors(rng):
    design, _ = rank_one_design(rng)
    with pytest.raises(ValueError, match="empty penalty grid"):
        mc_estimate(None, design, penalty_grid=[])


def test_nonconvergence_raises(rng):
    design, _ = rank_one_design(rng)
    with pytest.raises(ConvergenceError):
        mc_estimate(None, design, penalty_grid=[1e-8], max_sweeps=2, tol=1e-12)


def test_soft_impute_interface(rng):
    y = rng.normal(size=(6, 5))
    observed = np.ones(y.shape, dtype=bool)
    observed[4:, 3:] = False
    fitted, l_hat, converged, sweeps = soft_impute(y, observed, penalty=0.5)
    assert fitted.shape == y.shape
    assert converged and sweeps >= 1


def test_soft_impute_requires_observed_rows(rng):
    y = rng.normal(size=(4, 4))
    observed = np.ones(y.shape, dtype=bool)
    observed[2, :] = False
    with pytest.raises(ValueError, match="per row"):
        soft_impute(y, observed, penalty=0.1)


def test_cv_is_seed_deterministic(rng):
    g = rng.normal(size=(10, 2))
    y = g @ rng.normal(size=(2, 9)) + 0.1 * rng.normal(size=(10, 9))
    treated = np.zeros(y.shape, dtype=bool)
    treated[-2:, -3:] = True
    grid = default_penalty_grid(y, treated)
    b1, m1 = cross_validate_penalty(y, treated, grid, seed=11)
    b2, m2 = cross_validate_penalty(y, treated, grid, seed=11)
    assert b1 == b2 and np.array_equal(m1, m2)
