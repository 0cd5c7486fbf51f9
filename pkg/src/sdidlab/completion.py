"""Low-rank matrix-completion comparator via iterative soft-thresholding.

Treated cells are treated as missing.  Each sweep re-estimates unpenalized
two-way fixed effects on the observed cells, fills the missing cells of the
residual from the current low-rank component, soft-thresholds its singular
values at the penalty level, and re-estimates the effect as the mean gap
between observed and fitted values on the treated block.  Leaving the
additive structure unpenalized keeps the nuclear-norm shrinkage off the
dominant level/trend directions, which would otherwise bias the fitted
treated block whenever assignment is correlated with levels.

The penalty is picked by K-fold cross-validation that masks random untreated
cells and scores the held-out reconstruction error.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .estimators import Estimate
from .panel import BlockDesign, Panel
from .solver import ConvergenceError

DEFAULT_MAX_SWEEPS = 500
DEFAULT_SWEEP_TOL = 1e-6
DEFAULT_GRID_SIZE = 8
DEFAULT_FOLDS = 5
CV_MAX_SWEEPS = 150
CV_SWEEP_TOL = 1e-4


def _svt(z: np.ndarray, penalty: float) -> np.ndarray:
    u, s, vt = np.linalg.svd(z, full_matrices=False)
    s = np.maximum(s - penalty, 0.0)
    return (u * s) @ vt


def _anneal_path(top: float, penalty: float, ratio: float = 0.35):
    """Descending penalty sequence from ``top`` to ``penalty`` (inclusive)."""
    if penalty >= top:
        return [penalty]
    steps = int(np.ceil(np.log(penalty / top) / np.log(ratio)))
    path = [top * ratio**k for k in range(max(steps, 1))]
    return path + [penalty]


def soft_impute(
    y: np.ndarray,
    observed: np.ndarray,
    penalty: float,
    l_start: Optional[np.ndarray] = None,
    max_sweeps: int = DEFAULT_MAX_SWEEPS,
    tol: float = DEFAULT_SWEEP_TOL,
):
    """Fit additive effects plus a penalized low-rank component to ``y``.

    Only cells with ``observed`` True enter the fit.  Returns
    ``(fitted, l_hat, converged, sweeps)`` where ``fitted`` is the full-matrix
    prediction (effects + low-rank part).  Convergence is declared when the
    relative change of the prediction between sweeps drops below ``tol``.
    """
    if not observed.any():
        raise ValueError("no observed cells")
    n, t = y.shape
    row_cnt = observed.sum(axis=1)
    col_cnt = observed.sum(axis=0)
    if (row_cnt == 0).any() or (col_cnt == 0).any():
        raise ValueError("need at least one observed cell per row and column")

    l_hat = np.zeros_like(y) if l_start is None else np.array(l_start, dtype=float)
    a = np.zeros(n)
    b = np.zeros(t)
    fitted = l_hat.copy()
    for sweep in range(1, max_sweeps + 1):
        resid = np.where(observed, y - l_hat, 0.0)
        a = (resid - observed * b[None, :]).sum(axis=1) / row_cnt
        b = (resid - observed * a[:, None]).sum(axis=0) / col_cnt
        additive = a[:, None] + b[None, :]
        z = np.where(observed, y - additive, l_hat)
        l_hat = _svt(z, penalty)
        new_fitted = additive + l_hat
        denom = max(float(np.linalg.norm(fitted)), 1.0)
        delta = float(np.linalg.norm(new_fitted - fitted)) / denom
        fitted = new_fitted
        if delta <= tol:
            return fitted, l_hat, True, sweep
    return fitted, l_hat, False, max_sweeps


def default_penalty_grid(y: np.ndarray, treated: np.ndarray, size: int = DEFAULT_GRID_SIZE):
    """Geometric grid on [1e-3, 1] times the top singular value.

    The scale comes from the detrended panel: treated cells are replaced by
    the untreated mean, additive row/column structure is removed, and the top
    singular value of what remains anchors the grid, so the grid brackets the
    component the penalty actually acts on.
    """
    z = np.where(treated, y[~treated].mean(), y)
    z = z - z.mean(axis=1, keepdims=True) - z.mean(axis=0, keepdims=True) + z.mean()
    top = float(np.linalg.svd(z, compute_uv=False)[0])
    return np.geomspace(1e-3, 1.0, size) * max(top, 1e-12)


def cross_validate_penalty(
    y: np.ndarray,
    treated: np.ndarray,
    grid: Sequence[float],
    n_folds: int = DEFAULT_FOLDS,
    seed: int = 0,
    max_sweeps: int = CV_MAX_SWEEPS,
    tol: float = CV_SWEEP_TOL,
):
    """Score each penalty by held-out MSE on masked untreated cells.

    Returns ``(best_penalty, mse_per_penalty)``.  Folds partition the
    untreated cells at random (seeded); treated cells are never scored.
    Penalties are swept from largest to smallest with warm starts.  Folds that
    would empty a row or column of observed cells are rebalanced by leaving
    one observed cell in place.
    """
    grid = np.asarray(list(grid), dtype=float)
    if grid.size == 0:
        raise ValueError("empty penalty grid")
    untreated_idx = np.flatnonzero(~treated.ravel())
    rng = np.random.default_rng(seed)
    perm = rng.permutation(untreated_idx)
    folds = np.array_split(perm, n_folds)

    order = np.argsort(grid)[::-1]
    mse = np.zeros(grid.size)
    weight = 0
    for fold in folds:
        held = np.zeros(y.size, dtype=bool)
        held[fold] = True
        held = held.reshape(y.shape)
        observed = ~treated & ~held
        # keep every row/column estimable
        for i in np.flatnonzero(observed.sum(axis=1) == 0):
            j = int(np.flatnonzero(~treated[i])[0])
            observed[i, j] = True
            held[i, j] = False
        for j in np.flatnonzero(observed.sum(axis=0) == 0):
            i = int(np.flatnonzero(~treated[:, j])[0])
            observed[i, j] = True
            held[i, j] = False
        if not held.any():
            continue
        l_warm = None
        fold_mse = np.empty(grid.size)
        for pos in order:
            fitted, l_warm, _, _ = soft_impute(
                y, observed, float(grid[pos]), l_start=l_warm,
                max_sweeps=max_sweeps, tol=tol,
            )
            err = y[held] - fitted[held]
            fold_mse[pos] = float(err @ err) / err.size
        mse += fold_mse
        weight += 1
    mse /= max(weight, 1)
    best = int(np.argmin(mse))
    return float(grid[best]), mse


def mc_estimate(
    panel: Optional[Panel],
    design: BlockDesign,
    penalty_grid: Optional[Sequence[float]] = None,
    n_folds: int = DEFAULT_FOLDS,
    seed: int = 0,
    max_sweeps: int = DEFAULT_MAX_SWEEPS,
    tol: float = DEFAULT_SWEEP_TOL,
) -> Estimate:
    """Matrix-completion treatment-effect estimate.

    Every row and column must contain at least one untreated cell (always true
    for a valid block design).  With a single-element grid the cross-validation
    step is skipped.

    Raises
    ------
    ValueError
        On an empty penalty grid.
    ConvergenceError
        If the final fit does not converge within ``max_sweeps``.
    """
    if panel is not None and panel.outcomes.shape != design.y.shape:
        raise ValueError(
            f"panel shape {panel.outcomes.shape} does not match design {design.y.shape}"
        )
    y = design.y
    treated = np.zeros(y.shape, dtype=bool)
    treated[design.n_co :, design.t_pre :] = True
    if (treated.all(axis=1)).any() or (treated.all(axis=0)).any():
        raise ValueError("need at least one untreated cell per row and column")

    if penalty_grid is None:
        penalty_grid = default_penalty_grid(y, treated)
    grid = np.asarray(list(penalty_grid), dtype=float)
    if grid.size == 0:
        raise ValueError("empty penalty grid")

    if grid.size == 1:
        penalty = float(grid[0])
    else:
        penalty, _ = cross_validate_penalty(y, treated, grid, n_folds=n_folds, seed=seed)

    # anneal from a large penalty down to the chosen one with warm starts;
    # at small penalties a cold-started iteration stalls (any completion is
    # near-stationary), while the annealed path tracks the solution surface
    top = float(default_penalty_grid(y, treated, size=2)[-1])
    l_warm = None
    converged, sweeps = True, 0
    for pen in _anneal_path(top, penalty):
        fitted, l_warm, converged, sweeps = soft_impute(
            y, ~treated, pen, l_start=l_warm, max_sweeps=max_sweeps, tol=tol
        )
    if not converged:
        raise ConvergenceError(
            f"soft-impute did not converge in {sweeps} sweeps at penalty {penalty:.3g}",
            gap=float("nan"),
        )
    tau = float((y - fitted)[treated].mean())
    return Estimate(tau_hat=tau, method="mc")


def _tau_mc(y: np.ndarray, n_co: int, t_pre: int, tol=None, seed: int = 0,
            n_folds: int = DEFAULT_FOLDS) -> float:
    from .panel import design_from_matrix

    est = mc_estimate(None, design_from_matrix(y, n_co, t_pre), seed=seed,
                      n_folds=n_folds)
    return est.tau_hat
