"""Simplex-constrained least squares for unit and time weights.

All weight programs share one template: minimize

    || intercept + design @ w - target ||^2  +  ridge * n_rows * ||w||^2

over the unit simplex, optionally with the intercept profiled out by centering
the design columns and the target.  Unit weights use a data-driven ridge
scale from :func:`compute_zeta`; time weights run ridgeless with a vanishing
ridge homotopy that selects the minimum-norm solution when the minimizer is
not unique.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._backend import fw_quad_simplex

DEFAULT_RTOL = 1e-8
DEFAULT_MAX_ITER = 100_000
SIMPLEX_ATOL = 1e-12
_HOMOTOPY_EPS = (1e-4, 1e-6)
_HOMOTOPY_AGREE = 1e-4


class ConvergenceError(RuntimeError):
    """Solver ran out of iterations; ``gap`` holds the last duality gap."""

    def __init__(self, message: str, gap: float = float("nan")):
        super().__init__(message)
        self.gap = gap

    def __reduce__(self):
        return (type(self), (self.args[0], self.gap))


class EmptyDonorError(ValueError):
    """The candidate set (design columns) is empty."""


class InsufficientPrePeriodsError(ValueError):
    """Fewer than two pre-treatment periods; one-period changes undefined."""


@dataclass(frozen=True)
class SimplexLsProblem:
    """A simplex-constrained least-squares instance.

    ``ridge`` is a per-coefficient penalty weight; the objective multiplies it
    by the number of rows, so a ridge of z**2 on an n-row design contributes
    z**2 * n * ||w||^2.
    """

    design: np.ndarray
    target: np.ndarray
    ridge: float = 0.0
    with_intercept: bool = True
    tie_break: str = "none"

    def __post_init__(self):
        design = np.asarray(self.design, dtype=np.float64)
        target = np.asarray(self.target, dtype=np.float64)
        if design.ndim != 2:
            raise ValueError("design must be 2-d")
        if target.ndim != 1 or target.shape[0] != design.shape[0]:
            raise ValueError(
                f"target length {target.shape} does not match design rows {design.shape}"
            )
        if self.ridge < 0:
            raise ValueError("ridge must be nonnegative")
        if self.tie_break not in ("none", "min_norm"):
            raise ValueError(f"unknown tie_break {self.tie_break!r}")
        object.__setattr__(self, "design", design)
        object.__setattr__(self, "target", target)


def objective_value(problem: SimplexLsProblem, intercept: float, weights) -> float:
    """Evaluate the problem objective at an explicit (intercept, weights) point."""
    w = np.asarray(weights, dtype=np.float64)
    resid = intercept + problem.design @ w - problem.target
    n = problem.design.shape[0]
    return float(resid @ resid + problem.ridge * n * (w @ w))


def _profile(problem: SimplexLsProblem):
    """Center out the intercept; return (Xc, yc, col_means, target_mean)."""
    x = problem.design
    y = problem.target
    if problem.with_intercept:
        col_means = x.mean(axis=0)
        y_mean = float(y.mean())
        return x - col_means, y - y_mean, col_means, y_mean
    return x, y, np.zeros(x.shape[1]), 0.0


def _kernel_solve(xc, yc, ridge_total, w0, tol, max_iter):
    k = xc.shape[1]
    g = xc.T @ xc
    if ridge_total > 0.0:
        g = g + ridge_total * np.eye(k)
    g = np.ascontiguousarray(g)
    b = np.ascontiguousarray(xc.T @ yc)
    c0 = float(yc @ yc)
    w, gap, iters, f, floor = fw_quad_simplex(g, b, c0, w0, tol, max_iter)
    return np.asarray(w), float(gap), int(iters), float(f), float(floor)


def solve_simplex_ls(
    problem: SimplexLsProblem,
    tol: Optional[float] = None,
    max_iter: int = DEFAULT_MAX_ITER,
):
    """Solve the simplex program; return ``(intercept, weights, gap)``.

    ``tol`` is an absolute bound on the Frank-Wolfe duality gap of the
    intercept-profiled objective; when omitted it defaults to ``1e-8`` times
    the objective value at uniform weights.  With ``tie_break='min_norm'`` and
    zero ridge, the solution is selected by a vanishing-ridge homotopy: the
    program is re-solved with ridge ``eps * scale`` for eps of 1e-4 and 1e-6
    (scale is the mean diagonal of the centered Gram), the two solutions are
    accepted when they agree to 1e-4, and otherwise extrapolated to eps -> 0;
    either way a final ridgeless pass re-certifies the gap.

    Raises
    ------
    EmptyDonorError
        If the design has no columns.
    ConvergenceError
        If the gap cannot be brought below ``tol`` within ``max_iter``
        iterations; the exception carries the last gap.
    """
    k = problem.design.shape[1]
    if k == 0:
        raise EmptyDonorError("design has no candidate columns")
    xc, yc, col_means, y_mean = _profile(problem)
    n = problem.design.shape[0]
    uniform = np.full(k, 1.0 / k)

    ridge_total = problem.ridge * n
    if tol is None:
        g0 = xc.T @ xc
        w0g = g0 @ uniform
        f0 = float(uniform @ w0g - 2.0 * (xc.T @ yc) @ uniform + yc @ yc)
        f0 += ridge_total / k  # uniform-weight ridge term
        tol = DEFAULT_RTOL * max(f0, 0.0)

    if problem.tie_break == "min_norm" and problem.ridge == 0.0:
        scale = float(np.trace(xc.T @ xc)) / k
        if scale <= 0.0:
            scale = 1.0
        eps1, eps2 = _HOMOTOPY_EPS
        w1, _, _, _, _ = _kernel_solve(xc, yc, eps1 * scale, uniform, tol, max_iter)
        w2, _, _, _, _ = _kernel_solve(xc, yc, eps2 * scale, w1, tol, max_iter)
        if float(np.max(np.abs(w1 - w2))) <= _HOMOTOPY_AGREE:
            start = w2
        else:
            # first-order extrapolation of the ridge path to zero
            w_star = (eps1 * w2 - eps2 * w1) / (eps1 - eps2)
            w_star = np.clip(w_star, 0.0, None)
            total = w_star.sum()
            start = w_star / total if total > 0 else uniform
        w, gap, iters, _, floor = _kernel_solve(xc, yc, 0.0, start, tol, max_iter)
    else:
        w, gap, iters, _, floor = _kernel_solve(
            xc, yc, ridge_total, uniform, tol, max_iter
        )

    # the returned gap is recomputed from a fresh matrix-vector product, which
    # can land a rounding hair above the maintained gap that stopped the loop
    if gap > tol * (1.0 + 1e-6) + floor:
        raise ConvergenceError(
            f"simplex solver did not reach gap <= {tol:.3e} in {max_iter} "
            f"iterations (last gap {gap:.3e})",
            gap=gap,
        )
    intercept = y_mean - float(col_means @ w) if problem.with_intercept else 0.0
    return intercept, w, gap


def compute_zeta(y_co_pre: np.ndarray) -> float:
    """Dispersion of one-period outcome changes among controls, pre-treatment.

    The squared value is the variance of the first differences
    D[i, t] = Y[i, t+1] - Y[i, t] around their grand mean, averaged over all
    N_co * (T_pre - 1) differences.  Used as the per-coefficient ridge scale
    for unit weights.
    """
    y = np.asarray(y_co_pre, dtype=np.float64)
    if y.ndim != 2:
        raise ValueError("y_co_pre must be 2-d")
    if y.shape[1] < 2:
        raise InsufficientPrePeriodsError(
            f"need at least 2 pre-treatment periods, got {y.shape[1]}"
        )
    deltas = np.diff(y, axis=1)
    return float(np.sqrt(np.mean((deltas - deltas.mean()) ** 2)))


@dataclass(frozen=True)
class WeightSet:
    """Unit and time weights with their intercepts and certificates.

    ``omega`` lives on the control units (simplex), ``lambda_`` on the
    pre-treatment periods (simplex, ``None`` for estimators that use no time
    weighting).  The treated-side weights are the implicit constants
    ``1/n_tr`` and ``1/t_post``.  ``gap`` is the largest Frank-Wolfe duality
    gap among the solves that produced the weights.
    """

    omega0: float
    omega: np.ndarray
    lambda0: Optional[float]
    lambda_: Optional[np.ndarray]
    zeta: float
    gap: float

    def __post_init__(self):
        omega = np.ascontiguousarray(self.omega, dtype=np.float64)
        if omega.ndim != 1 or omega.size == 0:
            raise ValueError("omega must be a nonempty vector")
        _check_simplex(omega, "omega")
        omega.setflags(write=False)
        object.__setattr__(self, "omega", omega)
        if self.lambda_ is not None:
            lam = np.ascontiguousarray(self.lambda_, dtype=np.float64)
            _check_simplex(lam, "lambda")
            lam.setflags(write=False)
            object.__setattr__(self, "lambda_", lam)

    def to_dict(self) -> dict:
        return {
            "omega0": self.omega0,
            "omega": [float(v) for v in self.omega],
            "lambda0": self.lambda0,
            "lambda": None if self.lambda_ is None else [float(v) for v in self.lambda_],
            "zeta": self.zeta,
            "gap": self.gap,
        }


def _check_simplex(vec: np.ndarray, name: str):
    if np.any(vec < 0):
        raise ValueError(f"{name} has negative entries (min {vec.min():.3e})")
    total = float(vec.sum())
    if abs(total - 1.0) > SIMPLEX_ATOL:
        raise ValueError(f"{name} sums to {total!r}, not 1 within {SIMPLEX_ATOL}")


def unit_weights(design, zeta: float, tol=None, max_iter: int = DEFAULT_MAX_ITER):
    """Control-unit weights aligning pre-treatment trends with the treated average.

    Regression of the per-period treated average on control columns with an
    intercept and ridge ``zeta**2`` (times the number of pre-periods).
    Returns ``(omega0, omega, gap)``.
    """
    y_co_pre = design.y_co_pre
    target = design.y_tr_pre.mean(axis=0)
    problem = SimplexLsProblem(
        design=y_co_pre.T,
        target=target,
        ridge=zeta**2,
        with_intercept=True,
        tie_break="min_norm" if zeta == 0.0 else "none",
    )
    return solve_simplex_ls(problem, tol=tol, max_iter=max_iter)


def time_weights(design, tol=None, max_iter: int = DEFAULT_MAX_ITER):
    """Pre-period weights predicting the post-period average for controls.

    Ridgeless with intercept; among near-minimizers the minimum-norm solution
    is selected via the homotopy in :func:`solve_simplex_ls`.  Returns
    ``(lambda0, lambda, gap)``.
    """
    problem = SimplexLsProblem(
        design=design.y_co_pre,
        target=design.y_co_post.mean(axis=1),
        ridge=0.0,
        with_intercept=True,
        tie_break="min_norm",
    )
    return solve_simplex_ls(problem, tol=tol, max_iter=max_iter)


def sc_weights(design, zeta: float, tol=None, max_iter: int = DEFAULT_MAX_ITER):
    """Unit weights without an intercept (synthetic-control variant).

    Same program as :func:`unit_weights` but the weighted control average must
    match the treated level, not just its trend.  Returns ``(omega, gap)``.
    """
    problem = SimplexLsProblem(
        design=design.y_co_pre.T,
        target=design.y_tr_pre.mean(axis=0),
        ridge=zeta**2,
        with_intercept=False,
        tie_break="min_norm" if zeta == 0.0 else "none",
    )
    _, w, gap = solve_simplex_ls(problem, tol=tol, max_iter=max_iter)
    return w, gap
