"""Point estimators: weighted two-way FE regression, comparators, diagnostics.

The weighted two-way fixed-effects regression with cell weights a_i * b_t is
solved in closed form by weighted double-demeaning: project the outcome and
the treatment indicator off the additive unit/time space under the weighted
inner product, then regress residual on residual.  With product weights this
projection is exact (not iterative), which makes the equivalence with the
four-term weighted double difference an identity that the test suite checks
to 1e-10.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .panel import BlockDesign, CovariateSet, Panel, design_from_matrix
from .solver import (
    WeightSet,
    compute_zeta,
    sc_weights,
    time_weights,
    unit_weights,
)

METHODS = ("sdid", "did", "sc", "mc")


class CollinearityError(ValueError):
    """Covariates are collinear with each other or the treatment indicator."""


@dataclass(frozen=True)
class FixedEffects:
    """Estimated intercept and unit/time effects from the weighted regression.

    Effects are normalized to have zero weighted mean under the full
    cell-weight margins, which pins down an otherwise arbitrary split.
    ``alpha`` is ``None`` for estimators without unit effects.
    """

    mu: float
    alpha: Optional[np.ndarray]
    beta: np.ndarray


@dataclass(frozen=True)
class Estimate:
    """A treatment-effect point estimate in outcome units."""

    tau_hat: float
    method: str
    weights: Optional[WeightSet] = None
    fixed_effects: Optional[FixedEffects] = None
    covariate_coefs: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        needs_weights = self.method in ("sdid", "sc")
        if needs_weights and self.weights is None:
            raise ValueError(f"{self.method} estimate must carry its weights")
        if not needs_weights and self.weights is not None:
            raise ValueError(f"{self.method} estimate must not carry weights")


@dataclass(frozen=True)
class InfluenceTable:
    """Per-control-unit adjusted outcomes and influence diagnostics.

    ``influence[i] = omega[i] * (delta_treated - delta[i])`` and the influence
    column sums to the point estimate.
    """

    units: tuple
    delta: np.ndarray
    omega: np.ndarray
    influence: np.ndarray
    delta_treated: float
    method: str
    tau_hat: float


def _check_panel(panel: Optional[Panel], design: BlockDesign):
    if panel is not None and panel.outcomes.shape != design.y.shape:
        raise ValueError(
            f"panel shape {panel.outcomes.shape} does not match design {design.y.shape}"
        )


def _margins(design_n_co, design_n_tr, design_t_pre, design_t_post, weights: WeightSet):
    if weights.omega.shape[0] != design_n_co:
        raise ValueError(
            f"omega has {weights.omega.shape[0]} entries for {design_n_co} controls"
        )
    if weights.lambda_ is None:
        raise ValueError("this operation needs time weights (lambda is None)")
    if weights.lambda_.shape[0] != design_t_pre:
        raise ValueError(
            f"lambda has {weights.lambda_.shape[0]} entries for {design_t_pre} pre-periods"
        )
    a = np.concatenate([weights.omega, np.full(design_n_tr, 1.0 / design_n_tr)])
    b = np.concatenate([weights.lambda_, np.full(design_t_post, 1.0 / design_t_post)])
    return a, b


def _tau_weighted_twfe(y, w, a, b):
    """Closed-form weighted TWFE coefficient of y on w with cell weights a*b."""
    a_tot = float(a.sum())
    b_tot = float(b.sum())
    if a_tot <= 0 or b_tot <= 0:
        raise ValueError("weight margins must have positive totals")
    row_y = (y @ b) / b_tot
    col_y = (a @ y) / a_tot
    grand_y = float(a @ row_y) / a_tot
    ry = y - row_y[:, None] - col_y[None, :] + grand_y
    row_w = (w @ b) / b_tot
    col_w = (a @ w) / a_tot
    grand_w = float(a @ row_w) / a_tot
    rw = w - row_w[:, None] - col_w[None, :] + grand_w
    denom = float(a @ (rw * rw) @ b)
    if denom <= 0:
        raise ValueError("treatment indicator has no weighted variation")
    return float(a @ (rw * ry) @ b) / denom, rw, denom


def _additive_fit(z, a, b):
    """Weighted projection of z onto {mu + alpha_i + beta_t}; returns (mu, alpha, beta)."""
    a_tot = float(a.sum())
    b_tot = float(b.sum())
    row = (z @ b) / b_tot
    col = (a @ z) / a_tot
    mu = float(a @ row) / a_tot
    return mu, row - mu, col - mu


def weighted_twfe_regress(
    panel: Optional[Panel],
    design: BlockDesign,
    weights: WeightSet,
    covariates: Optional[CovariateSet] = None,
) -> Estimate:
    """Weighted two-way fixed-effects regression of outcomes on treatment.

    Cell (i, t) carries weight a_i * b_t where the unit margin ``a`` is
    ``weights.omega`` on controls and ``1/n_tr`` on treated units, and the
    time margin ``b`` is ``weights.lambda_`` on pre-periods and ``1/t_post``
    after adoption.  With covariates, each covariate is projected off the
    additive space under the same weights and a (p+1)-dimensional normal
    system identifies the covariate coefficients jointly with the treatment
    effect.

    The method tag of the returned estimate is ``'sdid'``; callers wanting a
    different tag (``did``) re-wrap the numbers.
    """
    _check_panel(panel, design)
    y = design.y
    a, b = _margins(design.n_co, design.n_tr, design.t_pre, design.t_post, weights)
    w = np.zeros_like(y)
    w[design.n_co :, design.t_pre :] = 1.0

    if covariates is None or covariates.p == 0:
        tau, _, _ = _tau_weighted_twfe(y, w, a, b)
        coefs = None
        z = y - tau * w
    else:
        x = covariates.reordered(design)
        p = x.shape[2]
        a_tot, b_tot = float(a.sum()), float(b.sum())

        def residualize(m):
            row = (m @ b) / b_tot
            col = (a @ m) / a_tot
            grand = float(a @ row) / a_tot
            return m - row[:, None] - col[None, :] + grand

        regs = [residualize(x[:, :, j]) for j in range(p)] + [residualize(w)]
        cell = a[:, None] * b[None, :]
        gram = np.empty((p + 1, p + 1))
        rhs = np.empty(p + 1)
        ry = residualize(y)
        for i in range(p + 1):
            rhs[i] = float((regs[i] * ry * cell).sum())
            for j in range(i, p + 1):
                gram[i, j] = gram[j, i] = float((regs[i] * regs[j] * cell).sum())
        diag = np.sqrt(np.diagonal(gram))
        if np.any(diag <= 0):
            raise CollinearityError("a covariate has no weighted variation")
        scaled = gram / np.outer(diag, diag)
        if np.linalg.cond(scaled) > 1e10:
            raise CollinearityError(
                "covariates are collinear with each other or with the treatment block"
            )
        sol = np.linalg.solve(gram, rhs)
        coefs, tau = sol[:p], float(sol[p])
        z = y - tau * w - np.tensordot(x, coefs, axes=([2], [0]))

    mu, alpha, beta = _additive_fit(z, a, b)
    return Estimate(
        tau_hat=tau,
        method="sdid",
        weights=weights,
        fixed_effects=FixedEffects(mu=mu, alpha=alpha, beta=beta),
        covariate_coefs=None if coefs is None else np.asarray(coefs),
    )


def weighted_double_difference(design: BlockDesign, weights: WeightSet) -> float:
    """Four-term weighted double difference over the design's corner blocks.

    Equals the weighted TWFE coefficient for any feasible weights; kept as an
    independent code path for cross-checking.
    """
    omega = weights.omega
    lam = weights.lambda_
    if lam is None:
        raise ValueError("double differencing needs time weights")
    tr_post = float(design.y_tr_post.mean())
    co_post = float(omega @ design.y_co_post.mean(axis=1))
    tr_pre = float((design.y_tr_pre @ lam).mean())
    co_pre = float(omega @ (design.y_co_pre @ lam))
    return tr_post - co_post - tr_pre + co_pre


def sdid_weights(design: BlockDesign, tol=None) -> WeightSet:
    """Data-driven unit and time weights for the synthetic DID estimator."""
    zeta = compute_zeta(design.y_co_pre)
    omega0, omega, gap_u = unit_weights(design, zeta, tol=tol)
    lambda0, lam, gap_t = time_weights(design, tol=tol)
    return WeightSet(
        omega0=omega0,
        omega=omega,
        lambda0=lambda0,
        lambda_=lam,
        zeta=zeta,
        gap=max(gap_u, gap_t),
    )


def did_weights(design: BlockDesign) -> WeightSet:
    """Uniform weights: 1/n_co on controls and 1/t_pre on pre-periods."""
    return WeightSet(
        omega0=0.0,
        omega=np.full(design.n_co, 1.0 / design.n_co),
        lambda0=0.0,
        lambda_=np.full(design.t_pre, 1.0 / design.t_pre),
        zeta=0.0,
        gap=0.0,
    )


def sdid(
    panel: Optional[Panel],
    design: BlockDesign,
    covariates: Optional[CovariateSet] = None,
    tol=None,
) -> Estimate:
    """Synthetic difference in differences: solve weights, run the regression."""
    _check_panel(panel, design)
    weights = sdid_weights(design, tol=tol)
    return weighted_twfe_regress(panel, design, weights, covariates)


def did(
    panel: Optional[Panel],
    design: BlockDesign,
    covariates: Optional[CovariateSet] = None,
) -> Estimate:
    """Plain difference in differences via the uniform-weight regression."""
    _check_panel(panel, design)
    est = weighted_twfe_regress(panel, design, did_weights(design), covariates)
    return Estimate(
        tau_hat=est.tau_hat,
        method="did",
        weights=None,
        fixed_effects=est.fixed_effects,
        covariate_coefs=est.covariate_coefs,
    )


def sc(panel: Optional[Panel], design: BlockDesign, tol=None) -> Estimate:
    """Synthetic control: no-intercept unit weights, no unit fixed effects.

    Minimizes sum_it (Y_it - mu - beta_t - W_it tau)^2 a_i where a puts the
    solved weights on controls and 1/n_tr on treated units; solved in closed
    form by weighted time-demeaning.
    """
    _check_panel(panel, design)
    zeta = compute_zeta(design.y_co_pre)
    omega, gap = sc_weights(design, zeta, tol=tol)
    y = design.y
    a = np.concatenate([omega, np.full(design.n_tr, 1.0 / design.n_tr)])
    a_tot = float(a.sum())
    w = np.zeros_like(y)
    w[design.n_co :, design.t_pre :] = 1.0

    col_y = (a @ y) / a_tot
    col_w = (a @ w) / a_tot
    ry = y - col_y[None, :]
    rw = w - col_w[None, :]
    denom = float((a @ (rw * rw)).sum())
    tau = float((a @ (rw * ry)).sum()) / denom

    z = y - tau * w
    col_z = (a @ z) / a_tot
    mu = float(col_z.mean())
    weights = WeightSet(
        omega0=0.0, omega=omega, lambda0=None, lambda_=None, zeta=zeta, gap=gap
    )
    return Estimate(
        tau_hat=tau,
        method="sc",
        weights=weights,
        fixed_effects=FixedEffects(mu=mu, alpha=None, beta=col_z - mu),
    )


def adjusted_outcomes(
    panel: Optional[Panel], design: BlockDesign, method: str, tol=None
) -> InfluenceTable:
    """Per-unit adjusted outcomes whose weighted contrast reproduces tau.

    The adjusted outcome is the post-period average minus a method-specific
    pre-period contrast: the uniform pre average for ``did``, nothing for
    ``sc``, and the time-weighted pre average for ``sdid``.
    """
    _check_panel(panel, design)
    y_pre = design.y[:, : design.t_pre]
    y_post = design.y[:, design.t_pre :]
    post_mean = y_post.mean(axis=1)

    if method == "did":
        delta = post_mean - y_pre.mean(axis=1)
        omega = np.full(design.n_co, 1.0 / design.n_co)
    elif method == "sc":
        delta = post_mean.copy()
        omega, _ = sc_weights(design, compute_zeta(design.y_co_pre), tol=tol)
    elif method == "sdid":
        ws = sdid_weights(design, tol=tol)
        delta = post_mean - y_pre @ ws.lambda_
        omega = ws.omega
    else:
        raise ValueError(f"no adjusted-outcome form for method {method!r}")

    n_co = design.n_co
    delta_treated = float(delta[n_co:].mean())
    delta_controls = delta[:n_co]
    influence = omega * (delta_treated - delta_controls)
    return InfluenceTable(
        units=design.control_labels,
        delta=delta_controls,
        omega=omega,
        influence=influence,
        delta_treated=delta_treated,
        method=method,
        tau_hat=delta_treated - float(omega @ delta_controls),
    )


# --- fast point-estimate paths used by the resampling loops -----------------


def _tau_sdid(y: np.ndarray, n_co: int, t_pre: int, tol=None) -> float:
    design = design_from_matrix(y, n_co, t_pre)
    ws = sdid_weights(design, tol=tol)
    a, b = _margins(design.n_co, design.n_tr, design.t_pre, design.t_post, ws)
    w = np.zeros_like(design.y)
    w[n_co:, t_pre:] = 1.0
    tau, _, _ = _tau_weighted_twfe(design.y, w, a, b)
    return tau


def _tau_did(y: np.ndarray, n_co: int, t_pre: int, tol=None) -> float:
    tr_post = y[n_co:, t_pre:].mean()
    tr_pre = y[n_co:, :t_pre].mean()
    co_post = y[:n_co, t_pre:].mean()
    co_pre = y[:n_co, :t_pre].mean()
    return float(tr_post - tr_pre - co_post + co_pre)


def _tau_sc(y: np.ndarray, n_co: int, t_pre: int, tol=None) -> float:
    design = design_from_matrix(y, n_co, t_pre)
    omega, _ = sc_weights(design, compute_zeta(design.y_co_pre), tol=tol)
    gaps = design.y_tr_post.mean(axis=0) - omega @ design.y_co_post
    return float(gaps.mean())


POINT_ESTIMATORS = {"sdid": _tau_sdid, "did": _tau_did, "sc": _tau_sc}
