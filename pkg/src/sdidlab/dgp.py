"""Latent-factor data-generating processes calibrated from real panels.

Calibration takes an observed outcome matrix, normalizes it, fits a low-rank
systematic component, splits that into an additive two-way part plus a
double-centered interactive part, fits an AR(2) noise covariance to the
residuals, and models treatment propensities with a logistic regression of a
binary unit trait on the unit effect and the interactive rows.  The result is
a :class:`DgpSpec` from which placebo panels are simulated.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional

import numpy as np
from scipy.linalg import toeplitz

from .panel import Panel, block_treatment_matrix


class NonstationaryError(ValueError):
    """Fitted AR(2) coefficients lie outside the stationary region."""

    def __init__(self, message, roots):
        super().__init__(message)
        self.roots = roots


@dataclass(frozen=True)
class DgpSpec:
    """A calibrated generator: systematic component, noise law, propensities.

    Invariants checked at construction: ``L = F + M`` with M double-centered,
    ``sigma`` symmetric positive semidefinite, AR(2) coefficients stationary,
    and propensities strictly inside (0, 1).  ``scale`` records the
    normalization (mean, sd) applied to the source outcomes before
    calibration, so simulated panels can be mapped back to raw units.
    """

    l_mat: np.ndarray
    f_mat: np.ndarray
    m_mat: np.ndarray
    sigma: np.ndarray
    ar_coefs: tuple
    pi: np.ndarray
    tau: float = 0.0
    scale: dict = field(default_factory=lambda: {"mean": 0.0, "sd": 1.0})
    unit_labels: Optional[tuple] = None

    def __post_init__(self):
        l_mat = np.asarray(self.l_mat, dtype=float)
        f_mat = np.asarray(self.f_mat, dtype=float)
        m_mat = np.asarray(self.m_mat, dtype=float)
        sigma = np.asarray(self.sigma, dtype=float)
        pi = np.asarray(self.pi, dtype=float)
        n, t = l_mat.shape
        scale_ref = max(float(np.abs(l_mat).max()), 1.0)
        if not np.allclose(l_mat, f_mat + m_mat, atol=1e-9 * scale_ref):
            raise ValueError("L must equal F + M")
        if np.abs(m_mat.mean(axis=0)).max() > 1e-8 * scale_ref or np.abs(
            m_mat.mean(axis=1)
        ).max() > 1e-8 * scale_ref:
            raise ValueError("M must be double-centered (zero row and column means)")
        if sigma.shape != (t, t):
            raise ValueError(f"sigma must be {t}x{t}, got {sigma.shape}")
        if not np.allclose(sigma, sigma.T, atol=1e-10 * max(1.0, np.abs(sigma).max())):
            raise ValueError("sigma must be symmetric")
        eigvals = np.linalg.eigvalsh(sigma)
        if eigvals.min() < -1e-8 * max(1.0, eigvals.max()):
            raise ValueError(f"sigma is not PSD (min eigenvalue {eigvals.min():.3e})")
        _check_stationary(self.ar_coefs)
        if pi.shape != (n,):
            raise ValueError("pi must have one probability per unit")
        if np.any(pi <= 0.0) or np.any(pi >= 1.0):
            raise ValueError("assignment probabilities must lie strictly in (0, 1)")
        for name, arr in (
            ("l_mat", l_mat), ("f_mat", f_mat), ("m_mat", m_mat),
            ("sigma", sigma), ("pi", pi),
        ):
            arr = np.ascontiguousarray(arr)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "ar_coefs", tuple(float(c) for c in self.ar_coefs))
        if self.unit_labels is not None:
            object.__setattr__(self, "unit_labels", tuple(self.unit_labels))

    @property
    def shape(self):
        return self.l_mat.shape

    def scales(self) -> dict:
        """Calibration echo: component magnitudes in normalized units."""
        n, t = self.l_mat.shape
        root_nt = np.sqrt(n * t)
        return {
            "f_scale": float(np.linalg.norm(self.f_mat) / root_nt),
            "m_scale": float(np.linalg.norm(self.m_mat) / root_nt),
            "noise_scale": float(np.sqrt(np.linalg.norm(self.sigma, 2))),
            "ar_coefs": self.ar_coefs,
        }

    def to_dict(self) -> dict:
        return {
            "l": self.l_mat.tolist(),
            "f": self.f_mat.tolist(),
            "m": self.m_mat.tolist(),
            "sigma": self.sigma.tolist(),
            "ar_coefs": list(self.ar_coefs),
            "pi": self.pi.tolist(),
            "tau": self.tau,
            "scale": self.scale,
            "unit_labels": None if self.unit_labels is None else list(self.unit_labels),
        }

    def to_json(self, destination=None):
        text = json.dumps(self.to_dict(), sort_keys=True)
        if destination is None:
            return text
        with open(destination, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        return None

    @classmethod
    def from_dict(cls, data: dict) -> "DgpSpec":
        return cls(
            l_mat=np.asarray(data["l"], dtype=float),
            f_mat=np.asarray(data["f"], dtype=float),
            m_mat=np.asarray(data["m"], dtype=float),
            sigma=np.asarray(data["sigma"], dtype=float),
            ar_coefs=tuple(data["ar_coefs"]),
            pi=np.asarray(data["pi"], dtype=float),
            tau=float(data.get("tau", 0.0)),
            scale=dict(data.get("scale", {"mean": 0.0, "sd": 1.0})),
            unit_labels=None
            if data.get("unit_labels") is None
            else tuple(data["unit_labels"]),
        )

    @classmethod
    def from_json(cls, source) -> "DgpSpec":
        if hasattr(source, "read"):
            return cls.from_dict(json.load(source))
        with open(source, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _check_stationary(ar_coefs):
    rho1, rho2 = (float(c) for c in ar_coefs)
    # stationarity triangle for an AR(2)
    if not (abs(rho2) < 1 and rho1 + rho2 < 1 and rho2 - rho1 < 1):
        roots = np.roots([-rho2, -rho1, 1.0]) if (rho1, rho2) != (0.0, 0.0) else np.array([])
        raise NonstationaryError(
            f"AR(2) coefficients ({rho1:.4f}, {rho2:.4f}) are nonstationary; "
            f"characteristic roots {roots}",
            roots=roots,
        )


def fit_low_rank(y_star: np.ndarray, rank: int) -> np.ndarray:
    """Best rank-``rank`` approximation in squared error (truncated SVD)."""
    y = np.asarray(y_star, dtype=float)
    if rank < 1 or rank > min(y.shape):
        raise ValueError(f"rank must be in [1, {min(y.shape)}], got {rank}")
    u, s, vt = np.linalg.svd(y, full_matrices=False)
    return (u[:, :rank] * s[:rank]) @ vt[:rank]


def decompose_additive(l_mat: np.ndarray):
    """Split L into an additive two-way part F and a double-centered M.

    ``F[i, t]`` is row mean + column mean - grand mean; ``M = L - F`` has row
    and column means of zero by construction.
    """
    l_mat = np.asarray(l_mat, dtype=float)
    row = l_mat.mean(axis=1, keepdims=True)
    col = l_mat.mean(axis=0, keepdims=True)
    grand = l_mat.mean()
    f_mat = row + col - grand
    return f_mat, l_mat - f_mat


def fit_ar2_covariance(residuals: np.ndarray):
    """Pooled Yule-Walker AR(2) fit; returns (sigma, (rho1, rho2)).

    Autocovariances at lags 0..2 are pooled across units (rows share one noise
    law), the two coefficients solve the Yule-Walker system, and ``sigma`` is
    the implied stationary T x T covariance.

    Raises
    ------
    NonstationaryError
        If the fitted coefficients fall outside the stationary triangle.
    """
    r = np.asarray(residuals, dtype=float)
    if r.ndim != 2 or r.shape[1] < 3:
        raise ValueError("residuals must be N x T with T >= 3")
    n, t = r.shape
    r = r - r.mean()
    gammas = []
    for k in range(3):
        prod = r[:, : t - k] * r[:, k:]
        gammas.append(float(prod.sum()) / (n * (t - k)))
    g0, g1, g2 = gammas
    if g0 <= 0:
        rho1 = rho2 = 0.0
        innov = 0.0
    else:
        mat = np.array([[g0, g1], [g1, g0]])
        rho1, rho2 = np.linalg.solve(mat, np.array([g1, g2]))
        innov = max(g0 - rho1 * g1 - rho2 * g2, 0.0)
    _check_stationary((rho1, rho2))

    # stationary autocovariance sequence implied by the fit
    if innov == 0.0:
        acov = np.zeros(t)
    else:
        denom = (1 + rho2) * ((1 - rho2) ** 2 - rho1**2)
        a0 = innov * (1 - rho2) / denom
        a1 = rho1 * a0 / (1 - rho2)
        acov = np.empty(t)
        acov[0], acov[1] = a0, a1
        for k in range(2, t):
            acov[k] = rho1 * acov[k - 1] + rho2 * acov[k - 2]
    return toeplitz(acov), (float(rho1), float(rho2))


@dataclass(frozen=True)
class AssignmentFit:
    """Logistic assignment model: intercept, trait loadings, fitted propensities."""

    phi0: float
    phi_alpha: float
    phi_m: np.ndarray
    pi: np.ndarray
    pseudo_r2: float
    separated: bool


def _irls(x, d, penalty, max_iter=100, tol=1e-10):
    n, p = x.shape
    beta = np.zeros(p)
    for _ in range(max_iter):
        eta = x @ beta
        prob = 1.0 / (1.0 + np.exp(-np.clip(eta, -700, 700)))
        grad = x.T @ (d - prob) - penalty * beta
        wdiag = np.maximum(prob * (1.0 - prob), 1e-12)
        hess = x.T @ (wdiag[:, None] * x) + np.diag(penalty)
        step = np.linalg.solve(hess, grad)
        beta = beta + step
        if not np.all(np.isfinite(beta)) or np.abs(beta).max() > 1e6:
            raise np.linalg.LinAlgError("diverged")
        if np.abs(step).max() < tol:
            return beta, True
    return beta, False


def fit_assignment(d: np.ndarray, alpha: np.ndarray, m_rows: np.ndarray) -> AssignmentFit:
    """Logistic regression of a binary trait on unit effects and interactive rows.

    Fits ``P(D=1) = logistic(phi0 + phi_alpha * alpha_i + phi_m . M_i)`` by
    iteratively reweighted least squares.  When the unpenalized fit separates
    (diverging coefficients or a singular step), it falls back to a ridge
    penalty of ``1e-4 * N`` on the non-intercept coefficients and warns.
    Fitted propensities are clipped to the open interval (0, 1).
    """
    d = np.asarray(d, dtype=float).ravel()
    alpha = np.asarray(alpha, dtype=float).ravel()
    m_rows = np.asarray(m_rows, dtype=float)
    n = d.shape[0]
    if set(np.unique(d)) - {0.0, 1.0}:
        raise ValueError("d must be binary")
    if alpha.shape[0] != n or m_rows.shape[0] != n:
        raise ValueError("alpha and m_rows must have one row per unit")
    x = np.column_stack([np.ones(n), alpha, m_rows])
    p = x.shape[1]

    separated = False
    no_penalty = np.zeros(p)
    try:
        beta, converged = _irls(x, d, no_penalty)
        if not converged or np.abs(x @ beta).max() > 30.0:
            raise np.linalg.LinAlgError("separation suspected")
    except np.linalg.LinAlgError:
        separated = True
        warnings.warn(
            "assignment model separates; refit with ridge penalty 1e-4 * N",
            RuntimeWarning,
            stacklevel=2,
        )
        penalty = np.full(p, 1e-4 * n)
        penalty[0] = 0.0
        beta, _ = _irls(x, d, penalty, max_iter=500)

    eta = x @ beta
    pi = 1.0 / (1.0 + np.exp(-np.clip(eta, -700, 700)))
    pi = np.clip(pi, 1e-12, 1.0 - 1e-12)
    loglik = float(np.sum(d * np.log(pi) + (1 - d) * np.log1p(-pi)))
    base = min(max(d.mean(), 1e-12), 1 - 1e-12)
    loglik_null = float(n * (base * np.log(base) + (1 - base) * np.log1p(-base)))
    pseudo_r2 = 1.0 - loglik / loglik_null if loglik_null != 0.0 else 0.0
    return AssignmentFit(
        phi0=float(beta[0]),
        phi_alpha=float(beta[1]),
        phi_m=beta[2:].copy(),
        pi=pi,
        pseudo_r2=float(pseudo_r2),
        separated=separated,
    )


def _noise_factor(sigma: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(sigma)
        return vecs * np.sqrt(np.clip(vals, 0.0, None))


def simulate_blocks(spec: DgpSpec, n_tr: int, t_post: int, seed):
    """Simulate one panel, returned as a controls-first outcome matrix.

    Returns ``(y, n_co, t_pre)``.  The treated set has exactly ``n_tr`` units
    drawn sequentially without replacement with probability proportional to
    the generator's propensities; noise rows are i.i.d. normal with the
    generator's covariance; treatment adds ``spec.tau`` on the trailing block.
    """
    n, t = spec.shape
    if not 1 <= n_tr < n:
        raise ValueError(f"need 1 <= n_tr < {n}, got {n_tr}")
    if not 1 <= t_post < t:
        raise ValueError(f"need 1 <= t_post < {t}, got {t_post}")
    rng = np.random.default_rng(seed)
    treated = rng.choice(n, size=n_tr, replace=False, p=spec.pi / spec.pi.sum())
    noise = rng.standard_normal((n, t)) @ _noise_factor(spec.sigma).T
    y = spec.l_mat + noise
    mask = np.zeros(n, dtype=bool)
    mask[treated] = True
    y[mask, t - t_post :] += spec.tau
    return np.concatenate([y[~mask], y[mask]]), n - n_tr, t - t_post, mask


def simulate_panel(spec: DgpSpec, n_tr: int, t_post: int, seed) -> Panel:
    """Simulate a balanced panel with block treatment from a calibrated spec."""
    n, t = spec.shape
    y_blocks, n_co, t_pre, mask = simulate_blocks(spec, n_tr, t_post, seed)
    labels = spec.unit_labels or tuple(f"u{i:03d}" for i in range(n))
    ordered = [labels[i] for i in np.flatnonzero(~mask)] + [
        labels[i] for i in np.flatnonzero(mask)
    ]
    w = block_treatment_matrix(n, t, n_tr, t_post)
    return Panel(y_blocks, w, tuple(ordered), tuple(range(t)))


def calibrate_dgp(
    y_star,
    rank: int = 4,
    assignment: Optional[np.ndarray] = None,
    normalize: bool = True,
    unit_labels=None,
) -> DgpSpec:
    """Calibrate a :class:`DgpSpec` from an observed outcome matrix.

    ``y_star`` may be a Panel or an (N, T) array.  Outcomes are normalized to
    mean zero and unit variance (recorded in ``scale``) before fitting unless
    ``normalize=False``.  ``assignment`` is an optional binary unit trait used
    to fit treatment propensities; without it every unit gets propensity 1/2.
    """
    if isinstance(y_star, Panel):
        if unit_labels is None:
            unit_labels = y_star.unit_labels
        y_star = y_star.outcomes
    y = np.asarray(y_star, dtype=float)
    if normalize:
        mean, sd = float(y.mean()), float(y.std())
        if sd == 0.0:
            raise ValueError("cannot normalize a constant outcome matrix")
        y = (y - mean) / sd
        scale = {"mean": mean, "sd": sd}
    else:
        scale = {"mean": 0.0, "sd": 1.0}

    l_mat = fit_low_rank(y, rank)
    f_mat, m_mat = decompose_additive(l_mat)
    sigma, ar_coefs = fit_ar2_covariance(y - l_mat)
    if assignment is None:
        pi = np.full(y.shape[0], 0.5)
    else:
        alpha = l_mat.mean(axis=1) - l_mat.mean()
        pi = fit_assignment(np.asarray(assignment), alpha, m_mat).pi
    return DgpSpec(
        l_mat=l_mat,
        f_mat=f_mat,
        m_mat=m_mat,
        sigma=sigma,
        ar_coefs=ar_coefs,
        pi=pi,
        tau=0.0,
        scale=scale,
        unit_labels=unit_labels,
    )


def load_state_laws() -> dict:
    """Bundled binary state-policy indicators keyed by column name.

    Returns ``{'state': [...], 'min_wage': array, 'open_carry': array,
    'abortion': array}`` for the 50 US states in alphabetical order.
    """
    with resources.files("sdidlab.data").joinpath("state_laws.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    return {
        "state": [r["state"] for r in rows],
        "min_wage": np.array([int(r["min_wage"]) for r in rows]),
        "open_carry": np.array([int(r["open_carry"]) for r in rows]),
        "abortion": np.array([int(r["abortion"]) for r in rows]),
    }
