"""Variance estimation and confidence intervals.

Three estimators of the sampling variance of a treatment-effect estimate:

* unit-level bootstrap: resample rows with replacement, re-run the full
  estimation pipeline (including weight solving) per accepted resample;
* weighted jackknife: leave-one-unit-out deviations in closed form with the
  weights held fixed;
* placebo resampling: re-run estimation on control units with a random subset
  relabeled as treated.

All resampling is driven by one master seed that spawns an independent child
stream per replicate, so a given seed yields bit-identical results whether
replicates run serially or across processes.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.stats import norm

from .estimators import POINT_ESTIMATORS
from .panel import BlockDesign, Panel
from .solver import WeightSet

MAX_REDRAWS_PER_REPLICATE = 100
VARIANCE_METHODS = ("bootstrap", "jackknife", "placebo")


class JackknifeUndefinedError(ValueError):
    """Leave-one-out variance needs at least two treated units."""


@dataclass(frozen=True)
class VarianceEstimate:
    """A nonnegative variance with its method, replicate count, and seed."""

    v_hat: float
    method: str
    replicates: int
    seed: Optional[int] = None

    def __post_init__(self):
        if self.method not in VARIANCE_METHODS:
            raise ValueError(f"unknown variance method {self.method!r}")
        if self.v_hat < 0:
            raise ValueError("variance cannot be negative")
        if self.replicates < 2:
            raise ValueError("need at least 2 replicates")

    @property
    def se(self) -> float:
        return math.sqrt(self.v_hat)


def _variance_divisor_b(taus) -> float:
    """Sample variance with divisor B, summed compensated for order stability."""
    b = len(taus)
    mean = math.fsum(taus) / b
    return math.fsum((t - mean) ** 2 for t in taus) / b


def _seed_sequence(seed):
    if isinstance(seed, np.random.SeedSequence):
        return seed, None
    return np.random.SeedSequence(seed), seed


def _chunks(n: int, n_jobs: int):
    size = -(-n // n_jobs)
    return [(lo, min(lo + size, n)) for lo in range(0, n, size)]


def _bootstrap_chunk(args):
    y, n_co, t_pre, estimator, seeds = args
    point = POINT_ESTIMATORS[estimator]
    n = y.shape[0]
    taus = []
    for seq in seeds:
        rng = np.random.default_rng(seq)
        for _ in range(MAX_REDRAWS_PER_REPLICATE):
            idx = rng.integers(0, n, n)
            ctrl = idx[idx < n_co]
            trt = idx[idx >= n_co]
            if 0 < trt.size < n:
                break
        else:
            raise RuntimeError(
                f"no valid resample in {MAX_REDRAWS_PER_REPLICATE} redraws; "
                "treated share too extreme for unit bootstrap"
            )
        yb = y[np.concatenate([ctrl, trt])]
        taus.append(point(yb, int(ctrl.size), t_pre))
    return taus


def _placebo_chunk(args):
    y_controls, n_placebo_tr, t_pre, estimator, seeds = args
    point = POINT_ESTIMATORS[estimator]
    n_co = y_controls.shape[0]
    taus = []
    for seq in seeds:
        rng = np.random.default_rng(seq)
        chosen = rng.choice(n_co, size=n_placebo_tr, replace=False)
        mask = np.zeros(n_co, dtype=bool)
        mask[chosen] = True
        yb = np.concatenate([y_controls[~mask], y_controls[mask]])
        taus.append(point(yb, n_co - n_placebo_tr, t_pre))
    return taus


def _run_replicates(worker, static_args, seeds, n_jobs: int):
    if n_jobs <= 1 or len(seeds) < 2:
        return worker(static_args + (seeds,))
    taus = []
    jobs = [static_args + (seeds[lo:hi],) for lo, hi in _chunks(len(seeds), n_jobs)]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        for part in pool.map(worker, jobs):
            taus.extend(part)
    return taus


def bootstrap_variance(
    panel: Optional[Panel],
    design: BlockDesign,
    estimator: str = "sdid",
    b: int = 400,
    seed: int = 0,
    n_jobs: int = 1,
) -> VarianceEstimate:
    """Clustered (unit-level) bootstrap variance.

    Draws ``b`` resamples of the unit rows with replacement, discarding and
    redrawing any resample whose treated count is 0 or N (at most 100 redraws
    per replicate).  Each accepted resample re-runs the full estimator,
    including regularization and weight solving.  The variance uses divisor
    ``b``.
    """
    if estimator not in POINT_ESTIMATORS:
        raise ValueError(f"unknown estimator {estimator!r}")
    if b < 2:
        raise ValueError("need at least 2 bootstrap replicates")
    n = design.y.shape[0]
    if design.n_tr >= n or design.n_co == 0:
        raise ValueError("bootstrap needs both treated and control units")
    root, seed_echo = _seed_sequence(seed)
    taus = _run_replicates(
        _bootstrap_chunk, (design.y, design.n_co, design.t_pre, estimator),
        root.spawn(b), n_jobs,
    )
    return VarianceEstimate(
        v_hat=_variance_divisor_b(taus), method="bootstrap", replicates=b, seed=seed_echo
    )


def jackknife_variance(
    panel: Optional[Panel],
    design: BlockDesign,
    weights: WeightSet,
    tau_hat: float,
) -> VarianceEstimate:
    """Leave-one-unit-out variance with the weights treated as fixed.

    Dropping a unit renormalizes the remaining weights within its group, which
    reduces to a closed form: the leave-out deviation for control unit i is
    ``omega_i (D_i - m_co) / (1 - omega_i)`` where ``D_i`` is the unit's
    time-weighted post-minus-pre contrast and ``m_co`` the weighted control
    mean of the contrasts, and symmetrically for treated units.  Equals a
    brute-force re-solve of the weighted regression without the unit.

    Raises
    ------
    JackknifeUndefinedError
        When there are fewer than two treated units.
    """
    if design.n_tr < 2:
        raise JackknifeUndefinedError(
            f"jackknife needs n_tr >= 2, got {design.n_tr}"
        )
    if weights.lambda_ is None:
        raise ValueError("jackknife needs time weights (lambda is None)")
    y = design.y
    n_co, t_pre = design.n_co, design.t_pre
    n = y.shape[0]
    contrast = y[:, t_pre:].mean(axis=1) - y[:, :t_pre] @ weights.lambda_
    omega = weights.omega
    if np.any(1.0 - omega <= 1e-12):
        raise ValueError(
            "a control unit carries weight 1; leave-one-out is undefined"
        )
    m_co = float(omega @ contrast[:n_co])
    m_tr = float(contrast[n_co:].mean())
    dev_co = omega * (contrast[:n_co] - m_co) / (1.0 - omega)
    dev_tr = -(contrast[n_co:] - m_tr) / (design.n_tr - 1.0)
    loo = np.concatenate([tau_hat + dev_co, tau_hat + dev_tr])
    v = (n - 1) / n * math.fsum((t - tau_hat) ** 2 for t in loo)
    return VarianceEstimate(v_hat=v, method="jackknife", replicates=n, seed=None)


def placebo_variance(
    panel: Optional[Panel],
    design: BlockDesign,
    n_tr: Optional[int] = None,
    b: int = 400,
    seed: int = 0,
    estimator: str = "sdid",
    n_jobs: int = 1,
) -> VarianceEstimate:
    """Placebo-assignment variance from control units only.

    Each replicate samples ``n_tr`` of the control units without replacement,
    relabels them as treated over the original post-period block, and re-runs
    the full estimator.  Requires more controls than placebo-treated units.
    Valid under homoskedasticity across units; this is the only method defined
    at a single treated unit.
    """
    if estimator not in POINT_ESTIMATORS:
        raise ValueError(f"unknown estimator {estimator!r}")
    if b < 2:
        raise ValueError("need at least 2 placebo replicates")
    n_placebo = design.n_tr if n_tr is None else int(n_tr)
    if not 1 <= n_placebo < design.n_co:
        raise ValueError(
            f"placebo needs 1 <= n_tr < n_co, got n_tr={n_placebo}, n_co={design.n_co}"
        )
    y_controls = design.y[: design.n_co]
    root, seed_echo = _seed_sequence(seed)
    taus = _run_replicates(
        _placebo_chunk, (y_controls, n_placebo, design.t_pre, estimator),
        root.spawn(b), n_jobs,
    )
    return VarianceEstimate(
        v_hat=_variance_divisor_b(taus), method="placebo", replicates=b, seed=seed_echo
    )


def confidence_interval(tau_hat: float, v_hat: float, alpha: float = 0.05):
    """Two-sided normal interval tau_hat +/- z_{alpha/2} * sqrt(v_hat)."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must be in (0, 1)")
    if v_hat < 0:
        raise ValueError("variance cannot be negative")
    half = float(norm.ppf(1.0 - alpha / 2.0)) * math.sqrt(v_hat)
    return tau_hat - half, tau_hat + half


def lambda_generalization_diagnostic(design: BlockDesign, weights: WeightSet) -> float:
    """How well the time weights fitted on controls transfer to treated rows.

    Returns ``t_post / n_tr`` times the squared error of predicting each
    treated unit's post-period average from its time-weighted pre-period
    average, using the intercept fitted on the controls.  Zero means the
    pre-to-post regression generalizes exactly; large values flag designs
    where fixed-weight inference (the jackknife in particular) tends to be
    conservative.  Computed on outcomes, so it proxies for, rather than
    measures, the systematic component's fit.
    """
    if weights.lambda_ is None or weights.lambda0 is None:
        raise ValueError("diagnostic needs fitted time weights (lambda is None)")
    resid = (weights.lambda0 + design.y_tr_pre @ weights.lambda_
             - design.y_tr_post.mean(axis=1))
    return float(design.t_post / design.n_tr * (resid @ resid))
