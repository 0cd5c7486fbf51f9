"""Deterministic synthetic source panels for the placebo laboratory.

The real wage and GDP panels behind the shipped studies cannot be
redistributed, so these generators build stand-ins with the same anatomy:
dominant additive unit/time structure, a smaller interactive component whose
unit loadings correlate with observable policy traits, and weakly or strongly
autocorrelated noise.  Calibrating a generator from one of these panels
reproduces the component scales that the reporting layer echoes.

Everything here is a pure function of its seed.
"""

from __future__ import annotations

import numpy as np

from .dgp import DgpSpec, calibrate_dgp, load_state_laws
from .panel import Panel, block_treatment_matrix

WAGE_SEED = 20240501
GDP_SEED = 20240502


def _standardize(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return (v - v.mean()) / v.std()


def _unit_norm_factor(rng: np.random.Generator, t: int, drift: float) -> np.ndarray:
    """Smooth time factor with a pre-to-post drift, mean 0 and mean square 1."""
    walk = np.cumsum(rng.normal(size=t))
    walk = walk + drift * np.linspace(-1.0, 1.0, t) * np.std(walk)
    walk -= walk.mean()
    return walk / np.sqrt(np.mean(walk**2))


def wage_panel(seed: int = WAGE_SEED):
    """State-by-year panel shaped like average log wages; 50 units x 40 periods.

    Unit levels and the leading interactive loading are tilted toward the
    bundled minimum-wage indicator, so propensities fitted on that indicator
    are confounded with both the level and the trend of the outcome.  Returns
    ``(panel, laws)`` where ``laws`` is the state-policy table aligned with
    the panel's unit order.
    """
    laws = load_state_laws()
    n, t = 50, 40
    rng = np.random.default_rng(seed)
    z = _standardize(laws["min_wage"])

    alpha = 0.87 * _standardize(rng.normal(size=n) + 0.45 * z)
    years = np.arange(t)
    beta = 0.48 * _standardize(0.9 * years / t + 0.08 * np.cumsum(rng.normal(size=t)))

    gamma1 = _standardize(rng.normal(size=n) + 0.35 * z)
    gamma2 = _standardize(rng.normal(size=n))
    gamma3 = _standardize(rng.normal(size=n))
    gamma4 = _standardize(rng.normal(size=n))
    u1 = _unit_norm_factor(rng, t, drift=1.8)
    u2 = _unit_norm_factor(rng, t, drift=0.0)
    u3 = _unit_norm_factor(rng, t, drift=0.0)
    u4 = _unit_norm_factor(rng, t, drift=0.0)
    m = (0.070 * np.outer(gamma1, u1)
         + 0.045 * np.outer(gamma2, u2)
         + 0.033 * np.outer(gamma3, u3)
         + 0.028 * np.outer(gamma4, u4))

    noise = _ar2_noise(rng, n, t, rho=(0.01, -0.06), innovation_sd=0.080)
    y = alpha[:, None] + beta[None, :] + m + noise
    panel = Panel(
        y,
        np.zeros((n, t), dtype=np.int8),
        tuple(laws["state"]),
        tuple(range(1979, 1979 + t)),
    )
    return panel, laws


def gdp_panel(seed: int = GDP_SEED):
    """Country-by-year panel shaped like log real GDP; 111 units x 48 periods.

    The interactive component is large and its loadings drive a synthetic
    "democracy" trait, while the noise is strongly autocorrelated; this is the
    regime where uniform-weight double differencing breaks down.  Returns
    ``(panel, democracy)`` with the binary trait aligned to the unit order.
    """
    n, t = 111, 48
    rng = np.random.default_rng(seed)

    gamma1 = _standardize(rng.normal(size=n))
    democracy = (gamma1 + 0.35 * rng.normal(size=n) > 0.2).astype(int)

    alpha = 0.80 * _standardize(rng.normal(size=n) + 0.45 * gamma1)
    years = np.arange(t)
    beta = 0.52 * _standardize(1.1 * years / t + 0.05 * np.cumsum(rng.normal(size=t)))

    gamma2 = _standardize(rng.normal(size=n))
    u1 = _unit_norm_factor(rng, t, drift=1.5)
    u2 = _unit_norm_factor(rng, t, drift=0.0)
    m = 0.21 * np.outer(gamma1, u1) + 0.09 * np.outer(gamma2, u2)

    noise = _ar2_noise(rng, n, t, rho=(0.91, -0.22), innovation_sd=0.016)
    y = alpha[:, None] + beta[None, :] + m + noise
    panel = Panel(
        y,
        np.zeros((n, t), dtype=np.int8),
        tuple(f"c{i:03d}" for i in range(n)),
        tuple(range(1960, 1960 + t)),
    )
    return panel, democracy


def _ar2_noise(rng, n, t, rho, innovation_sd):
    rho1, rho2 = rho
    burn = 50
    e = np.empty((n, t + burn))
    innov = rng.normal(scale=innovation_sd, size=(n, t + burn))
    e[:, 0] = innov[:, 0]
    e[:, 1] = rho1 * e[:, 0] + innov[:, 1]
    for k in range(2, t + burn):
        e[:, k] = rho1 * e[:, k - 1] + rho2 * e[:, k - 2] + innov[:, k]
    return e[:, burn:]


def wage_spec(seed: int = WAGE_SEED, assignment: str = "min_wage") -> DgpSpec:
    """Calibrated generator for the wage-like panel.

    ``assignment`` is one of the bundled policy columns (``min_wage``,
    ``open_carry``, ``abortion``) or ``random`` for uniform propensities.
    """
    panel, laws = wage_panel(seed)
    trait = None if assignment == "random" else laws[assignment]
    return calibrate_dgp(panel, rank=4, assignment=trait)


def gdp_spec(seed: int = GDP_SEED, assignment: str = "democracy") -> DgpSpec:
    """Calibrated generator for the GDP-like panel (strong interactive part)."""
    panel, democracy = gdp_panel(seed)
    trait = None if assignment == "random" else democracy
    return calibrate_dgp(panel, rank=4, assignment=trait)


def additive_spec(
    n: int = 30,
    t: int = 20,
    noise_sd: float = 0.1,
    seed: int = 7,
    tau: float = 0.0,
) -> DgpSpec:
    """Exactly additive generator with i.i.d. noise and uniform propensities.

    The regime where every estimator is unbiased and fixed-weight leave-out
    intervals are exact; used for coverage checks.
    """
    rng = np.random.default_rng(seed)
    alpha = rng.normal(size=n)
    beta = rng.normal(size=t)
    l_mat = alpha[:, None] + beta[None, :]
    f_mat, m_mat = l_mat, np.zeros_like(l_mat)
    return DgpSpec(
        l_mat=l_mat,
        f_mat=f_mat,
        m_mat=m_mat,
        sigma=noise_sd**2 * np.eye(t),
        ar_coefs=(0.0, 0.0),
        pi=np.full(n, 0.5),
        tau=tau,
    )


def demo_block_panel(spec: DgpSpec, n_tr: int, t_post: int, seed) -> Panel:
    """Simulated panel with its block treatment matrix, for CLI smoke tests."""
    from .dgp import simulate_panel

    return simulate_panel(spec, n_tr, t_post, seed)


def prop99_like_panel(seed: int = 3, n: int = 39, t: int = 31) -> Panel:
    """Small single-treated-unit panel in the shape of the tobacco study."""
    rng = np.random.default_rng(seed)
    alpha = rng.normal(110.0, 15.0, size=n)
    beta = -1.2 * np.arange(t) + rng.normal(0, 2.0, size=t)
    gamma = rng.normal(0, 1, size=n)
    u = np.cumsum(rng.normal(0, 1, size=t))
    y = alpha[:, None] + beta[None, :] + 4.0 * np.outer(gamma, u / np.std(u)) \
        + rng.normal(0, 3.0, size=(n, t))
    w = block_treatment_matrix(n, t, 1, 12)
    return Panel(y, w, tuple(f"s{i:02d}" for i in range(n)), tuple(range(1970, 1970 + t)))
