"""Monte Carlo placebo experiments over calibrated generators.

Each replicate simulates a panel from a :class:`~sdidlab.dgp.DgpSpec`,
computes the requested point estimates, and (optionally) a variance estimate
per requested method.  Replicates run serially or in a process pool with
bit-identical results: one master seed spawns a child stream per replicate up
front, and aggregation uses compensated sums so it is independent of
completion order.

``simulate_draws`` produces the per-replicate table (what the CLI's
``simulate`` subcommand writes) and ``aggregate_draws`` folds it into a
:class:`SimulationReport` (the ``report`` subcommand).
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .completion import _tau_mc
from .dgp import DgpSpec, simulate_blocks
from .estimators import POINT_ESTIMATORS, did_weights, sdid_weights
from .inference import (
    bootstrap_variance,
    confidence_interval,
    jackknife_variance,
    placebo_variance,
)
from .panel import design_from_matrix

ALL_ESTIMATORS = ("sdid", "sc", "did", "mc")


@dataclass(frozen=True)
class Draw:
    """One replicate's estimate for one estimator, plus variance estimates."""

    rep: int
    estimator: str
    tau_hat: float
    v_hats: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SimulationReport:
    """Aggregated accuracy and coverage metrics for one experiment.

    ``rmse`` and ``bias`` are per estimator; ``coverage`` and
    ``mean_ci_length`` are nested per estimator then variance method.
    ``echo`` carries the generator's component scales so reports are
    self-describing.
    """

    estimators: tuple
    variance_methods: tuple
    reps: int
    seed: int
    tau: float
    rmse: dict
    bias: dict
    coverage: dict
    mean_ci_length: dict
    echo: dict
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        for est in self.estimators:
            if self.rmse[est] ** 2 < self.bias[est] ** 2 - 1e-12:
                raise ValueError(f"rmse < |bias| for {est}; aggregation bug")
        for est, per_method in self.coverage.items():
            for method, cov in per_method.items():
                if cov is not None and not 0.0 <= cov <= 1.0:
                    raise ValueError(f"coverage out of [0,1] for {est}/{method}")

    def to_csv(self, destination=None, metadata: Optional[dict] = None):
        """Write one row per estimator; columns hold rmse, bias, coverage."""
        buf = io.StringIO()
        meta = {"reps": self.reps, "seed": self.seed, "tau": self.tau}
        meta.update(metadata or {})
        buf.write("# " + " ".join(f"{k}={v}" for k, v in sorted(meta.items())) + "\n")
        writer = csv.writer(buf, lineterminator="\n")
        header = ["estimator", "f_scale", "m_scale", "noise_scale", "ar1", "ar2",
                  "rmse", "bias"]
        for method in self.variance_methods:
            header += [f"coverage_{method}", f"ci_length_{method}"]
        writer.writerow(header)
        e = self.echo
        for est in self.estimators:
            row = [
                est,
                f"{e['f_scale']:.6f}", f"{e['m_scale']:.6f}", f"{e['noise_scale']:.6f}",
                f"{e['ar_coefs'][0]:.6f}", f"{e['ar_coefs'][1]:.6f}",
                repr(self.rmse[est]), repr(self.bias[est]),
            ]
            for method in self.variance_methods:
                cov = self.coverage.get(est, {}).get(method)
                length = self.mean_ci_length.get(est, {}).get(method)
                row += ["" if cov is None else repr(cov),
                        "" if length is None else repr(length)]
            writer.writerow(row)
        text = buf.getvalue()
        if destination is None:
            return text
        if hasattr(destination, "write"):
            destination.write(text)
        else:
            with open(destination, "w", encoding="utf-8") as fh:
                fh.write(text)
        return None


def _experiment_chunk(args):
    (spec, estimators, variance_methods, n_tr, t_post, b_boot, b_placebo,
     rep_offset, seeds) = args
    draws = []
    for k, rep_seed in enumerate(seeds):
        sim_ss, mc_ss, boot_ss, plac_ss = rep_seed.spawn(4)
        y, n_co, t_pre, _ = simulate_blocks(spec, n_tr, t_post, sim_ss)
        design = design_from_matrix(y, n_co, t_pre)
        for est in estimators:
            if est == "mc":
                tau = _tau_mc(y, n_co, t_pre, seed=int(mc_ss.generate_state(1)[0]))
                draws.append(Draw(rep_offset + k, est, tau))
                continue
            tau = POINT_ESTIMATORS[est](y, n_co, t_pre)
            v_hats = {}
            for method in variance_methods:
                if est == "sc" and method == "jackknife":
                    continue  # fixed-weight jackknife needs the unit-effect form
                if method == "jackknife" and n_tr < 2:
                    continue  # leave-one-out is undefined with one treated unit
                if method == "bootstrap":
                    v = bootstrap_variance(None, design, est, b=b_boot, seed=boot_ss)
                elif method == "placebo":
                    v = placebo_variance(None, design, b=b_placebo, seed=plac_ss,
                                         estimator=est)
                elif method == "jackknife":
                    ws = sdid_weights(design) if est == "sdid" else did_weights(design)
                    v = jackknife_variance(None, design, ws, tau)
                else:
                    raise ValueError(f"unknown variance method {method!r}")
                v_hats[method] = v.v_hat
            draws.append(Draw(rep_offset + k, est, tau, v_hats))
    return draws


def simulate_draws(
    spec: DgpSpec,
    estimators: Sequence[str] = ALL_ESTIMATORS,
    variance_methods: Sequence[str] = (),
    reps: int = 100,
    seed: int = 0,
    n_tr: int = 10,
    t_post: int = 10,
    b_boot: int = 400,
    b_placebo: int = 400,
    n_jobs: int = 1,
) -> list:
    """Per-replicate estimates and variance estimates, in replicate order."""
    estimators = tuple(estimators)
    variance_methods = tuple(variance_methods)
    for est in estimators:
        if est not in ALL_ESTIMATORS:
            raise ValueError(f"unknown estimator {est!r}")
    if reps < 1:
        raise ValueError("reps must be positive")
    seeds = np.random.SeedSequence(seed).spawn(reps)
    static = (spec, estimators, variance_methods, n_tr, t_post, b_boot, b_placebo)

    if n_jobs <= 1 or reps < 2:
        return _experiment_chunk(static + (0, seeds))
    size = -(-reps // n_jobs)
    jobs = [static + (lo, seeds[lo : lo + size]) for lo in range(0, reps, size)]
    draws = []
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        for part in pool.map(_experiment_chunk, jobs):
            draws.extend(part)
    return draws


def aggregate_draws(
    draws: Sequence[Draw],
    tau: float,
    alpha: float = 0.05,
    echo: Optional[dict] = None,
    seed: int = 0,
    config: Optional[dict] = None,
    variance_methods: Optional[Sequence[str]] = None,
) -> SimulationReport:
    """Fold per-replicate draws into RMSE, bias, and CI coverage.

    ``variance_methods`` defaults to the methods present in the draws; pass
    the requested list explicitly to keep skipped combinations (reported as
    None) visible in the output.
    """
    estimators = tuple(dict.fromkeys(d.estimator for d in draws))
    if variance_methods is None:
        methods = tuple(dict.fromkeys(m for d in draws for m in d.v_hats))
    else:
        methods = tuple(variance_methods)
    reps = len({d.rep for d in draws})
    rmse, bias = {}, {}
    coverage = {est: {} for est in estimators}
    mean_len = {est: {} for est in estimators}
    for est in estimators:
        rows = [d for d in draws if d.estimator == est]
        errors = [d.tau_hat - tau for d in rows]
        rmse[est] = math.sqrt(math.fsum(e * e for e in errors) / len(errors))
        bias[est] = math.fsum(errors) / len(errors)
        for method in methods:
            hits = []
            for d in rows:
                if method not in d.v_hats:
                    continue
                lo, hi = confidence_interval(d.tau_hat, d.v_hats[method], alpha)
                hits.append((lo <= tau <= hi, hi - lo))
            if not hits:
                coverage[est][method] = None
                mean_len[est][method] = None
            else:
                coverage[est][method] = math.fsum(h[0] for h in hits) / len(hits)
                mean_len[est][method] = math.fsum(h[1] for h in hits) / len(hits)
    return SimulationReport(
        estimators=estimators,
        variance_methods=methods,
        reps=reps,
        seed=seed,
        tau=tau,
        rmse=rmse,
        bias=bias,
        coverage=coverage,
        mean_ci_length=mean_len,
        echo=echo or {"f_scale": float("nan"), "m_scale": float("nan"),
                      "noise_scale": float("nan"), "ar_coefs": (float("nan"),) * 2},
        config=config or {},
    )


def run_experiment(
    spec: DgpSpec,
    estimators: Sequence[str] = ALL_ESTIMATORS,
    variance_methods: Sequence[str] = (),
    reps: int = 100,
    seed: int = 0,
    n_tr: int = 10,
    t_post: int = 10,
    alpha: float = 0.05,
    b_boot: int = 400,
    b_placebo: int = 400,
    n_jobs: int = 1,
) -> SimulationReport:
    """Simulate, estimate, and aggregate RMSE / bias / coverage.

    ``estimators`` picks point estimators; ``variance_methods`` (any of
    bootstrap, jackknife, placebo) adds nominal ``1 - alpha`` interval
    coverage for every non-MC estimator, except the jackknife for the
    synthetic-control estimator, which is undefined without unit effects.
    """
    draws = simulate_draws(
        spec, estimators, variance_methods, reps=reps, seed=seed, n_tr=n_tr,
        t_post=t_post, b_boot=b_boot, b_placebo=b_placebo, n_jobs=n_jobs,
    )
    return aggregate_draws(
        draws, tau=spec.tau, alpha=alpha, echo=spec.scales(), seed=seed,
        config={"n_tr": n_tr, "t_post": t_post, "alpha": alpha,
                "b_boot": b_boot, "b_placebo": b_placebo},
        variance_methods=variance_methods,
    )


def draws_to_csv(draws: Sequence[Draw], destination=None,
                 metadata: Optional[dict] = None) -> Optional[str]:
    """Serialize draws with one row per (replicate, estimator)."""
    methods = tuple(dict.fromkeys(m for d in draws for m in d.v_hats))
    buf = io.StringIO()
    if metadata:
        buf.write("# " + " ".join(f"{k}={v}" for k, v in sorted(metadata.items())) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["rep", "estimator", "tau_hat"] + [f"v_{m}" for m in methods])
    for d in draws:
        row = [d.rep, d.estimator, repr(d.tau_hat)]
        row += ["" if m not in d.v_hats else repr(d.v_hats[m]) for m in methods]
        writer.writerow(row)
    text = buf.getvalue()
    if destination is None:
        return text
    with open(destination, "w", encoding="utf-8") as fh:
        fh.write(text)
    return None


def draws_from_csv(source) -> tuple[list, dict]:
    """Read a draws table; returns (draws, metadata)."""
    if hasattr(source, "read"):
        text = source.read()
    else:
        with open(source, encoding="utf-8") as fh:
            text = fh.read()
    lines = text.splitlines()
    metadata = {}
    start = 0
    if lines and lines[0].startswith("#"):
        for token in lines[0][1:].split():
            key, _, value = token.partition("=")
            metadata[key] = value
        start = 1
    reader = csv.reader(io.StringIO("\n".join(lines[start:])))
    header = next(reader)
    methods = [h[2:] for h in header[3:]]
    draws = []
    for row in reader:
        if not row:
            continue
        v_hats = {m: float(v) for m, v in zip(methods, row[3:]) if v != ""}
        draws.append(Draw(int(row[0]), row[1], float(row[2]), v_hats))
    return draws, metadata
