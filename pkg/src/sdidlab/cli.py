"""Command-line interface: estimation, diagnostics, calibration, simulation.

Every output embeds the tool version, a hash of the resolved configuration,
and the seed, and contains no timestamps, so reruns with the same inputs are
byte-identical.  Exit codes: 0 success, 2 input/configuration errors,
3 solver convergence failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dgp import DgpSpec, calibrate_dgp, load_state_laws
from .estimators import adjusted_outcomes, did, did_weights, sc, sdid, sdid_weights
from .experiments import aggregate_draws, draws_from_csv, draws_to_csv, simulate_draws
from .completion import mc_estimate
from .inference import (
    bootstrap_variance,
    confidence_interval,
    jackknife_variance,
    lambda_generalization_diagnostic,
    placebo_variance,
)
from .panel import DesignError, PanelFormatError, load_panel, load_wide, validate_block
from .solver import ConvergenceError

EXIT_OK = 0
EXIT_DATA = 2
EXIT_CONVERGENCE = 3


class CliError(ValueError):
    """Bad flag combination or unusable input; maps to exit code 2."""


def _config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _emit(text: str, output):
    if output is None:
        sys.stdout.write(text)
    else:
        with open(output, "w", encoding="utf-8") as fh:
            fh.write(text)


def _json_dump(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True) + "\n"


def _default_jobs() -> int:
    return int(os.environ.get("SDIDLAB_JOBS", "1"))


def _load_design(args):
    if getattr(args, "wide", False):
        if not args.treatment:
            raise CliError("--wide requires --treatment SIDECAR")
        panel = load_wide(args.input, args.treatment)
    else:
        panel = load_panel(args.input)
    return panel, validate_block(panel)


def _estimate_config(args) -> dict:
    keys = ("method", "se_method", "reps", "seed", "alpha", "wide")
    return {k: getattr(args, k, None) for k in keys}


def cmd_estimate(args) -> int:
    panel, design = _load_design(args)
    if args.method == "sdid":
        est = sdid(panel, design)
    elif args.method == "did":
        est = did(panel, design)
    elif args.method == "sc":
        est = sc(panel, design)
    elif args.method == "mc":
        est = mc_estimate(panel, design, seed=args.seed)
    else:
        raise CliError(f"unknown method {args.method!r}")

    payload = {
        "version": __version__,
        "config_hash": _config_hash(_estimate_config(args)),
        "seed": args.seed,
        "method": args.method,
        "tau_hat": est.tau_hat,
        "n_co": design.n_co,
        "n_tr": design.n_tr,
        "t_pre": design.t_pre,
        "t_post": design.t_post,
    }
    if est.weights is not None:
        payload["weights"] = est.weights.to_dict()
    if args.method == "sdid":
        payload["lambda_generalization"] = lambda_generalization_diagnostic(
            design, est.weights
        )

    if args.se_method:
        if args.method == "mc":
            raise CliError("no variance method is defined for the mc estimator")
        if args.se_method == "bootstrap":
            v = bootstrap_variance(panel, design, args.method, b=args.reps,
                                   seed=args.seed, n_jobs=args.n_jobs)
        elif args.se_method == "placebo":
            v = placebo_variance(panel, design, b=args.reps, seed=args.seed,
                                 estimator=args.method, n_jobs=args.n_jobs)
        elif args.se_method == "jackknife":
            if args.method == "sc":
                raise CliError(
                    "the fixed-weight jackknife is not defined for sc; "
                    "use bootstrap or placebo"
                )
            ws = sdid_weights(design) if args.method == "sdid" else did_weights(design)
            v = jackknife_variance(panel, design, ws, est.tau_hat)
        else:
            raise CliError(f"unknown se method {args.se_method!r}")
        lo, hi = confidence_interval(est.tau_hat, v.v_hat, args.alpha)
        payload.update(
            se=v.se, ci_lo=lo, ci_hi=hi, se_method=args.se_method,
            reps=v.replicates, alpha=args.alpha,
        )

    if args.format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        scalar_keys = [k for k in sorted(payload) if k != "weights"]
        writer.writerow(scalar_keys)
        writer.writerow([payload[k] for k in scalar_keys])
        _emit(buf.getvalue(), args.output)
    else:
        _emit(_json_dump(payload), args.output)
    return EXIT_OK


def cmd_weights(args) -> int:
    panel, design = _load_design(args)
    if args.method == "sdid":
        ws = sdid_weights(design)
    elif args.method == "did":
        ws = did_weights(design)
    elif args.method == "sc":
        ws = sc(panel, design).weights
    else:
        raise CliError(f"unknown method {args.method!r}")
    payload = {
        "version": __version__,
        "config_hash": _config_hash({"method": args.method, "wide": args.wide}),
        "seed": None,
        "method": args.method,
        "units": list(design.control_labels),
        "pre_periods": [str(t) for t in design.time_labels[: design.t_pre]],
    }
    payload.update(ws.to_dict())
    _emit(_json_dump(payload), args.output)
    return EXIT_OK


def _trend_rows(design, method):
    """Per-period treated and weighted-control averages plus time weights."""
    if method == "sdid":
        ws = sdid_weights(design)
        omega, lam = ws.omega, ws.lambda_
    elif method == "did":
        ws = did_weights(design)
        omega, lam = ws.omega, ws.lambda_
    elif method == "sc":
        omega = sc(None, design).weights.omega
        lam = None
    else:
        raise CliError(f"unknown method {method!r}")
    treated_avg = design.y[design.n_co :].mean(axis=0)
    control_avg = omega @ design.y[: design.n_co]
    rows = []
    for j, label in enumerate(design.time_labels):
        if j < design.t_pre:
            weight = "" if lam is None else repr(float(lam[j]))
        else:
            weight = repr(1.0 / design.t_post)
        rows.append([label, repr(float(treated_avg[j])), repr(float(control_avg[j])),
                     weight])
    return rows


def cmd_influence(args) -> int:
    panel, design = _load_design(args)
    table = adjusted_outcomes(panel, design, args.method)
    meta = (f"# version={__version__} method={args.method} "
            f"config_hash={_config_hash({'method': args.method, 'wide': args.wide})} "
            f"seed=None tau_hat={table.tau_hat!r} delta_treated={table.delta_treated!r}\n")

    buf = io.StringIO()
    buf.write(meta)
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["unit", "delta", "omega", "influence"])
    for unit, d, o, inf in zip(table.units, table.delta, table.omega, table.influence):
        writer.writerow([unit, repr(float(d)), repr(float(o)), repr(float(inf))])
    _emit(buf.getvalue(), args.influence_out)

    if args.trends_out:
        buf = io.StringIO()
        buf.write(meta)
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["time", "treated_avg", "control_avg", "time_weight"])
        writer.writerows(_trend_rows(design, args.method))
        _emit(buf.getvalue(), args.trends_out)
    return EXIT_OK


def _resolve_assignment(panel, name: str):
    if name == "random":
        return None
    laws = load_state_laws()
    if name in ("min_wage", "open_carry", "abortion"):
        lookup = dict(zip(laws["state"], laws[name]))
        missing = [u for u in panel.unit_labels if u not in lookup]
        if missing:
            raise CliError(
                f"assignment {name!r} needs state-name unit labels; "
                f"unknown units {missing[:3]}"
            )
        return np.array([lookup[u] for u in panel.unit_labels])
    # otherwise a CSV path with header unit,trait
    path = Path(name)
    if not path.exists():
        raise CliError(f"assignment {name!r} is not a built-in column or a file")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        lookup = {row["unit"]: float(row["trait"]) for row in reader}
    missing = [u for u in panel.unit_labels if u not in lookup]
    if missing:
        raise CliError(f"assignment file lacks units {missing[:3]}")
    return np.array([lookup[u] for u in panel.unit_labels])


def cmd_calibrate(args) -> int:
    if args.wide:
        if not args.treatment:
            raise CliError("--wide requires --treatment SIDECAR")
        panel = load_wide(args.input, args.treatment)
    else:
        panel = load_panel(args.input)
    trait = _resolve_assignment(panel, args.assignment)
    spec = calibrate_dgp(panel, rank=args.rank, assignment=trait,
                         normalize=not args.no_normalize)
    payload = spec.to_dict()
    payload["version"] = __version__
    payload["seed"] = None
    payload["config_hash"] = _config_hash(
        {"rank": args.rank, "assignment": args.assignment,
         "normalize": not args.no_normalize}
    )
    _emit(json.dumps(payload, sort_keys=True) + "\n", args.output)
    return EXIT_OK


def _sim_config(args) -> dict:
    return {
        "ntr": args.ntr, "tpost": args.tpost, "reps": args.reps, "seed": args.seed,
        "estimators": args.estimators, "se_methods": args.se_methods,
        "b_boot": args.b_boot, "b_placebo": args.b_placebo,
    }


def cmd_simulate(args) -> int:
    spec = DgpSpec.from_json(args.dgp)
    if args.reps < 1:
        raise CliError("--reps must be at least 1")
    estimators = [e for e in args.estimators.split(",") if e]
    methods = [m for m in args.se_methods.split(",") if m]
    draws = simulate_draws(
        spec, estimators, methods, reps=args.reps, seed=args.seed, n_tr=args.ntr,
        t_post=args.tpost, b_boot=args.b_boot, b_placebo=args.b_placebo,
        n_jobs=args.n_jobs,
    )
    echo = spec.scales()
    metadata = {
        "version": __version__,
        "config_hash": _config_hash(_sim_config(args)),
        "seed": args.seed,
        "tau": repr(spec.tau),
        "f_scale": repr(echo["f_scale"]),
        "m_scale": repr(echo["m_scale"]),
        "noise_scale": repr(echo["noise_scale"]),
        "ar1": repr(echo["ar_coefs"][0]),
        "ar2": repr(echo["ar_coefs"][1]),
    }
    text = draws_to_csv(draws, metadata=metadata)
    _emit(text, args.output)
    return EXIT_OK


def cmd_report(args) -> int:
    draws, metadata = draws_from_csv(args.draws)
    if not draws:
        raise CliError("draws file has no rows")
    tau = float(metadata.get("tau", "0.0"))
    echo = None
    if "f_scale" in metadata:
        echo = {
            "f_scale": float(metadata["f_scale"]),
            "m_scale": float(metadata["m_scale"]),
            "noise_scale": float(metadata["noise_scale"]),
            "ar_coefs": (float(metadata["ar1"]), float(metadata["ar2"])),
        }
    report = aggregate_draws(draws, tau=tau, alpha=args.alpha, echo=echo,
                             seed=int(metadata.get("seed", "0")))
    text = report.to_csv(metadata={
        "version": __version__,
        "config_hash": metadata.get("config_hash", ""),
        "alpha": args.alpha,
    })
    _emit(text, args.output)
    return EXIT_OK


def cmd_pipeline(args) -> int:
    with open(args.manifest, encoding="utf-8") as fh:
        manifest = json.load(fh)
    defaults = {
        "rank": 4, "assignment": "random", "normalize": True,
        "ntr": 10, "tpost": 10, "reps": 100, "seed": 0,
        "estimators": "sdid,sc,did,mc", "se_methods": "",
        "b_boot": 400, "b_placebo": 400, "alpha": 0.05,
    }
    unknown = set(manifest) - set(defaults) - {"input"}
    if unknown:
        raise CliError(f"unknown manifest keys: {sorted(unknown)}")
    if "input" not in manifest:
        raise CliError("manifest must name an 'input' panel CSV")
    resolved = {**defaults, **manifest}
    if resolved["reps"] < 1:
        raise CliError("manifest reps must be at least 1")

    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    ns = argparse.Namespace(
        input=resolved["input"], wide=False, treatment=None,
        rank=resolved["rank"], assignment=resolved["assignment"],
        no_normalize=not resolved["normalize"], output=str(out / "dgp.json"),
    )
    cmd_calibrate(ns)
    ns = argparse.Namespace(
        dgp=str(out / "dgp.json"), ntr=resolved["ntr"], tpost=resolved["tpost"],
        reps=resolved["reps"], seed=resolved["seed"],
        estimators=resolved["estimators"], se_methods=resolved["se_methods"],
        b_boot=resolved["b_boot"], b_placebo=resolved["b_placebo"],
        n_jobs=args.n_jobs, output=str(out / "draws.csv"),
    )
    cmd_simulate(ns)
    ns = argparse.Namespace(
        draws=str(out / "draws.csv"), alpha=resolved["alpha"],
        output=str(out / "report.csv"),
    )
    cmd_report(ns)
    lock = {
        "version": __version__,
        "config_hash": _config_hash(resolved),
        "resolved": resolved,
    }
    with open(out / "manifest.lock.json", "w", encoding="utf-8") as fh:
        fh.write(json.dumps(lock, sort_keys=True, indent=2) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sdidlab",
        description="Synthetic difference-in-differences estimation and placebo studies",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_panel_io(p):
        p.add_argument("input", help="long-format panel CSV (unit,time,outcome,treated)")
        p.add_argument("--wide", action="store_true",
                       help="input is a unit-by-time matrix; needs --treatment")
        p.add_argument("--treatment", help="sidecar treatment matrix for --wide")
        p.add_argument("--output", help="write to this path instead of stdout")

    p = sub.add_parser("estimate", help="point estimate with optional CI")
    add_panel_io(p)
    p.add_argument("--method", default="sdid", choices=["sdid", "did", "sc", "mc"])
    p.add_argument("--se-method", choices=["bootstrap", "jackknife", "placebo"])
    p.add_argument("--reps", type=int, default=400, help="resampling replicates")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--n-jobs", type=int, default=_default_jobs())
    p.add_argument("--format", default="json", choices=["json", "csv"])
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("weights", help="unit and time weights as JSON")
    add_panel_io(p)
    p.add_argument("--method", default="sdid", choices=["sdid", "sc", "did"])
    p.set_defaults(func=cmd_weights)

    p = sub.add_parser("influence", help="per-unit adjusted outcomes and trend series")
    add_panel_io(p)
    p.add_argument("--method", default="sdid", choices=["sdid", "did", "sc"])
    p.add_argument("--influence-out", dest="influence_out",
                   help="influence CSV path (default stdout)")
    p.add_argument("--trends-out", dest="trends_out",
                   help="also write the per-period trend CSV here")
    p.set_defaults(func=cmd_influence, output=None)

    p = sub.add_parser("calibrate", help="fit a generator spec from a panel")
    add_panel_io(p)
    p.add_argument("--rank", type=int, default=4)
    p.add_argument("--assignment", default="random",
                   help="random, min_wage, open_carry, abortion, or a CSV path")
    p.add_argument("--no-normalize", action="store_true")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("simulate", help="Monte Carlo draws from a generator spec")
    p.add_argument("dgp", help="generator spec JSON from `calibrate`")
    p.add_argument("--ntr", type=int, required=True)
    p.add_argument("--tpost", type=int, required=True)
    p.add_argument("--reps", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--estimators", default="sdid,sc,did,mc")
    p.add_argument("--se-methods", default="")
    p.add_argument("--b-boot", type=int, default=400)
    p.add_argument("--b-placebo", type=int, default=400)
    p.add_argument("--n-jobs", type=int, default=_default_jobs())
    p.add_argument("--output", help="draws CSV path (default stdout)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="aggregate draws into rmse/bias/coverage")
    p.add_argument("draws", help="draws CSV from `simulate`")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--output", help="report CSV path (default stdout)")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("pipeline", help="calibrate + simulate + report from a manifest")
    p.add_argument("manifest", help="JSON manifest naming the input panel and settings")
    p.add_argument("--output-dir", required=True)
    p.add_argument("--n-jobs", type=int, default=_default_jobs())
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConvergenceError as exc:
        print(f"sdidlab: convergence failure: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (PanelFormatError, DesignError, CliError, ValueError, OSError,
            json.JSONDecodeError) as exc:
        print(f"sdidlab: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
