"""Command-line front end.

Three subcommands:

* ``env-info``  -- law-level report: tail exponent, moment curve values,
  drift, speed, CLT variance, applicable rate-regime tags.
* ``rates``     -- convergence-rate experiment matrix (CSV + JSON summary +
  gnuplot script), exit 0 iff the configured acceptance assertion holds.
* ``verify``    -- identity/oracle property matrix, exit 0 iff every check
  passes.

Configuration comes from a TOML file ([env], [experiment], [tolerances]
tables) and/or flags; flags win.  Every run writes a manifest listing the
resolved configuration, the master seed, and a SHA-256 digest of each output
file; re-running with the same configuration and seed reproduces
digest-identical CSV/JSON payloads (timestamps live only in the manifest).

Exit codes: 0 success, 1 usage, 2 configuration, 3 regime, 4 numeric.

The ``verify`` command honours the documented mutation canary: with the
environment variable ``RWRE_FLIP_VAR_RECURSION_SIGN`` set, the variance
recursion route is deliberately corrupted and the two-route check must fail.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__
from .environments import (
    Degenerate,
    distribution_from_config,
    distribution_from_shorthand,
    regime_report,
)
from .errors import ParameterError, RegimeError, RwreError
from .exact import abs_third_prefix, first_passage_cdf, position_pmf
from .experiments import (
    RateExperimentConfig,
    berry_esseen_bound_eval,
    certified_window,
    martingale_identity_check,
    rate_experiment,
    transfer_check,
)
from .moments import law_constants, moment_tables
from .montecarlo import ecdf_distance, simulate_hitting_time
from .rng import derive_seed

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_REGIME = 3
EXIT_NUMERIC = 4

DEFAULT_SEED = 20260301
DEFAULT_VERIFY_LAWS = ("degenerate:0.6666666666666666", "beta:5,1")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _build_parser():
    parser = _Parser(prog="rwre", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"rwre {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML configuration file")
    common.add_argument("--law", help="law shorthand, e.g. beta:7,1")
    common.add_argument("--seed", type=int, help="master seed (64-bit)")
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                        help="worker threads for experiment matrices")
    common.add_argument("--out", type=Path, default=Path("out"),
                        help="output directory root")

    sub.add_parser("env-info", parents=[common],
                   help="print the law-level regime report")

    rates = sub.add_parser("rates", parents=[common],
                           help="run a convergence-rate experiment")
    rates.add_argument("--target", choices=("fbar", "f", "g"),
                       help="which normalised law to measure")
    rates.add_argument("--n", dest="n_range",
                       help="dyadic grid 'lo..hi' or explicit list 'a,b,c'")
    rates.add_argument("--envs", type=int, help="number of replicate environments")

    verify = sub.add_parser("verify", parents=[common],
                            help="run the identity/oracle property matrix")
    verify.add_argument("--quick", action="store_true",
                        help="subset matrix (every identity at n=256)")
    return parser


# ---------------------------------------------------------------------------
# configuration plumbing


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ParameterError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ParameterError(f"invalid TOML in {path}: {exc}") from None


def _resolve_law(args, config):
    if args.law:
        return distribution_from_shorthand(args.law)
    if "env" in config:
        return distribution_from_config(config["env"])
    raise ParameterError("no environment law given (use --law or [env] in the config)")


def _resolve_seed(args, config):
    if args.seed is not None:
        return int(args.seed)
    return int(config.get("experiment", {}).get("seed", DEFAULT_SEED))


def _parse_grid(text):
    text = text.strip()
    if ".." in text:
        lo_s, _, hi_s = text.partition("..")
        try:
            lo, hi = int(lo_s), int(hi_s)
        except ValueError:
            raise ParameterError(f"bad grid range {text!r}") from None
        if lo < 1 or hi < lo:
            raise ParameterError(f"bad grid range {text!r}")
        grid = []
        n = lo
        while n <= hi:
            grid.append(n)
            n *= 2
        return grid
    try:
        return [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise ParameterError(f"bad grid list {text!r}") from None


def _utc_stamp():
    return datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%SZ")


def _sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _make_run_dir(root, command, seed):
    run_dir = Path(root) / command / f"{_utc_stamp()}-{seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def _write_manifest(run_dir, command, argv, resolved_config, seed):
    outputs = []
    for name in sorted(p.name for p in run_dir.iterdir() if p.name != "manifest.json"):
        path = run_dir / name
        outputs.append({
            "path": name,
            "sha256": _sha256(path),
            "bytes": path.stat().st_size,
        })
    manifest = {
        "command": command,
        "argv": argv,
        "config": resolved_config,
        "master_seed": seed,
        "version": __version__,
        "created_utc": datetime.now(timezone.utc).isoformat(),
        "outputs": outputs,
    }
    _write_json(run_dir / "manifest.json", manifest)
    return manifest


# ---------------------------------------------------------------------------
# env-info


def _cmd_env_info(args, argv):
    config = _load_config(args.config)
    dist = _resolve_law(args, config)
    seed = _resolve_seed(args, config)
    report = regime_report(dist)

    payload = report.to_json_dict()
    payload["law"] = dist.label()
    if report.r1 < 1.0 and report.r2 < 1.0:
        consts = law_constants(dist)
        payload.update({
            "speed": consts.speed,
            "inv_speed": consts.inv_speed,
            "mu0_sq_mean": consts.mu0_sq_mean,
            "sigma2": consts.sigma2,
        })
    else:
        payload.update({"speed": None, "inv_speed": None,
                        "mu0_sq_mean": None, "sigma2": None})

    print(json.dumps(payload, indent=2, sort_keys=True))
    run_dir = _make_run_dir(args.out, "env-info", seed)
    _write_json(run_dir / "regime.json", payload)
    _write_manifest(run_dir, "env-info", argv, {"env": dist.params() | {"law": dist.name}},
                    seed)
    return EXIT_OK


# ---------------------------------------------------------------------------
# rates


def _build_rate_config(args, config):
    dist = _resolve_law(args, config)
    exp = config.get("experiment", {})
    tol = config.get("tolerances", {})

    target = args.target or exp.get("target")
    if not target:
        raise ParameterError("no target given (use --target or [experiment].target)")
    if args.n_range:
        grid = _parse_grid(args.n_range)
    elif "n_grid" in exp:
        grid = [int(n) for n in exp["n_grid"]]
    elif "n_min" in exp and "n_max" in exp:
        grid = _parse_grid(f"{int(exp['n_min'])}..{int(exp['n_max'])}")
    else:
        raise ParameterError("no n grid given (use --n or [experiment].n_grid)")
    n_envs = args.envs if args.envs is not None else int(exp.get("n_envs", 20))

    return RateExperimentConfig(
        dist=dist,
        target=str(target),
        n_grid=tuple(grid),
        n_envs=n_envs,
        master_seed=_resolve_seed(args, config),
        epsilon=float(exp.get("epsilon", 0.1)),
        epsilon_prime=float(exp.get("epsilon_prime", 0.05)),
        tail_tol=float(tol.get("tail", 1e-9)),
        trunc_tol=float(tol.get("trunc", 1e-12)),
        ruin_tol=float(tol.get("ruin", 1e-12)),
        slope_band_halfwidth=float(tol.get("slope_halfwidth", 0.15)),
        envelope_slack=float(tol.get("envelope_slack", 0.1)),
        envelope_fraction=float(tol.get("envelope_fraction", 0.8)),
        envelope_anchor=str(tol.get("envelope_anchor", "ensemble")),
    )


def _plot_script(summary):
    slope = summary["median_slope"]
    return "\n".join([
        "# gnuplot script: Kolmogorov distance vs n (log-log)",
        "set datafile separator ','",
        "set terminal pngcairo size 900,600",
        "set output 'distance_vs_n.png'",
        "set logscale xy",
        "set xlabel 'n'",
        "set ylabel 'Kolmogorov distance'",
        f"set title 'law {summary['law']}  target {summary['target']}  "
        f"median slope {slope:.3f}'",
        "plot 'data.csv' skip 1 using 2:5 with points pt 7 ps 0.5 "
        "title 'replicate distances', \\",
        f"     'data.csv' skip 1 using 2:(column(5)) smooth unique lw 2 "
        f"title 'mean', \\",
        f"     x**({slope:.6f}) * "
        f"{math.exp(summary.get('median_log_intercept', 0.0)):.6e} "
        "title 'median-slope guide'",
        "",
    ])


def _cmd_rates(args, argv):
    config = _load_config(args.config)
    rate_cfg = _build_rate_config(args, config)
    result = rate_experiment(rate_cfg, threads=max(1, args.threads))

    # median intercept for the plot guide line
    log_n = np.log(np.asarray(rate_cfg.n_grid, dtype=np.float64))
    intercepts = []
    by_rep = {}
    for row in result.rows:
        by_rep.setdefault(row["replicate"], []).append(row["distance"])
    for rep, dists in by_rep.items():
        coeffs = np.polyfit(log_n, np.log(np.asarray(dists)), 1)
        intercepts.append(coeffs[1])
    summary = result.summary_dict()
    summary["median_log_intercept"] = float(np.median(intercepts))

    seed = rate_cfg.master_seed
    run_dir = _make_run_dir(args.out, "rates", seed)
    with open(run_dir / "data.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed", "n", "statistic", "normalized_statistic",
                         "distance", "bound"])
        for row in result.csv_rows():
            writer.writerow([row[0], row[1]] + [repr(float(v)) if v != "" else ""
                                                for v in row[2:]])
    _write_json(run_dir / "summary.json", summary)
    (run_dir / "plot.gp").write_text(_plot_script(summary))
    resolved = {
        "env": rate_cfg.dist.params() | {"law": rate_cfg.dist.name},
        "experiment": {
            "target": rate_cfg.target,
            "n_grid": list(rate_cfg.n_grid),
            "n_envs": rate_cfg.n_envs,
            "seed": seed,
            "epsilon": rate_cfg.epsilon,
            "epsilon_prime": rate_cfg.epsilon_prime,
        },
        "tolerances": {
            "tail": rate_cfg.tail_tol,
            "trunc": rate_cfg.trunc_tol,
            "ruin": rate_cfg.ruin_tol,
            "slope_halfwidth": rate_cfg.slope_band_halfwidth,
            "envelope_slack": rate_cfg.envelope_slack,
            "envelope_fraction": rate_cfg.envelope_fraction,
            "envelope_anchor": rate_cfg.envelope_anchor,
        },
    }
    _write_manifest(run_dir, "rates", argv, resolved, seed)

    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK if result.passed else EXIT_NUMERIC


# ---------------------------------------------------------------------------
# verify


def _verify_checks(dist, seed, quick):
    """Yield check dicts for one law."""
    n_id = 256 if quick else 4096
    n_transfer = 256 if quick else 2048
    n_mc = 2000 if quick else 20000
    k_mc = 12 if quick else 20
    be_grid = (256,) if quick else (256, 1024, 4096)

    checks = []

    def record(check, n, value, tol, passed):
        checks.append({
            "check": check, "law": dist.label(), "seed": seed, "n": n,
            "value": float(value), "tol": tol, "passed": bool(passed),
        })

    env = certified_window(dist, seed, max(n_id, n_transfer, 64))
    tables = moment_tables(env, last_site=max(n_id, n_transfer, 64), first_site=-1)
    consts = law_constants(dist)

    if isinstance(dist, Degenerate):
        rho = (1 - dist.p) / dist.p
        mu_fix = (1 + rho) / (1 - rho)
        gap = max(
            abs(tables.mu_at(n_id) - mu_fix),
            abs(consts.inv_speed - mu_fix),
            abs(tables.var_at(n_id) - consts.sigma2),
        )
        record("homogeneous_fixed_point", n_id, gap, 1e-10, gap <= 1e-10)

    resid = tables.two_route_var_residual()
    record("variance_two_route", n_id, resid, 1e-10, resid <= 1e-10)

    mart = martingale_identity_check(env, tables, [max(64, n_id // 4), n_id], consts)
    for name, value in mart.residuals.items():
        record(f"martingale_{name}", n_id, value, 1e-9, value <= 1e-9)

    tr = transfer_check(env, tables, consts, n_transfer, np.linspace(-3, 3, 21))
    record("transfer_identity", n_transfer, tr.max_residual, 1e-12,
           tr.max_residual <= 1e-12)

    fp = first_passage_cdf(env, k_mc, tables=tables, tail_tol=1e-12)
    batch = simulate_hitting_time(env, k_mc, n_mc, derive_seed(seed, 1))
    dist_mc, band = ecdf_distance(batch.samples, fp, delta=0.01)
    record("dp_vs_mc_dkw", k_mc, dist_mc, band, dist_mc <= band)

    c3 = abs_third_prefix(env, tables, max(be_grid))
    for n in be_grid:
        be = berry_esseen_bound_eval(env, tables, n, c3_prefix=c3)
        record("berry_esseen_dominance", n,
               be.distance - be.bound - be.tail_mass - 1e-10, 0.0, be.dominates)

    pos = position_pmf(env, min(n_id, 512))
    mass_gap = abs(pos.total_mass() - 1.0)
    record("position_conservation", min(n_id, 512), mass_gap, 1e-12,
           mass_gap <= 1e-12)

    return checks


def _cmd_verify(args, argv):
    config = _load_config(args.config)
    seed = _resolve_seed(args, config)
    if args.law or "env" in config:
        laws = [_resolve_law(args, config)]
    else:
        laws = [distribution_from_shorthand(s) for s in DEFAULT_VERIFY_LAWS]

    all_checks = []
    for i, dist in enumerate(laws):
        all_checks.extend(_verify_checks(dist, derive_seed(seed, i), args.quick))

    failed = [c for c in all_checks if not c["passed"]]
    for c in all_checks:
        status = "PASS" if c["passed"] else "FAIL"
        print(f"[{status}] {c['check']:<28} law={c['law']:<28} n={c['n']:>6} "
              f"value={c['value']:.3e} tol={c['tol']:.3e}")

    run_dir = _make_run_dir(args.out, "verify", seed)
    _write_json(run_dir / "report.json", {
        "quick": bool(args.quick),
        "seed": seed,
        "checks": all_checks,
        "passed": not failed,
    })
    _write_manifest(run_dir, "verify", argv,
                    {"laws": [d.label() for d in laws], "quick": bool(args.quick)},
                    seed)

    if failed:
        for c in failed:
            print(f"FAILED: seed={c['seed']} n={c['n']} check={c['check']}",
                  file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


# ---------------------------------------------------------------------------


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    handler = {
        "env-info": _cmd_env_info,
        "rates": _cmd_rates,
        "verify": _cmd_verify,
    }[args.command]
    try:
        return handler(args, ["rwre"] + argv)
    except ParameterError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RegimeError as exc:
        print(f"regime error: {exc}", file=sys.stderr)
        return EXIT_REGIME
    except RwreError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
