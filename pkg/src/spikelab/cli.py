"""Command line entry point: ``spikelab validate|run|entire|report``.

Exit codes: 0 all enabled assertions pass, 1 an assertion failed,
2 configuration error, 3 solver failure (partial artifacts are kept).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .config import ARTIFACT_VERSION, load_config, validate
from .entire import RadialGroundState, solve_entire_ground_state
from .errors import ConfigError, InsufficientSpan, SpikeLabError
from .spike import ContinuationSeries, concentration_check, expansion_fit, run_continuation

log = logging.getLogger("spikelab")

EXIT_OK, EXIT_ASSERT, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3
WORKERS_ENV = "SPIKELAB_WORKERS"
SUMMARY_SCHEMA = "spikelab.run_summary/1"


def worker_count():
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None


def _stamp(config):
    return {"run_id": config.run_id, "config_hash": config.config_hash(),
            "artifact_version": ARTIFACT_VERSION}


# --------------------------------------------------------------------------
# ground state cache


def ground_state_for(config):
    """Solve or load the whole-space ground state, cached by exponents and solver settings."""
    os.makedirs(config.cache_dir, exist_ok=True)
    path = os.path.join(config.cache_dir, f"ground_state_{config.entire_key()}.json")
    if os.path.exists(path):
        log.info("loading cached ground state %s", path)
        return RadialGroundState.load(path), path
    gs = solve_entire_ground_state(config.exponent_pair(), R_max=config.R_max, M=config.M,
                                   tol=config.entire_tol)
    tmp = path + f".{os.getpid()}.tmp"
    gs.save(tmp)
    os.replace(tmp, path)
    return gs, path


# --------------------------------------------------------------------------
# series execution


def seed_center(config, seed):
    m = config.metric(config.eps_values()[0])
    top = m.node_coords(m.max_curvature_node())
    if seed == "argmax":
        return top
    if seed == "opposite":
        return np.mod(top + 0.5 * config.L, config.L)
    return np.array([float(x) for x in seed.split(",")])


def _run_series(config, seed, gs_path):
    gs = RadialGroundState.load(gs_path)
    eps = config.eps_values()
    metrics = {}

    def metric_for_eps(e):
        n = config.grid_for(e)
        if n not in metrics:
            metrics[n] = config.metric(e)
        return metrics[n]

    return run_continuation(
        None, config.exponent_pair(), eps, seed_center=seed_center(config, seed), ground_state=gs,
        metric_for_eps=metric_for_eps, R=config.cutoff_fraction * config.L, tol=config.tol,
        min_nodes=config.min_nodes, eps_ratio=config.eps_ratio,
        profile=config.checks.get("profile", True), decay=config.checks.get("decay", True),
        log=log.info, label=seed, positivity_slack=config.positivity_slack,
    )


def run_all_series(config, gs_path):
    workers = worker_count()
    if workers == 1 or len(config.seeds) == 1:
        return [_run_series(config, s, gs_path) for s in config.seeds]
    with ProcessPoolExecutor(max_workers=min(workers, len(config.seeds))) as pool:
        futures = [pool.submit(_run_series, config, s, gs_path) for s in config.seeds]
        return [f.result() for f in futures]


# --------------------------------------------------------------------------
# checks


def _finite(x):
    return x is not None and math.isfinite(x)


def evaluate_checks(config, series, gs):
    """Dict name -> {passed, ...details} for every enabled check that applies."""
    checks = {}
    enabled = config.checks
    main = series[0]
    ents = main.entries
    if not ents:
        return checks
    if enabled.get("duality"):
        worst = max(max(e.duality["T_residual_u"], e.duality["T_residual_v"]) for s in series
                    for e in s.entries)
        checks["duality"] = {"passed": all(e.duality["passed"] for s in series for e in s.entries),
                             "worst_T_residual": worst}
    if enabled.get("limit_energy"):
        last = ents[-1]
        rel = abs(last.energy_J / last.eps**main.N - gs.C_inf) / gs.C_inf
        checks["limit_energy"] = {"passed": rel < 0.02, "relative_error": rel, "eps": last.eps,
                                  "C_inf": gs.C_inf}
    if enabled.get("decay"):
        # only entries whose annulus reaches 3 eps beyond the inner radius carry a usable slope
        outer = min(0.5 * config.cutoff_fraction * config.L, 0.25 * config.L)
        usable = [e for e in ents if _finite(e.theta_u) and outer - 3.0 * e.eps >= 3.0 * e.eps]
        dev = [max(abs(e.theta_u - 1.0), abs(e.theta_v - 1.0)) for e in usable]
        checks["decay"] = {"passed": (max(dev) <= 0.15) if usable else None,
                           "entries_used": len(usable), "max_theta_deviation": max(dev, default=None)}
    if enabled.get("maxima"):
        d = [e.dist_over_eps for e in ents]
        checks["maxima"] = {"passed": d[-1] <= d[0] + 1e-9 * max(1.0, d[0]), "dist_over_eps": d}
    if enabled.get("concentration") and len(series) > 1 and config.metric_kind not in ("flat", "constant"):
        m = config.metric(min(config.eps_values()))
        rep = concentration_check(main, series[1:], m)
        checks["concentration"] = rep.to_dict()
    if enabled.get("expansion") and config.metric_kind != "flat":
        try:
            m = config.metric(min(config.eps_values()))
            from .geometry import scalar_curvature

            S0 = float(scalar_curvature(m, np.asarray(main.seed_center)))
            fit = expansion_fit(main, ground_state=gs, S0=S0)
            checks["expansion"] = {**fit.to_dict(), "passed": fit.matched_convention in ("plus", "minus")}
        except InsufficientSpan as exc:
            checks["expansion"] = {"passed": None, "skipped": str(exc)}
    for c in checks.values():
        if c["passed"] is not None:
            c["passed"] = bool(c["passed"])
    return checks


# --------------------------------------------------------------------------
# artifacts


def write_artifacts(run_dir, config, series, checks, failure=None):
    os.makedirs(run_dir, exist_ok=True)
    stamp = _stamp(config)
    with open(os.path.join(run_dir, "config.txt"), "w") as fh:
        fh.write(config.canonical_text())
    for s in series:
        tag = s.label.replace(",", "_").replace(" ", "")
        d = {**s.to_dict(), **stamp}
        with open(os.path.join(run_dir, f"series_{tag}.json"), "w") as fh:
            json.dump(d, fh, indent=1)
        s.write_csv(os.path.join(run_dir, f"series_{tag}.csv"), header_comment=_comment(stamp))
    summary = {"schema": SUMMARY_SCHEMA, **stamp, "checks": checks, "failure": failure,
               "series": [s.label for s in series]}
    with open(os.path.join(run_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=1, default=float)
    text = summary_text(config, series, checks, failure)
    with open(os.path.join(run_dir, "summary.txt"), "w") as fh:
        fh.write(text)
    return text


def _comment(stamp):
    return " ".join(f"{k}={v}" for k, v in stamp.items())


def summary_text(config, series, checks, failure=None):
    lines = [f"run {config.run_id}  config {config.config_hash()}  version {ARTIFACT_VERSION}",
             f"exponents p={config.p:g} q={config.q:g} N={config.N}  metric {config.metric_kind} "
             f"L={config.L:g}"]
    for s in series:
        lines.append(f"series {s.label}: {len(s.entries)} entries"
                     + (f", stopped: {s.failure['error']} at eps={s.failure['eps']:.4g}" if s.failure else ""))
        for e in s.entries:
            lines.append(f"  eps={e.eps:.5g} grid={e.grid_shape[0]} J/eps^N={e.energy_J / e.eps**config.N:.8g} "
                         f"sup_u={e.sup_u:.6g} d/eps={e.dist_over_eps:.3g}")
    for name, c in checks.items():
        state = {True: "PASS", False: "FAIL", None: "SKIP"}[c.get("passed")]
        lines.append(f"check {name}: {state}")
    if failure:
        lines.append(f"solver failure: {failure}")
    return "\n".join(lines) + "\n"


def _status(checks, series):
    if any(s.failure for s in series) or not all(s.entries for s in series):
        return EXIT_SOLVER
    if any(c.get("passed") is False for c in checks.values()):
        return EXIT_ASSERT
    return EXIT_OK


# --------------------------------------------------------------------------
# verbs


def cmd_validate(args):
    config = load_config(args.config)
    rep = validate(config)
    print(rep.text())
    return EXIT_OK if rep.ok else EXIT_CONFIG


def _load_valid(path):
    config = load_config(path)
    rep = validate(config)
    if not rep.ok:
        raise ConfigError("; ".join(rep.errors))
    return config


def cmd_entire(args):
    config = _load_valid(args.config)
    gs, path = ground_state_for(config)
    os.makedirs(config.output, exist_ok=True)
    out = os.path.join(config.output, "ground_state.json")
    d = {**gs.to_dict(), **_stamp(config)}
    with open(out, "w") as fh:
        json.dump(d, fh)
    print(f"ground state U(0)={gs.U[0]:.10g} V(0)={gs.V[0]:.10g} C_inf={gs.C_inf:.10g} "
          f"residual={gs.residual_norm:.2e} -> {out}")
    return EXIT_OK


def cmd_run(args):
    config = _load_valid(args.config)
    gs, gs_path = ground_state_for(config)
    series = run_all_series(config, gs_path)
    checks = evaluate_checks(config, series, gs)
    failure = next((s.failure for s in series if s.failure), None)
    print(write_artifacts(config.output, config, series, checks, failure), end="")
    return _status(checks, series)


def cmd_report(args):
    run_dir = args.run_dir
    path = os.path.join(run_dir, "config.txt")
    if not os.path.exists(path):
        raise ConfigError(f"{run_dir} has no config.txt")
    config = load_config(path)
    names = sorted(f for f in os.listdir(run_dir) if f.startswith("series_") and f.endswith(".json"))
    by_label = {}
    for n in names:
        s = ContinuationSeries.load(os.path.join(run_dir, n))
        by_label[s.label] = s
    series = [by_label[s] for s in config.seeds if s in by_label]
    if not series:
        raise ConfigError(f"{run_dir} holds no series")
    gs_path = os.path.join(config.cache_dir, f"ground_state_{config.entire_key()}.json")
    gs, _ = ground_state_for(config) if not os.path.exists(gs_path) else (RadialGroundState.load(gs_path), gs_path)
    checks = evaluate_checks(config, series, gs)
    failure = next((s.failure for s in series if s.failure), None)
    print(write_artifacts(run_dir, config, series, checks, failure), end="")
    return _status(checks, series)


def build_parser():
    ap = argparse.ArgumentParser(prog="spikelab", description="Spike solutions of Hamiltonian systems on conformally flat tori")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="verb", required=True)
    for verb, fn in (("validate", cmd_validate), ("run", cmd_run), ("entire", cmd_entire)):
        p = sub.add_parser(verb)
        p.add_argument("config")
        p.set_defaults(func=fn)
    p = sub.add_parser("report")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SpikeLabError as exc:
        print(f"solver error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
