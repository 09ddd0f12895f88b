"""Command line: ``pks classify|run-jko|run-fv|compare|ot-test [--config FILE] [--out DIR] [--seed U64]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 concentration stop (all output is still written).
"""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import diagnostics as diag
from .config import RunConfig, parse_config, with_overrides, write_config
from .criticality import Regime, classify
from .errors import ConfigurationError, NumericalFailure, PKSError
from .fv import FvConfig, cross_validate, fv_run, holder_fit
from .grid import boundary_mass_fraction
from .jko import JkoConfig, jko_run, test_function_catalog, weak_residual_jko
from .output import emit_csv, emit_snapshot
from .transport import (DiscreteMeasure, exact_w2_squared, ot_equivalence, random_instance)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_CONCENTRATION = 0, 2, 3, 4
COMMANDS = ("classify", "run-jko", "run-fv", "compare", "ot-test")

log = logging.getLogger("pks")


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pks", description="Multi-species Keller-Segel experiments.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", type=Path, help="run configuration file")
    p.add_argument("--out", type=Path, help="output directory (overrides the config)")
    p.add_argument("--seed", type=_u64, help="random seed (overrides the config)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    if isinstance(v, np.ndarray):
        return ", ".join(_fmt(x) for x in np.ravel(v))
    if isinstance(v, (tuple, list)):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


def write_report(path: Path, report: dict) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for k, v in report.items():
            fh.write(f"{k} = {_fmt(v)}\n")


def _load(args) -> RunConfig:
    if args.config is None:
        raise ConfigurationError(f"{args.command} needs --config FILE")
    cfg = parse_config(args.config)
    return with_overrides(cfg, None if args.out is None else str(args.out), args.seed)


def _initial(cfg: RunConfig):
    field = cfg.initial()
    frac = boundary_mass_fraction(field)
    if frac >= diag.BOUNDARY_INITIAL:
        raise ConfigurationError(
            f"initial boundary mass fraction {frac:.3g} >= {diag.BOUNDARY_INITIAL:g}; enlarge L")
    return field


def _jko_config(cfg: RunConfig) -> JkoConfig:
    s = cfg.jko
    return JkoConfig(tau=s.tau, epsilon=s.epsilon or None, c_eps=s.c_eps, inner_tol=s.inner_tol,
                     inner_max=s.inner_max, outer_max=s.outer_max, outer_tol=s.outer_tol,
                     mass_projection=s.mass_projection, blur_compensation=s.blur_compensation)


def _snapshot_steps(cfg: RunConfig) -> int:
    if not cfg.snapshot_every:
        return 0
    return max(1, int(round(cfg.snapshot_every / cfg.jko.tau)))


def run_diagnostics(series, cfg: RunConfig) -> dict:
    """Every enabled diagnostic that applies to ``series``; skipped ones are noted."""
    d = cfg.diagnostics
    out = {"stop_reason": series.stop_reason, "rows": len(series)}
    A = np.asarray(series.meta["A"])
    beta = np.asarray(series.meta["beta"])
    regime = classify(A, beta).regime if np.all(np.diag(A) > 0) else None
    out["regime"] = regime.value if regime else "heat flow"
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        b = diag.boundary_report(series)
    for w in caught:
        log.warning("%s", w.message)
    out["boundary_fraction_max"] = b["max"]
    out["com_drift_per_time"] = diag.com_drift(series)
    env = diag.upsilon_envelope(series)
    out["upsilon_envelope_ratio"] = env["ratio"]
    if d.second_moment_law:
        try:
            law = diag.check_second_moment_law(series)
            out.update({"m2_slope": law["slope"], "m2_slope_predicted": law["predicted"],
                        "m2_slope_relative_error": law["relative_error"]})
        except ConfigurationError as exc:
            out["m2_slope"] = f"skipped ({exc})"
    is_jko = series.meta.get("kind") == "jko"
    if is_jko:
        chain = diag.energy_chain(series)
        out["energy_chain_max"] = chain["max_chain"]
        if d.fisher:
            out["fisher_fitted_constant"] = diag.fisher_inequality_report(series)["fitted_constant"]
        if d.telescoping and regime is Regime.CRITICAL:
            tel = diag.check_telescoping(series)
            out["telescoping_max_step"] = tel["max_step"]
            out["telescoping_max_cumulative"] = tel["max_cumulative"]
        if d.weak_residual and series.snapshots:
            for i, xi in enumerate(test_function_catalog(series.meta["L"])):
                out[f"weak_residual_{i + 1}_{xi.kind}"] = weak_residual_jko(series, xi)
    if d.concentration and series.snapshots:
        rep = diag.detect_concentration(series)
        out["concentrating"] = rep["concentrating"]
        out["common_point"] = rep["common_point_estimate"]
        out["common_point_ok"] = "n/a" if rep["common_point_ok"] is None else rep["common_point_ok"]
        out["peak_spread"] = rep["peak_spread"]
        out["dw1_to_dirac_final"] = rep["dw1_to_dirac"][-1]
        out["dw1_to_dirac_decreasing"] = rep["dw1_decreasing"]
    if d.holder and len(series.snapshots) >= 4:
        try:
            out["holder_exponent"] = holder_fit(series.snapshots)["exponent"]
        except ConfigurationError as exc:
            out["holder_exponent"] = f"skipped ({exc})"
    return out


def _emit_run(series, cfg: RunConfig, outdir: Path) -> dict:
    outdir.mkdir(parents=True, exist_ok=True)
    emit_csv(series, outdir / "series.csv")
    for k, (_, f) in enumerate(series.snapshots):
        emit_snapshot(f, outdir, k, cfg.heatmaps, cfg.raw)
    report = run_diagnostics(series, cfg)
    write_report(outdir / "diagnostics.txt", report)
    return report


def _exit_for(series) -> int:
    if series.stop_reason == "concentration":
        return EXIT_CONCENTRATION
    if series.stop_reason in ("numerical_failure", "solver_failure"):
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_classify(cfg: RunConfig) -> int:
    rep = classify(cfg.A_matrix, np.array(cfg.beta))
    print(rep.table())
    print(rep.key_values())
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "classify.txt").write_text(rep.key_values() + "\n", encoding="utf-8")
    return EXIT_OK


def _run_jko(cfg: RunConfig, outdir: Path):
    series = jko_run(_initial(cfg), cfg.A_matrix, _jko_config(cfg), cfg.horizon,
                     snapshot_every=_snapshot_steps(cfg))
    report = _emit_run(series, cfg, outdir)
    return series, report


def _run_fv(cfg: RunConfig, outdir: Path, snapshot_every: float | None = None):
    fcfg = FvConfig(dt_safety=cfg.fv.dt_safety, max_dt=cfg.fv.max_dt, flux=cfg.fv.flux)
    series = fv_run(_initial(cfg), cfg.A_matrix, cfg.horizon, fcfg,
                    sample_dt=cfg.sample_dt or None,
                    snapshot_every=snapshot_every if snapshot_every is not None else (cfg.snapshot_every or None))
    report = _emit_run(series, cfg, outdir)
    return series, report


def cmd_run_jko(cfg: RunConfig) -> int:
    series, report = _run_jko(cfg, Path(cfg.out))
    write_config(cfg, Path(cfg.out) / "config.ini")
    log.info("jko run finished: %s after %d rows", series.stop_reason, len(series))
    return _exit_for(series)


def cmd_run_fv(cfg: RunConfig) -> int:
    series, report = _run_fv(cfg, Path(cfg.out))
    write_config(cfg, Path(cfg.out) / "config.ini")
    log.info("fv run finished: %s after %d rows", series.stop_reason, len(series))
    return _exit_for(series)


def cmd_compare(cfg: RunConfig) -> int:
    """JKO and FV on the same configuration, compared at shared snapshot times."""
    steps = _snapshot_steps(cfg) or max(1, int(round(cfg.horizon / cfg.jko.tau / 10)))
    cfg = replace(cfg, snapshot_every=steps * cfg.jko.tau)
    out = Path(cfg.out)
    js, _ = _run_jko(cfg, out / "jko")
    fs, _ = _run_fv(cfg, out / "fv", snapshot_every=steps * cfg.jko.tau)
    cv = cross_validate(js, fs, "dw1", holder=cfg.diagnostics.holder)
    report = {"times": cv["times"], "dw1_gap": cv["distance"], "max_dw1_gap": cv["max_distance"],
              "tau_plus_h": cfg.jko.tau + js.snapshots[0][1].grid.spacing}
    for name in ("jko", "fv"):
        fit = cv.get(f"holder_{name}")
        if fit is not None:
            report[f"holder_exponent_{name}"] = fit["exponent"]
    write_report(out / "compare.txt", report)
    write_config(cfg, out / "config.ini")
    print(f"max dw1 gap = {cv['max_distance']:.6g} (tau + h = {report['tau_plus_h']:.6g})")
    codes = [_exit_for(js), _exit_for(fs)]
    return max(codes)


def ot_test_rows(rng: np.random.Generator, instances: int, max_support: int, eps_fraction: float,
                 shift: float) -> tuple[list[dict], dict]:
    rows = ot_equivalence(rng, instances, max_support, eps_fraction, shift)
    dirac, scaling = 0.0, 0.0
    for _ in range(10):
        mu, nu = random_instance(rng, max_support, shift)
        delta = DiscreteMeasure(np.zeros((1, 2)), [mu.total_mass])
        d = exact_w2_squared(mu, delta).squared_cost
        dirac = max(dirac, abs(d - mu.second_moment()) / mu.second_moment())
        c = rng.uniform(0.1, 10.0)
        base = exact_w2_squared(mu, nu).squared_cost
        scaled = exact_w2_squared(mu.scaled(c), nu.scaled(c)).squared_cost
        scaling = max(scaling, abs(scaled - c * base) / (c * base))
    summary = {"max_relative_error": max(r["relative_error"] for r in rows),
               "dirac_law_error": dirac, "mass_scaling_error": scaling}
    return rows, summary


def cmd_ot_test(cfg: RunConfig | None, seed: int | None, out: Path | None) -> int:
    s = cfg.ot_test if cfg is not None else None
    seed = seed if seed is not None else (cfg.seed if cfg is not None else 0)
    args = (s.instances, s.max_support, s.eps_fraction, s.shift) if s else (50, 36, 0.01, 4.0)
    rows, summary = ot_test_rows(np.random.default_rng(seed), *args)
    head = f"{'#':>3} {'m':>3} {'k':>3} {'beta':>9} {'eps':>9} {'exact':>13} {'sinkhorn':>13} {'rel.err':>9}"
    lines = [head]
    for r in rows:
        lines.append(f"{r['instance']:>3} {r['m']:>3} {r['k']:>3} {r['beta']:>9.4f} {r['eps']:>9.4f} "
                     f"{r['exact']:>13.6f} {r['sinkhorn']:>13.6f} {r['relative_error']:>9.2e}")
    lines += [f"max relative error = {summary['max_relative_error']:.3e}",
              f"dirac law error = {summary['dirac_law_error']:.3e}",
              f"mass scaling error = {summary['mass_scaling_error']:.3e}"]
    print("\n".join(lines))
    outdir = out if out is not None else (Path(cfg.out) if cfg is not None else None)
    if outdir is not None:
        outdir.mkdir(parents=True, exist_ok=True)
        (outdir / "ot_test.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "ot-test":
            cfg = _load(args) if args.config is not None else None
            return cmd_ot_test(cfg, args.seed, args.out)
        cfg = _load(args)
        if args.command == "classify":
            return cmd_classify(cfg)
        if args.command == "run-jko":
            return cmd_run_jko(cfg)
        if args.command == "run-fv":
            return cmd_run_fv(cfg)
        return cmd_compare(cfg)
    except ConfigurationError as exc:
        print(f"pks: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        print(f"pks: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except PKSError as exc:
        print(f"pks: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
