"""Command line runner: ``nlimpact <subcommand> --config run.json --out DIR``.

Subcommands
-----------
fit-kernel       exponential-sum fits of the shifted power-law kernel
solve            one scheme run: metrics JSON plus trajectory and error CSVs
benchmark        scheme inventories against the closed form for several gammas
compare-kernels  PnL by iteration and error histograms for p = 1..p_max and the power law
concavity        inventories and distortions for several impact concavities
validate         property suite; exit status 1 if any check fails

Exit status is 0 on success, 1 on validation failure or a non-finite metric,
2 on usage or configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

OUT_ENV = "NLIMPACT_OUT"
DEFAULT_OUT = "nlimpact_out"
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("nlimpact")


class RunAborted(RuntimeError):
    pass


def _fmt(x) -> str:
    return f"{float(x):.12e}"


def _write_json(path: Path, doc: dict, schema: str | None = None) -> None:
    if schema is not None:
        from .config import validate_json
        validate_json(doc, schema)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, header: list, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        wr.writerows(rows)


def _manifest(command: str, cfg, seed: int, outputs: list) -> dict:
    import platform

    import numpy
    import scipy

    from . import __version__
    from .grid_paths import RNG_ALGORITHM
    return {"command": command, "config_sha256": cfg.sha256(), "seed": int(seed),
            "rng": RNG_ALGORITHM, "version": __version__,
            "created_utc": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "outputs": sorted(outputs), "python": platform.python_version(),
            "numpy": numpy.__version__, "scipy": scipy.__version__}


# experiment builders -------------------------------------------------------

def build_signal(cfg):
    from .grid_paths import OUSignalParams, make_signal
    s = cfg.data["scheme"]
    params = cfg.signal()
    if cfg.deterministic:
        params = OUSignalParams(params.theta, params.kappa, 0.0, params.i0)
    M = 1 if cfg.deterministic else int(s["M"])
    return make_signal(params, cfg.grid(), M, int(s["seed"]), bool(s["antithetic"]))


def build_problem(cfg, signal, **overrides):
    from .fredholm import ProblemSpec
    p = cfg.data["problem"]
    kw = dict(gamma=p["gamma"], kernel=cfg.kernel(), impact=cfg.impact(), alpha=signal.alpha,
              phi=p["phi"], varrho=p["varrho"], X0=p["X0"], diagonal=p["diagonal"])
    kw.update(overrides)
    return ProblemSpec(**kw)


def run_scheme(cfg, spec, signal):
    from .fredholm import iterate_scheme
    s = cfg.data["scheme"]
    rep = iterate_scheme(spec, None if cfg.deterministic else cfg.regression(),
                         iterations=int(s["iterations"]),
                         metric_regression=None if cfg.deterministic else cfg.metric_regression(),
                         deterministic=cfg.deterministic, tol=s["tol"],
                         extra_ensembles={"drift": signal.drift})
    return rep


def _check_finite(rep, where: str, out: Path) -> None:
    if rep.aborted:
        _write_json(out / "diagnostic_dump.json", {"where": where, **rep.metrics_dict()})
        raise RunAborted(f"{where}: {rep.aborted}; diagnostics written to {out / 'diagnostic_dump.json'}")


def _trajectory_rows(grid, rep, spec, sample_paths: int):
    from . import impact as imp
    price = imp.h(spec.impact, rep.distortion)
    blocks = [("mean", lambda a: a.mean(axis=0))]
    blocks += [(str(m), (lambda m: lambda a: a[m])(m)) for m in range(min(sample_paths, rep.u.shape[0]))]
    for name, pick in blocks:
        cols = [pick(a) for a in (rep.u, rep.inventory, rep.distortion, price, rep.impact_cost)]
        for i, t in enumerate(grid.points):
            yield [name, f"{t:.10g}"] + [_fmt(c[i]) for c in cols]


TRAJ_HEADER = ["path", "time_years", "rate_shares_per_year", "inventory_shares",
               "distortion_price_units", "price_distortion_h_price_units", "impact_cost_price_units"]


def cmd_solve(cfg, out: Path) -> list:
    signal = build_signal(cfg)
    spec = build_problem(cfg, signal)
    rep = run_scheme(cfg, spec, signal)
    _check_finite(rep, "solve", out)
    _write_json(out / "metrics.json", rep.metrics_dict(), "solve")
    _write_csv(out / "iterations.csv", ["iteration", "residual_E_NM", "pnl", "step_norm_l2"],
               ([n + 1, _fmt(r), _fmt(p), _fmt(s)]
                for n, (r, p, s) in enumerate(zip(rep.residual, rep.pnl, rep.step_norm))))
    _write_csv(out / "trajectories.csv", TRAJ_HEADER,
               _trajectory_rows(spec.grid, rep, spec, cfg.data["outputs"]["sample_paths"]))
    _write_csv(out / "error_histogram.csv", ["path", "E_N"],
               ([m, _fmt(e)] for m, e in enumerate(rep.residual_per_path)))
    return ["metrics.json", "iterations.csv", "trajectories.csv", "error_histogram.csv"]


def cmd_fit_kernel(cfg, out: Path) -> list:
    from .kernel_fit import fit_exponential_sums
    from .kernels import ShiftedFractional
    f = cfg.section("fit")
    T = cfg.data["scheme"]["T"]
    rows, fits_doc = [], []
    for shift in f["shifts"]:
        frac = ShiftedFractional(f["scale"], f["exponent"], shift)
        fits = fit_exponential_sums(frac, int(f["p_max"]), T, int(f["multistart"]), int(f["seed"]))
        for p, fit in enumerate(fits, start=1):
            fits_doc.append({"shift": shift, "p": p, "loss": fit.loss, "weights": list(fit.kernel.weights),
                             "rates": list(fit.kernel.rates), "converged": fit.converged})
            for i, (w, x) in enumerate(zip(fit.kernel.weights, fit.kernel.rates), start=1):
                rows.append([f"{shift:.10g}", p, i, _fmt(w), _fmt(x), _fmt(fit.loss)])
    _write_csv(out / "fit_table.csv", ["shift_years", "p", "index", "weight_price_per_share",
                                       "rate_per_year", "loss_l2_squared"], rows)
    _write_json(out / "fit.json", {"fits": fits_doc}, "fit")
    return ["fit_table.csv", "fit.json"]


def cmd_benchmark(cfg, out: Path) -> list:
    from .benchmark import BenchmarkParams, explicit_optimal_inventory, interior_distance, write_overlay_csv
    from .kernels import ExponentialSum
    b = cfg.section("benchmark")
    signal = build_signal(cfg)
    bp = BenchmarkParams(b["tau"], b["c"], signal.params, cfg.grid())
    bench = explicit_optimal_inventory(bp, signal.drift.values, signal.alpha.values)
    kernel = ExponentialSum((1.0,), (1.0 / b["tau"],))
    runs, files = [], []
    impact_cfg = cfg.data["problem"]["impact"]
    for gamma in b["gammas"]:
        spec = build_problem(cfg, signal, gamma=gamma, kernel=kernel, X0=0.0, phi=0.0, varrho=0.0)
        rep = run_scheme(cfg, spec, signal)
        _check_finite(rep, f"benchmark gamma={gamma}", out)
        name = f"overlay_gamma_{gamma:g}.csv"
        write_overlay_csv(out / name, spec.grid, rep.inventory, bench, cfg.data["outputs"]["sample_paths"])
        files.append(name)
        runs.append({"gamma": gamma, "interior_l2_distance": interior_distance(rep.inventory, bench.Q,
                                                                               spec.grid.delta),
                     "final_residual": rep.residual[-1],
                     "scheme_impact_threshold_x0": impact_cfg.get("x0")})
    _write_json(out / "benchmark.json", {"runs": runs, "tau": b["tau"], "c": b["c"]}, "benchmark")
    return files + ["benchmark.json"]


def cmd_compare_kernels(cfg, out: Path) -> list:
    import numpy as np

    from .fredholm import pnl_per_path
    from .kernel_fit import fit_exponential_sums
    from .kernels import ShiftedFractional
    c = cfg.section("compare")
    frac = ShiftedFractional(c["scale"], c["exponent"], c["shift"])
    fits = fit_exponential_sums(frac, int(c["p_max"]), cfg.data["scheme"]["T"], int(c["multistart"]))
    kernels = [("fractional", frac)] + [(f"p{p}", f.kernel) for p, f in enumerate(fits, start=1)]
    signal = build_signal(cfg)
    pnl_rows, hist_rows, runs = [], [], []
    ref = None
    for name, k in kernels:
        spec = build_problem(cfg, signal, kernel=k)
        rep = run_scheme(cfg, spec, signal)
        _check_finite(rep, f"compare {name}", out)
        per_path = pnl_per_path(spec, rep.u)
        se = float(per_path.std(ddof=1) / np.sqrt(per_path.size)) if per_path.size > 1 else 0.0
        entry = {"kernel": name, "final_pnl": rep.pnl[-1], "pnl_stderr": se,
                 "final_residual": rep.residual[-1], "pnl_diff_to_reference": None,
                 "pnl_diff_stderr": None}
        if ref is None:
            ref = per_path
        else:
            diff = per_path - ref
            entry["pnl_diff_to_reference"] = float(diff.mean())
            entry["pnl_diff_stderr"] = (float(diff.std(ddof=1) / np.sqrt(diff.size))
                                        if diff.size > 1 else 0.0)
        runs.append(entry)
        pnl_rows += [[name, n + 1, _fmt(v)] for n, v in enumerate(rep.pnl)]
        hist_rows += [[name, m, _fmt(e)] for m, e in enumerate(rep.residual_per_path)]
    _write_csv(out / "pnl_by_iteration.csv", ["kernel", "iteration", "pnl"], pnl_rows)
    _write_csv(out / "error_histogram.csv", ["kernel", "path", "E_N"], hist_rows)
    _write_json(out / "compare.json", {"runs": runs}, "compare")
    return ["pnl_by_iteration.csv", "error_histogram.csv", "compare.json"]


def cmd_concavity(cfg, out: Path) -> list:
    import numpy as np

    from . import impact as imp
    x0 = cfg.data["problem"]["impact"].get("x0", 0.01)
    signal = build_signal(cfg)
    runs, rows = [], []
    for c in cfg.section("concavity")["c_values"]:
        spec = build_problem(cfg, signal, impact=imp.PiecewisePower(x0, c))
        rep = run_scheme(cfg, spec, signal)
        _check_finite(rep, f"concavity c={c}", out)
        price = imp.h(spec.impact, rep.distortion)
        runs.append({"c": c, "final_residual": rep.residual[-1],
                     "terminal_inventory": rep.diagnostics["terminal_inventory_mean"],
                     "peak_price_distortion": float(np.max(np.abs(price.mean(axis=0)))),
                     "peak_distortion_argument": float(np.max(np.abs(rep.distortion.mean(axis=0))))})
        for i, t in enumerate(spec.grid.points):
            rows.append([f"{c:g}", f"{t:.10g}", _fmt(rep.inventory[:, i].mean()),
                         _fmt(rep.distortion[:, i].mean()), _fmt(price[:, i].mean())])
    _write_csv(out / "concavity_trajectories.csv",
               ["c", "time_years", "inventory_shares", "distortion_price_units",
                "price_distortion_h_price_units"], rows)
    _write_json(out / "concavity.json", {"runs": runs}, "concavity")
    return ["concavity_trajectories.csv", "concavity.json"]


def cmd_validate(cfg, out: Path) -> list:
    from .validation import run_validation
    results = run_validation(int(cfg.data["scheme"]["seed"]))
    for r in results:
        print(f"[{'PASS' if r.passed else 'FAIL'}] {r.name}: {r.detail}")
    doc = {"passed": all(r.passed for r in results), "checks": [r.to_dict() for r in results]}
    _write_json(out / "validate.json", doc, "validate")
    if not doc["passed"]:
        raise ValidationFailed("validation suite reported failures")
    return ["validate.json"]


class ValidationFailed(RuntimeError):
    pass


COMMANDS = {"fit-kernel": cmd_fit_kernel, "solve": cmd_solve, "benchmark": cmd_benchmark,
            "compare-kernels": cmd_compare_kernels, "concavity": cmd_concavity,
            "validate": cmd_validate}
CONFIG_OPTIONAL = {"fit-kernel", "validate"}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nlimpact", description=__doc__.split("\n")[0],
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON experiment configuration"
                        + (" (optional)" if name in CONFIG_OPTIONAL else ""))
        sp.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or ./{DEFAULT_OUT})")
        sp.add_argument("--seed", type=int, help="override scheme.seed")
        sp.add_argument("--threads", type=int, help="cap on BLAS threads")
        sp.add_argument("--deterministic", action="store_true",
                        help="drop the signal noise and skip all regressions")
        sp.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv: list | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return EXIT_USAGE
        # only effective before the BLAS pool starts, i.e. on a fresh interpreter
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)

    from .config import ConfigError, ExperimentConfig
    try:
        if args.config is None:
            if args.command not in CONFIG_OPTIONAL:
                raise ConfigError(f"{args.command} needs --config")
            cfg = ExperimentConfig.from_dict({})
        else:
            cfg = ExperimentConfig.load(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be >= 0")
            cfg.data["scheme"]["seed"] = args.seed
        if args.deterministic:
            cfg.data["scheme"]["deterministic"] = True
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    out = Path(args.out or cfg.data["outputs"]["directory"] or os.environ.get(OUT_ENV) or DEFAULT_OUT)
    out.mkdir(parents=True, exist_ok=True)
    status = EXIT_OK
    try:
        files = COMMANDS[args.command](cfg, out)
    except ValidationFailed as exc:
        print(f"validation failed: {exc}", file=sys.stderr)
        files, status = ["validate.json"], EXIT_FAIL
    except RunAborted as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        files, status = ["diagnostic_dump.json"], EXIT_FAIL
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    (out / "config.resolved.json").write_text(cfg.dumps() + "\n")
    _write_json(out / "manifest.json",
                _manifest(args.command, cfg, cfg.data["scheme"]["seed"], files + ["config.resolved.json"]),
                "manifest")
    print(f"wrote {len(files)} artifact(s) to {out}")
    return status


if __name__ == "__main__":
    sys.exit(main())
