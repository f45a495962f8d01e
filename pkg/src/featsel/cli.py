"""Command-line entry point: ``featsel {run,certify,scaling,selftest}``.

Exit codes: 0 success, 1 failed check or bound, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as _dt
import hashlib
import json
import math
import os
import shutil
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import selection as sel
from . import selftest, simenv
from .config import CertifySettings, ConfigError, LoadedConfig, ScalingSettings, load_config, parse_value
from .errors import FeatselError

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

HORIZON_COLUMNS = [
    "horizon", "method", "measure_kind", "measure_value", "theta", "phi", "kappa",
    "q", "N_t", "elapsed_s", "seed",
]


class UsageError(Exception):
    pass


# --- manifest and output directory -------------------------------------------


def content_hash(payload: dict) -> str:
    """SHA-256 of the canonical JSON form; key order and spacing do not matter."""
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=_jsonable)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _jsonable(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"not serializable: {type(obj).__name__}")


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


class RunDir:
    """Outputs are staged in a hidden directory and moved into place on success."""

    def __init__(self, out_dir, command: str, inputs: dict, workers: int | None, seed):
        self.inputs = {"command": command, "inputs": inputs, "workers": workers}
        self.hash = content_hash(self.inputs)
        self.final = Path(out_dir) / f"{command}-{self.hash[:12]}"
        self.stage = Path(out_dir) / f".{command}-{self.hash[:12]}.{os.getpid()}"
        self.outputs: list[str] = []
        self.seed = seed
        self.workers = workers
        self.started = _now()

    def __enter__(self):
        self.stage.mkdir(parents=True, exist_ok=False)
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            shutil.rmtree(self.stage, ignore_errors=True)
        return False

    def path(self, name: str) -> Path:
        self.outputs.append(name)
        return self.stage / name

    def commit(self, extra: dict | None = None) -> Path:
        manifest = {
            "hash": self.hash,
            "command": self.inputs["command"],
            "config": self.inputs["inputs"],
            "seed": self.seed,
            "workers": self.workers,
            "version": __version__,
            "started": self.started,
            "finished": _now(),
            "outputs": sorted(self.outputs),
        }
        if extra:
            manifest.update(extra)
        (self.stage / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True, default=_jsonable) + "\n", encoding="utf-8")
        if self.final.exists():
            shutil.rmtree(self.final)
        self.stage.rename(self.final)
        return self.final


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        if not math.isfinite(x):
            raise FeatselError(f"non-finite value {x!r} in output")
        return repr(float(x))
    return str(x)


def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")   # RFC 4180 line endings
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


# --- argument plumbing ----------------------------------------------------------


def _scenario_flags(parser: argparse.ArgumentParser) -> None:
    g = parser.add_argument_group("scenario (override config values)")
    for f in dataclasses.fields(simenv.ScenarioConfig):
        if f.name == "seed":        # shared --seed flag
            continue
        flag = "--" + f.name.replace("_", "-")
        default = getattr(simenv.ScenarioConfig(), f.name)
        kind = type(default)
        meta = "A,B,C" if kind is tuple else f.name.upper()
        g.add_argument(flag, dest=f"sc_{f.name}", metavar=meta, default=None,
                       help=f"default {','.join(map(str, default)) if kind is tuple else default}")


def _scenario_overrides(args) -> dict:
    out = {}
    defaults = simenv.ScenarioConfig()
    for f in dataclasses.fields(simenv.ScenarioConfig):
        raw = getattr(args, f"sc_{f.name}", None)
        if raw is None:
            continue
        try:
            out[f.name] = parse_value(raw, type(getattr(defaults, f.name)))
        except ValueError as exc:
            raise UsageError(f"--{f.name.replace('_', '-')}: {exc}") from None
    return out


def _load(args) -> LoadedConfig:
    return load_config(args.config) if args.config else LoadedConfig()


def _workers(args, loaded: LoadedConfig) -> int:
    w = args.workers if args.workers is not None else loaded.run.workers
    w = w if w is not None else (os.cpu_count() or 1)
    if w < 1:
        raise UsageError("--workers must be >= 1")
    return w


def _out_dir(args, loaded: LoadedConfig) -> Path:
    return Path(args.out_dir if args.out_dir is not None else loaded.run.out_dir)


def _csv_only(args, loaded: LoadedConfig) -> bool:
    return bool(args.csv_only or loaded.run.csv_only)


def _try_plots(fn, *a) -> list[Path]:
    from . import plots

    if not plots.available():
        print("note: matplotlib not installed, skipping SVG output", file=sys.stderr)
        return []
    return fn(*a)


def plots_benchmark(result, out_dir) -> list[Path]:
    from . import plots

    return plots.benchmark_figures(result, out_dir)


def plots_scaling(result, path) -> list[Path]:
    from . import plots

    return [plots.scaling_figure(result, path)]


# --- subcommands --------------------------------------------------------------------


def cmd_run(args) -> int:
    loaded = _load(args)
    overrides = dict(loaded.scenario)
    overrides.update(_scenario_overrides(args))
    if args.seed is not None:
        overrides["seed"] = args.seed
    try:
        cfg = simenv.ScenarioConfig.paper(**overrides) if args.paper_scale else \
            simenv.ScenarioConfig.desk(**overrides)
    except FeatselError as exc:
        raise UsageError(str(exc)) from None
    workers = _workers(args, loaded)

    def progress(rec):
        if args.verbose:
            print(f"horizon {rec.horizon:4d}  N={rec.N:4d} q={rec.q:4d}  "
                  + "  ".join(f"{m}={rec.theta[m]:.4g}" for m in simenv.METHODS), file=sys.stderr)

    with RunDir(_out_dir(args, loaded), "run", cfg.to_dict(), workers, cfg.seed) as rd:
        result = simenv.run_benchmark(cfg, workers=workers, progress=progress)
        rows = []
        for r in result.records:
            for m in simenv.METHODS:
                rows.append([r.horizon, m, cfg.measure, r.rho[m], r.theta[m], r.phi[m], r.kappa[m],
                             r.q, r.N, r.elapsed[m], cfg.seed])
        write_csv(rd.path("horizons.csv"), HORIZON_COLUMNS, rows)
        cdf_rows = []
        for m in simenv.METHODS:
            k, p = result.kappa_cdf(m)
            cdf_rows += [[m, kv, pv] for kv, pv in zip(k, p)]
        write_csv(rd.path("kappa_cdf.csv"), ["method", "kappa", "cdf"], cdf_rows)
        if not _csv_only(args, loaded):
            for path in _try_plots(plots_benchmark, result, rd.stage):
                rd.outputs.append(path.name)
        summary = benchmark_summary(result)
        final = rd.commit({"summary": summary, "turns": result.turns})

    print(f"run directory: {final}")
    for key, val in summary.items():
        print(f"  {key:32s} {val:.6g}")
    print(f"  {'realized turns':32s} {result.turns:.6g}")
    return EXIT_OK


def benchmark_summary(result: simenv.BenchmarkResult) -> dict:
    greedy = result.series("rho", "greedy")
    out = {}
    for m in ("leverage", "uniform"):
        out[f"median rho gap {m}-greedy"] = float(np.median(result.series("rho", m) - greedy))
        out[f"median phi {m} [%]"] = float(np.median(result.series("phi", m)))
        out[f"median kappa {m}"] = float(np.median(result.series("kappa", m)))
    return out


def certify_instance(s: CertifySettings):
    c = simenv.random_candidates(s.instance_seed, s.N, s.T, sigma=s.sigma)
    q = math.ceil(c.n * math.log(c.n) / s.eps ** 2)
    if q > c.N:
        raise UsageError(f"q = ceil(n ln n / eps^2) = {q} exceeds N = {c.N}; raise N or eps")
    return c, q


def run_certify(s: CertifySettings):
    """Analysis-mode runs on the fixed instance, one certificate per seed."""
    c, q = certify_instance(s)
    scores, refined = sel.leverage_scores(c), sel.refine_scores(c)
    H_max = sel.maximal_information(c)
    chi_bar, stderr, runs = sel.estimate_chi_bar(c, q, range(s.seeds), scores, refined)
    certs = [sel.certify_bounds(c, r.result, s.eps, chi_bar, stderr, q=q, H_max=H_max) for r in runs]
    full = sel.SelectionResult("all", tuple(int(i) for i in c.ids), H_max, sel.Measure.RHO_V,
                               sel.evaluate_measure("rho_v", H_max), 0.0)
    sanity = sel.certify_bounds(c, full, s.eps, chi_bar, stderr, q=q, H_max=H_max)
    return c, q, chi_bar, stderr, runs, certs, sanity


def cmd_certify(args) -> int:
    loaded = _load(args)
    s = dataclasses.replace(loaded.certify)
    for name in ("N", "T", "eps", "seeds", "instance_seed"):
        v = getattr(args, name)
        if v is not None:
            setattr(s, name, v)
    if s.seeds < 100:
        raise UsageError("--seeds must be at least 100")
    if not 0 < s.eps < 1:
        raise UsageError("--eps must lie in (0, 1)")
    c, q, chi_bar, stderr, runs, certs, sanity = run_certify(s)
    rate = float(np.mean([k.loewner for k in certs]))
    implied = all(k.measures_pass for k in certs if k.loewner)

    with RunDir(_out_dir(args, loaded), "certify", dataclasses.asdict(s), None, s.instance_seed) as rd:
        header = ["seed", "chi", "loewner", "printed_v", "printed_e", "printed_lambda",
                  "loss_v", "loss_e", "loss_lambda"]
        rows = [[seed, r.chi, k.loewner, k.printed_v, k.printed_e, k.printed_lambda,
                 k.loss_v, k.loss_e, k.loss_lambda]
                for seed, (r, k) in enumerate(zip(runs, certs))]
        rows.append(["all", "", sanity.loewner, sanity.printed_v, sanity.printed_e,
                     sanity.printed_lambda, sanity.loss_v, sanity.loss_e, sanity.loss_lambda])
        write_csv(rd.path("certify.csv"), header, rows)
        final = rd.commit({"chi_bar": chi_bar, "chi_bar_stderr": stderr, "pass_rate": rate, "q": q})

    print(f"instance: N={c.N} n={c.n} q={q} eps={s.eps} seeds={s.seeds}")
    print(f"chi_bar = {chi_bar:.6g} +/- {stderr:.3g}  (spectral factor (1-eps)/(4 chi_bar) = "
          f"{(1 - s.eps) / (4 * chi_bar):.4g})")
    print(f"spectral bound pass rate = {rate:.4f}  (floor 0.25: {'PASS' if rate >= 0.25 else 'FAIL'})")
    print(f"measure bounds on passing seeds: {'PASS' if implied else 'FAIL'}")
    print(f"sanity row Phi = Theta: {'PASS' if sanity.loewner and sanity.measures_pass else 'FAIL'}")
    print(f"run directory: {final}")
    ok = rate >= 0.25 and implied and sanity.loewner and sanity.measures_pass
    return EXIT_OK if ok else EXIT_FAIL


def cmd_scaling(args) -> int:
    loaded = _load(args)
    s: ScalingSettings = dataclasses.replace(loaded.scaling)
    if args.sizes is not None:
        try:
            s.sizes = tuple(int(v) for v in parse_value(args.sizes, tuple))
        except ValueError as exc:
            raise UsageError(f"--sizes: {exc}") from None
    for name in ("trials", "T", "restarts"):
        v = getattr(args, name)
        if v is not None:
            setattr(s, name, v)
    seed = args.seed if args.seed is not None else 0
    try:
        res = simenv.run_scaling(s.sizes, s.trials, s.T, s.restarts, seed, s.q_fraction)
    except FeatselError as exc:
        raise UsageError(str(exc)) from None

    with RunDir(_out_dir(args, loaded), "scaling", {**dataclasses.asdict(s), "seed": seed}, 1, seed) as rd:
        write_csv(rd.path("scaling.csv"), ["N", "q", "leverage_s", "greedy_s", "ratio"],
                  [[r.N, r.q, r.leverage, r.greedy, r.ratio] for r in res.rows])
        if not _csv_only(args, loaded):
            for path in _try_plots(plots_scaling, res, rd.stage / "scaling.svg"):
                rd.outputs.append(path.name)
        final = rd.commit({"slopes": res.slopes})

    print(f"{'N':>6} {'q':>6} {'leverage [s]':>14} {'greedy [s]':>14} {'ratio':>8}")
    for r in res.rows:
        print(f"{r.N:6d} {r.q:6d} {r.leverage:14.6f} {r.greedy:14.6f} {r.ratio:8.2f}")
    if res.slopes:
        print(f"log-log slope: leverage {res.slopes['leverage']:.3f}, greedy {res.slopes['greedy']:.3f}")
        print(f"ratio monotone in N: {res.ratio_monotone}")
    else:
        print("single size: no slope fit")
    print(f"run directory: {final}")
    return EXIT_OK


def cmd_selftest(args) -> int:
    if args.list:
        for name in selftest.TOLERANCES:
            print(name)
        return EXIT_OK
    if args.inject is not None and args.inject not in selftest.TOLERANCES:
        raise UsageError(f"unknown check {args.inject!r} (see --list)")
    results = selftest.run(inject=args.inject)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:36s} err={r.error:.3g} tol={r.tol:.3g}")
    for module, (ok, total) in selftest.summarize(results).items():
        print(f"{module:10s} {ok}/{total}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print("failed: " + ", ".join(failed))
        return EXIT_FAIL
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="featsel", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, workers=True, seed=True):
        sp.add_argument("--config", help="INI file with [scenario]/[run]/[certify]/[scaling] sections")
        if seed:
            sp.add_argument("--seed", type=int, default=None, help="master seed")
        sp.add_argument("--out-dir", default=None, help="parent directory for run outputs (default runs)")
        if workers:
            sp.add_argument("--workers", type=int, default=None, help="restart threads (default: CPU count)")

    r = sub.add_parser("run", help="closed-loop benchmark of leverage, uniform and greedy selection")
    common(r)
    r.add_argument("--paper-scale", action="store_true",
                   help="full-size scenario (400 horizons, T=20, 1752 landmarks, 50 restarts)")
    r.add_argument("--csv-only", action="store_true", help="skip SVG plots")
    r.add_argument("-v", "--verbose", action="store_true", help="per-horizon progress on stderr")
    _scenario_flags(r)
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("certify", help="spectral and measure bound frequencies over seeded runs")
    common(c, workers=False, seed=False)
    c.add_argument("--eps", type=float, default=None)
    c.add_argument("--seeds", type=int, default=None, help="number of seeded runs (>= 100)")
    c.add_argument("--N", type=int, default=None, help="candidate count of the instance")
    c.add_argument("--T", type=int, default=None, help="horizon length of the instance")
    c.add_argument("--instance-seed", type=int, default=None)
    c.set_defaults(func=cmd_certify)

    s = sub.add_parser("scaling", help="selection time versus candidate count")
    common(s, workers=False)
    s.add_argument("--sizes", default=None, help="comma-separated increasing N values")
    s.add_argument("--trials", type=int, default=None)
    s.add_argument("--T", type=int, default=None)
    s.add_argument("--restarts", type=int, default=None)
    s.add_argument("--csv-only", action="store_true")
    s.set_defaults(func=cmd_scaling)

    t = sub.add_parser("selftest", help="run the built-in oracle and invariant checks")
    t.add_argument("--inject", metavar="CHECK", default=None,
                   help="corrupt the tolerance of one check; it must then fail")
    t.add_argument("--list", action="store_true", help="list check names")
    t.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"featsel {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FeatselError as exc:
        print(f"featsel {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
