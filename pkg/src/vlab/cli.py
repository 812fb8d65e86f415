"""Command-line interface.

Every subcommand reads an optional ``key = value`` configuration file
(``--config``); command-line flags override file values, which override
the built-in defaults.  The seed falls back to the ``VLAB_SEED`` environment
variable when neither the file nor the flags set it.

Exit codes: 0 success, 1 a verification failed, 2 usage or configuration
error.
"""

from __future__ import annotations

import argparse
import datetime
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import DomainError
from .grid import SampledFunction, UniformGrid
from .kernels import (KernelModel, covariance_fbm_closed, covariance_levy_closed,
                      covariance_matrix)
from .paths import RngSeed, make_bundle, sample_gaussian_at, sample_volterra_exact
from .fracops import estimate_holder_exponent
from .integrals import Integrand, stratonovich_estimate
from . import verify

__all__ = ["main", "run", "load_config", "RunConfig", "ConfigError"]

SUBCOMMANDS = ("simulate", "covariance", "integrate", "ito-check",
               "girsanov-check", "holder", "selftest")


class ConfigError(Exception):
    """Malformed or inconsistent configuration."""


def _levels(text: str) -> tuple:
    out = tuple(int(x) for x in str(text).replace(",", " ").split())
    if not out:
        raise ValueError("empty list")
    return out


@dataclass(frozen=True)
class _Key:
    kind: Callable
    default: object
    help: str


INTEGRANDS = ("one", "t", "x", "sin", "square")

# name -> type, default, help.  Defaults are listed in --help.
KEYS = {
    "family": _Key(str, "stationary-fbm", "kernel family: stationary-fbm, levy-fbm, multifractional"),
    "hurst": _Key(float, 0.7, "Hurst index in (0, 1) for the fBm families"),
    "hurst_csv": _Key(str, None, "CSV of (t, H(t)) rows for the multifractional family"),
    "alpha": _Key(float, None, "regularity parameter of the multifractional family"),
    "horizon": _Key(float, 1.0, "time horizon T"),
    "n": _Key(int, 1024, "number of grid intervals"),
    "seed": _Key(int, 0, "master seed (fallback: VLAB_SEED)"),
    "paths": _Key(int, None, "Monte Carlo paths (subcommand default if unset)"),
    "levels": _Key(_levels, None, "dyadic partition sizes, comma separated"),
    "method": _Key(str, "synthesis", "path construction: synthesis or exact"),
    "nodes": _Key(int, 8, "covariance check: number of equispaced nodes"),
    "f": _Key(str, "cos", "Itô check function: square, cube, cos, constant"),
    "correction": _Key(str, "closed", "Itô check drift density: closed or numeric"),
    "integrand": _Key(str, "x", "integrate: one, t, x, sin, square"),
    "pairs": _Key(int, 20, "Girsanov check: number of random polynomial pairs"),
    "degree": _Key(int, 3, "Girsanov check: polynomial degree"),
    "lags": _Key(_levels, (1, 2, 4, 8, 16, 32), "Hölder regression lags in grid steps"),
    "tolerance": _Key(float, 0.05, "Hölder check: allowed |estimate - hurst|"),
    "workers": _Key(int, 1, "parallel workers (1 gives bit-reproducible output)"),
    "out": _Key(str, ".", "output directory"),
}

PATH_DEFAULTS = {"simulate": 4, "covariance": 20000, "integrate": 1,
                 "ito-check": 5000, "holder": 200}


@dataclass(frozen=True)
class RunConfig:
    """Effective configuration of a run."""

    values: dict

    def __getattr__(self, name):
        try:
            return self.values[name]
        except KeyError:
            raise AttributeError(name) from None

    def as_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in sorted(self.values.items())}


def _convert(key: str, raw) -> object:
    spec = KEYS[key]
    try:
        return spec.kind(raw)
    except (TypeError, ValueError):
        raise ConfigError(
            f"{key}: expected {getattr(spec.kind, '__name__', 'value').lstrip('_')}, got {raw!r}") from None


def _parse_file(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    out, unknown = {}, []
    for lineno, line in enumerate(p.read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (x.strip() for x in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in KEYS:
            unknown.append(key)
            continue
        out[key] = _convert(key, value)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return out


def _validate(cfg: dict, command: Optional[str] = None) -> None:
    if not 0.0 < cfg["hurst"] < 1.0:
        raise ConfigError(f"hurst must lie in (0, 1), got {cfg['hurst']}")
    if cfg["family"].replace("-", "_") not in ("stationary_fbm", "levy_fbm", "multifractional"):
        raise ConfigError(f"family: unknown kernel family {cfg['family']!r}")
    if cfg["family"].replace("-", "_") == "multifractional" and not cfg["hurst_csv"]:
        raise ConfigError("family multifractional needs hurst_csv")
    if cfg["hurst_csv"] and not Path(cfg["hurst_csv"]).is_file():
        raise ConfigError(f"hurst_csv: file not found: {cfg['hurst_csv']}")
    if cfg["n"] < 2:
        raise ConfigError("n must be at least 2")
    if not cfg["horizon"] > 0:
        raise ConfigError("horizon must be positive")
    if not 0 <= cfg["seed"] < 2 ** 64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    if cfg["workers"] < 1:
        raise ConfigError("workers must be at least 1")
    if cfg["paths"] is not None and cfg["paths"] < 1:
        raise ConfigError("paths must be positive")
    if cfg["method"] not in ("synthesis", "exact"):
        raise ConfigError("method must be 'synthesis' or 'exact'")
    if cfg["f"] not in verify.ITO_FUNCTIONS:
        raise ConfigError(f"f must be one of {', '.join(sorted(verify.ITO_FUNCTIONS))}")
    if cfg["correction"] not in ("closed", "numeric"):
        raise ConfigError("correction must be 'closed' or 'numeric'")
    if cfg["integrand"] not in INTEGRANDS:
        raise ConfigError(f"integrand must be one of {', '.join(INTEGRANDS)}")
    dyadic = command in ("integrate", "ito-check") or cfg["levels"] is not None
    if dyadic and cfg["n"] & (cfg["n"] - 1):
        raise ConfigError(f"n must be a power of two for dyadic levels, got {cfg['n']}")
    if cfg["levels"] is not None:
        for lv in cfg["levels"]:
            if lv < 2 or lv & (lv - 1):
                raise ConfigError(f"levels must be powers of two, got {lv}")


def load_config(path: Optional[str], overrides: Optional[dict] = None,
                command: Optional[str] = None, env: Optional[dict] = None) -> RunConfig:
    """Effective configuration from defaults, environment, file and flags.

    Parameters
    ----------
    path : str or None
        Plain-text file of ``key = value`` lines; ``#`` starts a comment.
    overrides : dict
        Values from command-line flags; ``None`` entries are ignored.

    Raises
    ------
    ConfigError
        Missing file, unknown keys, a value of the wrong type or a value
        outside its allowed range.
    """
    env = os.environ if env is None else env
    cfg = {k: v.default for k, v in KEYS.items()}
    if env.get("VLAB_SEED") not in (None, ""):
        cfg["seed"] = _convert("seed", env["VLAB_SEED"])
    if path:
        cfg.update(_parse_file(path))
    for k, v in (overrides or {}).items():
        if v is not None:
            cfg[k] = _convert(k, v) if isinstance(v, str) else v
    _validate(cfg, command)
    return RunConfig(cfg)


# ---------------------------------------------------------------------------
# helpers

def _model(cfg: RunConfig) -> KernelModel:
    family = cfg.family.replace("-", "_")
    if family == "multifractional":
        data = np.loadtxt(cfg.hurst_csv, delimiter=",", comments="#",
                          skiprows=_header_rows(cfg.hurst_csv), ndmin=2)
        t, H = data[:, 0], data[:, 1]
        if t[0] != 0 or np.any(np.diff(t) <= 0):
            raise ConfigError("hurst_csv times must start at 0 and increase")
        grid = UniformGrid(max(len(t) - 1, 2), t[-1])
        fn = SampledFunction(grid, np.interp(grid.nodes, t, H))
        return KernelModel(family, hurst_fn=fn, alpha=cfg.alpha, horizon=cfg.horizon)
    return KernelModel(family, hurst=cfg.hurst, horizon=cfg.horizon)


def _header_rows(path: str) -> int:
    first = Path(path).read_text(encoding="utf-8").lstrip().split("\n", 1)[0]
    try:
        [float(x) for x in first.split(",")]
        return 0
    except ValueError:
        return 1


def _paths(cfg: RunConfig, command: str) -> int:
    return cfg.paths if cfg.paths is not None else PATH_DEFAULTS[command]


def _write(out: Path, name: str, text: str, written: list) -> None:
    if not text.endswith("\n"):
        text += "\n"
    (out / name).write_text(text, encoding="utf-8", newline="\n")
    written.append(name)


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2)


def _manifest(command: str, cfg: RunConfig, written: list, extra: dict,
              timestamp: bool) -> dict:
    man = {"command": command, "config": cfg.as_dict(),
           "seed": {"master": cfg.seed}, "outputs": sorted(written), "metadata": {}}
    man.update(extra)
    if timestamp:
        man["metadata"]["created"] = datetime.datetime.now(datetime.timezone.utc).isoformat()
    return man


def _integrand(name: str) -> Integrand:
    if name == "one":
        return Integrand.deterministic(lambda t: np.ones_like(t))
    if name == "t":
        return Integrand.deterministic(lambda t: t)
    if name == "x":
        return Integrand.composite(lambda x: x, lambda x: np.ones_like(x))
    if name == "sin":
        return Integrand.composite(np.sin, np.cos)
    return Integrand.composite(lambda x: x * x, lambda x: 2.0 * x)


# ---------------------------------------------------------------------------
# subcommands (each returns the exit code and the manifest extras)

def _cmd_simulate(cfg, out, written):
    model = _model(cfg)
    grid = UniformGrid(cfg.n, cfg.horizon)
    seed = RngSeed(cfg.seed)
    files = []
    for p in range(_paths(cfg, "simulate")):
        s = seed.child(p)
        if cfg.method == "exact":
            x = sample_volterra_exact(model, grid, s)
            rows = ["t,B,X"] + [f"{t:.17g},,{v:.17g}" for t, v in zip(grid.nodes, x.values)]
            text = "\n".join(rows) + "\n"
        else:
            text = make_bundle(model, grid, s).to_csv()
        name = f"path_{p:04d}.csv"
        _write(out, name, text, written)
        files.append({"file": name, "stream": p})
    return 0, {"paths": files}


def _cmd_covariance(cfg, out, written):
    model = _model(cfg)
    nodes = cfg.horizon * np.arange(1, cfg.nodes + 1) / cfg.nodes
    rep = verify.check_covariance(model, nodes, _paths(cfg, "covariance"),
                                  RngSeed(cfg.seed), workers=cfg.workers)
    d = rep.details
    rows = ["t,s,quadrature,closed_form,mc,mc_stderr"]
    for i, t in enumerate(nodes):
        for j, s in enumerate(nodes):
            cf = f"{d['closed_form'][i][j]:.17g}" if "closed_form" in d else ""
            mc = f"{d['mc'][i][j]:.17g}" if "mc" in d else ""
            se = f"{d['mc_stderr'][i][j]:.17g}" if "mc" in d else ""
            rows.append(f"{t:.17g},{s:.17g},{d['quadrature'][i][j]:.17g},{cf},{mc},{se}")
    _write(out, "covariance.csv", "\n".join(rows), written)
    _write(out, "report.json", _dump(rep.to_dict()), written)
    return (0 if rep.passed else 1), {"passed": rep.passed}


def _cmd_integrate(cfg, out, written):
    model = _model(cfg)
    levels = cfg.levels or tuple(cfg.n >> k for k in (4, 3, 2, 1, 0) if cfg.n >> k >= 2)
    est = stratonovich_estimate(_integrand(cfg.integrand), model, RngSeed(cfg.seed),
                                cfg.horizon, levels, paths=_paths(cfg, "integrate"))
    _write(out, "estimate.json", _dump(est.to_dict()), written)
    rows = ["n,value"] + [f"{n},{v:.17g}" for n, v in est.values_by_level]
    _write(out, "levels.csv", "\n".join(rows), written)
    return 0, {"warnings": est.warnings}


def _cmd_ito(cfg, out, written):
    rep = verify.check_ito_residual(_model(cfg), cfg.f, cfg.horizon, cfg.n,
                                    _paths(cfg, "ito-check"), RngSeed(cfg.seed),
                                    correction=cfg.correction, workers=cfg.workers)
    _write(out, "report.json", _dump(rep.to_dict()), written)
    return (0 if rep.passed else 1), {"passed": rep.passed}


def _poly(rng, degree, grid):
    c = rng.uniform(-1.0, 1.0, degree + 1)
    return SampledFunction(grid, np.polyval(c, grid.nodes))


def _cmd_girsanov(cfg, out, written):
    model = _model(cfg)
    grid = UniformGrid(cfg.n, cfg.horizon)
    seed = RngSeed(cfg.seed)
    coef = RngSeed(cfg.seed, 2 ** 63).generator()
    reports = []
    for p in range(cfg.pairs):
        u = _poly(coef, cfg.degree, grid)
        v = _poly(coef, cfg.degree, grid)
        reports.append(verify.check_girsanov_shift(model, u, v, seed.child(p)))
    worst = max(r.metric for r in reports)
    rep = verify.VerificationReport("girsanov_shift", worst, verify.EXACT_TOL,
                                    {"seed": seed.as_dict(), "n": grid.n, "T": grid.horizon,
                                     "pairs": cfg.pairs,
                                     "metrics": [r.metric for r in reports]})
    _write(out, "report.json", _dump(rep.to_dict()), written)
    return (0 if rep.passed else 1), {"passed": rep.passed}


def _cmd_holder(cfg, out, written):
    model = _model(cfg)
    grid = UniformGrid(cfg.n, cfg.horizon)
    seed = RngSeed(cfg.seed)
    M = _paths(cfg, "holder")
    if cfg.method == "exact":
        Y = sample_gaussian_at(model, grid.nodes[1:], [seed.child(p) for p in range(M)],
                               workers=cfg.workers)
        paths = [SampledFunction(grid, np.concatenate(([0.0], y))) for y in Y]
    else:
        paths = [make_bundle(model, grid, seed.child(p)).volterra for p in range(M)]
    est = estimate_holder_exponent(paths, cfg.lags)
    target = float(np.mean(model.hurst_at(grid.nodes)))
    rep = verify.VerificationReport(
        "holder", abs(est - target), cfg.tolerance,
        {"seed": seed.as_dict(), "n": grid.n, "T": grid.horizon, "paths": M,
         "lags": list(cfg.lags), "estimate": est, "target": target, "method": cfg.method})
    _write(out, "report.json", _dump(rep.to_dict()), written)
    return (0 if rep.passed else 1), {"passed": rep.passed}


def _cmd_selftest(cfg, out, written, quick):
    reports = selftest_reports(cfg.seed, quick=quick)
    sys.stdout.write(verify.format_table(reports))
    _write(out, "selftest.json", _dump([r.to_dict() for r in reports]), written)
    ok = all(r.passed for r in reports)
    return (0 if ok else 1), {"passed": ok}


def selftest_reports(master: int = 0, quick: bool = True) -> list:
    """Deterministic identity suite, plus small Monte Carlo checks unless quick."""
    from .fracops import frac_integral
    from .integrals import r_pi_parts, r_pi_sum
    from .specfun import hyp2f1, v_h

    seed = RngSeed(master)
    reps = []
    model = KernelModel("stationary_fbm", hurst=0.7)
    grid = UniformGrid(256)
    u = SampledFunction.from_callable(grid, lambda t: 1.0 + t - 2.0 * t ** 2)
    v = SampledFunction.from_callable(grid, lambda t: np.cos(3.0 * t))
    reps.append(verify.check_girsanov_shift(model, u, v, seed))
    reps.append(verify.check_restriction(model, u, 0.5, 1.0, seed))
    reps.append(verify.check_restriction(KernelModel("levy_fbm", hurst=0.3), u, 0.25, 0.75, seed))

    bundle = make_bundle(model, grid, seed)
    one = Integrand.deterministic(lambda t: np.ones_like(t))
    err = abs(r_pi_sum(one, bundle, 1.0) - bundle.volterra.values[-1])
    reps.append(verify.VerificationReport("telescoping", err, 1e-12,
                                          {"seed": seed.as_dict(), "n": grid.n}))
    rough = KernelModel("stationary_fbm", hurst=0.3)
    rb = make_bundle(rough, grid, seed)
    det = Integrand.deterministic(SampledFunction.from_callable(grid, lambda t: 2.0 - t))
    lhs = r_pi_sum(det, rb, 1.0)
    rhs = r_pi_parts(det, rb, 1.0, endpoint_corrected=True).total
    reps.append(verify.VerificationReport("endpoint_correction", abs(lhs - rhs), verify.EXACT_TOL,
                                          {"seed": seed.as_dict(), "n": grid.n}))

    reps.append(verify.VerificationReport(
        "hypergeometric", abs(hyp2f1(1.0, 1.0, 2.0, 0.5) - 2.0 * np.log(2.0)), 1e-10,
        {"seed": seed.as_dict(), "n": 0}))
    reps.append(verify.VerificationReport(
        "variance_constant", max(abs(v_h(0.5 + d) - 1.0) for d in (-1e-6, 1e-6)), 1e-4,
        {"seed": seed.as_dict(), "n": 0}))
    fg = UniformGrid(1024)
    sq = SampledFunction.from_callable(fg, lambda t: t ** 2)
    semi = frac_integral(frac_integral(sq, 0.3), 0.4).values
    direct = frac_integral(sq, 0.7).values
    reps.append(verify.VerificationReport(
        "semigroup", float(np.max(np.abs(semi - direct)) / np.max(np.abs(direct))), 1e-3,
        {"seed": seed.as_dict(), "n": fg.n}))
    reps.append(verify.check_covariance(KernelModel("stationary_fbm", hurst=0.5),
                                        [0.25, 0.5, 1.0], 0, seed))
    reps.append(verify.check_covariance(model, np.arange(1, 9) / 8, 0, seed))
    if not quick:
        reps.append(verify.check_covariance(model, np.arange(1, 9) / 8, 20000, seed))
        reps.append(verify.check_ito_residual(model, "cos", 1.0, 256, 2000, seed))
    return reps


# ---------------------------------------------------------------------------
# argument parsing

def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--timestamp", action="store_true",
                        help="record the creation time in the manifest metadata")
    for key, spec in KEYS.items():
        dflt = "VLAB_SEED or 0" if key == "seed" else spec.default
        if isinstance(dflt, tuple):
            dflt = ",".join(map(str, dflt))
        common.add_argument("--" + key.replace("_", "-"), dest=key, default=None,
                            help=f"{spec.help} (default: {dflt})")
    top = argparse.ArgumentParser(prog="vlab", description="Simulate Volterra processes and run numerical checks.",
                                  formatter_class=argparse.RawDescriptionHelpFormatter,
                                  epilog="Exit codes: 0 success, 1 failed check, 2 usage error.")
    sub = top.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "selftest":
            p.add_argument("--quick", action="store_true",
                           help="deterministic identities only, no Monte Carlo")
    return top


_HANDLERS = {"simulate": _cmd_simulate, "covariance": _cmd_covariance,
             "integrate": _cmd_integrate, "ito-check": _cmd_ito,
             "girsanov-check": _cmd_girsanov, "holder": _cmd_holder}


def run(argv) -> int:
    """Run one subcommand and return its exit code."""
    parser = _parser()
    try:
        args = parser.parse_args(list(argv))
    except SystemExit as exc:
        return int(exc.code or 0)
    overrides = {k: getattr(args, k) for k in KEYS}
    try:
        cfg = load_config(args.config, overrides, args.command)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        written: list = []
        if args.command == "selftest":
            code, extra = _cmd_selftest(cfg, out, written, args.quick)
        else:
            code, extra = _HANDLERS[args.command](cfg, out, written)
        man = _manifest(args.command, cfg, written, extra, args.timestamp)
        _write(out, "manifest.json", _dump(man), [])
    except (ConfigError, DomainError) as exc:
        sys.stderr.write(f"vlab: error: {exc}\n")
        return 2
    except ArithmeticError as exc:
        sys.stderr.write(f"vlab: numerical failure: {exc}\n")
        return 1
    return code


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
