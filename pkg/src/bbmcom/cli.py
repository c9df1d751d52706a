"""Command-line entry point: ``bbmcom <experiment> [flags]``."""

import argparse
import dataclasses
import datetime
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, io, validation
from .com import com_limit_test, uniform_mesh
from .conjecture import TestFunction, conjecture_experiment, erf_self_check
from .ensembles import default_threads, map_replicates
from .model import ModelParams, ResourceCapError, simulate
from .sbm import (SBMParams, martingale_check, second_moment_profile,
                  simulate_ensemble)

EXPERIMENTS = ("simulate", "validate-bbm", "conjecture", "sbm", "validate-all")
FORMATS = ("csv", "json", "both")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_CAP = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    experiment: str = "simulate"
    gamma: float = 1.0
    dim: int = 1
    epochs: int = 12
    alpha: float = 1.0
    beta: float = 1.0
    level_n: int = 200
    horizon: float = 20.0
    replicates: int = 100
    seed: int = 1
    sampler: str = "exact"
    dt: float = 1e-3
    mesh: str = ""
    scheme: str = "direct"
    out: str = "out"
    format: str = "both"
    threads: int = 0  # 0: take BBM_THREADS

    def model_params(self):
        mesh = _parse_mesh(self.mesh, intra_epoch=True)
        return ModelParams(gamma=self.gamma, dim=self.dim, max_epoch=self.epochs,
                           sampler=self.sampler, dt=self.dt, record_mesh=mesh)

    def sbm_params(self):
        mesh = _parse_mesh(self.mesh, intra_epoch=False, horizon=self.horizon)
        return SBMParams(alpha=self.alpha, beta=self.beta, n=self.level_n, dim=self.dim,
                         horizon=self.horizon, mesh=mesh, scheme=self.scheme)

    @property
    def n_threads(self):
        return self.threads or default_threads()


FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _parse_mesh(spec, intra_epoch, horizon=None):
    """``""``: default mesh; a single number: uniform spacing; else a comma list of times."""
    spec = str(spec).strip()
    if not spec:
        return ()
    parts = [float(x) for x in spec.split(",") if x.strip()]
    if len(parts) == 1 and "," not in spec:
        h = parts[0]
        if not h > 0:
            raise ValueError("invariant violated: mesh spacing > 0")
        if intra_epoch:
            return uniform_mesh(h)
        k = int(math.floor(horizon / h + 1e-9))
        return tuple(h * (i + 1) for i in range(k))
    return tuple(parts)


def _coerce(name, value):
    typ = FIELDS[name].type
    typ = {"float": float, "int": int, "str": str}.get(typ, typ) if isinstance(typ, str) else typ
    if typ is int:
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(f"{name} must be an integer")
        return int(value)
    return typ(value)


def build_parser():
    p = argparse.ArgumentParser(prog="bbmcom", description=__doc__)
    p.add_argument("experiment", choices=EXPERIMENTS)
    # defaults are suppressed so that only explicitly given flags override the file
    S = argparse.SUPPRESS
    p.add_argument("--gamma", type=float, default=S, help="attraction (>0) or repulsion (<0)")
    p.add_argument("--dim", type=int, default=S)
    p.add_argument("--epochs", type=int, default=S, help="BBM runs until t = epochs")
    p.add_argument("--alpha", type=float, default=S)
    p.add_argument("--beta", type=float, default=S)
    p.add_argument("--level-n", dest="level_n", type=int, default=S)
    p.add_argument("--horizon", type=float, default=S)
    p.add_argument("--replicates", type=int, default=S)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--sampler", choices=("exact", "euler"), default=S)
    p.add_argument("--dt", type=float, default=S)
    p.add_argument("--mesh", default=S, help="spacing (e.g. 0.125) or comma-separated times")
    p.add_argument("--scheme", choices=("direct", "htransform"), default=S)
    p.add_argument("--out", default=S)
    p.add_argument("--format", choices=FORMATS, default=S)
    p.add_argument("--threads", type=int, default=S, help="worker threads (default: $BBM_THREADS or 1)")
    p.add_argument("--config", default=None, help="flat JSON object with the same keys as the flags")
    return p


def parse_config(argv=None):
    """Flags override the config file, which overrides the defaults."""
    ns = build_parser().parse_args(argv)
    values = {}
    if ns.config:
        try:
            data = json.loads(Path(ns.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a flat JSON object")
        for k, v in data.items():
            key = k.replace("-", "_")
            if key not in FIELDS or key == "experiment":
                raise ConfigError(f"unknown config key: {k}")
            if isinstance(v, (dict, list)):
                raise ConfigError(f"config key {k} must be a scalar")
            values[key] = v
    for k, v in vars(ns).items():
        if k != "config":
            values[k] = v
    try:
        cfg = RunConfig(**{k: _coerce(k, v) for k, v in values.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    if cfg.format not in FORMATS:
        raise ConfigError(f"format must be one of {FORMATS}")
    if cfg.replicates < 1:
        raise ConfigError("invariant violated: replicates ≥ 1")
    if cfg.seed < 0:
        raise ConfigError("invariant violated: seed ≥ 0")
    if cfg.threads < 0:
        raise ConfigError("invariant violated: threads ≥ 0")
    try:
        if cfg.experiment in ("simulate", "conjecture"):
            cfg.model_params()
        if cfg.experiment == "conjecture" and cfg.gamma == 0:
            raise ValueError("invariant violated: gamma ≠ 0 for the conjecture lab")
        if cfg.experiment == "sbm":
            cfg.sbm_params()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


# experiments -------------------------------------------------------------------

def _want(cfg, kind):
    return cfg.format in (kind, "both")


def run_simulate(cfg, out):
    params = cfg.model_params()
    until = float(cfg.epochs)
    stages = ("final",) + (("start", "mesh", "pre") if params.record_mesh else ())

    def one(r):
        snaps = [s for s in simulate(params, cfg.seed, r, until=until) if s.stage != "post"]
        return snaps

    runs = map_replicates(one, range(cfg.replicates), cfg.n_threads)
    com_rows = []
    for r, snaps in enumerate(runs):
        for s in snaps:
            row = {"replicate_id": r, "t": float(s.t), "stage": s.stage}
            row.update({f"com{j + 1}": float(c) for j, c in enumerate(s.com)})
            com_rows.append(row)
    if _want(cfg, "csv"):
        with io.SnapshotWriter(out / "snapshots.csv", cfg.dim, stages) as w:
            for r, snaps in enumerate(runs):
                for s in snaps:
                    w.write(r, s)
        io.write_pairs_csv(out / "com.csv", com_rows,
                           ["replicate_id", "t", "stage"] + [f"com{j + 1}" for j in range(cfg.dim)])
    if _want(cfg, "json"):
        io.write_json(out / "com.json", com_rows)
    finals = np.array([snaps[-1].com for snaps in runs])
    result = {"com_mean": finals.mean(axis=0), "com_variance": finals.var(axis=0, ddof=1)
              if len(finals) > 1 else None, "t": until}
    if cfg.replicates >= 1000:
        result["com_limit"] = [rep.to_dict() for rep in com_limit_test(finals, until)]
    return result, True


def run_validation(cfg, out, suite):
    results = validation.run_suite(suite, cfg.seed, cfg.n_threads, echo=print)
    io.write_json(out / "reports.json", [r.to_dict() for r in results])
    summary = {"criteria": [{"id": r.id, "name": r.name, "pass": r.passed,
                             "exploratory": r.exploratory} for r in results],
               "passed": [r.name for r in results if r.passed],
               "failed": [r.name for r in results if not r.passed]}
    return summary, all(r.passed for r in results)


def run_conjecture(cfg, out):
    ok, got, want = erf_self_check()
    g = TestFunction.box([-1.0] * cfg.dim, [1.0] * cfg.dim)
    rep = conjecture_experiment(cfg.gamma, cfg.dim, g, cfg.epochs, cfg.replicates, cfg.seed,
                                sampler=cfg.sampler, threads=cfg.n_threads)
    if _want(cfg, "csv"):
        fields = ["replicate", "observed", "predicted", "ratio"]
        io.write_pairs_csv(out / "conjecture.csv", rep.rows, fields)
    io.write_json(out / "conjecture.json", rep.to_dict())
    # exploratory: the exit status does not depend on the comparison
    return {"erf_self_check": {"pass": ok, "quadrature": got, "closed_form": want},
            "summary": rep.summary, "notes": rep.notes}, True


def run_sbm(cfg, out):
    params = cfg.sbm_params()
    series = simulate_ensemble(params, cfg.seed, cfg.replicates, cfg.n_threads)
    rows = []
    for s in series:
        for i, t in enumerate(s.times):
            row = {"replicate_id": s.replicate_id, "t": float(t), "count": int(s.counts[i]),
                   "N": float(s.N[i])}
            row.update({f"V{j + 1}": float(s.V[i, j]) for j in range(params.dim)})
            row.update({f"com{j + 1}": float(s.com[i, j]) for j in range(params.dim)})
            rows.append(row)
    fields = (["replicate_id", "t", "count", "N"] + [f"V{j + 1}" for j in range(params.dim)]
              + [f"com{j + 1}" for j in range(params.dim)])
    if _want(cfg, "csv"):
        io.write_pairs_csv(out / "sbm.csv", rows, fields)
    if _want(cfg, "json"):
        io.write_json(out / "sbm.json", rows)
    capped = sum(s.capped for s in series)
    ext = float(np.mean([s.counts[-1] == 0 for s in series if not s.capped])) if capped < len(series) else None
    result = {"replicates": cfg.replicates, "capped": capped, "extinct_fraction": ext,
              "extinction_limit": math.exp(-params.beta / params.alpha)}
    if capped == 0:
        prof = second_moment_profile(series, params)
        result["second_moment"] = {"times": prof.times, "mean": prof.mean, "se": prof.se,
                                   "derived_plateau": prof.plateau_limit,
                                   "erratum_1_plus_beta_over_alpha": prof.erratum_value}
    ok = True
    if cfg.replicates >= 1000 and capped == 0 and len(params.mesh) >= 2:
        t, s = params.mesh[0], params.mesh[1] - params.mesh[0]
        reps = martingale_check(series, t, s)
        result["martingale"] = [r.to_dict() for r in reps]
        ok = all(r.passed for r in reps)
    if capped:
        raise ResourceCapError(f"{capped} replicate(s) exceeded the population cap", result)
    return result, ok


def run(cfg):
    """Execute ``cfg``; returns the process exit code."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_json(out / "config.json", dataclasses.asdict(cfg))
    meta = {"version": __version__, "finished": None,
            "started": datetime.datetime.now(datetime.timezone.utc).isoformat()}
    code, partial = EXIT_OK, False
    try:
        if cfg.experiment == "simulate":
            result, ok = run_simulate(cfg, out)
        elif cfg.experiment == "conjecture":
            result, ok = run_conjecture(cfg, out)
        elif cfg.experiment == "sbm":
            result, ok = run_sbm(cfg, out)
        else:
            suite = "bbm" if cfg.experiment == "validate-bbm" else "all"
            result, ok = run_validation(cfg, out, suite)
        code = EXIT_OK if ok else EXIT_FAIL
    except ResourceCapError as exc:
        partial = True
        result = {"error": str(exc.args[0])}
        if len(exc.args) > 1:
            result["partial_result"] = exc.args[1]
        code = EXIT_CAP
    meta["finished"] = datetime.datetime.now(datetime.timezone.utc).isoformat()
    io.write_json(out / "summary.json", {"experiment": cfg.experiment, "exit_code": code,
                                         "partial": partial, "result": result, "metadata": meta})
    return code


def main(argv=None):
    try:
        cfg = parse_config(argv)
    except ConfigError as exc:
        print(f"bbmcom: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return run(cfg)
    except OSError as exc:
        print(f"bbmcom: I/O error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
