"""Command line entry point.

Every subcommand accepts ``--seed --replicas --workers --out --config`` and
``--assert``. Values come from built-in defaults, then the JSON config file,
then explicit flags; the effective configuration is echoed to stderr with the
source of each value. Exit codes: 0 success, 1 invalid configuration,
2 replica failure rate exceeded, 3 a verdict failed under ``--assert``.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Any, Callable

import numpy as np

from . import blp, diffusion, raylab, urn, walk
from .parallel import FailureRateExceeded, spawn_replicas
from .report import ExperimentReport, mean_se, var_se
from .weights import make_weight

EXIT_CONFIG = 1
EXIT_FAILURES = 2
EXIT_VERDICT = 3


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _ints(text: str) -> list[int]:
    return [int(t) for t in str(text).split(",") if t.strip()]


def _floats(text: str) -> list[float]:
    return [float(t) for t in str(text).split(",") if t.strip()]


GLOBAL_DEFAULTS: dict[str, Any] = {"seed": 0, "replicas": 1000, "workers": 1, "out": None}

# (default, parser) per key and subcommand
OPTIONS: dict[str, dict[str, tuple[Any, Callable[[str], Any]]]] = {
    "simulate-walk": {
        "weight": ("kind=constant,value=1.0", str),
        "steps": (10000, int),
        "record": ("position", str),
    },
    "urn-stats": {
        "variant": ("plus", str),
        "weight": ("kind=polynomial,alpha=1.0", str),
        "n": ("100,1000", _ints),
        "sampler": ("direct", str),
    },
    "blp-stats": {
        "kind": ("zeta", str),
        "weight": ("kind=constant,value=1.0", str),
        "init": (10, int),
        "generations": (10, int),
    },
    "diffusion": {
        "process": ("besq", str),
        "alpha": (0.0, float),
        "delta": (0.0, float),
        "theta": (0.5, float),
        "start": (1.0, float),
        "step": (1e-4, float),
        "horizon": (1.0, float),
    },
    "rk-profile": {
        "weight": ("kind=polynomial,alpha=1.0", str),
        "M": (2.0, float),
        "N": (300, int),
        "grid": (21, int),
    },
    "increment-test": {
        "weight": ("kind=polynomial,alpha=1.0", str),
        "M": (20.0, float),
        "c": (0.1, float),
        "N": (300, int),
        "grid": (21, int),
    },
    "bmpe-increment": {
        "alpha": (1.0, float),
        "M": (20.0, float),
        "delta": (0.05, float),
        "step": (1e-5, float),
        "grid": (21, int),
    },
    "nonconv": {
        "alpha": (1.0, float),
        "N": ("300", _ints),
        "delta": (0.05, float),
        "M": (20.0, float),
        "c": (0.05, float),
        "K": (50.0, float),
        "step": (1e-5, float),
    },
    "afc-test": {
        "weight": ("kind=constant,value=1.0", str),
        "n": (10000, int),
        "t": ("0.5,1", _floats),
        "step": (1e-4, float),
    },
}

HELP = {
    "simulate-walk": "simulate walks and write positions, decompositions or profiles",
    "urn-stats": "discrepancy moments of a site urn at blue stopping times",
    "blp-stats": "moments of a branching-like process along generations",
    "diffusion": "endpoint statistics of a reference diffusion sampler",
    "rk-profile": "local-time profile moments at an inverse local time",
    "increment-test": "walk local-time increments against both candidate limits",
    "bmpe-increment": "local-time increments of the BMPE candidate",
    "nonconv": "moment gap of the occupation functional, walk vs BMPE",
    "afc-test": "KS distance of walk marginals to the BMPE limit",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed (64-bit)")
    common.add_argument("--replicas", type=int, default=None)
    common.add_argument("--workers", type=int, default=None)
    common.add_argument("--out", default=None, help="CSV path (stdout when omitted)")
    common.add_argument("--config", default=None, help="JSON file of option values")
    common.add_argument("--assert", dest="assert_", action="store_true",
                        help="exit 3 if any verdict fails")
    parser = _Parser(prog="sirwlab", description="Monte Carlo laboratory for self-interacting walks")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, opts in OPTIONS.items():
        p = sub.add_parser(name, parents=[common], help=HELP[name])
        for key in opts:
            p.add_argument(f"--{key}", dest=key, default=None)
    return parser


def resolve(args: argparse.Namespace) -> tuple[dict[str, Any], dict[str, str]]:
    """Merge defaults, config file and flags; returns values and their sources."""
    opts = OPTIONS[args.command]
    values: dict[str, Any] = {}
    source: dict[str, str] = {}
    for key, val in GLOBAL_DEFAULTS.items():
        values[key], source[key] = val, "default"
    for key, (val, _) in opts.items():
        values[key], source[key] = val, "default"
    if args.config:
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = sorted(set(data) - set(values))
        if unknown:
            raise ConfigError(f"unknown config keys for {args.command}: {unknown}")
        for key, val in data.items():
            values[key], source[key] = val, "config"
    for key in values:
        val = getattr(args, key, None)
        if val is not None:
            values[key], source[key] = val, "flag"
    try:
        for key in ("seed", "replicas", "workers"):
            values[key] = int(values[key])
        for key, (_, conv) in opts.items():
            val = values[key]
            if conv in (_ints, _floats) and isinstance(val, list):
                values[key] = conv(",".join(map(str, val)))
            else:
                values[key] = conv(val) if conv is not str else str(val)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid value: {exc}") from exc
    validate(args.command, values)
    return values, source


def validate(command: str, v: dict[str, Any]) -> None:
    if v["replicas"] < 1:
        raise ConfigError("replicas must be at least 1")
    if v["workers"] < 1:
        raise ConfigError("workers must be at least 1")
    if not 0 <= v["seed"] < 2**64:
        raise ConfigError("seed must be a 64-bit unsigned integer")
    if command in ("nonconv", "bmpe-increment") and not 0 < v["delta"] <= 0.5:
        raise ConfigError("delta must lie in (0, 1/2]")
    if "c" in v and not 0 <= v["c"] < 0.5:
        raise ConfigError("c must lie in [0, 1/2)")
    if "weight" in v:
        try:
            v["weight_fn"] = make_weight(v["weight"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    choices = {"record": ("position", "decomposition", "profile"), "variant": ("minus", "plus", "zero"),
               "sampler": ("direct", "rubin"), "kind": ("zeta", "tilde"),
               "process": ("besq", "bmpe", "pq")}
    for key, allowed in choices.items():
        if key in v and v[key] not in allowed:
            raise ConfigError(f"{key} must be one of {', '.join(allowed)}")
    for key in ("N", "n", "steps", "grid", "generations"):
        if key in v:
            vals = v[key] if isinstance(v[key], list) else [v[key]]
            if not vals or min(vals) < 1:
                raise ConfigError(f"{key} must be positive")
    if command == "rk-profile" and not v["M"] > 0:
        raise ConfigError("M must be positive")
    if command == "blp-stats" and v["init"] < 0:
        raise ConfigError("init must be nonnegative")


# -- subcommands ---------------------------------------------------------------

def _echo(v: dict[str, Any]) -> dict[str, Any]:
    return {k: (",".join(map(str, x)) if isinstance(x, list) else x)
            for k, x in v.items() if k not in ("weight_fn", "out", "workers", "seed", "replicas")}


class _WalkRecordKernel:
    def __init__(self, w, steps: int, record: str):
        self.w, self.steps, self.record = w, steps, record

    def __call__(self, index: int, rng: np.random.Generator):
        state = walk.WalkState(self.w, rng, track_drift=self.record == "decomposition")
        traj = state.run_for_steps(self.steps)
        if self.record == "profile":
            snap = traj.final
            xs = np.arange(snap.lo, snap.hi + 1)
            return np.column_stack([xs, snap.E(xs), snap.D(xs), snap.L(xs)])
        return np.column_stack([traj.positions, traj.martingale, traj.drift])


def cmd_simulate_walk(v: dict[str, Any]) -> tuple[ExperimentReport, list[str], list[dict]]:
    res = spawn_replicas(_WalkRecordKernel(v["weight_fn"], v["steps"], v["record"]),
                         v["replicas"], v["seed"], v["workers"])
    report = ExperimentReport("simulate-walk", _echo(v), replicas=v["replicas"], failures=len(res.failures))
    records: list[dict] = []
    if v["record"] == "profile":
        cols = ["replica", "x", "E", "D", "L"]
        for i, arr in enumerate(res.values):
            for x, e, d, l in arr:
                records.append({"replica": i, "x": int(x), "E": int(e), "D": int(d), "L": int(l)})
    elif v["record"] == "position":
        cols = ["replica", "t", "X"]
        for i, arr in enumerate(res.values):
            for t, row in enumerate(arr):
                records.append({"replica": i, "t": t, "X": int(row[0])})
    else:
        cols = ["replica", "t", "X", "M", "Gamma"]
        for i, arr in enumerate(res.values):
            for t, row in enumerate(arr):
                records.append({"replica": i, "t": t, "X": int(row[0]), "M": float(row[1]),
                                "Gamma": float(row[2])})
    return report, cols, records


URN_COLUMNS = ["variant", "alpha_or_kind", "n", "replicas", "mean_D", "se_mean", "var_D", "se_var",
               "target_mean", "target_var", "verdict"]


def cmd_urn_stats(v: dict[str, Any]):
    w = v["weight_fn"]
    report = urn.moment_scan(v["variant"], w, v["n"], v["replicas"], v["seed"], v["sampler"], v["workers"])
    label = f"{w.alpha_or_zero:g}" if w.kind.value == "polynomial" else w.kind.value
    records = []
    for n in sorted(set(v["n"])):
        m, var = report.get("mean_D", n), report.get("var_D", n)
        ok = m.verdict == "pass" and var.verdict == "pass"
        records.append({"variant": v["variant"], "alpha_or_kind": label, "n": n, "replicas": v["replicas"],
                        "mean_D": m.estimate, "se_mean": m.se, "var_D": var.estimate, "se_var": var.se,
                        "target_mean": m.target_a, "target_var": var.target_a,
                        "verdict": "pass" if ok else "fail"})
    return report, URN_COLUMNS, records


class _BlpKernel:
    def __init__(self, kind, w, init: int, generations: int):
        self.kind, self.w, self.init, self.generations = kind, w, init, generations

    def __call__(self, index: int, rng: np.random.Generator):
        path = blp.blp_run(self.kind, self.w, self.init, self.generations, rng)
        return path.values, -1 if path.sigma0 is None else path.sigma0


def cmd_blp_stats(v: dict[str, Any]):
    res = spawn_replicas(_BlpKernel(v["kind"], v["weight_fn"], v["init"], v["generations"]),
                         v["replicas"], v["seed"], v["workers"])
    vals = np.array([p for p, _ in res.ok])
    hits = np.array([s for _, s in res.ok])
    report = ExperimentReport("blp-stats", _echo(v), replicas=v["replicas"], failures=len(res.failures))
    for k in range(vals.shape[1]):
        m, se = mean_se(vals[:, k])
        report.add("mean", k, m, se)
        var, sv = var_se(vals[:, k])
        report.add("var", k, var, sv)
        report.add("at_zero", k, float(np.mean(vals[:, k] == 0)))
    report.add("sigma0_hit_fraction", "all", float(np.mean(hits >= 0)))
    return report, None, None


def cmd_diffusion(v: dict[str, Any]):
    rng = np.random.default_rng(np.random.SeedSequence(v["seed"]))
    report = ExperimentReport("diffusion", _echo(v), replicas=v["replicas"])
    if v["process"] == "besq":
        p = diffusion.BesqParams(v["alpha"], v["delta"], v["start"], v["step"], v["horizon"])
        ends = np.array([diffusion.sample_besq(p, rng).values[-1] for _ in range(v["replicas"])])
        tm, tv = diffusion.besq_moments(p.alpha, p.delta, p.start, p.horizon)
        m, se = mean_se(ends)
        var, sv = var_se(ends)
        report.add("mean_end", p.horizon, m, se, tm, None, "info")
        report.add("var_end", p.horizon, var, sv, tv if p.delta >= 1 else None, None, "info")
        if p.delta == 0:
            ints = diffusion.besq_integral_samples(p, v["replicas"], rng)
            im, iv = diffusion.besq_integral_moments(p.alpha, p.start, p.horizon)
            m, se = mean_se(ints)
            var, sv = var_se(ints)
            report.add("mean_integral", p.horizon, m, se, im, None, "info")
            report.add("var_integral", p.horizon, var, sv, iv, None, "info")
    elif v["process"] == "bmpe":
        p = diffusion.BmpeParams(v["theta"], v["theta"], v["alpha"], v["step"], v["horizon"])
        ends = diffusion.bmpe_marginals(p, [p.horizon], v["replicas"], rng)[:, 0]
        m, se = mean_se(ends)
        var, sv = var_se(ends)
        report.add("mean_end", p.horizon, m, se, 0.0, None, "info")
        report.add("var_end", p.horizon, var, sv, p.sigma**2 * p.horizon if v["theta"] == 0 else None,
                   None, "info")
    else:
        n = int(round(v["horizon"] / v["step"]))
        ends = diffusion.pq_walk_marginals(v["theta"], n, [1.0], v["replicas"], rng)[:, 0]
        m, se = mean_se(ends)
        var, sv = var_se(ends)
        report.add("mean_end", 1.0, m, se, 0.0, None, "info")
        report.add("var_end", 1.0, var, sv, 1.0 if v["theta"] == 0 else None, None, "info")
    return report, None, None


def cmd_rk_profile(v):
    return raylab.rk_profile(v["weight_fn"], v["M"], v["N"], v["replicas"], v["seed"], v["grid"],
                             v["workers"]), None, None


def cmd_increment_test(v):
    return raylab.increment_experiment(v["weight_fn"], v["M"], v["c"], v["N"], v["replicas"], v["seed"],
                                       v["grid"], v["workers"]), None, None


def cmd_bmpe_increment(v):
    return raylab.bmpe_increment_experiment(v["alpha"], v["M"], v["replicas"], v["seed"], v["grid"],
                                            v["delta"], v["step"], v["workers"]), None, None


def cmd_nonconv(v):
    return raylab.nonconvergence_test(v["alpha"], v["N"], v["delta"], v["M"], v["c"], v["K"],
                                      v["replicas"], v["seed"], v["workers"], v["step"]), None, None


def cmd_afc_test(v):
    return raylab.afc_limit_test(v["weight_fn"], v["n"], v["t"], v["replicas"], v["seed"], v["workers"],
                                 v["step"]), None, None


COMMANDS = {
    "simulate-walk": cmd_simulate_walk,
    "urn-stats": cmd_urn_stats,
    "blp-stats": cmd_blp_stats,
    "diffusion": cmd_diffusion,
    "rk-profile": cmd_rk_profile,
    "increment-test": cmd_increment_test,
    "bmpe-increment": cmd_bmpe_increment,
    "nonconv": cmd_nonconv,
    "afc-test": cmd_afc_test,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        values, source = resolve(args)
    except ConfigError as exc:
        print(f"sirwlab: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for key in sorted(source):
        val = values[key]
        shown = ",".join(map(str, val)) if isinstance(val, list) else val
        print(f"# {key}={shown} ({source[key]})", file=sys.stderr)
    try:
        report, columns, records = COMMANDS[args.command](values)
    except FailureRateExceeded as exc:
        print(f"sirwlab: {exc}", file=sys.stderr)
        return EXIT_FAILURES
    except ValueError as exc:
        print(f"sirwlab: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    kwargs = {"seed": values["seed"]}
    if columns is not None:
        kwargs.update(columns=columns, records=records)
    text = report.to_csv(**kwargs)
    if values["out"]:
        with open(values["out"], "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if args.assert_:
        bad = [r for r in report.rows if r.verdict == "fail"]
        if columns is not None and records is not None and "verdict" in columns:
            bad += [r for r in records if r.get("verdict") == "fail"]
        if bad:
            print(f"sirwlab: {len(bad)} verdict(s) failed", file=sys.stderr)
            return EXIT_VERDICT
    return 0


if __name__ == "__main__":
    sys.exit(main())
