"""Branching-like processes read off the site urns.

``ZETA`` steps from ``i`` to the number of reds drawn before the ``(i+1)``-th
blue of a fresh MINUS urn; ``ZETA_TILDE`` steps from ``i`` to the reds before
the ``i``-th blue of a fresh PLUS urn and is absorbed at 0. Along the sites
between the origin and the walker's current side these chains describe the
edge local time profile of the walk.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .report import ExperimentReport
from .stats import ks_distance
from .urn import UrnState, Variant, run_to_blue_count, sample_discrepancy
from .walk import edge_profiles_at_visit
from .weights import WeightFunction

MIN_CONDITIONAL = 200


class BlpKind(str, Enum):
    ZETA = "zeta"
    ZETA_TILDE = "tilde"


def _urn_for(kind: BlpKind, value: int) -> tuple[Variant, int]:
    if BlpKind(kind) is BlpKind.ZETA:
        return Variant.MINUS, value + 1
    return Variant.PLUS, value


@dataclass
class BlpState:
    kind: BlpKind
    weight: WeightFunction
    value: int = 0
    generation: int = 0


def blp_step(state: BlpState, rng: np.random.Generator) -> int:
    variant, blues = _urn_for(state.kind, state.value)
    if blues == 0:
        nxt = 0
    else:
        nxt = run_to_blue_count(UrnState(variant, state.weight), blues, rng).reds
    state.value = nxt
    state.generation += 1
    return nxt


def sample_transitions(kind: BlpKind, w: WeightFunction, i: int, size: int,
                       rng: np.random.Generator) -> np.ndarray:
    """``size`` independent one-step values from state ``i``."""
    variant, blues = _urn_for(kind, i)
    if blues == 0:
        return np.zeros(size, np.int64)
    return sample_discrepancy(variant, w, blues, size, rng) + blues


@dataclass(frozen=True)
class BlpPath:
    values: np.ndarray
    sigma0: int | None


def blp_run(kind: BlpKind, w: WeightFunction, init: int, max_generations: int,
            rng: np.random.Generator) -> BlpPath:
    """Path ``zeta_0 .. zeta_g`` and the first generation at 0 (None if not hit)."""
    if max_generations < 1:
        raise ValueError("max_generations must be at least 1")
    kind = BlpKind(kind)
    state = BlpState(kind, w, int(init))
    values = [state.value]
    sigma0 = 0 if init == 0 else None
    for _ in range(max_generations):
        if kind is BlpKind.ZETA_TILDE and state.value == 0:
            values.append(0)
            state.generation += 1
            continue
        v = blp_step(state, rng)
        values.append(v)
        if v == 0 and sigma0 is None:
            sigma0 = state.generation
    return BlpPath(np.array(values, np.int64), sigma0)


def return_time(kind: BlpKind, w: WeightFunction, init: int, max_generations: int,
                rng: np.random.Generator) -> int | None:
    """First generation ``k >= 1`` with value 0, or None within ``max_generations``."""
    state = BlpState(BlpKind(kind), w, int(init))
    for _ in range(max_generations):
        if blp_step(state, rng) == 0:
            return state.generation
    return None


def survival_curve(kind: BlpKind, w: WeightFunction, init: int, horizons, replicas: int,
                   rng: np.random.Generator) -> np.ndarray:
    """Empirical ``P(return time > n)`` for each ``n`` in ``horizons``."""
    horizons = np.asarray(horizons, dtype=np.int64)
    top = int(horizons.max())
    times = np.array([t if t is not None else top + 1
                      for t in (return_time(kind, w, init, top, rng) for _ in range(replicas))])
    return (times[:, None] > horizons[None, :]).mean(axis=0)


def blp_vs_walk_check(w: WeightFunction, z: int, m: int, samples: int, seed: int,
                      i_values=(0, 1, 2), kind: BlpKind | None = None, max_site: int = 40,
                      reference_size: int | None = None, budget: int = 10**7,
                      workers: int = 1) -> ExperimentReport:
    """Compare walk transitions ``E(x-1) -> E(x)`` at ``tau_{z,m}`` with BLP steps.

    ``ZETA`` covers ``z < x < 0``; ``ZETA_TILDE`` covers ``x > max(z, 0)``.
    """
    t0 = time.perf_counter()
    if kind is None:
        kind = BlpKind.ZETA if z < 0 else BlpKind.ZETA_TILDE
    kind = BlpKind(kind)
    if kind is BlpKind.ZETA:
        if z >= -1:
            raise ValueError("the ZETA branch needs z <= -2")
        sites = np.arange(z, 0)
    else:
        start = max(z, 0)
        sites = np.arange(start, start + max_site + 1)
    profiles, failed = edge_profiles_at_visit(w, z, m, sites, samples, seed, budget, workers)
    prev, nxt = profiles[:, :-1].ravel(), profiles[:, 1:].ravel()
    report = ExperimentReport(
        "blp-vs-walk",
        {"weight": w.describe(), "z": z, "m": m, "kind": kind.value, "walks": samples},
        replicas=samples, failures=failed,
    )
    ref_rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,)))
    worst = 0.0
    for i in i_values:
        cond = nxt[prev == i]
        if cond.size < MIN_CONDITIONAL:
            report.add("ks", i, float("nan"), None, None, None, "uncovered")
            continue
        ref = sample_transitions(kind, w, int(i), reference_size or max(cond.size, 10**4), ref_rng)
        ks = ks_distance(cond, ref)
        worst = max(worst, ks)
        report.add("ks", i, ks, None, 0.05, None, "pass" if ks <= 0.05 else "fail")
        report.add("conditional_samples", i, float(cond.size), None, None, None, "info")
        report.samples[f"walk_{i}"] = cond
        report.samples[f"blp_{i}"] = ref
    report.add("max_ks", "all", worst, None, 0.05, None, "pass" if worst <= 0.05 else "fail")
    report.wall_clock = time.perf_counter() - t0
    return report
