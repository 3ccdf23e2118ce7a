"""Generalized Polya urns attached to the sites of the walk.

Every site carries an urn whose blue draws are left departures and red draws
are right departures. With ``w`` the walk weight the draw rates are

* ``MINUS`` (sites left of the origin): ``b(i) = w(2i)``, ``r(i) = w(2i+1)``
* ``PLUS`` (sites right of the origin): ``b(i) = w(2i+1)``, ``r(i) = w(2i)``
* ``ZERO`` (the origin): ``b(i) = r(i) = w(2i)``

and with ``B`` blues and ``R`` reds drawn so far the next draw is blue with
probability ``b(B) / (b(B) + r(R))``. The discrepancy is ``D = R - B``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from numba import njit

from .parallel import ReplicaFailure, spawn_replicas
from .report import ExperimentReport, control_variate_mean, mean_se, var_se
from .weights import Kind, WeightFunction, gamma_limit

RUNAWAY_CAP = 10**9


class Variant(str, Enum):
    MINUS = "minus"
    PLUS = "plus"
    ZERO = "zero"


class Draw(str, Enum):
    BLUE = "blue"
    RED = "red"


class RunawayError(RuntimeError):
    """Too many draws: the weight is outside the supported regimes."""


def rate_tables(variant: Variant, w: WeightFunction, n_blue: int, n_red: int) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(b(0..n_blue-1), r(0..n_red-1))`` for the given variant."""
    variant = Variant(variant)
    size = 2 * max(n_blue, n_red) + 2
    t = w.table(size)
    even, odd = t[0::2], t[1::2]
    if variant is Variant.MINUS:
        b, r = even, odd
    elif variant is Variant.PLUS:
        b, r = odd, even
    else:
        b, r = even, even
    return np.ascontiguousarray(b[:n_blue]), np.ascontiguousarray(r[:n_red])


@dataclass
class UrnState:
    variant: Variant
    weight: WeightFunction
    blue: int = 0
    red: int = 0

    @property
    def draws(self) -> int:
        return self.blue + self.red

    @property
    def discrepancy(self) -> int:
        return self.red - self.blue

    def blue_probability(self) -> float:
        b, r = rate_tables(self.variant, self.weight, self.blue + 1, self.red + 1)
        return float(b[self.blue] / (b[self.blue] + r[self.red]))


@dataclass(frozen=True)
class UrnStopRecord:
    tau: int
    discrepancy_at_tau: int
    blues: int
    trace: tuple[Draw, ...] | None = field(default=None, repr=False)

    @property
    def reds(self) -> int:
        return self.discrepancy_at_tau + self.blues


def urn_step(state: UrnState, rng: np.random.Generator) -> Draw:
    if rng.random() < state.blue_probability():
        state.blue += 1
        return Draw.BLUE
    state.red += 1
    return Draw.RED


# -- kernels -----------------------------------------------------------------

@njit(cache=True)
def _advance_to_blue(b, r, B, R, n, gen, cap):
    """Draw until ``B == n``. Returns ``(B, R, status)``; status 1 = red table exhausted, 2 = cap."""
    nr = r.shape[0]
    draws = 0
    while B < n:
        if R >= nr:
            return B, R, 1
        if draws >= cap:
            return B, R, 2
        bb = b[B]
        rr = r[R]
        blue = gen.random() * (bb + rr) < bb
        B += blue
        R += 1 - blue
        draws += 1
    return B, R, 0


@njit(cache=True)
def _reds_at_levels(b, r, levels, gen, out):
    """Fresh urn run; ``out[j]`` = reds drawn before blue number ``levels[j]`` (ascending).

    Returns False when the red table is too short.
    """
    nl = levels.shape[0]
    nr = r.shape[0]
    j = 0
    while j < nl and levels[j] == 0:
        out[j] = 0
        j += 1
    B = 0
    R = 0
    while j < nl:
        if R >= nr:
            return False
        bb = b[B]
        rr = r[R]
        blue = gen.random() * (bb + rr) < bb
        B += blue
        R += 1 - blue
        while j < nl and B == levels[j]:
            out[j] = R
            j += 1
    return True


@njit(cache=True)
def _blues_at_red_levels(b, r, levels, gen, out):
    """Fresh urn run; ``out[j]`` = blues drawn before red number ``levels[j]`` (ascending)."""
    nl = levels.shape[0]
    nb = b.shape[0]
    j = 0
    while j < nl and levels[j] == 0:
        out[j] = 0
        j += 1
    B = 0
    R = 0
    while j < nl:
        if B >= nb:
            return False
        bb = b[B]
        rr = r[R]
        blue = gen.random() * (bb + rr) < bb
        B += blue
        R += 1 - blue
        while j < nl and R == levels[j]:
            out[j] = B
            j += 1
    return True


@njit(cache=True)
def _rubin_levels(b, r, levels, gen, out):
    """Exponential-race version of ``_reds_at_levels``."""
    nl = levels.shape[0]
    nr = r.shape[0]
    j = 0
    while j < nl and levels[j] == 0:
        out[j] = 0
        j += 1
    if j == nl:
        return True
    B = 0
    R = 0
    tb = gen.standard_exponential() / b[0]
    tr = gen.standard_exponential() / r[0]
    while True:
        if tb < tr:
            B += 1
            while j < nl and B == levels[j]:
                out[j] = R
                j += 1
            if j == nl:
                return True
            tb += gen.standard_exponential() / b[B]
        else:
            R += 1
            if R >= nr:
                return False
            tr += gen.standard_exponential() / r[R]


@njit(cache=True)
def _batch_direct(b, r, n, gen, out, start):
    """Fill ``out[start:]`` with reds before the n-th blue; returns next unfilled index."""
    lv = np.empty(1, np.int64)
    lv[0] = n
    res = np.empty(1, np.int64)
    for k in range(start, out.shape[0]):
        if not _reds_at_levels(b, r, lv, gen, res):
            return k
        out[k] = res[0]
    return out.shape[0]


@njit(cache=True)
def _batch_rubin(b, r, n, gen, out, start):
    lv = np.empty(1, np.int64)
    lv[0] = n
    res = np.empty(1, np.int64)
    for k in range(start, out.shape[0]):
        if not _rubin_levels(b, r, lv, gen, res):
            return k
        out[k] = res[0]
    return out.shape[0]


def _initial_red_size(n: int) -> int:
    return int(2 * n + 16 * math.sqrt(n + 1) + 64)


def reds_at_levels(variant: Variant, w: WeightFunction, levels, rng: np.random.Generator,
                   sampler: str = "direct") -> np.ndarray:
    """One fresh urn run; reds drawn before each blue count in ``levels`` (ascending)."""
    lv = np.ascontiguousarray(levels, dtype=np.int64)
    out = np.empty(lv.shape[0], np.int64)
    top = int(lv[-1]) if lv.size else 0
    size = _initial_red_size(top)
    kernel = _reds_at_levels if sampler == "direct" else _rubin_levels
    saved = rng.bit_generator.state
    while True:
        b, r = rate_tables(variant, w, top + 1, size)
        if kernel(b, r, lv, rng, out):
            return out
        if size > RUNAWAY_CAP:
            raise RunawayError("red count exceeded the runaway cap")
        rng.bit_generator.state = saved
        size *= 4


def blues_at_red_levels(variant: Variant, w: WeightFunction, levels, rng: np.random.Generator) -> np.ndarray:
    """One fresh urn run; blues drawn before each red count in ``levels`` (ascending)."""
    lv = np.ascontiguousarray(levels, dtype=np.int64)
    out = np.empty(lv.shape[0], np.int64)
    top = int(lv[-1]) if lv.size else 0
    size = _initial_red_size(top)
    saved = rng.bit_generator.state
    while True:
        b, r = rate_tables(variant, w, size, top + 1)
        if _blues_at_red_levels(b, r, lv, rng, out):
            return out
        if size > RUNAWAY_CAP:
            raise RunawayError("blue count exceeded the runaway cap")
        rng.bit_generator.state = saved
        size *= 4


# -- public samplers -------------------------------------------------------------

def run_to_blue_count(state: UrnState, n: int, rng: np.random.Generator,
                      cap: int = RUNAWAY_CAP, trace: bool = False) -> UrnStopRecord:
    """Advance ``state`` until it holds ``n`` blues and report the stopping time."""
    if n < state.blue:
        raise ValueError("target blue count is below the current one")
    if trace:
        outcomes = []
        while state.blue < n:
            if len(outcomes) >= cap:
                raise RunawayError(f"more than {cap} draws")
            outcomes.append(urn_step(state, rng))
        return UrnStopRecord(state.draws, state.red - n, n, tuple(outcomes))
    B, R = state.blue, state.red
    used = 0
    size = _initial_red_size(n) + R
    while True:
        b, r = rate_tables(state.variant, state.weight, n + 1, size)
        B2, R2, status = _advance_to_blue(b, r, B, R, n, rng, cap - used)
        used += (B2 - B) + (R2 - R)
        B, R = B2, R2
        if status == 0:
            break
        if status == 2:
            state.blue, state.red = B, R
            raise RunawayError(f"more than {cap} draws")
        size *= 4
    state.blue, state.red = B, R
    return UrnStopRecord(B + R, R - n, n)


def rubin_sample(variant: Variant, w: WeightFunction, n: int, rng: np.random.Generator,
                 cap: int = RUNAWAY_CAP) -> UrnStopRecord:
    """Stop record at the n-th blue mark of two independent exponential mark sequences."""
    if n < 1:
        raise ValueError("n must be at least 1")
    lv = np.array([n], np.int64)
    out = np.empty(1, np.int64)
    size = min(_initial_red_size(n), cap)
    saved = rng.bit_generator.state
    while True:
        b, r = rate_tables(variant, w, n + 1, size)
        if _rubin_levels(b, r, lv, rng, out):
            break
        if size >= cap:
            raise RunawayError(f"more than {cap} red marks")
        rng.bit_generator.state = saved
        size = min(4 * size, cap)
    reds = int(out[0])
    return UrnStopRecord(n + reds, reds - n, n)


def sample_discrepancy(variant: Variant, w: WeightFunction, n: int, size: int,
                       rng: np.random.Generator, sampler: str = "direct") -> np.ndarray:
    """``size`` independent draws of the discrepancy at the n-th blue."""
    if sampler not in ("direct", "rubin"):
        raise ValueError("sampler must be 'direct' or 'rubin'")
    out = np.empty(size, np.int64)
    if n == 0:
        out[:] = 0
        return out
    kernel = _batch_direct if sampler == "direct" else _batch_rubin
    red_size = _initial_red_size(n)
    saved = rng.bit_generator.state
    while True:
        b, r = rate_tables(variant, w, n + 1, red_size)
        if kernel(b, r, n, rng, out, 0) == size:
            return out - n
        # replay the whole batch with a longer table so the stream is unchanged
        rng.bit_generator.state = saved
        red_size *= 4
        if red_size > RUNAWAY_CAP:
            raise RunawayError("red count exceeded the runaway cap")


@dataclass(frozen=True)
class ExactLaw:
    values: np.ndarray
    probs: np.ndarray
    tail_mass: float

    def pmf(self, d: int) -> float:
        idx = d - int(self.values[0])
        if 0 <= idx < self.probs.shape[0]:
            return float(self.probs[idx])
        return 0.0

    def expectation(self, f) -> float:
        return float(np.sum(self.probs * f(self.values)))


def exact_law(variant: Variant, w: WeightFunction, n: int, red_cap: int = 200) -> ExactLaw:
    """Law of the discrepancy at the n-th blue by dynamic programming over (blues, reds)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if n > 12:
        raise ValueError("exact_law supports n <= 12")
    if red_cap < n + 10 * math.sqrt(n):
        raise ValueError("red_cap must be at least n + 10*sqrt(n)")
    b, r = rate_tables(variant, w, n, red_cap + 1)
    p = np.zeros(red_cap + 1)
    p[0] = 1.0
    tail = 0.0
    for i in range(n):
        q = b[i] / (b[i] + r)
        nxt = np.zeros(red_cap + 1)
        for j in range(red_cap + 1):
            mass = p[j]
            if mass == 0.0:
                continue
            nxt[j] += mass * q[j]
            if j < red_cap:
                p[j + 1] += mass * (1.0 - q[j])
            else:
                tail += mass * (1.0 - q[j])
        p = nxt
    values = np.arange(red_cap + 1) - n
    return ExactLaw(values, p, tail)


def total_variation(law: ExactLaw, samples: np.ndarray) -> float:
    """TV distance between an exact law and the empirical law of ``samples``."""
    samples = np.asarray(samples, dtype=np.int64)
    lo = min(int(law.values[0]), int(samples.min()))
    hi = max(int(law.values[-1]), int(samples.max()))
    emp = np.bincount(samples - lo, minlength=hi - lo + 1) / samples.size
    ref = np.zeros(hi - lo + 1)
    ref[law.values - lo] = law.probs
    return 0.5 * float(np.abs(emp - ref).sum()) + 0.5 * law.tail_mass


def control_sums(variant: Variant, w: WeightFunction, n: int, reds: np.ndarray) -> np.ndarray:
    """Zero-mean control ``sum_{i<R} 1/r(i) - sum_{j<n} 1/b(j)`` for each red count ``R``.

    Its expectation vanishes exactly: ``sum_{i<R(t)} 1/r(i) - t`` is a martingale
    of the red mark process, evaluated at the independent time of the n-th blue mark.
    """
    reds = np.asarray(reds, dtype=np.int64)
    top = int(reds.max()) + 1
    b, r = rate_tables(variant, w, n, top)
    cum_r = np.concatenate([[0.0], np.cumsum(1.0 / r)])
    return cum_r[reds] - float(np.sum(1.0 / b))


def limit_targets(variant: Variant, w: WeightFunction, n: int) -> tuple[float, float]:
    """Large-n targets ``(E D, Var D)`` at the n-th blue."""
    variant = Variant(variant)
    if w.kind is Kind.POLYNOMIAL:
        a = w.alpha
        side = {Variant.PLUS: 0.5, Variant.MINUS: -0.5, Variant.ZERO: 0.0}[variant]
        return side - a / (2 * a + 1), 2 * n / (2 * a + 1)
    g = gamma_limit(w).value
    sign = {Variant.PLUS: 1.0, Variant.MINUS: -1.0, Variant.ZERO: 0.0}[variant]
    return sign * (g if g is not None else math.nan), 2.0 * n


def increment_variance_target(w: WeightFunction, n: int, m: int) -> float:
    """Leading-order ``Var(D(tau_m) - D(tau_n))`` for ``n <= m``.

    Equals ``2(m - n)`` to first order in ``(m - n)/n``; the full expression
    matters once ``m - n`` is comparable to ``n``.
    """
    a = w.alpha_or_zero
    ratio = m / n
    return 2 * n / (2 * a + 1) * (1 + ratio - 2 * ratio ** (-a))


@dataclass(frozen=True)
class _ScanKernel:
    variant: Variant
    weight: WeightFunction
    levels: tuple[int, ...]
    sampler: str

    def __call__(self, index: int, rng: np.random.Generator) -> np.ndarray:
        try:
            return reds_at_levels(self.variant, self.weight, self.levels, rng, self.sampler)
        except RunawayError as exc:
            raise ReplicaFailure(str(exc)) from exc


def moment_scan(variant: Variant, w: WeightFunction, n_values, replicas: int, seed: int,
                sampler: str = "direct", workers: int = 1, mean_tol: float = 0.02,
                var_rtol: float = 0.05) -> ExperimentReport:
    """Monte Carlo moments of the discrepancy at ``tau_n`` and of ``D(tau_2n) - D(tau_n)``."""
    if replicas < 100:
        raise ValueError("moment_scan needs at least 100 replicas")
    variant = Variant(variant)
    n_values = sorted({int(n) for n in n_values})
    levels = tuple(sorted(set(n_values) | {2 * n for n in n_values}))
    t0 = time.perf_counter()
    res = spawn_replicas(_ScanKernel(variant, w, levels, sampler), replicas, seed, workers)
    reds = np.array(res.ok)
    report = ExperimentReport(
        "urn-moments",
        {"variant": variant.value, "weight": w.describe(), "n": ",".join(map(str, n_values)),
         "sampler": sampler},
        replicas=replicas, failures=len(res.failures),
    )
    col = {lv: k for k, lv in enumerate(levels)}
    for n in n_values:
        rn = reds[:, col[n]]
        d = rn - n
        d2 = reds[:, col[2 * n]] - 2 * n
        t_mean, t_var = limit_targets(variant, w, n)
        m, se = mean_se(d)
        report.add("mean_D", n, m, se, t_mean, None, _verdict(m, se, t_mean, mean_tol))
        cv, cv_se, _ = control_variate_mean(d, control_sums(variant, w, n, rn))
        report.add("mean_D_cv", n, cv, cv_se, t_mean, None, _verdict(cv, cv_se, t_mean, mean_tol))
        v, vse = var_se(d)
        report.add("var_D", n, v, vse, t_var, None, _verdict(v, vse, t_var, var_rtol * t_var))
        report.add("var_ratio", n, v / (2 * n), vse / (2 * n), t_var / (2 * n), None,
                   _verdict(v / (2 * n), vse / (2 * n), t_var / (2 * n), var_rtol * t_var / (2 * n)))
        vi, vise = var_se(d2 - d)
        refined = increment_variance_target(w, n, 2 * n)
        report.add("var_increment", n, vi, vise, 2.0 * n, refined,
                   _verdict(vi, vise, refined, var_rtol * refined))
    report.samples["reds"] = reds
    report.samples["levels"] = levels
    report.wall_clock = time.perf_counter() - t0
    return report


def _verdict(est: float, se: float, target: float, tol: float) -> str:
    if target is None or math.isnan(target):
        return "n/a"
    slack = max(tol, 3 * se) if not math.isnan(se) else tol
    return "pass" if abs(est - target) <= slack else "fail"
