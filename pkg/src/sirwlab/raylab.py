"""Experiment harness: local-time profiles, increment laws, the occupation
functional ``G`` and the moment gap between the walk and its BMPE candidate.

Walk-side profiles are sampled from the site urns. At the time ``T_l`` of
the ``(l+1)``-th jump ``0 -> 1`` the upcrossing counts satisfy

* ``E(0) = l + 1``;
* ``E(1)`` = reds before blue number ``l`` of the PLUS urn at 1;
* ``E(x+1)`` = reds before blue number ``E(x)`` of the PLUS urn at ``x+1``, ``x >= 1``;
* ``E(-1) = D(0)`` = blues before red number ``l+1`` of the ZERO urn at 0;

with independent urns at different sites, so one urn run per site yields the
profile at several levels ``l`` jointly. The direct walk backend is kept for
cross-checks.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import stats as sps

from .diffusion import (
    BmpeParams,
    DiffusionPath,
    LocalTimeWindow,
    bmpe_marginals,
    local_time_increments,
    walpha_params,
    window_occupation,
)
from .parallel import ReplicaFailure, spawn_replicas
from .report import ExperimentReport, mean_se, var_se
from .stats import ks_distance, ks_to_cdf
from .urn import RUNAWAY_CAP, RunawayError, Variant, blues_at_red_levels, rate_tables
from .walk import StepBudgetExceeded, WalkState, positions_at
from .weights import Kind, WeightFunction, constant, gamma_limit, polynomial

WALK_TARGET = 5.0 / 3.0


def bmpe_target(alpha: float) -> float:
    """Second moment of ``int_0^1 Z^(alpha, 0)`` started at 1."""
    return 1.0 + 2.0 / (3.0 * (2.0 * alpha + 1.0))


# -- urn-built profiles ------------------------------------------------------

@njit(cache=True)
def _plus_chain(b, r, out, gen):
    """Fill rows ``1..`` of ``out`` from row 0; returns False if a rate table ran out."""
    nb = b.shape[0]
    nr = r.shape[0]
    nl = out.shape[1]
    for x in range(1, out.shape[0]):
        j = 0
        while j < nl and out[x - 1, j] == 0:
            out[x, j] = 0
            j += 1
        B = 0
        R = 0
        while j < nl:
            if B >= nb or R >= nr:
                return False
            bb = b[B]
            rr = r[R]
            blue = gen.random() * (bb + rr) < bb
            B += blue
            R += 1 - blue
            while j < nl and B == out[x - 1, j]:
                out[x, j] = R
                j += 1
    return True


def plus_chain(w: WeightFunction, first, n_sites: int, rng: np.random.Generator) -> np.ndarray:
    """Array ``(n_sites+1, len(first))``: row 0 is ``first`` (ascending), row ``x`` the reds
    of an independent PLUS urn before blue number ``row[x-1]``."""
    first = np.ascontiguousarray(first, dtype=np.int64)
    if first.size and np.any(np.diff(first) < 0):
        raise ValueError("levels must be ascending")
    out = np.empty((n_sites + 1, first.shape[0]), np.int64)
    out[0] = first
    top = int(first[-1]) if first.size else 0
    size = int(2 * top + 32 * math.sqrt(top + 1) + 64)
    saved = rng.bit_generator.state
    while True:
        b, r = rate_tables(Variant.PLUS, w, size, size)
        if _plus_chain(b, r, out, rng):
            return out
        if size > RUNAWAY_CAP:
            raise RunawayError("urn count exceeded the runaway cap")
        rng.bit_generator.state = saved
        size *= 2


@dataclass(frozen=True)
class EdgeProfile:
    """Upcrossing counts at ``T_l`` for each ``l`` in ``levels``.

    ``E[x, j]`` is ``E(x)`` at ``T_{levels[j]}`` for ``x = 0..n_sites``;
    ``left[j]`` is ``E(-1)``.
    """

    levels: np.ndarray
    E: np.ndarray
    left: np.ndarray

    def occupation(self, d: int) -> np.ndarray:
        """Number of times ``i < T_l`` with ``0 <= X_i <= d``, per level."""
        # the jump to 1 at T_l itself lands inside the window only when d >= 1
        return 2 * self.E[:d].sum(axis=0) + self.left + self.E[d] - (1 if d >= 1 else 0)


def urn_profile(w: WeightFunction, levels, n_sites: int, rng: np.random.Generator,
                with_left: bool = True) -> EdgeProfile:
    levels = np.ascontiguousarray(levels, dtype=np.int64)
    if levels.size == 0 or levels[0] < 0 or np.any(np.diff(levels) < 0):
        raise ValueError("levels must be nonempty, nonnegative and ascending")
    left = (blues_at_red_levels(Variant.ZERO, w, levels + 1, rng) if with_left
            else np.zeros(levels.shape[0], np.int64))
    E = plus_chain(w, levels, n_sites, rng)
    E[0] = levels + 1
    return EdgeProfile(levels, E, left)


def walk_profile(w: WeightFunction, levels, n_sites: int, rng: np.random.Generator,
                 budget: int = 10**8) -> EdgeProfile:
    """Same quantities read off a directly simulated walk."""
    levels = np.asarray(levels, dtype=np.int64)
    walk = WalkState(w, rng, size=max(256, 4 * n_sites), track_drift=False)
    sites = np.arange(n_sites + 1)
    E = np.empty((n_sites + 1, levels.shape[0]), np.int64)
    left = np.empty(levels.shape[0], np.int64)
    for j, ell in enumerate(levels):
        snap = walk.run_until_upcrossings(int(ell), budget)
        E[:, j] = snap.E(sites)
        left[j] = snap.E(-1)
    return EdgeProfile(levels, E, left)


def _profile_backend(backend: str):
    if backend == "urn":
        return urn_profile
    if backend == "walk":
        return walk_profile
    raise ValueError(f"unknown backend {backend!r}")


def x_grid(points: int = 21) -> np.ndarray:
    if points < 2:
        raise ValueError("grid needs at least two points")
    return np.linspace(0.0, 1.0, points)


@dataclass(frozen=True)
class ProfileSample:
    N: int
    level: int
    xs: np.ndarray
    profile: np.ndarray
    replica: int = 0


def sample_profile(w: WeightFunction, M: float, N: int, rng: np.random.Generator,
                   grid: int = 21, backend: str = "urn", replica: int = 0) -> ProfileSample:
    """``E(floor(N x)) / N`` at ``T_{floor(N M)}`` on the x-grid."""
    xs = x_grid(grid)
    ell = int(math.floor(N * M))
    prof = _profile_backend(backend)(w, [ell], N, rng)
    idx = np.floor(N * xs + 1e-9).astype(np.int64)
    return ProfileSample(N, ell, xs, prof.E[idx, 0] / N, replica)


def _rel(est: float, target: float, rtol: float) -> str:
    if target == 0:
        return "pass" if abs(est) <= 1e-12 else "fail"
    return "pass" if abs(est - target) <= rtol * abs(target) else "fail"


@dataclass(frozen=True)
class _ProfileKernel:
    weight: WeightFunction
    M: float
    N: int
    grid: int
    backend: str

    def __call__(self, index: int, rng: np.random.Generator) -> np.ndarray:
        try:
            return sample_profile(self.weight, self.M, self.N, rng, self.grid, self.backend, index).profile
        except (StepBudgetExceeded, RunawayError) as exc:
            raise ReplicaFailure(str(exc)) from exc


def _check_N(N: int) -> None:
    if N < 1:
        raise ValueError("N must be positive")


def rk_profile(w: WeightFunction, M: float, N: int, replicas: int, seed: int, grid: int = 21,
               workers: int = 1, backend: str = "urn", mean_rtol: float = 0.05,
               var_rtol: float = 0.10) -> ExperimentReport:
    """Profile moments at ``T_{floor(NM)}`` against ``Z^(alpha, 1)`` started at ``M``."""
    _check_N(N)
    if not M > 0:
        raise ValueError("M must be positive")
    t0 = time.perf_counter()
    alpha = w.alpha_or_zero
    k = 2 * alpha + 1
    xs = x_grid(grid)
    res = spawn_replicas(_ProfileKernel(w, M, N, grid, backend), replicas, seed, workers)
    prof = np.array(res.ok)
    report = ExperimentReport("rk-profile", {"weight": w.describe(), "M": M, "N": N, "grid": grid,
                                             "backend": backend},
                              replicas=replicas, failures=len(res.failures))
    ell = int(math.floor(N * M))
    exact0 = bool(np.all(prof[:, 0] == (ell + 1) / N))
    report.add("profile_at_0", 0.0, float(prof[0, 0]), None, (ell + 1) / N, None,
               "pass" if exact0 else "fail")
    for j, x in enumerate(xs):
        m, se = mean_se(prof[:, j])
        v, sv = var_se(prof[:, j])
        tm = M + x / (2 * k)
        tv = 2 * M * x / k + x * x / (2 * k * k)
        report.add("mean", float(x), m, se, tm, None, _rel(m, tm, mean_rtol))
        # x = 0 is deterministic up to the 1/N offset, so only its spread is checked
        report.add("var", float(x), v, sv, tv, None, _rel(v, tv, var_rtol) if x > 0 else
                   ("pass" if v <= 1e-12 else "fail"))
    report.samples["profiles"] = prof
    report.samples["xs"] = xs
    report.wall_clock = time.perf_counter() - t0
    return report


# -- local-time increments ---------------------------------------------------

@dataclass(frozen=True)
class _IncrementKernel:
    weight: WeightFunction
    levels: tuple[int, int]
    N: int
    grid: int
    backend: str

    def __call__(self, index: int, rng: np.random.Generator) -> np.ndarray:
        try:
            prof = _profile_backend(self.backend)(self.weight, list(self.levels), self.N, rng)
        except (StepBudgetExceeded, RunawayError) as exc:
            raise ReplicaFailure(str(exc)) from exc
        idx = np.floor(self.N * x_grid(self.grid) + 1e-9).astype(np.int64)
        return (prof.E[idx, 1] - prof.E[idx, 0]) / self.N


def candidate_verdict(est: float, se: float, target_a: float, target_b: float,
                      names=("Z(0,0)", "Z(alpha,0)")) -> str:
    """A candidate wins if within 3 SE of its target and at least 5 SE from the rival's."""
    if math.isclose(target_a, target_b, rel_tol=1e-12, abs_tol=1e-15):
        return "indistinguishable"
    if not se > 0:
        return "inconclusive"
    za, zb = abs(est - target_a) / se, abs(est - target_b) / se
    if za <= 3 and zb >= 5:
        return names[0]
    if zb <= 3 and za >= 5:
        return names[1]
    return "inconclusive"


def increment_experiment(w: WeightFunction, M: float, c: float, N: int, replicas: int, seed: int,
                         grid: int = 21, workers: int = 1, backend: str = "urn") -> ExperimentReport:
    """``(E at T_{N(M+1-c)} - E at T_{N(M+c)}) / N`` on the x-grid against both candidate limits."""
    _check_N(N)
    if not 0 <= c < 0.5:
        raise ValueError("c must lie in [0, 1/2)")
    t0 = time.perf_counter()
    alpha = w.alpha_or_zero
    a, b = int(math.floor(N * (M + c))), int(math.floor(N * (M + 1 - c)))
    xs = x_grid(grid)
    res = spawn_replicas(_IncrementKernel(w, (a, b), N, grid, backend), replicas, seed, workers)
    z = np.array(res.ok)
    report = ExperimentReport("increment-test", {"weight": w.describe(), "M": M, "c": c, "N": N,
                                                 "grid": grid, "backend": backend},
                              replicas=replicas, failures=len(res.failures))
    base = (b - a) / N
    s = 1 - 2 * c
    for j, x in enumerate(xs):
        m, se = mean_se(z[:, j])
        tol = 3 * se if se == se else 0.0
        report.add("mean", float(x), m, se, base, s, "pass" if abs(m - base) <= max(tol, 1e-12) else "fail")
    for j, x in enumerate(xs):
        v, sv = var_se(z[:, j])
        report.add("var", float(x), v, sv, 2 * s * x, 2 * s * x / (2 * alpha + 1), "info")
    v, sv = var_se(z[:, -1])
    report.add("candidate", float(xs[-1]), v, sv, 2 * s * xs[-1], 2 * s * xs[-1] / (2 * alpha + 1),
               candidate_verdict(v, sv, 2 * s * xs[-1], 2 * s * xs[-1] / (2 * alpha + 1)))
    report.samples["increments"] = z
    report.samples["xs"] = xs
    report.wall_clock = time.perf_counter() - t0
    return report


@dataclass(frozen=True)
class _BmpeIncrementKernel:
    params: BmpeParams
    M: float
    xs: tuple[float, ...]
    eps: float
    window: LocalTimeWindow

    def __call__(self, index: int, rng: np.random.Generator) -> np.ndarray:
        return local_time_increments(self.params, self.M, self.M + 1, self.xs, self.eps, self.window, rng)


def bmpe_increment_experiment(alpha: float, M: float, replicas: int, seed: int, grid: int = 21,
                              eps: float = 0.05, step: float = 1e-5, workers: int = 1,
                              var_rtol: float = 0.15) -> ExperimentReport:
    """``L_{T_{M+1}}(x) - L_{T_M}(x)`` for ``W_alpha`` against mean 1 and variance ``2x/(2a+1)``."""
    if M < 0:
        raise ValueError("M must be nonnegative")
    t0 = time.perf_counter()
    xs = x_grid(grid)
    window = LocalTimeWindow(clock_width=eps, hist_width=1.0 + eps, bin_width=eps / 5, step=step)
    kernel = _BmpeIncrementKernel(walpha_params(alpha, step, 1.0), M, tuple(xs), eps, window)
    res = spawn_replicas(kernel, replicas, seed, workers, max_failure_rate=0.01)
    z = np.array(res.ok)
    report = ExperimentReport("bmpe-increment", {"alpha": alpha, "M": M, "eps": eps, "step": step,
                                                 "grid": grid},
                              replicas=replicas, failures=len(res.failures))
    for j, x in enumerate(xs):
        m, se = mean_se(z[:, j])
        report.add("mean", float(x), m, se, 1.0, None, "pass" if abs(m - 1) <= max(3 * se, 0.02) else "fail")
    for j, x in enumerate(xs):
        v, sv = var_se(z[:, j])
        tv = 2 * x / (2 * alpha + 1)
        report.add("var", float(x), v, sv, tv, None, _rel(v, tv, var_rtol) if x > 0 else "info")
    report.samples["increments"] = z
    report.samples["xs"] = xs
    report.wall_clock = time.perf_counter() - t0
    return report


# -- occupation functional ---------------------------------------------------

@dataclass(frozen=True)
class OccupationRecord:
    delta: float
    M: float
    T_deltaM: float | None
    T_deltaM1: float | None
    G: float
    capped: float
    failed: bool = False


def _check_delta(delta: float) -> None:
    if not 0 < delta <= 0.5:
        raise ValueError("delta must lie in (0, 1/2]")


def occupation_functional(path: DiffusionPath, delta: float, M: float, K: float) -> OccupationRecord:
    """``G = (1/2) occupation([0, 1))`` between the clock times of ``M`` and ``M+1``.

    The clock is ``occupation([0, delta)) / (2 delta)``; a walk enters as a
    :class:`DiffusionPath` of ``X_k / N`` with step ``1/N^2``. Windows are
    half-open so that lattice site ``x`` stands for the cell ``[x/N, (x+1)/N)``;
    closed windows would inflate the clock by one site, a relative bias of
    ``1/(delta N)``.
    """
    _check_delta(delta)
    if M < 0 or not K > 0:
        raise ValueError("need M >= 0 and K > 0")
    v = path.values[:-1]
    h = path.step
    clock = np.cumsum((v >= 0) & (v < delta)) * (h / (2 * delta))
    i1 = np.searchsorted(clock, M, side="right")
    i2 = np.searchsorted(clock, M + 1, side="right")
    if i2 >= clock.shape[0]:
        return OccupationRecord(delta, M, None if i1 >= clock.shape[0] else float((i1 + 1) * h),
                                None, math.nan, math.nan, True)
    inside = (v[i1:i2] >= 0) & (v[i1:i2] < 1)
    g = 0.5 * h * float(np.count_nonzero(inside))
    return OccupationRecord(delta, M, float((i1 + 1) * h), float((i2 + 1) * h), g, min(g * g, K))


@dataclass(frozen=True)
class WalkOccupation:
    """Walk-side functionals at ``n = N^2`` on the grid of times ``T_l``."""

    G: float
    G_count: float
    J: bool
    ell1: int
    ell2: int


def walk_occupation(w: WeightFunction, N: int, delta: float, M: float, c: float,
                    rng: np.random.Generator, margin: float = 6.0,
                    backend: str = "urn", budget: int = 10**8) -> WalkOccupation:
    """``G`` with the delta-clock read at the times ``T_l``, the count form
    between ``T_{N(M+c)}`` and ``T_{N(M+1-c)}``, and the sandwich event ``J``.

    The clock counts sites ``0 <= x < ceil(delta N)`` and ``G`` sites ``0 <= x < N``
    (half-open cells, see :func:`occupation_functional`); the count form keeps
    the closed range ``0 <= X_k <= N``.
    """
    _check_delta(delta)
    d = int(math.ceil(delta * N - 1e-9)) - 1
    if d < 0:
        raise ValueError("delta * N must be positive")
    lo = max(0, int(math.floor(N * (M - margin))))
    hi = int(math.ceil(N * (M + 1 + margin)))
    levels = np.arange(lo, hi + 1, dtype=np.int64)
    norm = 2.0 * N * N
    if backend == "urn":
        near = urn_profile(w, levels, d, rng)
    else:
        near = walk_profile(w, levels, N, rng, budget)
    # the window holds d+1 whole cells, which is delta*N only when delta*N is an integer
    clock = near.occupation(d) / (2 * (d + 1) * N)
    if clock[0] > M or clock[-1] <= M + 1:
        raise ReplicaFailure("clock levels fall outside the simulated range of T_l")
    j1 = int(np.argmax(clock > M))
    j2 = int(np.argmax(clock > M + 1))
    a, b = int(math.floor(N * (M + c))), int(math.floor(N * (M + 1 - c)))
    ja, jb = a - lo, b - lo
    if backend == "urn":
        picks = np.array(sorted({j1, j2, ja, jb}))
        far = plus_chain(w, near.E[d, picks] if d > 0 else levels[picks], N - d, rng)
        far[0] = near.E[d, picks]
        full = EdgeProfile(levels[picks], np.vstack([near.E[:d, picks], far]), near.left[picks])
        occ = dict(zip(picks.tolist(), full.occupation(N - 1)))
        occ_closed = dict(zip(picks.tolist(), full.occupation(N)))
    else:
        occ = dict(enumerate(near.occupation(N - 1)))
        occ_closed = dict(enumerate(near.occupation(N)))
    return WalkOccupation(G=(occ[j2] - occ[j1]) / norm,
                          G_count=(occ_closed[jb] - occ_closed[ja]) / norm,
                          J=bool(clock[ja] > M and clock[jb] <= M + 1),
                          ell1=int(levels[j1]), ell2=int(levels[j2]))


@dataclass(frozen=True)
class _WalkOccupationKernel:
    weight: WeightFunction
    N: int
    delta: float
    M: float
    c: float
    backend: str

    def __call__(self, index: int, rng: np.random.Generator) -> tuple[float, float, bool]:
        try:
            r = walk_occupation(self.weight, self.N, self.delta, self.M, self.c, rng, backend=self.backend)
        except (StepBudgetExceeded, RunawayError) as exc:
            raise ReplicaFailure(str(exc)) from exc
        return r.G, r.G_count, r.J


@dataclass(frozen=True)
class _BmpeOccupationKernel:
    params: BmpeParams
    M: float
    window: LocalTimeWindow

    def __call__(self, index: int, rng: np.random.Generator) -> float:
        hist = window_occupation(self.params, self.M, self.M + 1, self.window, rng)
        return 0.5 * float(hist.sum())


def bmpe_occupation(alpha: float, delta: float, M: float, replicas: int, seed: int,
                    step: float = 1e-5, workers: int = 1, tag: int = 1) -> np.ndarray:
    """``G`` samples for ``W_alpha`` with the delta-clock."""
    _check_delta(delta)
    window = LocalTimeWindow(clock_width=delta, hist_width=1.0, bin_width=0.01, step=step)
    kernel = _BmpeOccupationKernel(walpha_params(alpha, step, 1.0), M, window)
    return np.array(spawn_replicas(kernel, replicas, seed, workers, tag=tag, max_failure_rate=0.01).ok)


def _capped(g: np.ndarray, K: float) -> np.ndarray:
    return np.minimum(g * g, K)


def nonconvergence_test(alpha: float, N_values, delta: float, M: float, c: float, K: float,
                        replicas: int, seed: int, workers: int = 1, step: float = 1e-5,
                        bmpe_replicas: int | None = None, min_gap: float = 0.15,
                        backend: str = "urn") -> ExperimentReport:
    """Second moments of ``G^2 ^ K`` for the walk at ``n = N^2`` and for ``W_alpha``."""
    _check_delta(delta)
    if not 0 <= c < 0.5:
        raise ValueError("c must lie in [0, 1/2)")
    if alpha < 0 or not K > 0:
        raise ValueError("need alpha >= 0 and K > 0")
    t0 = time.perf_counter()
    w = polynomial(alpha) if alpha > 0 else constant(1.0)
    report = ExperimentReport("nonconv", {"alpha": alpha, "N": ",".join(map(str, N_values)), "delta": delta,
                                          "M": M, "c": c, "K": K, "step": step, "backend": backend},
                              replicas=replicas)
    g_b = bmpe_occupation(alpha, delta, M, bmpe_replicas or replicas, seed, step, workers)
    cb = _capped(g_b, K)
    mb, sb = mean_se(cb)
    tb = bmpe_target(alpha)
    report.add("bmpe_G2K", "W_alpha", mb, sb, tb, None, "info")
    report.add("bmpe_capped_fraction", "W_alpha", float(np.mean(g_b * g_b > K)), None, None, None, "info")
    report.samples["bmpe_G"] = g_b
    for i, N in enumerate(N_values):
        _check_N(N)
        res = spawn_replicas(_WalkOccupationKernel(w, int(N), delta, M, c, backend), replicas, seed,
                             workers, tag=2 + i)
        report.failures += len(res.failures)
        arr = np.array(res.ok, dtype=np.float64)
        g, gc, jn = arr[:, 0], arr[:, 1], arr[:, 2] > 0.5
        cw, ccount = _capped(g, K), _capped(gc, K)
        mw, sw = mean_se(cw)
        mc, sc = mean_se(ccount)
        s = 1 - 2 * c
        report.add("walk_G2K", N, mw, sw, WALK_TARGET, tb, "info")
        report.add("walk_count_G2K", N, mc, sc, s * s + 2 * s / 3, WALK_TARGET, "info")
        report.add("walk_capped_fraction", N, float(np.mean(g * g > K)), None, None, None, "info")
        gap = mw - mb
        gse = math.hypot(sw, sb)
        lo, hi = gap - 1.96 * gse, gap + 1.96 * gse
        gap_ok = gap >= min_gap and (lo > 0 or hi < 0)
        report.add("gap", N, gap, gse, WALK_TARGET - tb, min_gap, "pass" if gap_ok else "fail")
        report.add("gap_ci_low", N, lo, None, None, None, "info")
        report.add("gap_ci_high", N, hi, None, None, None, "info")
        freq = float(np.mean(jn))
        if freq < 0.9:
            warnings.warn(f"J_n frequency {freq:.3f} is below 0.9 at N={N}", stacklevel=2)
        report.add("J_frequency", N, freq, math.sqrt(freq * (1 - freq) / len(jn)), 0.9, None,
                   "pass" if freq >= 0.9 else "warn")
        report.samples[f"walk_G_{N}"] = g
        report.samples[f"walk_G_count_{N}"] = gc
        report.samples[f"walk_J_{N}"] = jn
    report.wall_clock = time.perf_counter() - t0
    return report


# -- functional limit in the asymptotically free regime ----------------------

def afc_limit_test(w: WeightFunction, n: int, t_grid, replicas: int, seed: int, workers: int = 1,
                   step: float = 1e-4, threshold: float | None = None,
                   null_check: bool = False) -> ExperimentReport:
    """KS distance between ``X_{floor(nt)}/sqrt(n)`` and ``W^(g, g)(t)`` at each ``t``.

    With ``g = 0`` the reference is the exact normal law.
    """
    if w.kind is Kind.POLYNOMIAL:
        raise ValueError("polynomial weights have no finite gamma")
    t0 = time.perf_counter()
    est = gamma_limit(w)
    if not est.converged:
        raise ValueError("gamma_limit did not converge for this weight")
    gamma = est.value
    if not gamma < 1:
        raise ValueError("gamma must be below 1")
    ts = np.asarray(t_grid, dtype=np.float64)
    if threshold is None:
        threshold = 0.02 if abs(gamma) < 1e-9 else 0.03
    steps = [int(math.floor(n * t)) for t in ts]
    walk = positions_at(w, steps, replicas, seed, workers, tag=0) / math.sqrt(n)
    report = ExperimentReport("afc-test", {"weight": w.describe(), "n": n, "gamma": round(gamma, 10),
                                           "t": ",".join(f"{t:g}" for t in ts), "step": step},
                              replicas=replicas)
    worst = 0.0
    if abs(gamma) < 1e-9:
        for j, t in enumerate(ts):
            ks = ks_to_cdf(walk[:, j], sps.norm(0.0, math.sqrt(t)).cdf)
            worst = max(worst, ks)
            report.add("ks", float(t), ks, None, threshold, None, "pass" if ks <= threshold else "fail")
    else:
        ref_rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(7,)))
        ref = bmpe_marginals(BmpeParams(gamma, gamma, 0.0, step, max(float(ts.max()), 100 * step)),
                             ts, replicas, ref_rng)
        for j, t in enumerate(ts):
            ks = ks_distance(walk[:, j], ref[:, j])
            worst = max(worst, ks)
            report.add("ks", float(t), ks, None, threshold, None, "pass" if ks <= threshold else "fail")
        report.samples["reference"] = ref
    report.add("max_ks", "all", worst, None, threshold, None, "pass" if worst <= threshold else "fail")
    if null_check:
        other = positions_at(w, steps, replicas, seed, workers, tag=1) / math.sqrt(n)
        ks = ks_distance(walk[:, -1], other[:, -1])
        report.add("null_ks", float(ts[-1]), ks, None, threshold, None, "pass" if ks <= threshold else "fail")
    report.samples["walk"] = walk
    report.wall_clock = time.perf_counter() - t0
    return report
