"""Self-interacting random walk on the integers with full local-time bookkeeping.

Counters live in dense arrays indexed by ``x + offset``:

* ``up[x]``: jumps ``x -> x+1`` (upcrossings of edge ``x``)
* ``down[x]``: jumps ``x -> x-1``
* ``visits[x]``: visits to ``x`` including time 0

At site ``x`` the right bond has been crossed ``up[x] + down[x+1]`` times and
the left bond ``up[x-1] + down[x]`` times.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from numba import njit

from .parallel import ReplicaFailure, spawn_replicas
from .report import ExperimentReport, mean_se
from .weights import WeightFunction, gamma_limit

STEP_BUDGET = 10**10
RANGE_GUARD = 10**7
SNAPSHOT_LEVELS = 48

OK, GROW_RANGE, GROW_WEIGHTS, BUDGET = 0, 1, 2, 3


class StepBudgetExceeded(RuntimeError):
    pass


@njit(cache=True)
def _advance(up, down, visits, drift, adrift, snaps, track, wt, x, off, gamma, imin, imax,
             nsteps, mode, site, count, gen, rec, pos, gam, start):
    """Run the walk; see ``WalkState._run`` for the stop modes and status codes."""
    L = up.shape[0]
    nw = wt.shape[0]
    done = 0
    while True:
        if mode == 1 and up[off] > count:
            return x, gamma, imin, imax, done, 0
        if mode == 2 and visits[site + off] >= count:
            return x, gamma, imin, imax, done, 0
        if done >= nsteps:
            return x, gamma, imin, imax, done, 0 if mode == 0 else 3
        i = x + off
        if i < 1 or i >= L - 1:
            return x, gamma, imin, imax, done, 1
        rc = up[i] + down[i + 1]
        lc = up[i - 1] + down[i]
        if rc >= nw or lc >= nw:
            return x, gamma, imin, imax, done, 2
        wr = wt[rc]
        wl = wt[lc]
        p = wr / (wr + wl)
        d = 2.0 * p - 1.0
        gamma += d
        if track:
            drift[i] += d
            adrift[i] += abs(d)
            m = visits[i]
            if m & (m - 1) == 0:
                k = 0
                while m > 1:
                    m >>= 1
                    k += 1
                if k < snaps.shape[1]:
                    snaps[i, k] = drift[i]
        if gen.random() < p:
            up[i] += 1
            x += 1
        else:
            down[i] += 1
            x -= 1
        visits[x + off] += 1
        if x < imin:
            imin = x
        if x > imax:
            imax = x
        done += 1
        if rec:
            pos[start + done] = x
            gam[start + done] = gamma


@dataclass(frozen=True)
class WalkSnapshot:
    """Immutable copy of the counters, indexed by site over ``[lo, hi]``."""

    position: int
    steps: int
    lo: int
    up: np.ndarray
    down: np.ndarray
    visits: np.ndarray
    running_min: int
    running_max: int
    gamma: float

    @property
    def hi(self) -> int:
        return self.lo + self.up.shape[0] - 1

    def _get(self, arr: np.ndarray, x) -> np.ndarray:
        x = np.asarray(x)
        idx = x - self.lo
        ok = (idx >= 0) & (idx < arr.shape[0])
        out = np.zeros(x.shape, dtype=arr.dtype)
        out[ok] = arr[idx[ok]]
        return out

    def E(self, x):
        return self._get(self.up, x)

    def D(self, x):
        return self._get(self.down, x)

    def L(self, x):
        return self._get(self.visits, x)


@dataclass(frozen=True)
class DecomposedTrajectory:
    """Positions ``X_k = M_k + Gamma_k`` and per-site drift accumulators."""

    positions: np.ndarray
    martingale: np.ndarray
    drift: np.ndarray
    sites: np.ndarray
    site_drift: np.ndarray
    site_abs_drift: np.ndarray
    site_snapshots: np.ndarray
    final: WalkSnapshot

    def delta(self, x: int) -> float:
        idx = x - int(self.sites[0])
        if 0 <= idx < self.sites.shape[0]:
            return float(self.site_drift[idx])
        return 0.0


class WalkState:
    """A single-owner walk with growable dense counters."""

    def __init__(self, w: WeightFunction, rng: np.random.Generator | int | None = None,
                 size: int = 256, track_drift: bool = True):
        self.weight = w
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self.track_drift = track_drift
        self.position = 0
        self.steps = 0
        self.running_min = 0
        self.running_max = 0
        self.gamma = 0.0
        self._alloc(size)
        self.visits[self.offset] = 1
        self._wt = np.ascontiguousarray(w.table(1024))

    def _alloc(self, size: int) -> None:
        self.offset = size // 2
        self.up = np.zeros(size, np.int64)
        self.down = np.zeros(size, np.int64)
        self.visits = np.zeros(size, np.int64)
        self.drift_acc = np.zeros(size if self.track_drift else 1)
        self.abs_drift_acc = np.zeros(size if self.track_drift else 1)
        self.snaps = np.full((size if self.track_drift else 1, SNAPSHOT_LEVELS), np.nan)

    def _grow(self) -> None:
        old = (self.up, self.down, self.visits, self.drift_acc, self.abs_drift_acc, self.snaps)
        old_off, old_size = self.offset, self.up.shape[0]
        new_size = 2 * old_size
        if new_size > 2 * RANGE_GUARD + 4:
            raise MemoryError(f"walk range exceeds |x| <= {RANGE_GUARD}")
        self._alloc(new_size)
        shift = self.offset - old_off
        for new, arr in zip((self.up, self.down, self.visits), old[:3]):
            new[shift:shift + old_size] = arr
        if self.track_drift:
            self.drift_acc[shift:shift + old_size] = old[3]
            self.abs_drift_acc[shift:shift + old_size] = old[4]
            self.snaps[shift:shift + old_size] = old[5]

    def _run(self, nsteps: int, mode: int = 0, site: int = 0, count: int = 0,
             pos: np.ndarray | None = None, gam: np.ndarray | None = None) -> int:
        """Advance up to ``nsteps``. Modes: 0 fixed steps, 1 until ``E(0) > count``,
        2 until ``L(site) >= count``. Returns steps taken; raises on budget exhaustion."""
        rec = pos is not None
        if not rec:
            pos = gam = np.empty(1)
        while mode == 2 and not 1 <= site + self.offset < self.up.shape[0] - 1:
            self._grow()
        taken = 0
        while True:
            out = _advance(self.up, self.down, self.visits, self.drift_acc, self.abs_drift_acc,
                           self.snaps, self.track_drift, self._wt, self.position, self.offset,
                           self.gamma, self.running_min, self.running_max, nsteps - taken, mode,
                           site, count, self.rng, rec, pos, gam, taken)
            self.position, self.gamma, self.running_min, self.running_max, done, status = out
            taken += done
            self.steps += done
            if status == OK:
                return taken
            if status == GROW_RANGE:
                self._grow()
            elif status == GROW_WEIGHTS:
                self._wt = np.ascontiguousarray(self.weight.table(2 * self._wt.shape[0]))
            else:
                raise StepBudgetExceeded(f"stopping rule not met within {nsteps} steps")

    # -- inspection ------------------------------------------------------------

    def E(self, x: int) -> int:
        i = x + self.offset
        return int(self.up[i]) if 0 <= i < self.up.shape[0] else 0

    def D(self, x: int) -> int:
        i = x + self.offset
        return int(self.down[i]) if 0 <= i < self.down.shape[0] else 0

    def L(self, x: int) -> int:
        i = x + self.offset
        return int(self.visits[i]) if 0 <= i < self.visits.shape[0] else 0

    def crossings(self) -> tuple[int, int]:
        """Undirected crossing counts ``(r, l)`` of the bonds right and left of the walker."""
        x = self.position
        return self.E(x) + self.D(x + 1), self.E(x - 1) + self.D(x)

    def p_right(self) -> float:
        r, l = self.crossings()
        wr, wl = self.weight(r), self.weight(l)
        return wr / (wr + wl)

    def snapshot(self) -> WalkSnapshot:
        lo_i = self.running_min - 1 + self.offset
        hi_i = self.running_max + 1 + self.offset
        sl = slice(lo_i, hi_i + 1)
        return WalkSnapshot(self.position, self.steps, self.running_min - 1,
                            self.up[sl].copy(), self.down[sl].copy(), self.visits[sl].copy(),
                            self.running_min, self.running_max, self.gamma)

    # -- moves -----------------------------------------------------------------

    def step(self) -> int:
        before = self.position
        self._run(1)
        return self.position - before

    def force(self, jump: int) -> None:
        """Apply a prescribed jump with full bookkeeping (for hand-traced checks)."""
        if jump not in (1, -1):
            raise ValueError("jump must be +1 or -1")
        if not 1 <= self.position + self.offset < self.up.shape[0] - 2:
            self._grow()
        i = self.position + self.offset
        d = 2.0 * self.p_right() - 1.0
        self.gamma += d
        if self.track_drift:
            self.drift_acc[i] += d
            self.abs_drift_acc[i] += abs(d)
        if jump == 1:
            self.up[i] += 1
        else:
            self.down[i] += 1
        self.position += jump
        self.visits[self.position + self.offset] += 1
        self.running_min = min(self.running_min, self.position)
        self.running_max = max(self.running_max, self.position)
        self.steps += 1

    def run_for_steps(self, n: int) -> DecomposedTrajectory:
        if n < 1:
            raise ValueError("n must be at least 1")
        pos = np.empty(n + 1, np.int64)
        gam = np.empty(n + 1)
        pos[0] = self.position
        gam[0] = self.gamma
        self._run(n, 0, pos=pos, gam=gam)
        lo, hi = self.running_min, self.running_max
        sl = slice(lo + self.offset, hi + 1 + self.offset)
        if self.track_drift:
            sd, sa, sn = self.drift_acc[sl].copy(), self.abs_drift_acc[sl].copy(), self.snaps[sl].copy()
        else:
            sd = sa = np.zeros(hi - lo + 1)
            sn = np.full((hi - lo + 1, SNAPSHOT_LEVELS), np.nan)
        return DecomposedTrajectory(pos, pos - gam, gam, np.arange(lo, hi + 1), sd, sa, sn,
                                    self.snapshot())

    def run_until_upcrossings(self, ell: int, budget: int = STEP_BUDGET) -> WalkSnapshot:
        """Advance to the first time ``E(0) > ell``; the walker has just jumped 0 -> 1."""
        if ell < 0:
            raise ValueError("ell must be nonnegative")
        self._run(budget, 1, count=ell)
        return self.snapshot()

    def run_until_visits(self, z: int, m: int, budget: int = STEP_BUDGET) -> WalkSnapshot:
        """Advance to the m-th visit to site ``z`` (time 0 counts as a visit to 0)."""
        if m < 1:
            raise ValueError("m must be at least 1")
        self._run(budget, 2, site=z, count=m)
        return self.snapshot()


def new_walk(w: WeightFunction, seed: np.random.Generator | int | None = None, **kwargs) -> WalkState:
    return WalkState(w, seed, **kwargs)


def identity_residuals(snap: WalkSnapshot) -> dict[str, float]:
    """Violations of the exact counter identities (all zero for a consistent state)."""
    xs = np.arange(snap.lo, snap.hi + 1)
    X = snap.position
    E, D, L = snap.E(xs), snap.D(xs), snap.L(xs)
    conservation = abs(int(E.sum() + D.sum()) - snap.steps)
    flow = E - snap.D(xs + 1) - ((0 <= xs) & (xs < X)).astype(int) + ((X <= xs) & (xs < 0)).astype(int)
    # visits before the current time: L(x, n-1) = L(x, n) - 1{x == X_n}
    prev = L - (xs == X).astype(int)
    local = prev - (snap.E(xs - 1) + E + ((X < xs) & (xs <= 0)).astype(int)
                    - ((0 < xs) & (xs <= X)).astype(int))
    bounds = int(not (snap.running_min <= X <= snap.running_max
                      and snap.running_min <= 0 <= snap.running_max))
    return {
        "conservation": float(conservation),
        "net_flow": float(np.abs(flow).max()),
        "local_time": float(np.abs(local).max()),
        "extrema": float(bounds),
    }


@njit(cache=True)
def _rare_sites(pos, M):
    lo = pos.min()
    hi = pos.max()
    cnt = np.zeros(hi - lo + 1, np.int64)
    x = pos[0]
    cnt[x - lo] = 1
    imin = x
    imax = x
    rare = 1 if 1 <= M else 0
    best = 0
    for k in range(1, pos.shape[0]):
        # state at time k-1: range [imin, imax], counts cnt; rare = #sites with count <= M
        if rare > best:
            best = rare
        x = pos[k]
        if x < imin:
            imin = x
            rare += 1
        elif x > imax:
            imax = x
            rare += 1
        c = cnt[x - lo]
        if c == M:
            rare -= 1
        cnt[x - lo] = c + 1
    return best


def rare_site_count(trajectory: DecomposedTrajectory | np.ndarray, M: int) -> int:
    """``sup_k`` of the number of sites in the range by time ``k-1`` visited at most ``M`` times."""
    pos = trajectory.positions if isinstance(trajectory, DecomposedTrajectory) else trajectory
    pos = np.ascontiguousarray(pos, dtype=np.int64)
    if pos.shape[0] < 2:
        raise ValueError("trajectory needs at least one step")
    return int(_rare_sites(pos, M))


# -- replica experiments ------------------------------------------------------

@dataclass(frozen=True)
class _DriftKernel:
    weight: WeightFunction
    steps: int
    sites: tuple[int, ...]

    def __call__(self, index: int, rng: np.random.Generator) -> np.ndarray:
        walk = WalkState(self.weight, rng, size=1024)
        walk._run(self.steps)
        return np.array([walk.drift_acc[x + walk.offset] if 0 <= x + walk.offset < walk.up.shape[0]
                         else 0.0 for x in self.sites])


def drift_experiment(w: WeightFunction, steps: int, replicas: int, seed: int,
                     sites=(-1, 1), workers: int = 1) -> ExperimentReport:
    """Mean accumulated drift at the given sites after ``steps`` steps, against ``sgn(x) * gamma``."""
    t0 = time.perf_counter()
    res = spawn_replicas(_DriftKernel(w, steps, tuple(sites)), replicas, seed, workers)
    vals = np.array(res.ok)
    g = gamma_limit(w).value
    report = ExperimentReport("drift", {"weight": w.describe(), "steps": steps},
                              replicas=replicas, failures=len(res.failures))
    for k, x in enumerate(sites):
        m, se = mean_se(vals[:, k])
        target = math.copysign(g, x) if g is not None else math.nan
        verdict = "pass" if abs(m - target) <= 4 * se else "fail"
        report.add("mean_delta", x, m, se, target, None, verdict)
    report.samples["delta"] = vals
    report.wall_clock = time.perf_counter() - t0
    return report


@dataclass(frozen=True)
class _PositionKernel:
    weight: WeightFunction
    times: tuple[int, ...]
    with_martingale: bool = False

    def __call__(self, index: int, rng: np.random.Generator) -> np.ndarray:
        walk = WalkState(self.weight, rng, size=1024, track_drift=False)
        out = []
        done = 0
        for t in self.times:
            walk._run(t - done)
            done = t
            out.append(walk.position if not self.with_martingale else walk.position - walk.gamma)
        return np.array(out, dtype=np.float64)


def positions_at(w: WeightFunction, times, replicas: int, seed: int, workers: int = 1,
                 tag: int = 0, martingale: bool = False) -> np.ndarray:
    """Array ``(replicas, len(times))`` of ``X_t`` (or ``M_t``) at increasing step counts."""
    times = tuple(int(t) for t in times)
    if list(times) != sorted(times):
        raise ValueError("times must be increasing")
    res = spawn_replicas(_PositionKernel(w, times, martingale), replicas, seed, workers, tag=tag)
    return np.array(res.ok)


@dataclass(frozen=True)
class _VisitKernel:
    weight: WeightFunction
    z: int
    m: int
    sites: tuple[int, ...]
    budget: int

    def __call__(self, index: int, rng: np.random.Generator) -> np.ndarray:
        walk = WalkState(self.weight, rng, size=512, track_drift=False)
        try:
            snap = walk.run_until_visits(self.z, self.m, self.budget)
        except StepBudgetExceeded as exc:
            raise ReplicaFailure(str(exc)) from exc
        return snap.E(np.array(self.sites))


def edge_profiles_at_visit(w: WeightFunction, z: int, m: int, sites, replicas: int, seed: int,
                           budget: int = 10**7, workers: int = 1):
    """``E(x)`` at ``tau_{z,m}`` for the given sites; failed replicas are dropped."""
    res = spawn_replicas(_VisitKernel(w, z, m, tuple(sites), budget), replicas, seed, workers)
    return np.array(res.ok), len(res.failures)
