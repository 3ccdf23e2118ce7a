"""Reference diffusions: scaled squared Bessel processes, Brownian motion
perturbed at its extrema (BMPE), the discrete perturbed walk, and local-time
estimators built from occupation times.

``Z^(alpha, delta)`` solves ``dZ = delta/(2(2a+1)) dx + sqrt(2 Z/(2a+1)) dB``
and is absorbed at 0 when ``delta = 0``. ``W^(t+, t-)`` solves
``W = B + t+ sup W + t- inf W``; ``W_alpha`` is ``sqrt(2a+1) W^(1/2, 1/2)``.
The half local time at ``x`` is ``occupation([x, x+eps]) / (2 eps)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from numba import njit

from .parallel import ReplicaFailure


class StepTooCoarse(RuntimeError):
    """A single BMPE step moved both running extrema."""


# -- squared Bessel ----------------------------------------------------------

@dataclass(frozen=True)
class BesqParams:
    alpha: float
    delta: float
    start: float
    step: float = 1e-4
    horizon: float = 1.0

    def __post_init__(self) -> None:
        if not self.step > 0:
            raise ValueError("step must be positive")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.step > self.horizon / 100 * (1 + 1e-12):
            raise ValueError("step must be at most horizon/100")
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.start < 0:
            raise ValueError("start must be nonnegative")

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.step))

    @property
    def drift(self) -> float:
        return self.delta / (2 * (2 * self.alpha + 1))

    @property
    def diffusivity(self) -> float:
        return 2 / (2 * self.alpha + 1)


@dataclass(frozen=True)
class DiffusionPath:
    step: float
    values: np.ndarray
    absorbed_at: float | None = None
    running_min: np.ndarray | None = None
    running_max: np.ndarray | None = None
    driver: np.ndarray | None = None

    @property
    def grid(self) -> np.ndarray:
        return np.arange(self.values.shape[0]) * self.step

    @property
    def horizon(self) -> float:
        return (self.values.shape[0] - 1) * self.step


@njit(cache=True)
def _besq_fill(z0, drift, diff, h, absorbing, gen, out):
    """Full-truncation Euler into ``out``; returns the absorption index or -1."""
    sh = math.sqrt(h)
    z = z0
    out[0] = z
    n = out.shape[0]
    if absorbing and z <= 0.0:
        for k in range(1, n):
            out[k] = 0.0
        return 0
    for k in range(1, n):
        z = z + drift * h + math.sqrt(diff * max(z, 0.0)) * sh * gen.standard_normal()
        if z <= 0.0:
            z = 0.0
            if absorbing:
                for j in range(k, n):
                    out[j] = 0.0
                return k
        out[k] = z
    return -1


@njit(cache=True)
def _besq_integrals(z0, drift, diff, h, steps, absorbing, gen, out):
    """Trapezoid integral of one Euler path per entry of ``out``."""
    sh = math.sqrt(h)
    for r in range(out.shape[0]):
        z = z0
        acc = 0.5 * z
        for k in range(steps):
            if absorbing and z <= 0.0:
                break
            z = z + drift * h + math.sqrt(diff * max(z, 0.0)) * sh * gen.standard_normal()
            if z <= 0.0:
                z = 0.0
            acc += z if k < steps - 1 else 0.5 * z
        out[r] = acc * h


def sample_besq(params: BesqParams, rng: np.random.Generator) -> DiffusionPath:
    out = np.empty(params.steps + 1)
    k = _besq_fill(float(params.start), params.drift, params.diffusivity, params.step,
                   params.delta == 0, rng, out)
    return DiffusionPath(params.step, out, None if k < 0 else k * params.step)


def besq_integral_samples(params: BesqParams, replicas: int, rng: np.random.Generator) -> np.ndarray:
    """``replicas`` independent values of ``int_0^horizon Z``."""
    out = np.empty(replicas)
    _besq_integrals(float(params.start), params.drift, params.diffusivity, params.step,
                    params.steps, params.delta == 0, rng, out)
    return out


def besq_integral_moments(alpha: float, s: float, y: float) -> tuple[float, float]:
    """Mean and variance of ``int_0^y Z^(alpha, 0)`` started at ``s``."""
    if s < 0 or y < 0:
        raise ValueError("s and y must be nonnegative")
    return y * s, 2 * y**3 * s / (3 * (1 + 2 * alpha))


def besq_moments(alpha: float, delta: float, s: float, x: float) -> tuple[float, float]:
    """Mean and variance of ``Z^(alpha, delta)(x)`` from the moment equations (no absorption)."""
    k = 2 * alpha + 1
    return s + delta * x / (2 * k), 2 * s * x / k + delta * x * x / (2 * k * k)


# -- perturbed Brownian motion -----------------------------------------------

@dataclass(frozen=True)
class BmpeParams:
    theta_plus: float
    theta_minus: float
    alpha_scale: float = 0.0
    step: float = 1e-4
    horizon: float = 1.0

    def __post_init__(self) -> None:
        if not (self.theta_plus < 1 and self.theta_minus < 1):
            raise ValueError("theta_plus and theta_minus must be below 1")
        if self.alpha_scale < 0:
            raise ValueError("alpha_scale must be nonnegative")
        if not self.step > 0 or not self.horizon > 0:
            raise ValueError("step and horizon must be positive")
        if self.step > self.horizon / 100 * (1 + 1e-12):
            raise ValueError("step must be at most horizon/100")

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.step))

    @property
    def sigma(self) -> float:
        return math.sqrt(2 * self.alpha_scale + 1)


def walpha_params(alpha: float, step: float = 1e-4, horizon: float = 1.0) -> BmpeParams:
    """Parameters of ``W_alpha = sqrt(2a+1) W^(1/2, 1/2)``."""
    return BmpeParams(0.5, 0.5, alpha, step, horizon)


@njit(cache=True)
def _bmpe_fill(tp, tm, sigma, h, gen, w_out, s_out, i_out, b_out):
    """Explicit scheme; returns the first step index that moved both extrema, or -1."""
    sh = sigma * math.sqrt(h)
    w = 0.0
    s = 0.0
    lo = 0.0
    b = 0.0
    w_out[0] = 0.0
    s_out[0] = 0.0
    i_out[0] = 0.0
    b_out[0] = 0.0
    for k in range(1, w_out.shape[0]):
        db = sh * gen.standard_normal()
        cand = w + db
        b += db
        up = cand > s
        down = cand < lo
        if up and down:
            return k
        if up:
            s = s + (cand - s) / (1.0 - tp)
            w = s
        elif down:
            lo = lo + (cand - lo) / (1.0 - tm)
            w = lo
        else:
            w = cand
        w_out[k] = w
        s_out[k] = s
        i_out[k] = lo
        b_out[k] = b
    return -1


@njit(cache=True)
def _bmpe_marginals(tp, tm, sigma, h, idx, gen, out):
    """``out[r, j]`` = W at step ``idx[j]`` (ascending) for replica ``r``."""
    sh = sigma * math.sqrt(h)
    nt = idx.shape[0]
    for r in range(out.shape[0]):
        w = 0.0
        s = 0.0
        lo = 0.0
        j = 0
        while j < nt and idx[j] == 0:
            out[r, j] = 0.0
            j += 1
        k = 0
        while j < nt:
            cand = w + sh * gen.standard_normal()
            if cand > s:
                s = s + (cand - s) / (1.0 - tp)
                w = s
            elif cand < lo:
                lo = lo + (cand - lo) / (1.0 - tm)
                w = lo
            else:
                w = cand
            k += 1
            while j < nt and idx[j] == k:
                out[r, j] = w
                j += 1


def sample_bmpe(params: BmpeParams, rng: np.random.Generator) -> DiffusionPath:
    n = params.steps + 1
    w, s, lo, b = (np.empty(n) for _ in range(4))
    bad = _bmpe_fill(params.theta_plus, params.theta_minus, params.sigma, params.step, rng, w, s, lo, b)
    if bad >= 0:
        raise StepTooCoarse(f"step {bad} moved both extrema; reduce the step size")
    return DiffusionPath(params.step, w, None, lo, s, b)


def bmpe_marginals(params: BmpeParams, times, replicas: int, rng: np.random.Generator) -> np.ndarray:
    """Array ``(replicas, len(times))`` of ``W(t)`` on the Euler grid."""
    idx = np.round(np.asarray(times, dtype=np.float64) / params.step).astype(np.int64)
    if np.any(np.diff(idx) < 0) or np.any(idx < 0):
        raise ValueError("times must be ascending and nonnegative")
    out = np.empty((replicas, idx.shape[0]))
    _bmpe_marginals(params.theta_plus, params.theta_minus, params.sigma, params.step, idx, rng, out)
    return out


# -- discrete perturbed walk -------------------------------------------------

@dataclass(frozen=True)
class PqWalkPath:
    n: int
    positions: np.ndarray

    def scaled(self, t: float) -> float:
        return self.positions[int(math.floor(self.n * t))] / math.sqrt(self.n)


@njit(cache=True)
def _pq_fill(p, gen, out):
    x = 0
    s = 0
    lo = 0
    out[0] = 0
    for k in range(1, out.shape[0]):
        at_max = x == s
        at_min = x == lo
        if at_max and at_min:
            q = 0.5
        elif at_max:
            q = p
        elif at_min:
            q = 1.0 - p
        else:
            q = 0.5
        x += 1 if gen.random() < q else -1
        if x > s:
            s = x
        if x < lo:
            lo = x
        out[k] = x


@njit(cache=True)
def _pq_marginals(p, idx, gen, out):
    nt = idx.shape[0]
    for r in range(out.shape[0]):
        x = 0
        s = 0
        lo = 0
        j = 0
        k = 0
        while j < nt and idx[j] == 0:
            out[r, j] = 0
            j += 1
        while j < nt:
            if x == s and x == lo:
                q = 0.5
            elif x == s:
                q = p
            elif x == lo:
                q = 1.0 - p
            else:
                q = 0.5
            x += 1 if gen.random() < q else -1
            if x > s:
                s = x
            if x < lo:
                lo = x
            k += 1
            while j < nt and idx[j] == k:
                out[r, j] = x
                j += 1


def pq_right_probability(theta: float) -> float:
    """Probability of stepping outward at a running extremum."""
    if not theta < 1:
        raise ValueError("theta must be below 1")
    return 1.0 / (2.0 - theta)


def sample_pq_walk(theta: float, n: int, rng: np.random.Generator) -> PqWalkPath:
    """Walk that is symmetric in the bulk and steps outward with ``1/(2-theta)`` at its extrema.

    At time 0 the walk sits on both extrema and steps symmetrically.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    out = np.empty(n + 1, np.int64)
    _pq_fill(pq_right_probability(theta), rng, out)
    return PqWalkPath(n, out)


def pq_walk_marginals(theta: float, n: int, times, replicas: int, rng: np.random.Generator) -> np.ndarray:
    """Array ``(replicas, len(times))`` of ``X_{floor(nt)} / sqrt(n)``."""
    idx = np.floor(np.asarray(times, dtype=np.float64) * n).astype(np.int64)
    out = np.empty((replicas, idx.shape[0]), np.int64)
    _pq_marginals(pq_right_probability(theta), idx, rng, out)
    return out / math.sqrt(n)


# -- local times on a path ---------------------------------------------------

def _check_bandwidth(step: float, eps: float) -> None:
    if eps <= 0:
        raise ValueError("eps must be positive")
    if eps < 10 * math.sqrt(step):
        warnings.warn(f"bandwidth {eps} is below 10*sqrt(step) = {10 * math.sqrt(step):.4g}",
                      stacklevel=3)


def half_local_time(path: DiffusionPath, x: float, eps: float) -> float:
    """``occupation([x, x+eps]) / (2 eps)`` over the whole path (left-point rule)."""
    _check_bandwidth(path.step, eps)
    v = path.values[:-1]
    return float(np.count_nonzero((v >= x) & (v <= x + eps)) * path.step / (2 * eps))


def inverse_local_time(path: DiffusionPath, ell: float, eps: float) -> float | None:
    """First grid time at which the half local time at 0 strictly exceeds ``ell``.

    ``None`` when the path ends first.
    """
    if ell < 0:
        raise ValueError("ell must be nonnegative")
    _check_bandwidth(path.step, eps)
    v = path.values[:-1]
    clock = np.cumsum((v >= 0) & (v <= eps)) * (path.step / (2 * eps))
    hit = np.flatnonzero(clock > ell)
    if hit.size == 0:
        return None
    return float((hit[0] + 1) * path.step)


# -- windowed local-time sampler ---------------------------------------------

@njit(cache=True)
def _windowed_occupation(tp, tm, sigma, h, clock_w, level_a, level_b, hist_w, bin_w,
                         eta, max_steps, gen, hist):
    """Occupation histogram of ``[0, hist_w)`` between two clock levels.

    The clock is ``occupation([0, clock_w]) / (2 clock_w)``. Euler steps run
    while ``W`` lies in the active window widened by ``eta``; elsewhere time is
    not needed, so the path moves by exact jumps: symmetric exits from an
    interval free of extrema, and at a running maximum the drawdown law
    (the maximum grows by ``Exp(d) / (1 - theta)`` before a drop of ``d``).
    Returns 0 on success, 1 if the Euler step budget ran out, 2 if a step
    moved both extrema.
    """
    sh = sigma * math.sqrt(h)
    tick = h / (2.0 * clock_w)
    nb = hist.shape[0]
    w = 0.0
    s = 0.0
    lo = 0.0
    clock = 0.0
    phase = 0
    top = clock_w
    steps = 0
    while True:
        lo_edge = -eta
        hi_edge = top + eta
        if lo_edge <= w <= hi_edge:
            if steps >= max_steps:
                return 1
            steps += 1
            if 0.0 <= w <= clock_w:
                clock += tick
            if phase == 0:
                if clock > level_a:
                    phase = 1
                    top = max(clock_w, hist_w)
            if phase == 1:
                if 0.0 <= w < hist_w:
                    k = int(w / bin_w)
                    if k < nb:
                        hist[k] += h
                if clock > level_b:
                    return 0
            cand = w + sh * gen.standard_normal()
            up = cand > s
            down = cand < lo
            if up and down:
                return 2
            if up:
                s = s + (cand - s) / (1.0 - tp)
                w = s
            elif down:
                lo = lo + (cand - lo) / (1.0 - tm)
                w = lo
            else:
                w = cand
        elif w > hi_edge:
            if w >= s:
                d = w - hi_edge
                s = s + gen.exponential(d) / (1.0 - tp)
                w = s - d
                if w < hi_edge:
                    w = hi_edge
            else:
                d = min(w - hi_edge, s - w)
                if gen.random() < 0.5:
                    w = s if s - w <= d else w + d
                else:
                    w = hi_edge if w - hi_edge <= d else w - d
        else:
            if w <= lo:
                d = lo_edge - w
                lo = lo - gen.exponential(d) / (1.0 - tm)
                w = lo + d
                if w > lo_edge:
                    w = lo_edge
            else:
                d = min(lo_edge - w, w - lo)
                if gen.random() < 0.5:
                    w = lo if w - lo <= d else w - d
                else:
                    w = lo_edge if lo_edge - w <= d else w + d


@dataclass(frozen=True)
class LocalTimeWindow:
    """Settings for :func:`local_time_increments`."""

    clock_width: float = 0.05
    hist_width: float = 1.05
    bin_width: float = 0.01
    step: float = 1e-5
    max_steps: int = 10**8

    @property
    def eta(self) -> float:
        return 4.0 * math.sqrt(self.step)


def window_occupation(params: BmpeParams, level_a: float, level_b: float, window: LocalTimeWindow,
                      rng: np.random.Generator) -> np.ndarray:
    """Occupation time per bin of ``[0, hist_width)`` between the clock times of ``level_a`` and ``level_b``.

    The clock is the half local time at 0 with bandwidth ``window.clock_width``.
    """
    if not 0 <= level_a < level_b:
        raise ValueError("levels must satisfy 0 <= level_a < level_b")
    _check_bandwidth(window.step, window.clock_width)
    nb = int(round(window.hist_width / window.bin_width))
    hist = np.zeros(nb)
    status = _windowed_occupation(params.theta_plus, params.theta_minus, params.sigma, window.step,
                                  window.clock_width, level_a, level_b, nb * window.bin_width,
                                  window.bin_width, window.eta * params.sigma, window.max_steps,
                                  rng, hist)
    if status == 1:
        raise ReplicaFailure("Euler step budget exhausted before the upper clock level")
    if status == 2:
        raise StepTooCoarse("a step moved both extrema; reduce the step size")
    return hist


def local_time_increments(params: BmpeParams, level_a: float, level_b: float, xs, eps: float,
                          window: LocalTimeWindow, rng: np.random.Generator) -> np.ndarray:
    """``L_{T_b}(x) - L_{T_a}(x)`` at each ``x`` with bandwidth ``eps``.

    ``T_l`` is the first time the half local time at 0 (bandwidth
    ``window.clock_width``) exceeds ``l``.
    """
    xs = np.asarray(xs, dtype=np.float64)
    _check_bandwidth(window.step, eps)
    per = eps / window.bin_width
    if abs(per - round(per)) > 1e-9:
        raise ValueError("eps must be a multiple of the bin width")
    per = int(round(per))
    start = xs / window.bin_width
    if np.any(np.abs(start - np.round(start)) > 1e-9) or np.any(xs < 0):
        raise ValueError("grid points must be nonnegative multiples of the bin width")
    start = np.round(start).astype(np.int64)
    if np.any(start + per > int(round(window.hist_width / window.bin_width))):
        raise ValueError("hist_width must cover every window [x, x+eps]")
    hist = window_occupation(params, level_a, level_b, window, rng)
    csum = np.concatenate(([0.0], np.cumsum(hist)))
    return (csum[start + per] - csum[start]) / (2 * eps)
