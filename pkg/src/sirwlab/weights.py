"""Weight functions for self-interacting random walks.

A weight ``w`` maps a crossing count ``n >= 0`` to a positive real. The walk
at site ``x`` steps right with probability ``w(r) / (w(r) + w(l))`` where ``r``
and ``l`` count crossings of the bonds to the right and left of ``x``.

Four families are supported:

* ``constant``: ``w(n) = value``.
* ``pq``: ``w(0) = w0`` and ``w(n) = 1`` for ``n >= 1``.
* ``af`` (asymptotically free): ``1/w(n) = 1 + 2**p * B / n**p`` for ``n >= 1``
  past a finite override table, ``w(0) = 1`` unless overridden.
* ``polynomial``: ``w(n) = (n + 1) ** -alpha``.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from enum import Enum

import numpy as np


_MEMO_LOCK = threading.Lock()


class Kind(str, Enum):
    CONSTANT = "constant"
    PQ = "pq"
    AF = "af"
    POLYNOMIAL = "polynomial"


@dataclass(frozen=True)
class WeightFunction:
    """An immutable weight rule with a thread-safe memo table."""

    kind: Kind
    value: float = 1.0
    w0: float = 1.0
    p: float = 1.0
    B: float = 0.0
    kappa: float = 1.0
    alpha: float = 0.0
    overrides: tuple[tuple[int, float], ...] = ()
    _memo: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.kind is Kind.CONSTANT and not self.value > 0:
            raise ValueError("constant weight must be positive")
        if self.kind is Kind.PQ and not self.w0 > 0:
            raise ValueError("w0 must be positive")
        if self.kind is Kind.POLYNOMIAL and not self.alpha > 0:
            raise ValueError("alpha must be positive for polynomial weights")
        if self.kind is Kind.AF:
            if not 0.5 < self.p <= 1.0:
                raise ValueError("p must lie in (1/2, 1]")
            if not self.kappa > 0:
                raise ValueError("kappa must be positive")
            for n, v in self.overrides:
                if n < 0:
                    raise ValueError("override index must be nonnegative")
                if not v > 0:
                    raise ValueError("override values must be positive")
            first = self._first_free_index()
            if 1.0 + 2.0**self.p * self.B / first**self.p <= 0:
                raise ValueError("B too negative: weight would be nonpositive")
        self._memo["table"] = np.empty(0)

    # AF remainder bound: the closed form has no remainder past the overrides.
    @property
    def remainder_constant(self) -> float:
        return 0.0

    def _first_free_index(self) -> int:
        n = 1
        keys = {k for k, _ in self.overrides}
        while n in keys:
            n += 1
        return n

    def _eval_array(self, n: np.ndarray) -> np.ndarray:
        n = np.asarray(n, dtype=np.float64)
        if self.kind is Kind.CONSTANT:
            out = np.full(n.shape, self.value)
        elif self.kind is Kind.PQ:
            out = np.where(n == 0, self.w0, 1.0)
        elif self.kind is Kind.POLYNOMIAL:
            out = (n + 1.0) ** (-self.alpha)
        else:
            safe = np.maximum(n, 1.0)
            out = 1.0 / (1.0 + 2.0**self.p * self.B / safe**self.p)
            out = np.where(n == 0, 1.0, out)
            for k, v in self.overrides:
                out = np.where(n == k, v, out)
        return out

    def table(self, size: int) -> np.ndarray:
        """Return ``w(0), ..., w(size - 1)`` (a read-only view of the memo)."""
        current = self._memo["table"]
        if current.shape[0] < size:
            with _MEMO_LOCK:
                current = self._memo["table"]
                if current.shape[0] < size:
                    grown = max(size, 2 * current.shape[0], 1024)
                    current = self._eval_array(np.arange(grown))
                    current.setflags(write=False)
                    self._memo["table"] = current
        return current[:size]

    def __call__(self, n: int) -> float:
        if n < 0:
            raise ValueError("weights are defined for n >= 0")
        return float(self.table(n + 1)[n])

    def is_nonincreasing(self, horizon: int = 4096) -> bool:
        t = self.table(horizon)
        return bool(np.all(np.diff(t) <= 0))

    def is_nondecreasing(self, horizon: int = 4096) -> bool:
        t = self.table(horizon)
        return bool(np.all(np.diff(t) >= 0))

    @property
    def alpha_or_zero(self) -> float:
        """Polynomial exponent, or 0 for the asymptotically free families."""
        return self.alpha if self.kind is Kind.POLYNOMIAL else 0.0

    def describe(self) -> str:
        if self.kind is Kind.CONSTANT:
            return f"kind=constant,value={self.value:g}"
        if self.kind is Kind.PQ:
            return f"kind=pq,w0={self.w0:g}"
        if self.kind is Kind.POLYNOMIAL:
            return f"kind=polynomial,alpha={self.alpha:g}"
        text = f"kind=af,p={self.p:g},B={self.B:g},kappa={self.kappa:g}"
        if self.overrides:
            text += ",overrides=" + ";".join(f"{k}:{v:g}" for k, v in self.overrides)
        return text


def constant(value: float = 1.0) -> WeightFunction:
    return WeightFunction(Kind.CONSTANT, value=value)


def pq(w0: float) -> WeightFunction:
    return WeightFunction(Kind.PQ, w0=w0)


def polynomial(alpha: float) -> WeightFunction:
    return WeightFunction(Kind.POLYNOMIAL, alpha=alpha)


def asymptotically_free(
    p: float, B: float, kappa: float = 1.0, overrides: dict[int, float] | None = None
) -> WeightFunction:
    items = tuple(sorted((int(k), float(v)) for k, v in (overrides or {}).items()))
    return WeightFunction(Kind.AF, p=p, B=B, kappa=kappa, overrides=items)


_KEYS = {
    Kind.CONSTANT: {"value"},
    Kind.PQ: {"w0"},
    Kind.POLYNOMIAL: {"alpha"},
    Kind.AF: {"p", "B", "kappa", "overrides"},
}


def make_weight(descriptor: str) -> WeightFunction:
    """Parse a descriptor such as ``kind=polynomial,alpha=1.0``."""
    fields: dict[str, str] = {}
    for part in descriptor.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise ValueError(f"malformed weight field {part!r}")
        key, val = (s.strip() for s in part.split("=", 1))
        fields[key] = val
    try:
        kind = Kind(fields.pop("kind").lower())
    except KeyError:
        raise ValueError("weight descriptor needs kind=...") from None
    except ValueError:
        raise ValueError(f"unknown weight kind in {descriptor!r}") from None
    unknown = set(fields) - _KEYS[kind]
    if unknown:
        raise ValueError(f"unknown keys for {kind.value}: {sorted(unknown)}")
    try:
        if kind is Kind.CONSTANT:
            return constant(float(fields.get("value", 1.0)))
        if kind is Kind.PQ:
            return pq(float(fields["w0"]))
        if kind is Kind.POLYNOMIAL:
            return polynomial(float(fields["alpha"]))
        overrides = {}
        if fields.get("overrides"):
            for item in fields["overrides"].split(";"):
                k, v = item.split(":")
                overrides[int(k)] = float(v)
        return asymptotically_free(
            p=float(fields["p"]),
            B=float(fields["B"]),
            kappa=float(fields.get("kappa", 1.0)),
            overrides=overrides,
        )
    except KeyError as exc:
        raise ValueError(f"missing parameter {exc.args[0]} for {kind.value}") from None


def partial_sums(w: WeightFunction, n: int) -> tuple[float, float]:
    """Return ``(U1, V1)``: sums of ``1/w`` over the first ``n`` even and odd arguments."""
    if n < 1:
        raise ValueError("n must be at least 1")
    inv = 1.0 / w.table(2 * n)
    return float(math.fsum(inv[0::2])), float(math.fsum(inv[1::2]))


@dataclass(frozen=True)
class GammaEstimate:
    value: float | None
    horizon: int
    residual: float

    @property
    def converged(self) -> bool:
        return self.value is not None


def gamma_limit(w: WeightFunction, horizon: int = 1 << 20, tolerance: float = 1e-4) -> GammaEstimate:
    """Estimate ``lim (V1(n) - U1(n))`` at a finite horizon with a halving check."""
    if w.kind is Kind.POLYNOMIAL:
        raise ValueError("gamma is undefined for polynomial weights (V1 - U1 diverges)")
    if horizon < 2:
        raise ValueError("horizon must be at least 2")
    inv = 1.0 / w.table(2 * horizon)
    diff = np.cumsum(inv[1::2] - inv[0::2])
    value = float(diff[horizon - 1])
    residual = abs(value - float(diff[horizon // 2 - 1]))
    if residual > tolerance:
        return GammaEstimate(None, horizon, residual)
    return GammaEstimate(value, horizon, residual)


def jump_probability(w: WeightFunction, r: int, l: int) -> float:
    """Probability of a right step given bond crossing counts ``r`` (right) and ``l`` (left)."""
    if r < 0 or l < 0:
        raise ValueError("crossing counts must be nonnegative")
    wr, wl = w(r), w(l)
    return wr / (wr + wl)
