"""Experiment reports, summary statistics and CSV output."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np

from . import __version__

REPORT_COLUMNS = ("statistic", "x_or_t", "estimate", "se", "target_a", "target_b", "verdict")


def mean_se(x: Sequence[float]) -> tuple[float, float]:
    """Sample mean and its standard error (nan when fewer than two samples)."""
    a = np.asarray(x, dtype=np.float64)
    if a.size == 0:
        return math.nan, math.nan
    if a.size == 1:
        return float(a[0]), math.nan
    return float(a.mean()), float(a.std(ddof=1) / math.sqrt(a.size))


def var_se(x: Sequence[float]) -> tuple[float, float]:
    """Unbiased sample variance and its large-sample standard error."""
    a = np.asarray(x, dtype=np.float64)
    n = a.size
    if n < 2:
        return math.nan, math.nan
    d = a - a.mean()
    s2 = float(d @ d / (n - 1))
    if n < 4:
        return s2, math.nan
    m4 = float(np.mean(d**4))
    return s2, math.sqrt(max(m4 - s2 * s2 * (n - 3) / (n - 1), 0.0) / n)


def control_variate_mean(y: Sequence[float], c: Sequence[float]) -> tuple[float, float, float]:
    """Mean of ``y`` adjusted by a zero-mean control ``c``.

    Returns ``(estimate, se, beta)`` with ``beta`` the least-squares coefficient.
    """
    y = np.asarray(y, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    cc = c - c.mean()
    denom = float(cc @ cc)
    beta = float(cc @ (y - y.mean()) / denom) if denom > 0 else 0.0
    adj = y - beta * c
    est, se = mean_se(adj)
    return est, se, beta


@dataclass
class Row:
    statistic: str
    x_or_t: Any
    estimate: float
    se: float | None = None
    target_a: float | None = None
    target_b: float | None = None
    verdict: str = "info"


@dataclass
class ExperimentReport:
    name: str
    config: dict[str, Any]
    rows: list[Row] = field(default_factory=list)
    replicas: int = 0
    failures: int = 0
    wall_clock: float = 0.0
    samples: dict[str, Any] = field(default_factory=dict, repr=False)

    def add(self, *args, **kwargs) -> Row:
        row = Row(*args, **kwargs)
        self.rows.append(row)
        return row

    def get(self, statistic: str, x_or_t: Any = None) -> Row:
        for row in self.rows:
            if row.statistic == statistic and (x_or_t is None or _same(row.x_or_t, x_or_t)):
                return row
        raise KeyError((statistic, x_or_t))

    def select(self, statistic: str) -> list[Row]:
        return [r for r in self.rows if r.statistic == statistic]

    @property
    def failed_verdicts(self) -> list[Row]:
        return [r for r in self.rows if r.verdict == "fail"]

    def to_csv(self, seed: int | None = None, columns: Iterable[str] = REPORT_COLUMNS,
               records: list[dict[str, Any]] | None = None) -> str:
        buf = io.StringIO()
        buf.write(f"# tool: sirwlab {__version__}\n")
        buf.write(f"# experiment: {self.name}\n")
        if seed is not None:
            buf.write(f"# seed: {seed}\n")
        for key in sorted(self.config):
            buf.write(f"# config: {key}={self.config[key]}\n")
        buf.write(f"# replicas: {self.replicas}\n")
        buf.write(f"# failures: {self.failures}\n")
        writer = csv.writer(buf, lineterminator="\n")
        columns = list(columns)
        writer.writerow(columns)
        if records is None:
            records = [r.__dict__ for r in self.rows]
        for rec in records:
            writer.writerow([fmt(rec.get(c)) for c in columns])
        return buf.getvalue()


def _same(a: Any, b: Any) -> bool:
    if isinstance(a, float) or isinstance(b, float):
        try:
            return math.isclose(float(a), float(b), rel_tol=1e-12, abs_tol=1e-12)
        except (TypeError, ValueError):
            return False
    return a == b


def fmt(value: Any) -> str:
    if value is None:
        return "n/a"
    if isinstance(value, (float, np.floating)):
        if math.isnan(value):
            return "n/a"
        return f"{float(value):.10g}"
    return str(value)
