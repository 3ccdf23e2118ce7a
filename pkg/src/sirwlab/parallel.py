"""Deterministic replica fan-out with per-replica random streams.

Replica ``i`` always draws from ``stream(master_seed, i, tag)``, so results do
not depend on how replicas are split across workers.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

MAX_FAILURE_RATE = 0.05


class ReplicaFailure(RuntimeError):
    """A single replica could not finish (step budget, horizon, runaway urn)."""


class FailureRateExceeded(RuntimeError):
    def __init__(self, failures: int, replicas: int, sample: list[str],
                 limit: float = MAX_FAILURE_RATE):
        self.failures = failures
        self.replicas = replicas
        super().__init__(
            f"{failures} of {replicas} replicas failed (limit {limit:.0%}); "
            f"first errors: {sample[:3]}"
        )


def stream(master_seed: int, index: int, tag: int = 0) -> np.random.Generator:
    """Counter-based stream for replica ``index`` of experiment ``tag``."""
    seq = np.random.SeedSequence(int(master_seed), spawn_key=(int(tag), int(index)))
    return np.random.Generator(np.random.PCG64(seq))


@dataclass
class ReplicaResults:
    values: list[Any]
    failures: list[tuple[int, str]] = field(default_factory=list)

    @property
    def ok(self) -> list[Any]:
        return [v for v in self.values if v is not None]

    @property
    def failure_rate(self) -> float:
        return len(self.failures) / max(len(self.values), 1)


def _run_chunk(kernel, indices, master_seed, tag):
    out = []
    for i in indices:
        try:
            out.append((i, kernel(i, stream(master_seed, i, tag)), None))
        except ReplicaFailure as exc:
            out.append((i, None, str(exc)))
    return out


def spawn_replicas(
    kernel: Callable[[int, np.random.Generator], Any],
    replicas: int,
    master_seed: int,
    workers: int = 1,
    tag: int = 0,
    max_failure_rate: float = MAX_FAILURE_RATE,
) -> ReplicaResults:
    """Run ``kernel(i, rng)`` for ``i < replicas`` and collect results in index order.

    ``kernel`` must be picklable when ``workers > 1``.
    """
    if replicas < 1:
        raise ValueError("replicas must be at least 1")
    workers = max(1, min(int(workers), replicas))
    indices = list(range(replicas))
    if workers == 1:
        triples = _run_chunk(kernel, indices, master_seed, tag)
    else:
        chunks = [indices[k::workers] for k in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = pool.map(_run_chunk, [kernel] * workers, chunks,
                             [master_seed] * workers, [tag] * workers)
            triples = sorted((t for part in parts for t in part), key=lambda t: t[0])
    values = [v for _, v, _ in triples]
    failures = [(i, err) for i, _, err in triples if err is not None]
    result = ReplicaResults(values, failures)
    if result.failure_rate > max_failure_rate:
        raise FailureRateExceeded(len(failures), replicas, [e for _, e in failures], max_failure_rate)
    return result
