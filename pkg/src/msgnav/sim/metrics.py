"""Success rate and success weighted by path length."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence


@dataclass(frozen=True)
class EpisodeOutcome:
    success: bool
    shortest_path: float
    agent_path: float


def spl_term(o: EpisodeOutcome) -> float:
    if not o.success:
        return 0.0
    if o.shortest_path < 0 or o.agent_path < 0:
        raise ValueError("path lengths must be non-negative")
    denom = max(o.shortest_path, o.agent_path)
    return 1.0 if denom == 0 else o.shortest_path / denom


def compute_metrics(outcomes: Sequence[EpisodeOutcome]) -> tuple[float, float]:
    """(SR, SPL) over a non-empty list of outcomes."""
    outcomes = list(outcomes)
    if not outcomes:
        raise ValueError("no episodes to score")
    n = len(outcomes)
    sr = sum(1 for o in outcomes if o.success) / n
    spl = sum(spl_term(o) for o in outcomes) / n
    return sr, spl


def outcomes_at(results: Iterable, d: float) -> list[EpisodeOutcome]:
    """Re-score episode results at success distance ``d`` (shortest path to the d-region)."""
    key = f"{d:g}"
    out = []
    for r in results:
        if key not in r.shortest_by_d:
            raise KeyError(f"results were not evaluated at d={d:g}")
        out.append(EpisodeOutcome(r.success_at(d), r.shortest_by_d[key], r.agent_path))
    return out


def success_at(results: Iterable, d: float) -> tuple[float, float]:
    return compute_metrics(outcomes_at(results, d))
