"""Prior sweeps and paired log score comparisons between ensembles."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import DomainError
from .estimator import DEFAULT_MAX_ITERS, DEFAULT_TOL
from .season import SeasonData, SeasonRun, run_adaptive

DEFAULT_RESAMPLES = 10_000
_CHUNK = 256


@dataclass(frozen=True)
class SweepResult:
    rho_grid: tuple[float, ...]
    mean_logscore: tuple[float, ...]
    argmax_rho: float

    def rows(self):
        return list(zip(self.rho_grid, self.mean_logscore))


def _mean_score(args) -> float:
    season, rho, tol, max_iters = args
    return run_adaptive(season, rho, tol=tol, max_iters=max_iters, warm_start=True).mean_score()


def default_rho_grid() -> list[float]:
    return [k / 100 for k in range(101)]


def prior_sweep(season: SeasonData, rho_grid: Iterable[float] | None = None,
                tol: float = DEFAULT_TOL, max_iters: int = DEFAULT_MAX_ITERS,
                workers: int = 1) -> SweepResult:
    """Adaptive run per prior fraction, averaged over all final-truth scores.

    The argmax is the smallest rho attaining the best mean. With
    ``workers > 1`` the runs are spread over processes; the result does not
    depend on completion order.
    """
    grid = sorted(float(r) for r in (default_rho_grid() if rho_grid is None else rho_grid))
    if not grid:
        raise DomainError("rho grid is empty")
    jobs = [(season, rho, tol, max_iters) for rho in grid]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            means = list(pool.map(_mean_score, jobs))
    else:
        means = [_mean_score(j) for j in jobs]
    best = int(np.argmax(means))
    return SweepResult(tuple(grid), tuple(means), grid[best])


class PairedDifference(NamedTuple):
    season: str
    location: str
    target: int
    epiweek: int
    diff: float


Stratum = tuple[str, object]


@dataclass(frozen=True)
class PairedDifferenceSet:
    """Score of ensemble A minus score of ensemble B, one entry per key."""

    entries: tuple[PairedDifference, ...]

    def __post_init__(self):
        entries = tuple(sorted(self.entries))
        keys = [e[:4] for e in entries]
        if len(set(keys)) != len(keys):
            raise DomainError("paired difference keys must be unique")
        object.__setattr__(self, "entries", entries)

    def __len__(self):
        return len(self.entries)

    @property
    def diffs(self) -> np.ndarray:
        return np.array([e.diff for e in self.entries])

    def mean(self) -> float:
        return float(self.diffs.mean()) if self.entries else float("nan")

    def strata(self) -> list[Stratum]:
        out: list[Stratum] = [("all", None)]
        for dim in ("season", "location", "target"):
            out += [(dim, v) for v in sorted({getattr(e, dim) for e in self.entries})]
        return out

    def mask(self, stratum: Stratum) -> np.ndarray:
        dim, value = stratum
        if dim == "all":
            return np.ones(len(self.entries), dtype=bool)
        if dim not in ("season", "location", "target"):
            raise DomainError(f"unknown stratum dimension {dim!r}")
        return np.array([getattr(e, dim) == value for e in self.entries], dtype=bool)

    def stratum_means(self) -> dict[Stratum, float]:
        d = self.diffs
        return {s: float(d[self.mask(s)].mean()) for s in self.strata()}


def _as_runs(x) -> list[SeasonRun]:
    return [x] if isinstance(x, SeasonRun) else list(x)


def paired_differences(run_a, run_b) -> PairedDifferenceSet:
    """Pair the weekly scores of two runs (or lists of runs) on shared keys."""
    def keyed(runs):
        out = {}
        for run in _as_runs(runs):
            for (week, loc, target), score in run.weekly_scores.items():
                out[(run.season, loc, target, week)] = score
        return out

    a, b = keyed(run_a), keyed(run_b)
    if a.keys() != b.keys():
        only_a = sorted(a.keys() - b.keys())
        only_b = sorted(b.keys() - a.keys())
        raise DomainError(
            f"runs are scored on different keys; missing from B: {only_a[:10]}, "
            f"missing from A: {only_b[:10]}"
        )
    return PairedDifferenceSet(tuple(
        PairedDifference(*k, a[k] - b[k]) for k in a
    ))


def permutation_pvalue(diffs: PairedDifferenceSet, resamples: int = DEFAULT_RESAMPLES,
                       seed: int = 0,
                       strata: Sequence[Stratum] | None = None) -> dict[Stratum, float | None]:
    """Bootstrap p-value of each stratum's mean difference.

    Entries are resampled with replacement from the whole set. For each
    stratum the resampled means are centred on their own average to form a
    null distribution, and the p-value is the fraction of null draws at or
    above the observed stratum mean. Strata with no entries map to ``None``.
    Entries are held in key order, so the result does not depend on the
    order they were supplied in.
    """
    if resamples < 1:
        raise DomainError("resamples must be at least 1")
    strata = list(diffs.strata() if strata is None else strata)
    n = len(diffs)
    d = diffs.diffs
    masks = {s: diffs.mask(s) if n else np.zeros(0, bool) for s in strata}
    live = [s for s in strata if masks[s].any()]
    sums = {s: [] for s in live}
    counts = {s: [] for s in live}
    rng = np.random.default_rng(seed)
    done = 0
    while done < resamples and live:
        b = min(_CHUNK, resamples - done)
        idx = rng.integers(0, n, size=(b, n))
        vals = d[idx]
        for s in live:
            m = masks[s][idx]
            sums[s].append((vals * m).sum(axis=1))
            counts[s].append(m.sum(axis=1))
        done += b
    out: dict[Stratum, float | None] = {}
    for s in strata:
        if s not in sums:
            out[s] = None
            continue
        c = np.concatenate(counts[s])
        ok = c > 0
        means = np.concatenate(sums[s])[ok] / c[ok]
        if means.size == 0:
            out[s] = None
            continue
        observed = d[masks[s]].mean()
        null = means - means.mean()
        out[s] = float(np.mean(null >= observed))
    return out
