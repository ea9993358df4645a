"""Equal-weight, static and adaptive ensemble protocols over one season.

The adaptive protocol refits weights at every issue week from the truth
snapshot published that week, so revisions to past surveillance values
retroactively change past training columns. All protocols are scored
against the final snapshot.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from itertools import chain
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import weeks
from .errors import DomainError, IngestionError, RunError
from .estimator import DEFAULT_MAX_ITERS, DEFAULT_TOL, FitTrace, PriorSchedule, fit_em, fit_vi
from .forecast import (
    LOG_SCORE_FLOOR,
    BinGrid,
    BinnedForecast,
    ForecastMeta,
    LogScoreMatrix,
    ObsKey,
    WeightVector,
    bin_index_of,
    canonical_grid,
    truncated_log,
)

HORIZONS = (1, 2, 3, 4)
PROTOCOLS = ("equal", "static", "adaptive")


@dataclass(frozen=True)
class TruthSnapshot:
    """All surveillance values as published at ``issue_week``."""

    issue_week: int
    values: Mapping[tuple[str, int], float]

    def __post_init__(self):
        values = dict(self.values)
        object.__setattr__(self, "values", values)
        late = [k for k in values if k[1] > self.issue_week]
        if late:
            raise DomainError(
                f"snapshot {self.issue_week} holds values for later epiweeks: {late[:3]}"
            )


class TruthSnapshotStore:
    """Snapshots ordered by issue week."""

    def __init__(self, snapshots: Iterable[TruthSnapshot]):
        self._snaps = {s.issue_week: s for s in sorted(snapshots, key=lambda s: s.issue_week)}

    @property
    def issues(self) -> list[int]:
        return list(self._snaps)

    def __len__(self):
        return len(self._snaps)

    def __contains__(self, issue):
        return issue in self._snaps

    def __getitem__(self, issue: int) -> TruthSnapshot:
        return self._snaps[issue]

    def __iter__(self):
        return iter(self._snaps.values())

    @property
    def final(self) -> TruthSnapshot:
        if not self._snaps:
            raise RunError("truth store is empty")
        return self._snaps[self.issues[-1]]

    def truncated(self, last_issue: int) -> "TruthSnapshotStore":
        return TruthSnapshotStore(s for s in self if s.issue_week <= last_issue)

    def __eq__(self, other):
        if not isinstance(other, TruthSnapshotStore):
            return NotImplemented
        return self._snaps == other._snaps


@dataclass(frozen=True)
class _Group:
    location: str
    target: int
    issue: int
    target_week: int
    masses: np.ndarray  # M x bins, rows in model order


def _group_forecasts(forecasts: Mapping[ForecastMeta, BinnedForecast],
                     model_ids: Sequence[str], grid: BinGrid) -> list[_Group]:
    index = {m: i for i, m in enumerate(model_ids)}
    pending: dict[tuple[str, int, int], dict[str, BinnedForecast]] = {}
    for meta, fc in forecasts.items():
        if meta.model not in index:
            raise IngestionError(f"forecast references unknown model id {meta.model!r}")
        if meta.target not in HORIZONS:
            raise IngestionError(f"target {meta.target!r} is not a 1-4 week horizon")
        if fc.grid != grid:
            raise IngestionError(f"forecast {meta} is not on the expected bin grid")
        pending.setdefault((meta.location, meta.target, meta.issue), {})[meta.model] = fc
    groups = []
    for (loc, target, issue), by_model in sorted(pending.items(), key=lambda kv: (kv[0][2], kv[0][0], kv[0][1])):
        missing = [m for m in model_ids if m not in by_model]
        if missing:
            raise IngestionError(
                f"no forecast from {missing} for location {loc!r}, target {target}, issue {issue}"
            )
        masses = np.stack([by_model[m].mass for m in model_ids])
        masses.setflags(write=False)
        groups.append(_Group(loc, target, issue, weeks.target_epiweek(issue, target), masses))
    return groups


@dataclass(frozen=True)
class SeasonData:
    """Component forecasts and truth snapshots for one season."""

    forecasts: Mapping[ForecastMeta, BinnedForecast]
    truth: TruthSnapshotStore
    season: str = "season"
    model_ids: tuple[str, ...] | None = None
    grid: BinGrid = field(default_factory=canonical_grid)

    def __post_init__(self):
        if self.model_ids is None:
            ids = tuple(sorted({meta.model for meta in self.forecasts}))
        else:
            ids = tuple(self.model_ids)
        if not ids:
            raise DomainError("season has no component models")
        object.__setattr__(self, "model_ids", ids)

    @cached_property
    def groups(self) -> list[_Group]:
        return _group_forecasts(self.forecasts, self.model_ids, self.grid)

    @cached_property
    def groups_by_issue(self) -> dict[int, list[_Group]]:
        out: dict[int, list[_Group]] = {}
        for g in self.groups:
            out.setdefault(g.issue, []).append(g)
        return out

    @cached_property
    def issue_weeks(self) -> list[int]:
        return sorted(self.groups_by_issue)

    def truncated(self, last_issue: int) -> "SeasonData":
        """The season as it looked at ``last_issue``: later forecasts and snapshots dropped."""
        fcs = {k: v for k, v in self.forecasts.items() if k.issue <= last_issue}
        return SeasonData(fcs, self.truth.truncated(last_issue), self.season,
                          self.model_ids, self.grid)


@dataclass(frozen=True)
class SeasonRun:
    protocol: str
    season: str
    model_ids: tuple[str, ...]
    rho: float | None = None
    weekly_weights: dict[int, WeightVector] = field(default_factory=dict)
    weekly_scores: dict[tuple[int, str, int], float] = field(default_factory=dict)
    traces: dict[int, FitTrace] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise DomainError(f"unknown protocol {self.protocol!r}")
        object.__setattr__(self, "model_ids", tuple(self.model_ids))

    def mean_score(self) -> float:
        if not self.weekly_scores:
            return float("nan")
        return float(np.mean(list(self.weekly_scores.values())))


def _column(masses: np.ndarray, truth_bin: int) -> np.ndarray:
    p = masses[:, truth_bin]
    with np.errstate(divide="ignore"):
        return np.maximum(np.log(p), LOG_SCORE_FLOOR)


def build_score_matrix(season: SeasonData, snapshot: TruthSnapshot,
                       lag: int = weeks.REPORTING_DELAY) -> LogScoreMatrix:
    """Component log scores for every forecast whose target truth is available.

    A forecast is scorable when its target epiweek is at most
    ``snapshot.issue_week - lag`` and the snapshot holds a value for it.
    Columns are ordered by (issue week, location, horizon).
    """
    cutoff = weeks.shift(snapshot.issue_week, -lag)
    cols, keys = [], []
    for g in season.groups:
        te = g.target_week
        if te > cutoff:
            continue
        value = snapshot.values.get((g.location, te))
        if value is None:
            continue
        cols.append(_column(g.masses, bin_index_of(season.grid, value)))
        keys.append(ObsKey(season.season, g.location, g.target, g.issue))
    m = len(season.model_ids)
    values = np.column_stack(cols) if cols else np.zeros((m, 0))
    return LogScoreMatrix(values, season.model_ids, keys)


def final_score_matrix(season: SeasonData) -> LogScoreMatrix:
    """Score matrix against the season's final snapshot."""
    return build_score_matrix(season, season.truth.final)


def _score_week(season: SeasonData, issue: int, w: WeightVector,
                final: TruthSnapshot, out: dict) -> None:
    for g in season.groups_by_issue.get(issue, ()):
        value = final.values.get((g.location, g.target_week))
        if value is None:
            continue
        b = bin_index_of(season.grid, value)
        out[(issue, g.location, g.target)] = truncated_log(float(w.weights @ g.masses[:, b]))


def _fit(scores: LogScoreMatrix, rho: float, init, tol: float, max_iters: int) -> FitTrace:
    # rho = 0 means no prior at all: the weights are the maximum-likelihood ones.
    if rho == 0:
        return fit_em(scores, init=init, tol=tol, max_iters=max_iters)
    schedule = PriorSchedule(rho, scores.num_models)
    return fit_vi(scores, schedule, init=init, tol=tol, max_iters=max_iters)


def _snapshot_for(season: SeasonData, issue: int) -> TruthSnapshot:
    if issue in season.truth:
        return season.truth[issue]
    issues = season.truth.issues
    if not issues or issue < issues[0]:
        # Nothing had been published yet.
        return TruthSnapshot(issue, {})
    raise RunError(f"no truth snapshot for issue week {issue}")


def run_adaptive(season: SeasonData, rho: float, tol: float = DEFAULT_TOL,
                 max_iters: int = DEFAULT_MAX_ITERS, warm_start: bool = False) -> SeasonRun:
    """Refit weights every issue week on all within-season data seen so far.

    Weeks with no scorable observation use uniform weights. ``warm_start``
    seeds each fit with the previous week's weights, which only changes
    speed since the optimum does not depend on the starting point.
    """
    if not (0.0 <= rho <= 1.0):
        raise DomainError(f"rho must lie in [0, 1], got {rho!r}")
    issues = season.issue_weeks
    gaps = [t for t in issues if t not in season.truth
            and season.truth.issues and t > season.truth.issues[0]]
    if gaps:
        raise RunError(f"missing truth snapshots for issue weeks {gaps}")
    final = season.truth.final
    uniform = WeightVector.uniform(season.model_ids)
    run = SeasonRun("adaptive", season.season, season.model_ids, rho)
    prev = None
    for t in issues:
        scores = build_score_matrix(season, _snapshot_for(season, t))
        if scores.num_obs == 0:
            w = uniform
        else:
            init = prev if warm_start else None
            trace = _fit(scores, rho, init, tol, max_iters)
            run.traces[t] = trace
            w = trace.final_weights
        prev = w
        run.weekly_weights[t] = w
        _score_week(season, t, w, final, run.weekly_scores)
    return run


def fit_static_weights(past: Sequence[LogScoreMatrix], rho: float = 0.0,
                       tol: float = DEFAULT_TOL,
                       max_iters: int = DEFAULT_MAX_ITERS) -> FitTrace:
    """One fit on the concatenated columns of finalized past-season scores."""
    if not past:
        raise RunError("static ensemble needs at least one past season")
    ids = past[0].model_ids
    if any(p.model_ids != ids for p in past):
        raise RunError("past seasons disagree on the component models")
    values = np.hstack([p.values for p in past])
    if values.shape[1] == 0:
        raise RunError("past seasons contain no scored observations")
    keys = tuple(chain.from_iterable(p.obs_keys for p in past))
    scores = LogScoreMatrix(values, ids, keys if len(keys) == values.shape[1] else ())
    return _fit(scores, rho, None, tol, max_iters)


def run_static(past, season: SeasonData, rho: float = 0.0,
               tol: float = DEFAULT_TOL, max_iters: int = DEFAULT_MAX_ITERS) -> SeasonRun:
    """Weights trained once on past seasons and frozen for ``season``.

    ``past`` holds finalized score matrices, or ``SeasonData`` objects whose
    final snapshots are used to build them.
    """
    mats = [final_score_matrix(p) if isinstance(p, SeasonData) else p for p in past]
    if mats and mats[0].model_ids != season.model_ids:
        raise RunError("past seasons and target season use different component models")
    trace = fit_static_weights(mats, rho, tol, max_iters)
    w = trace.final_weights
    final = season.truth.final
    run = SeasonRun("static", season.season, season.model_ids, rho)
    for t in season.issue_weeks:
        run.weekly_weights[t] = w
        run.traces[t] = trace
        _score_week(season, t, w, final, run.weekly_scores)
    return run


def run_equal(season: SeasonData) -> SeasonRun:
    """Every component weighted 1/M every week."""
    w = WeightVector.uniform(season.model_ids)
    final = season.truth.final
    run = SeasonRun("equal", season.season, season.model_ids, None)
    for t in season.issue_weeks:
        run.weekly_weights[t] = w
        _score_week(season, t, w, final, run.weekly_scores)
    return run
