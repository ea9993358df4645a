"""Builders for small hand-made seasons."""

import numpy as np

from stackcast import weeks
from stackcast.forecast import BinnedForecast, ForecastMeta, canonical_grid
from stackcast.season import SeasonData, TruthSnapshot, TruthSnapshotStore

GRID = canonical_grid()


def peaked(j, p=0.6):
    """Mass ``p`` on bin ``j``, the rest spread over the other bins."""
    m = np.full(GRID.count, (1 - p) / (GRID.count - 1))
    m[j] = p
    return m


def value_in(j):
    return round(GRID.edges[j] + 0.05, 2)


def season_from(forecasts, snapshots, season="s", model_ids=None):
    """``forecasts``: {(model, loc, target, issue): mass}; ``snapshots``: {issue: {(loc, week): wili}}."""
    fcs = {}
    for (model, loc, target, issue), mass in forecasts.items():
        meta = ForecastMeta(model, loc, target, issue)
        fcs[meta] = BinnedForecast(GRID, np.asarray(mass, float) / np.sum(mass), meta)
    store = TruthSnapshotStore(TruthSnapshot(i, v) for i, v in snapshots.items())
    return SeasonData(fcs, store, season, model_ids)


def weekly_season(masses_by_model, truth_bins, start=201740, loc="nat", horizons=(1,),
                  cumulative=True):
    """One forecast per model, issue week and horizon; revision-free truth.

    ``masses_by_model[m][k]`` is model m's mass for the k-th target week and
    ``truth_bins[k]`` the bin truth lands in.
    """
    n = len(truth_bins)
    targets = [weeks.shift(start, k) for k in range(n)]
    fcs = {}
    for model, rows in masses_by_model.items():
        for k, e in enumerate(targets):
            for h in horizons:
                issue = weeks.shift(e, 2 - h)
                fcs[(model, loc, h, issue)] = rows[k]
    snaps = {}
    last = weeks.shift(targets[-1], 2)
    current = {}
    for i in range(weeks.weeks_between(weeks.shift(start, 2), last) + 1):
        issue = weeks.shift(start, 2 + i)
        e = weeks.shift(issue, -2)
        if e in targets:
            current[(loc, e)] = value_in(truth_bins[targets.index(e)])
        snaps[issue] = dict(current) if cumulative else {(loc, e): current[(loc, e)]}
    return season_from(fcs, snaps, model_ids=tuple(masses_by_model))
