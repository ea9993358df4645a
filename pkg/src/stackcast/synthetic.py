"""Seasons drawn from the mixture model, with revision-prone truth streams.

Each target week's truth is generated by picking a component with
probability ``true_pi`` and drawing a bin from that component's forecast.
Provisional truth values are the final bin shifted by bounded random
revisions that shrink linearly to zero over ``RevisionModel.lag`` weeks.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import weeks
from .data_io import (
    ForecastRecord,
    TruthRecord,
    forecasts_from_records,
    snapshots_from_records,
    write_forecasts,
    write_truth,
)
from .errors import DomainError, UnsupportedError
from .estimator import log_likelihood
from .forecast import LogScoreMatrix, WeightVector, canonical_grid
from .season import HORIZONS, SeasonData


@dataclass(frozen=True)
class RevisionModel:
    """Revision noise: up to ``scale`` bins at first report, zero after ``lag`` weeks."""

    scale: int = 0
    lag: int = 0

    def amplitude(self, age: int) -> int:
        if self.lag <= 0 or age >= self.lag:
            return 0
        return int(np.floor(self.scale * (1.0 - age / self.lag)))


@dataclass(frozen=True)
class SyntheticScenario:
    """Inputs to ``generate``.

    ``templates`` has shape (M, bins), shared by all weeks, or
    (M, weeks, bins) with one row per target week.
    """

    true_pi: tuple[float, ...]
    templates: np.ndarray
    weeks: int
    revision: RevisionModel = RevisionModel()
    seed: int = 0
    locations: tuple[str, ...] = ("nat",)
    horizons: tuple[int, ...] = HORIZONS
    start_epiweek: int = 201740
    model_ids: tuple[str, ...] | None = None
    season: str = "synthetic"

    def __post_init__(self):
        WeightVector(np.asarray(self.true_pi, float))
        if self.weeks < 1:
            raise DomainError("weeks must be at least 1")
        t = np.asarray(self.templates, float)
        m = len(self.true_pi)
        if t.ndim == 2:
            t = np.broadcast_to(t[:, None, :], (t.shape[0], self.weeks, t.shape[1]))
        if t.ndim != 3 or t.shape[0] != m or t.shape[1] != self.weeks:
            raise DomainError("templates must be (M, bins) or (M, weeks, bins)")
        if t.shape[2] != canonical_grid().count:
            raise DomainError("templates must cover the canonical grid")
        t = t / t.sum(axis=2, keepdims=True)
        object.__setattr__(self, "templates", t)
        ids = self.model_ids or tuple(f"model{k + 1}" for k in range(m))
        if len(ids) != m:
            raise DomainError("one model id per component needed")
        object.__setattr__(self, "model_ids", tuple(ids))
        if any(h not in HORIZONS for h in self.horizons):
            raise DomainError("horizons must be drawn from 1-4")


@dataclass(frozen=True)
class SyntheticSeason:
    scenario: SyntheticScenario
    forecast_records: list[ForecastRecord]
    truth_records: list[TruthRecord]
    draws: dict[tuple[str, int], int] = field(repr=False)
    final_bins: dict[tuple[str, int], int] = field(repr=False)

    @property
    def true_pi(self) -> WeightVector:
        return WeightVector(np.asarray(self.scenario.true_pi, float), self.scenario.model_ids)

    def season_data(self) -> SeasonData:
        return SeasonData(
            forecasts_from_records(self.forecast_records),
            snapshots_from_records(self.truth_records),
            self.scenario.season,
            self.scenario.model_ids,
        )

    def write(self, out_dir) -> dict[str, str]:
        """Write forecasts, truth and true weights as CSV files in ``out_dir``."""
        from pathlib import Path

        from .data_io import save_weights

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "forecasts": out / "forecasts.csv",
            "truth": out / "truth.csv",
            "true_pi": out / "true_pi.csv",
        }
        write_forecasts(paths["forecasts"], self.forecast_records)
        write_truth(paths["truth"], self.truth_records)
        save_weights(paths["true_pi"], self.true_pi)
        return {k: str(v) for k, v in paths.items()}


def _truth_value(j: int) -> float:
    # Centre of a narrow bin; 13.05 for the wide top bin.
    return round(canonical_grid().edges[j] + 0.05, 2)


def generate(scenario: SyntheticScenario) -> SyntheticSeason:
    """Draw one season. Identical scenarios (including seed) give identical output."""
    rng = np.random.default_rng(scenario.seed)
    grid = canonical_grid()
    nbins = grid.count
    pi = np.asarray(scenario.true_pi, float)
    target_weeks = [weeks.shift(scenario.start_epiweek, k) for k in range(scenario.weeks)]
    week_index = {e: k for k, e in enumerate(target_weeks)}

    draws, final_bins = {}, {}
    for loc in scenario.locations:
        for k, e in enumerate(target_weeks):
            z = int(rng.choice(len(pi), p=pi))
            b = int(rng.choice(nbins, p=scenario.templates[z, k]))
            draws[(loc, e)] = z
            final_bins[(loc, e)] = b

    # A value first appears at issue e + 2 and is re-published until final.
    lag = max(scenario.revision.lag, 0)
    last_issue = weeks.shift(target_weeks[-1], weeks.REPORTING_DELAY + lag)
    first_issue = weeks.shift(target_weeks[0], weeks.REPORTING_DELAY)
    n_issues = weeks.weeks_between(first_issue, last_issue) + 1
    truth = []
    for n in range(n_issues):
        issue = weeks.shift(first_issue, n)
        for loc in scenario.locations:
            for age in range(lag + 1):
                e = weeks.shift(issue, -weeks.REPORTING_DELAY - age)
                if e not in week_index:
                    continue
                amp = scenario.revision.amplitude(age)
                offset = int(rng.integers(-amp, amp + 1)) if amp else 0
                b = min(max(final_bins[(loc, e)] + offset, 0), nbins - 1)
                truth.append(TruthRecord(issue, e, loc, _truth_value(b)))

    records = []
    edges = grid.edges
    first_fc = weeks.shift(target_weeks[0], 1)
    for n in range(scenario.weeks):
        issue = weeks.shift(first_fc, n)
        for loc in scenario.locations:
            for h in scenario.horizons:
                e = weeks.target_epiweek(issue, h)
                if e not in week_index:
                    continue
                for mid, mass in zip(scenario.model_ids, scenario.templates[:, week_index[e]]):
                    for j in np.flatnonzero(mass).tolist():
                        records.append(ForecastRecord(mid, loc, h, issue, edges[j], edges[j + 1], float(mass[j])))
    return SyntheticSeason(scenario, records, truth, draws, final_bins)


def separated_templates(m: int, width: int = 10, gap: int = 5, floor: float = 0.0) -> np.ndarray:
    """Components with mass spread evenly over disjoint bin ranges.

    ``floor`` spreads that much total probability uniformly over all bins.
    """
    nbins = canonical_grid().count
    if m * (width + gap) > nbins:
        raise DomainError("too many components for disjoint ranges on the grid")
    out = np.zeros((m, nbins))
    for k in range(m):
        start = k * (width + gap)
        out[k, start:start + width] = 1.0 / width
    if floor:
        out = (1 - floor) * out + floor / nbins
    return out


def _lattice(m: int, n: int) -> np.ndarray:
    if m == 1:
        return np.array([[n]])
    if m == 2:
        return np.array([[i, n - i] for i in range(n + 1)])
    return np.array([[i, j, n - i - j] for i, j in itertools.product(range(n + 1), repeat=2) if i + j <= n])


def grid_mle_oracle(scores, step: float = 0.01) -> WeightVector:
    """Brute-force maximizer of the mixture log-likelihood on a simplex lattice.

    Evaluates every weight vector with coordinates in multiples of ``step``
    (M at most 3) and returns the best; ties go to the lexicographically
    smallest vector.
    """
    s = scores.values if isinstance(scores, LogScoreMatrix) else np.asarray(scores, float)
    m = s.shape[0]
    if m > 3:
        raise UnsupportedError("grid oracle supports at most 3 components")
    n = int(round(1.0 / step))
    if n < 1 or abs(n * step - 1.0) > 1e-9:
        raise DomainError("step must divide 1")
    counts = _lattice(m, n)
    pts = counts / n
    ll = np.log(pts @ np.exp(s)).sum(axis=1)
    best = ll.max()
    tie = np.flatnonzero(ll >= best - 1e-12 * max(1.0, abs(best)))
    w = pts[tie[0]]
    ids = scores.model_ids if isinstance(scores, LogScoreMatrix) else None
    return WeightVector(w / w.sum(), ids)


def lattice_objective_step(scores, weights: WeightVector, step: float = 0.01) -> float:
    """Largest change in log-likelihood from ``weights`` to an adjacent lattice point."""
    w = weights.weights
    base = log_likelihood(scores, w)
    m = w.size
    worst = 0.0
    for i, j in itertools.permutations(range(m), 2):
        nb = w.copy()
        nb[i] += step
        nb[j] -= step
        if nb[j] < -1e-12 or nb[i] > 1 + 1e-12:
            continue
        nb = np.clip(nb, 0.0, 1.0)
        worst = max(worst, abs(log_likelihood(scores, nb / nb.sum()) - base))
    return worst


def _bump(center: int, half: int, nbins: int) -> np.ndarray:
    x = np.zeros(nbins)
    x[max(0, center - half):min(nbins, center + half + 1)] = 1.0
    return x / x.sum()


def epidemic_templates(weeks_: int, floor: float = 1e-3) -> np.ndarray:
    """Five week-varying components that follow a bell-shaped epidemic curve.

    In order: a sharp forecast (+-2 bins around the curve), a wide one
    (+-8), a very wide one (+-14) that looks strong while truth is still
    noisy, and two narrow forecasts centred on the wrong bins.
    """
    nbins = canonical_grid().count
    k = np.arange(weeks_)
    centre = (15 + 45 * np.exp(-0.5 * ((k - weeks_ / 2) / (weeks_ / 6)) ** 2)).astype(int)
    rows = [
        [_bump(c, 2, nbins) for c in centre],
        [_bump(c, 8, nbins) for c in centre],
        [_bump(c, 14, nbins) for c in centre],
        [_bump(c + 30 if c + 30 < 125 else c - 30, 3, nbins) for c in centre],
        [_bump(max(c - 12, 3), 3, nbins) for c in centre],
    ]
    t = np.array(rows)
    return (1 - floor) * t + floor / nbins


def revision_sweep_scenario(seed: int = 4, weeks_: int = 30, locations: int = 2,
                            revision: RevisionModel = RevisionModel(20, 8)) -> SyntheticScenario:
    """Season where the adaptive ensemble does best at a small nonzero prior.

    Truth is drawn from the sharp and wide components only, but early
    reports are shifted by up to 20 bins. With no prior the weekly fits
    chase the noisy provisional values; with a strong prior the two
    useless components keep too much weight.
    """
    return SyntheticScenario(
        true_pi=(0.6, 0.4, 0.0, 0.0, 0.0),
        templates=epidemic_templates(weeks_),
        weeks=weeks_,
        revision=revision,
        seed=seed,
        locations=tuple(f"L{i + 1}" for i in range(locations)),
        model_ids=("sharp", "wide", "vague", "high", "low"),
        season="sweep",
    )
