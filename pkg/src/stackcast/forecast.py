"""Bin grids, binned forecasts, weight vectors and the truncated log score."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DomainError

#: Log scores below this value are clipped to it.
LOG_SCORE_FLOOR = -10.0

#: Accepted range of raw mass totals before renormalization.
MASS_BAND = (0.9, 1.1)

_MASS_TOL = 1e-9
_WEIGHT_TOL = 1e-12


def _frozen(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class BinGrid:
    """Ordered bin boundaries in ILI percentage units.

    Bins are half open, ``[edges[j], edges[j+1])``, except the last one,
    which is closed so that 100% has a home.
    """

    edges: tuple[float, ...]

    def __post_init__(self):
        edges = tuple(float(e) for e in self.edges)
        object.__setattr__(self, "edges", edges)
        if len(edges) < 2:
            raise DomainError("a bin grid needs at least two edges")
        if edges[0] != 0.0 or edges[-1] != 100.0:
            raise DomainError("bin grid must start at 0.0 and end at 100.0")
        if any(b <= a for a, b in zip(edges, edges[1:])):
            raise DomainError("bin edges must be strictly increasing")

    @property
    def count(self) -> int:
        return len(self.edges) - 1

    @property
    def edge_array(self) -> np.ndarray:
        return _edge_array(self)

    def midpoint(self, j: int) -> float:
        return 0.5 * (self.edges[j] + self.edges[j + 1])

    def index_of(self, ili: float) -> int:
        return bin_index_of(self, ili)


@lru_cache(maxsize=None)
def _edge_array(grid: BinGrid) -> np.ndarray:
    return _frozen(grid.edges)


@lru_cache(maxsize=1)
def canonical_grid() -> BinGrid:
    """The 131-bin FluSight grid: 0 to 13 by 0.1, then one bin [13, 100]."""
    return BinGrid(tuple(round(j * 0.1, 1) for j in range(131)) + (100.0,))


def bin_index_of(grid: BinGrid, ili: float) -> int:
    """Index ``j`` with ``edges[j] <= ili < edges[j+1]``; 100 maps to the last bin."""
    ili = float(ili)
    if not (0.0 <= ili <= 100.0):
        raise DomainError(f"ILI percentage {ili!r} outside [0, 100]")
    j = int(np.searchsorted(grid.edge_array, ili, side="right")) - 1
    return min(j, grid.count - 1)


class ForecastMeta(NamedTuple):
    """Identifies one component forecast."""

    model: str
    location: str
    target: int
    issue: int


def normalize_mass(mass, band: tuple[float, float] = MASS_BAND) -> np.ndarray:
    """Rescale ``mass`` to sum to one if its total lies inside ``band``."""
    arr = np.asarray(mass, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise DomainError("forecast mass must be a non-empty vector")
    if np.any(~np.isfinite(arr)) or np.any(arr < 0):
        raise DomainError("forecast mass entries must be finite and non-negative")
    total = float(arr.sum())
    if not (band[0] <= total <= band[1]):
        raise DomainError(f"forecast mass sums to {total:.6g}, outside {band}")
    return arr / total


@dataclass(frozen=True)
class BinnedForecast:
    grid: BinGrid
    mass: np.ndarray
    meta: ForecastMeta | None = None

    def __post_init__(self):
        mass = _frozen(self.mass)
        object.__setattr__(self, "mass", mass)
        if mass.shape != (self.grid.count,):
            raise DomainError(
                f"forecast has {mass.size} bins, grid has {self.grid.count}"
            )
        if np.any(mass < 0) or abs(mass.sum() - 1.0) > _MASS_TOL:
            raise DomainError("forecast mass must be non-negative and sum to 1")

    @classmethod
    def from_raw(cls, grid: BinGrid, mass, meta: ForecastMeta | None = None):
        """Build a forecast from file-level mass, renormalizing within the band."""
        return cls(grid, normalize_mass(mass), meta)

    def __eq__(self, other):
        if not isinstance(other, BinnedForecast):
            return NotImplemented
        return (
            self.grid == other.grid
            and self.meta == other.meta
            and np.array_equal(self.mass, other.mass)
        )

    __hash__ = None


@dataclass(frozen=True)
class WeightVector:
    """A point on the probability simplex, optionally labelled by model id."""

    weights: np.ndarray
    model_ids: tuple[str, ...] | None = field(default=None)

    def __post_init__(self):
        w = _frozen(self.weights)
        object.__setattr__(self, "weights", w)
        if w.ndim != 1 or w.size == 0:
            raise DomainError("weights must be a non-empty vector")
        if np.any(~np.isfinite(w)) or np.any(w < 0):
            raise DomainError("weights must be finite and non-negative")
        if abs(w.sum() - 1.0) > _WEIGHT_TOL:
            raise DomainError(f"weights sum to {w.sum()!r}, not 1")
        if self.model_ids is not None:
            ids = tuple(self.model_ids)
            object.__setattr__(self, "model_ids", ids)
            if len(ids) != w.size:
                raise DomainError("model_ids and weights differ in length")

    @classmethod
    def uniform(cls, m: int | Sequence[str]):
        if isinstance(m, int):
            return cls(np.full(m, 1.0 / m))
        ids = tuple(m)
        return cls(np.full(len(ids), 1.0 / len(ids)), ids)

    def __len__(self):
        return self.weights.size

    def as_dict(self) -> dict[str, float]:
        ids = self.model_ids or tuple(str(i) for i in range(len(self)))
        return dict(zip(ids, self.weights.tolist()))

    def __eq__(self, other):
        if not isinstance(other, WeightVector):
            return NotImplemented
        return self.model_ids == other.model_ids and np.array_equal(
            self.weights, other.weights
        )

    __hash__ = None


class ObsKey(NamedTuple):
    """One training observation: a forecast instance with known truth."""

    season: str
    location: str
    target: int
    epiweek: int


@dataclass(frozen=True)
class LogScoreMatrix:
    """M x T matrix of component log scores, one column per observation."""

    values: np.ndarray
    model_ids: tuple[str, ...]
    obs_keys: tuple[ObsKey, ...] = ()

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1 and v.size == 0:
            v = v.reshape(len(self.model_ids), 0)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "model_ids", tuple(self.model_ids))
        object.__setattr__(self, "obs_keys", tuple(self.obs_keys))
        if v.ndim != 2 or v.shape[0] != len(self.model_ids):
            raise DomainError("values must be M x T with one row per model id")
        if self.obs_keys and len(self.obs_keys) != v.shape[1]:
            raise DomainError("need exactly one observation key per column")
        if v.size and (np.any(v > 0) or np.any(~(v >= LOG_SCORE_FLOOR))):
            raise DomainError(f"log scores must lie in [{LOG_SCORE_FLOOR}, 0]")

    @property
    def num_models(self) -> int:
        return self.values.shape[0]

    @property
    def num_obs(self) -> int:
        return self.values.shape[1]

    def __eq__(self, other):
        if not isinstance(other, LogScoreMatrix):
            return NotImplemented
        return (
            self.model_ids == other.model_ids
            and self.obs_keys == other.obs_keys
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None


def truncated_log(p: float) -> float:
    if p <= 0.0:
        return LOG_SCORE_FLOOR
    return max(math.log(p), LOG_SCORE_FLOOR)


def log_score(forecast: BinnedForecast, truth_bin: int) -> float:
    """Natural log of the mass on ``truth_bin``, floored at -10."""
    if not isinstance(truth_bin, (int, np.integer)) or not (
        0 <= truth_bin < forecast.grid.count
    ):
        raise DomainError(f"bin index {truth_bin!r} invalid for this grid")
    return truncated_log(float(forecast.mass[truth_bin]))


def combine(forecasts: Sequence[BinnedForecast], pi: WeightVector) -> BinnedForecast:
    """Linear pool of ``forecasts`` with weights ``pi``."""
    if len(forecasts) == 0 or len(forecasts) != len(pi):
        raise DomainError("need one forecast per weight")
    grid = forecasts[0].grid
    if any(f.grid != grid for f in forecasts):
        raise DomainError("forecasts are on different bin grids")
    metas = [f.meta for f in forecasts]
    meta = None
    if any(m is not None for m in metas):
        if any(m is None for m in metas):
            raise DomainError("forecast metadata is missing for some components")
        context = {(m.location, m.target, m.issue) for m in metas}
        if len(context) != 1:
            raise DomainError("forecasts differ in location, target or issue week")
        loc, target, issue = context.pop()
        meta = ForecastMeta("ensemble", loc, target, issue)
    masses = np.stack([f.mass for f in forecasts])
    return BinnedForecast(grid, pi.weights @ masses, meta)
