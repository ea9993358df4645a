"""CSV ingestion of forecasts and truth snapshots, and persistence of runs.

Formats (UTF-8, header row, epiweeks as ``YYYYWW`` integers):

* forecasts: ``model,location,target,issue,bin_start,bin_end,value``
* truth:     ``issue,epiweek,location,wili``
* runs:      a ``# stackcast-run v1`` line, then
  ``kind,epiweek,location,target,model,value``
"""

from __future__ import annotations

import csv
import warnings
from functools import lru_cache
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

from .errors import DomainError, IngestionError
from .forecast import BinGrid, BinnedForecast, ForecastMeta, WeightVector, canonical_grid
from .season import SeasonData, SeasonRun, TruthSnapshot, TruthSnapshotStore

FORECAST_HEADER = ("model", "location", "target", "issue", "bin_start", "bin_end", "value")
TRUTH_HEADER = ("issue", "epiweek", "location", "wili")
RUN_HEADER = ("kind", "epiweek", "location", "target", "model", "value")
RUN_VERSION_LINE = "# stackcast-run v1"

_EDGE_TOL = 1e-9


class ForecastRecord(NamedTuple):
    model: str
    location: str
    target: int
    issue: int
    bin_start: float
    bin_end: float
    value: float


class TruthRecord(NamedTuple):
    issue: int
    epiweek: int
    location: str
    wili: float


def fmt_float(x: float) -> str:
    """17 significant digits: parses back to the identical double."""
    return format(float(x), ".17g")


def _reader(fh, required: tuple[str, ...], path) -> csv.DictReader:
    reader = csv.DictReader(fh)
    header = reader.fieldnames or []
    missing = [c for c in required if c not in header]
    if missing:
        raise IngestionError(f"{path}: header lacks columns {missing}")
    extra = [c for c in header if c not in required]
    if extra:
        warnings.warn(f"{path}: ignoring unknown columns {extra}", stacklevel=3)
    return reader


def _parse(row: dict, converters: dict, path, line: int) -> dict:
    out = {}
    for col, conv in converters.items():
        raw = row.get(col)
        if raw is None:
            raise IngestionError(f"{path}:{line}: missing value for {col!r}")
        try:
            out[col] = conv(raw.strip())
        except ValueError:
            raise IngestionError(f"{path}:{line}: bad {col!r} value {raw!r}") from None
    return out


def _nonempty(s: str) -> str:
    if not s:
        raise ValueError("empty")
    return s


_FORECAST_CONV = {
    "model": _nonempty, "location": _nonempty, "target": int, "issue": int,
    "bin_start": float, "bin_end": float, "value": float,
}
_TRUTH_CONV = {"issue": int, "epiweek": int, "location": _nonempty, "wili": float}


def read_forecast_records(path) -> list[ForecastRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = _reader(fh, FORECAST_HEADER, path)
        return [
            ForecastRecord(**_parse(row, _FORECAST_CONV, path, reader.line_num))
            for row in reader
        ]


@lru_cache(maxsize=8)
def _edge_lookup(grid: BinGrid) -> dict[float, int]:
    return {e: j for j, e in enumerate(grid.edges[:-1])}


def _bin_matcher(grid: BinGrid):
    """Returns ``match(start, end) -> bin index or None`` for ``grid``."""
    edges = grid.edge_array
    lookup = _edge_lookup(grid)

    def match(start: float, end: float) -> int | None:
        j = lookup.get(start)
        if j is None:
            j = int(np.argmin(np.abs(edges[:-1] - start)))
        if abs(edges[j] - start) <= _EDGE_TOL and abs(edges[j + 1] - end) <= _EDGE_TOL:
            return j
        return None

    return match


def forecasts_from_records(records: Iterable[ForecastRecord], grid: BinGrid | None = None,
                           source="<records>", first_line: int = 1) -> dict[ForecastMeta, BinnedForecast]:
    """Group per-bin records into forecasts, renormalizing within the mass band.

    Errors name ``source`` and the record's position, counted from ``first_line``.
    """
    grid = grid or canonical_grid()
    match = _bin_matcher(grid)
    masses: dict[ForecastMeta, np.ndarray] = {}
    seen: dict[ForecastMeta, set] = {}
    for n, rec in enumerate(records, start=first_line):
        j = match(rec.bin_start, rec.bin_end)
        if j is None:
            raise IngestionError(
                f"{source}:{n}: bin edges ({rec.bin_start}, {rec.bin_end}) "
                "do not match a grid bin"
            )
        if not np.isfinite(rec.value) or rec.value < 0:
            raise IngestionError(f"{source}:{n}: invalid probability {rec.value!r}")
        meta = ForecastMeta(rec.model, rec.location, rec.target, rec.issue)
        if meta not in masses:
            masses[meta] = np.zeros(grid.count)
            seen[meta] = set()
        if j in seen[meta]:
            raise IngestionError(f"{source}:{n}: duplicate bin {j} for {tuple(meta)}")
        seen[meta].add(j)
        masses[meta][j] = rec.value
    out = {}
    for meta, mass in masses.items():
        try:
            out[meta] = BinnedForecast.from_raw(grid, mass, meta)
        except DomainError as exc:
            raise IngestionError(f"{source}: forecast group {tuple(meta)}: {exc}") from None
    return out


def load_forecasts(path, grid: BinGrid | None = None) -> dict[ForecastMeta, BinnedForecast]:
    """Read a forecast CSV into forecasts keyed by (model, location, target, issue)."""
    return forecasts_from_records(read_forecast_records(path), grid, source=path, first_line=2)


def read_truth_records(path) -> list[TruthRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = _reader(fh, TRUTH_HEADER, path)
        out = []
        for row in reader:
            rec = TruthRecord(**_parse(row, _TRUTH_CONV, path, reader.line_num))
            if not (0.0 <= rec.wili <= 100.0):
                raise IngestionError(f"{path}:{reader.line_num}: wili {rec.wili} outside [0, 100]")
            if rec.epiweek > rec.issue:
                raise IngestionError(
                    f"{path}:{reader.line_num}: epiweek {rec.epiweek} after issue {rec.issue}"
                )
            out.append(rec)
    return out


def snapshots_from_records(records: Iterable[TruthRecord], source="<records>") -> TruthSnapshotStore:
    """Build one snapshot per issue week; later issues inherit earlier values."""
    by_issue: dict[int, dict[tuple[str, int], float]] = {}
    for rec in records:
        if rec.epiweek > rec.issue:
            raise IngestionError(f"{source}: epiweek {rec.epiweek} after issue {rec.issue}")
        issue_vals = by_issue.setdefault(rec.issue, {})
        key = (rec.location, rec.epiweek)
        if key in issue_vals and issue_vals[key] != rec.wili:
            raise IngestionError(
                f"{source}: conflicting values for location {rec.location!r}, "
                f"epiweek {rec.epiweek} in issue {rec.issue}"
            )
        issue_vals[key] = rec.wili
    current: dict[tuple[str, int], float] = {}
    snaps = []
    for issue in sorted(by_issue):
        current.update(by_issue[issue])
        snaps.append(TruthSnapshot(issue, dict(current)))
    return TruthSnapshotStore(snaps)


def load_truth_snapshots(path) -> TruthSnapshotStore:
    return snapshots_from_records(read_truth_records(path), source=path)


def load_season(forecasts_path, truth_path, season: str = "season") -> SeasonData:
    return SeasonData(load_forecasts(forecasts_path), load_truth_snapshots(truth_path), season)


def write_forecasts(path, records: Iterable[ForecastRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FORECAST_HEADER)
        for r in records:
            w.writerow([r.model, r.location, r.target, r.issue,
                        fmt_float(r.bin_start), fmt_float(r.bin_end), fmt_float(r.value)])


def write_truth(path, records: Iterable[TruthRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRUTH_HEADER)
        for r in records:
            w.writerow([r.issue, r.epiweek, r.location, fmt_float(r.wili)])


def forecast_records(forecasts: dict[ForecastMeta, BinnedForecast],
                     skip_zero: bool = False) -> list[ForecastRecord]:
    """Flatten forecasts back to per-bin records, in sorted key order."""
    out = []
    for meta in sorted(forecasts):
        fc = forecasts[meta]
        edges = fc.grid.edges
        for j, p in enumerate(fc.mass.tolist()):
            if skip_zero and p == 0.0:
                continue
            out.append(ForecastRecord(meta.model, meta.location, meta.target, meta.issue,
                                      edges[j], edges[j + 1], p))
    return out


def save_run(run: SeasonRun, path) -> None:
    """Write ``run`` so that ``load_run`` restores weights and scores bit-exactly."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(RUN_VERSION_LINE + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RUN_HEADER)
        w.writerow(["meta", "", "", "", "protocol", run.protocol])
        w.writerow(["meta", "", "", "", "season", run.season])
        w.writerow(["meta", "", "", "", "rho", "" if run.rho is None else fmt_float(run.rho)])
        for m in run.model_ids:
            w.writerow(["model", "", "", "", m, ""])
        for week in sorted(run.weekly_weights):
            for m, x in zip(run.model_ids, run.weekly_weights[week].weights.tolist()):
                w.writerow(["weight", week, "", "", m, fmt_float(x)])
        for (week, loc, target) in sorted(run.weekly_scores):
            w.writerow(["score", week, loc, target, "", fmt_float(run.weekly_scores[(week, loc, target)])])


def load_run(path) -> SeasonRun:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        first = fh.readline().rstrip("\r\n")
        if first != RUN_VERSION_LINE:
            raise IngestionError(f"{path}: expected version line {RUN_VERSION_LINE!r}, got {first!r}")
        reader = _reader(fh, RUN_HEADER, path)
        meta: dict[str, str] = {}
        model_ids: list[str] = []
        weights: dict[int, dict[str, float]] = {}
        scores: dict[tuple[int, str, int], float] = {}
        for row in reader:
            line = reader.line_num + 1
            kind = row["kind"]
            try:
                if kind == "meta":
                    meta[row["model"]] = row["value"]
                elif kind == "model":
                    model_ids.append(row["model"])
                elif kind == "weight":
                    weights.setdefault(int(row["epiweek"]), {})[row["model"]] = float(row["value"])
                elif kind == "score":
                    key = (int(row["epiweek"]), row["location"], int(row["target"]))
                    scores[key] = float(row["value"])
                else:
                    raise IngestionError(f"{path}:{line}: unknown row kind {kind!r}")
            except (ValueError, TypeError):
                raise IngestionError(f"{path}:{line}: malformed {kind} row") from None
    try:
        weekly = {
            week: WeightVector(np.array([ws[m] for m in model_ids]), model_ids)
            for week, ws in weights.items()
        }
    except KeyError as exc:
        raise IngestionError(f"{path}: weight row missing for model {exc}") from None
    rho = meta.get("rho", "")
    return SeasonRun(
        protocol=meta.get("protocol", ""),
        season=meta.get("season", ""),
        model_ids=tuple(model_ids),
        rho=float(rho) if rho else None,
        weekly_weights=dict(sorted(weekly.items())),
        weekly_scores=dict(sorted(scores.items())),
    )


def save_weights(path, weights: WeightVector) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "weight"])
        for m, x in weights.as_dict().items():
            w.writerow([m, fmt_float(x)])


def load_weights(path) -> WeightVector:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = _reader(fh, ("model", "weight"), path)
        rows = [(r["model"], float(r["weight"])) for r in reader]
    return WeightVector(np.array([x for _, x in rows]), tuple(m for m, _ in rows))


def save_trace(path, trace) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# method={trace.method} iterations={trace.iterations} "
                 f"converged={str(trace.converged).lower()}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "objective"])
        for i, x in enumerate(trace.objective_path.tolist()):
            w.writerow([i, fmt_float(x)])


def save_table(path, header: Iterable[str], rows: Iterable[Iterable]) -> None:
    """Plain CSV table; floats are written with 17 significant digits."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(header))
        for row in rows:
            w.writerow([fmt_float(x) if isinstance(x, float) else x for x in row])
