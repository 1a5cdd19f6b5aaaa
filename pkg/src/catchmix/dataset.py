"""Ingestion, validation and regularization of the observation tables.

Input format is three CSV files:

- ``sites.csv``:        ``site_id,x,y,catchment_id`` (planar coordinates, meters)
- ``observations.csv``: ``site_id,date,value`` (ISO-8601 dates, log-scale values)
- ``landuse.csv``:      ``catchment_id,<cat_1>,...,<cat_K>`` (wide, proportions)

Everything downstream consumes the immutable :class:`Dataset` produced here,
or the weekly-grid :class:`AlignedPanel` derived from it.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from datetime import date, timedelta
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    CompositionNotNormalized,
    DuplicateSiteId,
    MissingColumn,
    MissingFile,
    NonFiniteValue,
    TooSparse,
    UnknownCatchmentReference,
    UnknownSiteReference,
)

WEEK = timedelta(days=7)
COMPOSITION_TOL = 1e-6

#: default fraction of interior bins that may be empty before a series is
#: declared too sparse to regularize
DEFAULT_MAX_GAP_FRAC = 0.3


@dataclass(frozen=True)
class Site:
    site_id: str
    x: float
    y: float
    catchment_id: str


@dataclass(frozen=True)
class Observation:
    site_id: str
    t: date
    value: float


@dataclass(frozen=True)
class LandUseComposition:
    catchment_id: str
    proportions: tuple[float, ...]  # aligned with Dataset.categories


@dataclass(frozen=True)
class Dataset:
    """Validated container for sites, observations and compositions."""

    sites: tuple[Site, ...]
    observations: tuple[Observation, ...]
    compositions: tuple[LandUseComposition, ...]
    categories: tuple[str, ...]

    @property
    def site_ids(self) -> tuple[str, ...]:
        return tuple(s.site_id for s in self.sites)

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    @property
    def n_categories(self) -> int:
        return len(self.categories)

    def composition_for(self, catchment_id: str) -> tuple[float, ...]:
        for c in self.compositions:
            if c.catchment_id == catchment_id:
                return c.proportions
        raise UnknownCatchmentReference(catchment_id, -1, "compositions")

    def observations_for(self, site_id: str) -> list[Observation]:
        return [o for o in self.observations if o.site_id == site_id]


@dataclass(frozen=True)
class RegularSeries:
    """Per-site series on a fixed grid with all gaps filled."""

    site_id: str
    start: date
    step: timedelta
    values: np.ndarray

    def __post_init__(self):
        self.values.setflags(write=False)

    @property
    def end(self) -> date:
        return self.start + (len(self.values) - 1) * self.step


@dataclass(frozen=True)
class ValidationEntry:
    code: str
    file: str
    row: int
    detail: str

    def to_json_obj(self) -> dict:
        return {"code": self.code, "file": self.file, "row": self.row, "detail": self.detail}


@dataclass
class ValidationReport:
    entries: list[ValidationEntry] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not self.entries

    def add(self, code: str, detail: str, file: str = "", row: int = -1) -> None:
        self.entries.append(ValidationEntry(code, file, row, detail))

    def to_jsonl(self) -> str:
        import json

        return "\n".join(json.dumps(e.to_json_obj(), sort_keys=True) for e in self.entries)


# --- loading ---------------------------------------------------------------


def _read_rows(path: str, required: Sequence[str]) -> tuple[list[dict], list[str]]:
    if not os.path.exists(path):
        raise MissingFile(f"no such file: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in required:
            if col not in header:
                raise MissingColumn(path, col)
        return list(reader), list(header)


def _parse_float(raw: str, path: str, row: int, col: str) -> float:
    try:
        v = float(raw)
    except (TypeError, ValueError):
        raise NonFiniteValue(path, row, col, raw) from None
    if not math.isfinite(v):
        raise NonFiniteValue(path, row, col, raw)
    return v


def _parse_date(raw: str, path: str, row: int, col: str) -> date:
    try:
        return date.fromisoformat(raw.strip()[:10])
    except (TypeError, ValueError):
        raise NonFiniteValue(path, row, col, raw) from None


def load_dataset(
    sites_path: str,
    obs_path: str,
    comp_path: str,
    log_transform: bool = False,
) -> Dataset:
    """Load and cross-validate the three input tables.

    Duplicate ``(site, date)`` observation rows are collapsed by their mean
    (treated as measurement replicates). With ``log_transform`` the raw
    observation values are log-transformed at ingestion; by default values
    are taken to be on the log scale already.

    Row numbers in errors are 1-based and count the header as row 1.
    """
    site_rows, _ = _read_rows(sites_path, ["site_id", "x", "y", "catchment_id"])
    obs_rows, _ = _read_rows(obs_path, ["site_id", "date", "value"])
    comp_rows, comp_header = _read_rows(comp_path, ["catchment_id"])

    categories = tuple(c for c in comp_header if c != "catchment_id")

    compositions = []
    seen_catchments = set()
    for i, row in enumerate(comp_rows, start=2):
        cid = row["catchment_id"]
        if cid in seen_catchments:
            raise CompositionNotNormalized(cid, "duplicate catchment row", row=i)
        seen_catchments.add(cid)
        props = []
        for cat in categories:
            v = _parse_float(row.get(cat), comp_path, i, cat)
            if v < 0.0:
                raise CompositionNotNormalized(cid, f"negative proportion {v} for {cat!r}", row=i)
            props.append(v)
        total = sum(props)
        if abs(total - 1.0) > COMPOSITION_TOL:
            raise CompositionNotNormalized(cid, f"proportions sum to {total}, expected 1", row=i)
        compositions.append(LandUseComposition(cid, tuple(props)))

    sites = []
    seen_sites: set[str] = set()
    for i, row in enumerate(site_rows, start=2):
        sid = row["site_id"]
        if sid in seen_sites:
            raise DuplicateSiteId(f"{sites_path} row {i}: duplicate site_id {sid!r}")
        seen_sites.add(sid)
        x = _parse_float(row.get("x"), sites_path, i, "x")
        y = _parse_float(row.get("y"), sites_path, i, "y")
        cid = row["catchment_id"]
        if cid not in seen_catchments:
            raise UnknownCatchmentReference(cid, i, sites_path)
        sites.append(Site(sid, x, y, cid))

    # collapse duplicate (site, date) rows by mean
    acc: dict[tuple[str, date], list[float]] = {}
    order: list[tuple[str, date]] = []
    for i, row in enumerate(obs_rows, start=2):
        sid = row["site_id"]
        if sid not in seen_sites:
            raise UnknownSiteReference(sid, i, obs_path)
        t = _parse_date(row.get("date"), obs_path, i, "date")
        v = _parse_float(row.get("value"), obs_path, i, "value")
        if log_transform:
            if v <= 0:
                raise NonFiniteValue(obs_path, i, "value", row.get("value", ""))
            v = math.log(v)
        key = (sid, t)
        if key not in acc:
            acc[key] = []
            order.append(key)
        acc[key].append(v)

    observations = tuple(
        Observation(sid, t, float(np.mean(acc[(sid, t)]))) for sid, t in order
    )
    return Dataset(tuple(sites), observations, tuple(compositions), categories)


def save_dataset(d: Dataset, sites_path: str, obs_path: str, comp_path: str) -> None:
    """Write a Dataset back to the three-CSV format (round-trips load_dataset)."""
    with open(sites_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["site_id", "x", "y", "catchment_id"])
        for s in d.sites:
            w.writerow([s.site_id, repr(s.x), repr(s.y), s.catchment_id])
    with open(obs_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["site_id", "date", "value"])
        for o in d.observations:
            w.writerow([o.site_id, o.t.isoformat(), repr(o.value)])
    with open(comp_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["catchment_id", *d.categories])
        for c in d.compositions:
            w.writerow([c.catchment_id, *(repr(p) for p in c.proportions)])


# --- regularization --------------------------------------------------------


def regularize_series(
    obs: Iterable[Observation],
    step: timedelta = WEEK,
    fill: str = "linear",
    max_gap_frac: float = DEFAULT_MAX_GAP_FRAC,
    anchor: date | None = None,
    end: date | None = None,
) -> RegularSeries:
    """Bin observations onto a fixed grid and fill interior gaps.

    Observations falling in the same bin are averaged. Interior empty bins
    are filled per ``fill`` ("linear" interpolation between the nearest
    non-empty bins, or "previous" carrying the last value forward); empty
    bins at the grid edges take the nearest value. Leading/trailing empty
    bins are trimmed unless an explicit ``anchor``/``end`` pins the grid.

    Raises :class:`TooSparse` when more than ``max_gap_frac`` of the bins
    inside the observation window are empty.
    """
    obs = sorted(obs, key=lambda o: (o.t, o.site_id))
    if len(obs) < 2:
        raise TooSparse("need at least 2 observations to regularize")
    site_id = obs[0].site_id
    step_days = step.days
    if step_days <= 0 or step.seconds or step.microseconds:
        raise ValueError("step must be a positive whole number of days")

    t0 = anchor if anchor is not None else obs[0].t
    t_last = end if end is not None else obs[-1].t
    n_bins = (t_last - t0).days // step_days + 1
    if n_bins < 1:
        raise TooSparse("observation window shorter than one bin")

    sums = np.zeros(n_bins)
    counts = np.zeros(n_bins, dtype=np.int64)
    for o in obs:
        b = (o.t - t0).days // step_days
        if 0 <= b < n_bins:
            sums[b] += o.value
            counts[b] += 1

    filled_mask = counts > 0
    if not filled_mask.any():
        raise TooSparse("no observations fall inside the grid window")

    first = int(np.argmax(filled_mask))
    last = int(n_bins - 1 - np.argmax(filled_mask[::-1]))
    if anchor is None:
        lo, hi = first, last
    else:
        lo, hi = 0, n_bins - 1

    values = np.full(hi - lo + 1, np.nan)
    idx = np.nonzero(filled_mask)[0]
    values[idx - lo] = sums[idx] / counts[idx]

    # sparsity is judged on the observed window only; bins an explicit
    # anchor/end adds outside it are edge extensions, not gaps
    n_interior = last - first + 1
    n_empty = int(np.count_nonzero(~filled_mask[first : last + 1]))
    if n_interior > 0 and n_empty / n_interior > max_gap_frac:
        raise TooSparse(
            f"site {site_id!r}: {n_empty}/{n_interior} interior bins empty "
            f"(threshold {max_gap_frac:.0%})"
        )

    if n_empty:
        known = ~np.isnan(values)
        pos = np.arange(len(values), dtype=float)
        if fill == "linear":
            values = np.interp(pos, pos[known], values[known])
        elif fill == "previous":
            filled = values.copy()
            lastv = values[known][0]
            for i in range(len(filled)):
                if np.isnan(filled[i]):
                    filled[i] = lastv
                else:
                    lastv = filled[i]
            values = filled
        else:
            raise ValueError(f"unknown fill policy {fill!r}")

    return RegularSeries(site_id, t0 + lo * step, step, values)


@dataclass(frozen=True)
class AlignedPanel:
    """All sites regularized onto one shared weekly grid."""

    site_ids: tuple[str, ...]
    start: date
    step: timedelta
    values: np.ndarray  # (n_sites, T)

    def __post_init__(self):
        self.values.setflags(write=False)

    @property
    def n_sites(self) -> int:
        return self.values.shape[0]

    @property
    def n_times(self) -> int:
        return self.values.shape[1]

    def dates(self) -> list[date]:
        return [self.start + i * self.step for i in range(self.n_times)]


def align_panel(
    d: Dataset,
    step: timedelta = WEEK,
    fill: str = "linear",
    max_gap_frac: float = DEFAULT_MAX_GAP_FRAC,
) -> AlignedPanel:
    """Regularize every site and restrict to the common time window.

    The shared grid is anchored at the latest per-site first observation and
    ends at the earliest per-site last observation, so every cell of the
    returned matrix is backed by that site's own observation window.
    """
    by_site: dict[str, list[Observation]] = {s.site_id: [] for s in d.sites}
    for o in d.observations:
        by_site[o.site_id].append(o)
    for sid, rows in by_site.items():
        if len(rows) < 2:
            raise TooSparse(f"site {sid!r} has fewer than 2 observations")

    starts = [min(o.t for o in rows) for rows in by_site.values()]
    ends = [max(o.t for o in rows) for rows in by_site.values()]
    anchor, end = max(starts), min(ends)
    if end <= anchor:
        raise TooSparse("sites share no common observation window")

    series = [
        regularize_series(by_site[sid], step, fill, max_gap_frac, anchor=anchor, end=end)
        for sid in (s.site_id for s in d.sites)
    ]
    values = np.vstack([s.values for s in series])
    return AlignedPanel(tuple(s.site_id for s in d.sites), anchor, step, values)


# --- validation ------------------------------------------------------------


def validate_dataset(
    d: Dataset,
    period: int = 52,
    step: timedelta = WEEK,
    max_gap_frac: float = DEFAULT_MAX_GAP_FRAC,
) -> ValidationReport:
    """Check every fit-readiness invariant and report each violation.

    An empty report means the dataset can go straight into any estimator
    with the given seasonal ``period`` on the given grid ``step``.
    """
    report = ValidationReport()

    seen = set()
    for s in d.sites:
        if s.site_id in seen:
            report.add("DuplicateSiteId", f"site_id {s.site_id!r} repeated", file="sites")
        seen.add(s.site_id)
        if not (math.isfinite(s.x) and math.isfinite(s.y)):
            report.add("NonFiniteCoordinate", f"site {s.site_id!r} has non-finite coordinates", file="sites")

    catchments = {c.catchment_id for c in d.compositions}
    for s in d.sites:
        if s.catchment_id not in catchments:
            report.add(
                "UnknownCatchmentReference",
                f"site {s.site_id!r} references missing catchment {s.catchment_id!r}",
                file="sites",
            )

    if d.n_categories < 2:
        report.add("TooFewCategories", f"mixture requires K >= 2, got {d.n_categories}", file="landuse")
    for c in d.compositions:
        if len(c.proportions) != d.n_categories:
            report.add("CategoryMismatch", f"catchment {c.catchment_id!r} has wrong category count", file="landuse")
            continue
        if any(p < 0 for p in c.proportions):
            report.add("NegativeProportion", f"catchment {c.catchment_id!r} has a negative proportion", file="landuse")
        if abs(sum(c.proportions) - 1.0) > COMPOSITION_TOL:
            report.add(
                "CompositionNotNormalized",
                f"catchment {c.catchment_id!r} proportions sum to {sum(c.proportions)}",
                file="landuse",
            )

    site_ids = {s.site_id for s in d.sites}
    seen_obs = set()
    for i, o in enumerate(d.observations):
        if o.site_id not in site_ids:
            report.add("UnknownSiteReference", f"observation references missing site {o.site_id!r}", file="observations", row=i)
        if not math.isfinite(o.value):
            report.add("NonFiniteValue", f"non-finite value at site {o.site_id!r}, {o.t}", file="observations", row=i)
        key = (o.site_id, o.t)
        if key in seen_obs:
            report.add("DuplicateObservation", f"duplicate (site, date) pair {key}", file="observations", row=i)
        seen_obs.add(key)

    by_site: dict[str, list[Observation]] = {sid: [] for sid in site_ids}
    for o in d.observations:
        if o.site_id in by_site:
            by_site[o.site_id].append(o)
    for sid in sorted(site_ids):
        rows = by_site[sid]
        if len(rows) < 2:
            report.add("TooSparse", f"site {sid!r} has fewer than 2 observations", file="observations")
            continue
        try:
            series = regularize_series(rows, step=step, max_gap_frac=max_gap_frac)
        except TooSparse as exc:
            report.add("TooSparse", str(exc), file="observations")
            continue
        if len(series.values) < 2 * period:
            report.add(
                "InsufficientCycles",
                f"site {sid!r}: {len(series.values)} bins < 2 full cycles of period {period}"
                " (insufficient cycles for seasonal decomposition)",
                file="observations",
            )

    return report
