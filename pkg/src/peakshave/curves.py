"""Daily load curves: ingestion, aggregation, normalization, augmentation,
masking corruption, dataset splitting and a synthetic generator.

Slots are 0-based in every array here. The 1-based numbering used in CSV
files and on the command line is converted at those boundaries only
(see :meth:`CorruptionMask.from_slot_range`).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
from scipy.special import expit

from .errors import (
    DataError,
    IncompleteDay,
    InsufficientData,
    InvalidFoldCount,
    InvalidNormalization,
    InvalidReading,
    InvalidSplit,
)

SLOTS = 48
SLOT_HOURS = 0.5


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class DailyCurve:
    """Mean power per 30-minute slot for one community-day.

    ``unit`` is ``"kW"`` for physical curves and ``"pu"`` once normalized.
    """

    values: np.ndarray
    date_tag: str = ""
    unit: str = "kW"

    def __post_init__(self):
        v = _frozen(self.values)
        if v.shape != (SLOTS,):
            raise DataError(f"a daily curve has {SLOTS} slots, got shape {v.shape}")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise DataError(f"curve {self.date_tag!r} has negative or non-finite values")
        object.__setattr__(self, "values", v)

    @property
    def peak(self) -> float:
        return float(self.values.max())


@dataclass(frozen=True)
class CorruptionMask:
    """Masking-noise corruption: slots with ``keep == False`` are replaced by ``mask_value``."""

    keep: np.ndarray
    mask_value: float = 0.0

    def __post_init__(self):
        keep = np.asarray(self.keep)
        if keep.dtype != bool:
            if not np.all((keep == 0) | (keep == 1)):
                raise DataError("mask keep-vector must be binary")
            keep = keep.astype(bool)
        keep = keep.copy()
        keep.setflags(write=False)
        if not math.isfinite(self.mask_value):
            raise DataError("mask_value must be finite")
        object.__setattr__(self, "keep", keep)
        object.__setattr__(self, "mask_value", float(self.mask_value))

    @classmethod
    def from_slot_range(cls, first: int, last: int, mask_value: float = 0.0,
                        n_slots: int = SLOTS) -> "CorruptionMask":
        """Mask the 1-based inclusive slot range ``first..last``."""
        if not 1 <= first <= last <= n_slots:
            raise DataError(f"slot range {first}-{last} outside 1..{n_slots}")
        keep = np.ones(n_slots, dtype=bool)
        keep[first - 1:last] = False
        return cls(keep, mask_value)

    @classmethod
    def keep_all(cls, n_slots: int = SLOTS, mask_value: float = 0.0) -> "CorruptionMask":
        return cls(np.ones(n_slots, dtype=bool), mask_value)

    @property
    def masked(self) -> np.ndarray:
        """0-based indices of corrupted slots."""
        return np.flatnonzero(~self.keep)

    @property
    def kept(self) -> np.ndarray:
        return np.flatnonzero(self.keep)

    @property
    def n_masked(self) -> int:
        return int((~self.keep).sum())

    def with_value(self, mask_value: float) -> "CorruptionMask":
        return CorruptionMask(self.keep, mask_value)

    def same_geometry(self, other: "CorruptionMask") -> bool:
        return self.keep.shape == other.keep.shape and bool(np.all(self.keep == other.keep))


@dataclass(frozen=True)
class NormalizationContext:
    """Per-unit base: 1 p.u. is the largest load in the reference dataset."""

    base_kw: float

    def __post_init__(self):
        if not (math.isfinite(self.base_kw) and self.base_kw > 0):
            raise InvalidNormalization(f"base_kw must be positive and finite, got {self.base_kw}")

    @classmethod
    def from_dataset(cls, data: "Dataset") -> "NormalizationContext":
        return cls(float(data.values.max()))


@dataclass(frozen=True)
class Dataset:
    """An ordered collection of daily curves stored as an ``(n, 48)`` array."""

    values: np.ndarray
    tags: tuple[str, ...] = ()
    provenance: str = "original"
    unit: str = "kW"

    def __post_init__(self):
        v = _frozen(self.values)
        if v.ndim != 2 or v.shape[1] != SLOTS:
            raise DataError(f"dataset values must have shape (n, {SLOTS}), got {v.shape}")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise DataError("dataset contains negative or non-finite values")
        tags = tuple(self.tags) if self.tags else tuple(str(i) for i in range(len(v)))
        if len(tags) != len(v):
            raise DataError("one tag per curve required")
        if self.provenance not in ("original", "augmented", "synthetic"):
            raise DataError(f"unknown provenance {self.provenance!r}")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "tags", tags)

    @classmethod
    def from_curves(cls, curves: Sequence[DailyCurve], provenance: str = "original") -> "Dataset":
        if not curves:
            raise InsufficientData("no curves")
        units = {c.unit for c in curves}
        if len(units) != 1:
            raise DataError("curves mix units")
        return cls(np.stack([c.values for c in curves]), tuple(c.date_tag for c in curves),
                   provenance, units.pop())

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, i: int) -> DailyCurve:
        return DailyCurve(self.values[i], self.tags[i], self.unit)

    def __iter__(self) -> Iterator[DailyCurve]:
        return (self[i] for i in range(len(self)))

    def subset(self, index: Sequence[int] | np.ndarray) -> "Dataset":
        index = np.asarray(index, dtype=int)
        return Dataset(self.values[index], tuple(self.tags[i] for i in index),
                       self.provenance, self.unit)

    @property
    def peaks(self) -> np.ndarray:
        return self.values.max(axis=1)


# ---------------------------------------------------------------------------
# ingestion


@dataclass(frozen=True)
class Reading:
    meter_id: str
    day: str
    slot: int  # 1-based
    kwh: float


def ingest_readings(rows: Iterable, meter_count: int) -> Dataset:
    """Aggregate per-meter half-hourly energy readings into community curves.

    Each row is a :class:`Reading` or a ``(meter_id, day, slot, kwh)`` tuple.
    Every day that appears must have exactly ``meter_count`` distinct meter
    readings in each of the 48 slots; gaps are an error, not something to
    fill here.
    """
    if meter_count < 1:
        raise DataError("meter_count must be positive")
    totals: dict[str, np.ndarray] = {}
    counts: dict[str, np.ndarray] = {}
    seen: set[tuple[str, str, int]] = set()
    for row in rows:
        meter, day, slot, kwh = (row.meter_id, row.day, row.slot, row.kwh) \
            if isinstance(row, Reading) else row
        meter, day = str(meter), str(day)
        slot = int(slot)
        kwh = float(kwh)
        if not 1 <= slot <= SLOTS:
            raise InvalidReading(f"slot {slot} outside 1..{SLOTS} (meter {meter}, day {day})")
        if not math.isfinite(kwh) or kwh < 0:
            raise InvalidReading(f"invalid reading {kwh} kWh (meter {meter}, day {day}, slot {slot})")
        key = (meter, day, slot)
        if key in seen:
            raise InvalidReading(f"duplicate reading (meter {meter}, day {day}, slot {slot})")
        seen.add(key)
        if day not in totals:
            totals[day] = np.zeros(SLOTS)
            counts[day] = np.zeros(SLOTS, dtype=int)
        totals[day][slot - 1] += kwh
        counts[day][slot - 1] += 1
    if not totals:
        raise InsufficientData("no readings")
    days = sorted(totals)
    for day in days:
        short = np.flatnonzero(counts[day] != meter_count)
        if short.size:
            slot = int(short[0]) + 1
            got = int(counts[day][short[0]])
            if got == 0:
                raise IncompleteDay(day, slot)
            raise IncompleteDay(day, slot, f"day {day} slot {slot} has {got} of {meter_count} meter readings")
    values = np.stack([totals[d] / SLOT_HOURS for d in days])
    return Dataset(values, tuple(days), "original", "kW")


def read_readings_csv(path: str | Path) -> list[Reading]:
    """Parse a ``meter_id,day,slot,kwh`` file."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["meter_id", "day", "slot", "kwh"]:
            raise DataError(f"{path}: expected header meter_id,day,slot,kwh")
        for lineno, rec in enumerate(reader, start=2):
            try:
                out.append(Reading(rec["meter_id"].strip(), rec["day"].strip(),
                                   int(rec["slot"]), float(rec["kwh"])))
            except (TypeError, ValueError) as exc:
                raise InvalidReading(f"{path}:{lineno}: {exc}") from None
    return out


def count_meters(readings: Sequence[Reading]) -> int:
    return len({r.meter_id for r in readings})


# ---------------------------------------------------------------------------
# curve files

CURVE_HEADER = ["day"] + [f"v{i}" for i in range(1, SLOTS + 1)]


def _fmt(x: float) -> str:
    # shortest repr round-trips exactly, so re-reading is bit-identical
    return repr(float(x))


def write_curves_csv(data: Dataset, path: str | Path) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_HEADER)
    for tag, row in zip(data.tags, data.values):
        w.writerow([tag] + [_fmt(v) for v in row])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_curves_csv(path: str | Path, provenance: str = "original") -> Dataset:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CURVE_HEADER:
            raise DataError(f"{path}: expected header day,v1,...,v{SLOTS}")
        tags, rows = [], []
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != SLOTS + 1:
                raise DataError(f"{path}:{lineno}: expected {SLOTS + 1} fields, got {len(rec)}")
            try:
                rows.append([float(v) for v in rec[1:]])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            tags.append(rec[0])
    if not rows:
        raise InsufficientData(f"{path}: no curves")
    return Dataset(np.array(rows), tuple(tags), provenance, "kW")


# ---------------------------------------------------------------------------
# transforms


def augment_pairwise(base: Dataset) -> Dataset:
    """Append the element-wise mean of every unordered pair of distinct days.

    Pairs are ordered lexicographically by day index: (0,1), (0,2), ..., (1,2), ...
    """
    n = len(base)
    if n < 2:
        raise InsufficientData(f"pairwise augmentation needs at least 2 curves, got {n}")
    i, j = np.triu_indices(n, k=1)
    pair_means = (base.values[i] + base.values[j]) / 2.0
    tags = base.tags + tuple(f"{base.tags[a]}+{base.tags[b]}" for a, b in zip(i, j))
    return Dataset(np.concatenate([base.values, pair_means]), tags, "augmented", base.unit)


def corrupt_array(x: np.ndarray, mask: CorruptionMask) -> np.ndarray:
    """Masking noise on a curve or a batch of curves (last axis = slots)."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != mask.keep.shape[0]:
        raise DataError(f"mask has {mask.keep.shape[0]} slots, data has {x.shape[-1]}")
    return np.where(mask.keep, x, mask.mask_value)


def corrupt(x: DailyCurve, mask: CorruptionMask) -> DailyCurve:
    return DailyCurve(corrupt_array(x.values, mask), x.date_tag, x.unit)


def normalize(x, ctx: NormalizationContext):
    """Divide a curve or dataset by the per-unit base."""
    if isinstance(x, Dataset):
        if x.unit != "kW":
            raise InvalidNormalization("dataset is already in p.u.")
        return Dataset(x.values / ctx.base_kw, x.tags, x.provenance, "pu")
    if isinstance(x, DailyCurve):
        if x.unit != "kW":
            raise InvalidNormalization("curve is already in p.u.")
        return DailyCurve(x.values / ctx.base_kw, x.date_tag, "pu")
    return np.asarray(x, dtype=float) / ctx.base_kw


def denormalize(x, ctx: NormalizationContext):
    if isinstance(x, Dataset):
        if x.unit != "pu":
            raise InvalidNormalization("dataset is not in p.u.")
        return Dataset(x.values * ctx.base_kw, x.tags, x.provenance, "kW")
    if isinstance(x, DailyCurve):
        if x.unit != "pu":
            raise InvalidNormalization("curve is not in p.u.")
        return DailyCurve(x.values * ctx.base_kw, x.date_tag, "kW")
    return np.asarray(x, dtype=float) * ctx.base_kw


def split(data: Dataset, train_count: int, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded shuffle, then the first ``train_count`` curves go to training."""
    n = len(data)
    if not 0 < train_count < n:
        raise InvalidSplit(f"train_count must be in 1..{n - 1}, got {train_count}")
    order = np.random.default_rng(seed).permutation(n)
    return data.subset(order[:train_count]), data.subset(order[train_count:])


def kfold_indices(n: int, k: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    if k < 2 or n < k:
        raise InvalidFoldCount(f"k must satisfy 2 <= k <= {n}, got {k}")
    order = np.random.default_rng(seed).permutation(n)
    folds = np.array_split(order, k)
    out = []
    for f in range(k):
        train = np.concatenate([folds[g] for g in range(k) if g != f])
        out.append((train, folds[f]))
    return out


def kfold(data: Dataset, k: int, seed: int) -> list[tuple[Dataset, Dataset]]:
    return [(data.subset(tr), data.subset(va)) for tr, va in kfold_indices(len(data), k, seed)]


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SynthProfile:
    """Shape parameters for synthetic duck-shaped community curves.

    Times are in hours. The evening plateau roughly covers ``peak_window``
    and the bump centre is drawn inside it. Each curve is rescaled so its
    maximum equals a peak drawn uniformly from ``peak_range_kw``.
    """

    peak_range_kw: tuple[float, float] = (250.0, 335.0)
    peak_window: tuple[float, float] = (14.0, 20.0)
    peak_center: tuple[float, float] = (16.5, 18.5)
    peak_width: tuple[float, float] = (1.0, 2.0)
    peak_amplitude: tuple[float, float] = (0.10, 0.35)
    plateau_level: tuple[float, float] = (0.8, 1.0)
    plateau_rise: tuple[float, float] = (13.8, 14.3)
    plateau_fall: tuple[float, float] = (19.8, 20.1)
    plateau_edge: float = 0.2
    base_level: tuple[float, float] = (0.30, 0.40)
    morning_center: tuple[float, float] = (7.0, 9.0)
    morning_level: tuple[float, float] = (0.15, 0.35)
    pv_depth: tuple[float, float] = (0.10, 0.25)
    latent_spread: float = 0.15
    noise: float = 0.02
    start: str = "2020-01-01"

    def __post_init__(self):
        lo, hi = self.peak_range_kw
        if not 0 < lo <= hi:
            raise DataError("peak_range_kw must satisfy 0 < low <= high")
        if not self.peak_window[0] <= self.peak_center[0] <= self.peak_center[1] <= self.peak_window[1]:
            raise DataError("peak_center must lie inside peak_window")


def synth_generate(days: int, seed: int, profile: SynthProfile | None = None) -> Dataset:
    """Reproducible duck-shaped daily curves.

    Each curve has a flat base, a morning shoulder, a midday PV depression
    and an evening plateau spanning the peak window with a bump on top.
    Levels share a per-day driver (with ``latent_spread`` of independent
    jitter), so the off-peak slots carry information about the evening.
    """
    if days < 1:
        raise DataError("days must be >= 1")
    p = profile or SynthProfile()
    rng = np.random.default_rng(seed)
    t = (np.arange(SLOTS) + 0.5) * SLOT_HOURS
    w_lo = int(round(p.peak_window[0] / SLOT_HOURS))
    w_hi = int(round(p.peak_window[1] / SLOT_HOURS))
    u = lambda r: rng.uniform(r[0], r[1])  # noqa: E731
    rows = np.empty((days, SLOTS))
    for d in range(days):
        # one "warmth" driver per day moves demand levels together
        warmth = rng.uniform()

        def tied(r):
            q = min(max(warmth + p.latent_spread * rng.standard_normal(), 0.0), 1.0)
            return r[0] + q * (r[1] - r[0])

        base = tied(p.base_level)
        morning = tied(p.morning_level) * np.exp(-0.5 * ((t - u(p.morning_center)) / 1.3) ** 2)
        pv = tied(p.pv_depth) * np.exp(-0.5 * ((t - 11.0) / 2.0) ** 2)
        # sustained evening plateau with a sharper bump on top
        plateau = (tied(p.plateau_level) * expit((t - u(p.plateau_rise)) / p.plateau_edge)
                   * expit((u(p.plateau_fall) - t) / p.plateau_edge))
        bump = tied(p.peak_amplitude) * np.exp(-0.5 * ((t - u(p.peak_center)) / u(p.peak_width)) ** 2)
        curve = base + morning - pv + plateau + bump * expit((20.2 - t) / 0.35)
        curve *= 1.0 + p.noise * rng.standard_normal(SLOTS)
        curve = np.maximum(curve, 0.0)
        # keep the maximum inside the window even after noise
        inside = curve[w_lo:w_hi].max()
        curve[:w_lo] = np.minimum(curve[:w_lo], 0.98 * inside)
        curve[w_hi:] = np.minimum(curve[w_hi:], 0.98 * inside)
        rows[d] = curve * (tied(p.peak_range_kw) / curve.max())
    start = np.datetime64(p.start)
    tags = tuple(str(start + np.timedelta64(d, "D")) for d in range(days))
    return Dataset(rows, tags, "synthetic", "kW")
