"""Battery peak-shaving dispatch.

Four discharge-only strategies over a peak window, for a battery that is
full when the window opens:

* full output: cover the whole load until the battery is empty;
* threshold: cover the load above a fixed threshold;
* constant output: a flat discharge sized to last the whole window;
* ideal: follow a forecast so the residual load is flat at a level ``F``.
"""

from __future__ import annotations

import io
import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .curves import SLOT_HOURS, SLOTS, DailyCurve
from .errors import ConfigError, DataError, DegenerateLoad, NumericalError


@dataclass(frozen=True)
class BessConfig:
    capacity_kwh: float = 500.0
    power_limit_kw: float | None = None
    initial_soc: float = 1.0
    slot_hours: float = SLOT_HOURS

    def __post_init__(self):
        if not self.capacity_kwh >= 0 or not math.isfinite(self.capacity_kwh):
            raise ConfigError("capacity_kwh must be finite and >= 0")
        if not 0.0 <= self.initial_soc <= 1.0:
            raise ConfigError("initial_soc must lie in [0, 1]")
        if self.power_limit_kw is not None and not self.power_limit_kw >= 0:
            raise ConfigError("power_limit_kw must be >= 0")
        if not self.slot_hours > 0:
            raise ConfigError("slot_hours must be positive")

    @property
    def usable_kwh(self) -> float:
        return self.capacity_kwh * self.initial_soc


@dataclass(frozen=True)
class PeakWindow:
    """1-based inclusive slot range; the default 29..40 is 14:00-20:00."""

    start_slot: int = 29
    end_slot: int = 40

    def __post_init__(self):
        if not 1 <= self.start_slot <= self.end_slot <= SLOTS:
            raise ConfigError(f"peak window {self.start_slot}-{self.end_slot} outside 1..{SLOTS}")

    @property
    def slice(self) -> slice:
        return slice(self.start_slot - 1, self.end_slot)

    @property
    def n_slots(self) -> int:
        return self.end_slot - self.start_slot + 1

    def hours(self, slot_hours: float = SLOT_HOURS) -> float:
        return self.n_slots * slot_hours


@dataclass(frozen=True)
class DispatchResult:
    discharge_kw: np.ndarray
    residual_kw: np.ndarray
    energy_used_kwh: float
    residual_peak_kw: float
    shaving_level_pct: float
    flat_level_kw: float | None = None


def _load_array(load) -> np.ndarray:
    v = load.values if isinstance(load, DailyCurve) else np.asarray(load, dtype=float)
    if v.shape != (SLOTS,):
        raise DataError(f"load must have {SLOTS} slots, got shape {v.shape}")
    if not np.all(np.isfinite(v)) or np.any(v < 0):
        raise DataError("load must be finite and non-negative")
    return v


def shaving_level(load, result: DispatchResult | np.ndarray) -> float:
    """Percentage reduction of the daily peak: 100 * (peak - residual peak) / peak."""
    v = _load_array(load)
    peak = float(v.max())
    if peak <= 0:
        raise DegenerateLoad("load has zero peak")
    residual = result.residual_kw if isinstance(result, DispatchResult) else np.asarray(result)
    return 100.0 * (peak - float(residual.max())) / peak


def _apply(load: np.ndarray, requested: np.ndarray, bess: BessConfig, window: PeakWindow,
           flat_level: float | None = None) -> DispatchResult:
    """Walk the window slot by slot, clipping each request to the load, the
    power limit and the energy left; the exhaustion slot gets the exact remainder."""
    h = bess.slot_hours
    remaining = bess.usable_kwh
    discharge = np.zeros(SLOTS)
    for t in range(window.start_slot - 1, window.end_slot):
        want = min(max(float(requested[t]), 0.0), float(load[t]))
        if bess.power_limit_kw is not None:
            want = min(want, bess.power_limit_kw)
        d = min(want, remaining / h)
        discharge[t] = d
        remaining = max(remaining - d * h, 0.0)
    residual = load - discharge
    used = float(discharge.sum() * h)
    return DispatchResult(discharge, residual, used, float(residual.max()),
                          shaving_level(load, residual), flat_level)


def dispatch_full_output(load, bess: BessConfig = BessConfig(),
                         window: PeakWindow = PeakWindow()) -> DispatchResult:
    v = _load_array(load)
    return _apply(v, v, bess, window)


def dispatch_threshold(load, bess: BessConfig = BessConfig(), window: PeakWindow = PeakWindow(),
                       threshold_kw: float = 150.0) -> DispatchResult:
    if not threshold_kw >= 0:
        raise ConfigError("threshold must be >= 0")
    v = _load_array(load)
    return _apply(v, np.maximum(v - threshold_kw, 0.0), bess, window)


def constant_output_kw(bess: BessConfig, window: PeakWindow) -> float:
    return bess.usable_kwh / window.hours(bess.slot_hours)


def dispatch_constant(load, bess: BessConfig = BessConfig(),
                      window: PeakWindow = PeakWindow()) -> DispatchResult:
    v = _load_array(load)
    return _apply(v, np.full(SLOTS, constant_output_kw(bess, window)), bess, window)


def window_energy(values: np.ndarray, level: float, slot_hours: float) -> float:
    return float(np.maximum(values - level, 0.0).sum() * slot_hours)


def flat_level(forecast_window: np.ndarray, energy_kwh: float, slot_hours: float = SLOT_HOURS,
               tol_kwh: float = 1e-9, max_iter: int = 200) -> float:
    """Bisection for the level ``F`` whose shaved area equals the energy budget.

    Returns 0 when the budget covers the whole window.
    """
    f = np.asarray(forecast_window, dtype=float)
    top = float(f.max())
    if energy_kwh <= 0:
        return top
    if window_energy(f, 0.0, slot_hours) <= energy_kwh:
        return 0.0
    lo, hi = 0.0, top
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        e = window_energy(f, mid, slot_hours)
        if abs(e - energy_kwh) <= tol_kwh:
            return mid
        if e > energy_kwh:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 4 * np.finfo(float).eps * max(1.0, hi):
            return 0.5 * (lo + hi)
    raise NumericalError(f"flat-level bisection did not converge in {max_iter} iterations")


def dispatch_ideal(load_true, forecast, bess: BessConfig = BessConfig(),
                   window: PeakWindow = PeakWindow(), tol_kwh: float = 1e-9,
                   max_iter: int = 200) -> DispatchResult:
    """Schedule from the forecast (open loop), then apply it to the true load."""
    v = _load_array(load_true)
    fc = _load_array(forecast)
    level = flat_level(fc[window.slice], bess.usable_kwh, bess.slot_hours, tol_kwh, max_iter)
    return _apply(v, np.maximum(fc - level, 0.0), bess, window, level)


# ---------------------------------------------------------------------------
# reports

STRATEGIES = ("A", "B", "C", "D")


def simulate_day(load, forecast, bess: BessConfig = BessConfig(), window: PeakWindow = PeakWindow(),
                 threshold_kw: float = 150.0) -> dict[str, DispatchResult]:
    return {
        "A": dispatch_full_output(load, bess, window),
        "B": dispatch_threshold(load, bess, window, threshold_kw),
        "C": dispatch_constant(load, bess, window),
        "D": dispatch_ideal(load, forecast, bess, window),
    }


@dataclass(frozen=True)
class DayReport:
    day: str
    peak_kw: float
    levels: dict


def simulate_days(loads: np.ndarray, forecasts: np.ndarray, tags: Sequence[str],
                  bess: BessConfig = BessConfig(), window: PeakWindow = PeakWindow(),
                  threshold_kw: float = 150.0) -> list[DayReport]:
    if len(loads) != len(forecasts) or len(loads) != len(tags):
        raise DataError("loads, forecasts and tags must have equal length")
    out = []
    for tag, load, fc in zip(tags, loads, forecasts):
        res = simulate_day(load, fc, bess, window, threshold_kw)
        out.append(DayReport(tag, float(np.max(load)),
                             {k: r.shaving_level_pct for k, r in res.items()}))
    return out


def dispatch_report_csv(rows: Sequence[DayReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["day", "peak_kw"] + [f"level_{s}" for s in STRATEGIES])
    for r in rows:
        w.writerow([r.day, repr(r.peak_kw)] + [repr(r.levels[s]) for s in STRATEGIES])
    return buf.getvalue()


def schedule_csv(load, forecast, result: DispatchResult) -> str:
    v, fc = _load_array(load), _load_array(forecast)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["slot", "load_kw", "forecast_kw", "discharge_kw", "residual_kw"])
    for t in range(SLOTS):
        w.writerow([t + 1, repr(float(v[t])), repr(float(fc[t])),
                    repr(float(result.discharge_kw[t])), repr(float(result.residual_kw[t]))])
    return buf.getvalue()
