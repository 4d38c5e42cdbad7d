"""Interval bands around forecasts and the two evaluation metrics.

A band is an axis-aligned rectangle in Frenet space per mode and step:
center at the forecast point, half-widths from the calibrated quantiles.
Joint coverage asks for a single mode whose rectangles contain the truth at
every step; average area is the mean rectangle area.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .calibration import CalibrationResult
from .errors import EmptyTestSet, HorizonMismatch
from .records import MultimodalForecast, ScenarioClass, ScenarioRecord


@dataclass(frozen=True, eq=False)
class IntervalBand:
    """K x T_f rectangles: centers (K, T_f, 2) with shared per-step
    half-widths half_s/half_d of length T_f."""

    centers: np.ndarray
    half_s: np.ndarray
    half_d: np.ndarray

    def bounds(self, mode: int, t: int) -> tuple[float, float, float, float]:
        """(s_lo, s_hi, d_lo, d_hi) of one rectangle."""
        s, d = self.centers[mode, t]
        return (
            float(s - self.half_s[t]),
            float(s + self.half_s[t]),
            float(d - self.half_d[t]),
            float(d + self.half_d[t]),
        )

    @property
    def n_modes(self) -> int:
        return self.centers.shape[0]

    @property
    def horizon(self) -> int:
        return self.centers.shape[1]


@dataclass(frozen=True)
class MetricsReport:
    scenario: ScenarioClass | None
    alpha: float
    method: str
    avg_area_size: float
    joint_coverage: float
    n_test: int


def build_band(forecast: MultimodalForecast, cal: CalibrationResult) -> IntervalBand:
    if forecast.horizon != cal.horizon:
        raise HorizonMismatch(
            f"forecast horizon {forecast.horizon} != calibration horizon {cal.horizon}"
        )
    return IntervalBand(
        centers=forecast.modes.copy(),
        half_s=cal.quantiles.q_s.copy(),
        half_d=cal.quantiles.q_d.copy(),
    )


def joint_coverage(records: Sequence[ScenarioRecord], cal: CalibrationResult) -> float:
    """Fraction of records with some single mode inside the band at every
    step, in both directions."""
    if not records:
        raise EmptyTestSet("coverage needs at least one record")
    if cal.scenario is not None:
        for record in records:
            if record.scenario is not cal.scenario:
                raise ValueError(
                    f"record {record.id} is {record.scenario.value}, calibration "
                    f"is {cal.scenario.value}"
                )
    horizon = cal.horizon
    q_s, q_d = cal.quantiles.q_s, cal.quantiles.q_d
    covered = 0
    for record in records:
        if record.forecast.horizon != horizon:
            raise HorizonMismatch(
                f"record {record.id}: horizon {record.forecast.horizon} != {horizon}"
            )
        err = np.abs(record.forecast.modes - record.truth[None])
        ok = (err[..., 0] <= q_s) & (err[..., 1] <= q_d)  # (K, T_f)
        covered += bool(ok.all(axis=1).any())
    return covered / len(records)


def avg_area_size(cal: CalibrationResult, k_modes: int = 1) -> float:
    """Mean over steps of the rectangle area (2 q_s)(2 q_d); identical for
    every mode since the half-widths are shared, so the mode average is a
    recorded no-op."""
    if k_modes < 1:
        raise ValueError("k_modes must be >= 1")
    areas = 4.0 * cal.quantiles.q_s * cal.quantiles.q_d
    return float(np.mean(areas))


def evaluate(records: Sequence[ScenarioRecord], cal: CalibrationResult) -> MetricsReport:
    k_modes = records[0].forecast.n_modes if records else 1
    return MetricsReport(
        scenario=cal.scenario,
        alpha=cal.alpha,
        method=cal.method.value,
        avg_area_size=avg_area_size(cal, k_modes),
        joint_coverage=joint_coverage(records, cal),
        n_test=len(records),
    )
