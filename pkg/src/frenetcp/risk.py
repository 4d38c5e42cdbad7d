"""Logistic joint risk over interval widths and the critical-point rule.

Risk at one step is the larger of two logistic curves driven by the
longitudinal and lateral interval half-widths; the critical point is the
first step whose risk exceeds the threshold, after which the remainder of
the horizon counts as unreliable. The joint critical point is the earlier
of the two directional ones.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .calibration import CalibrationResult
from .records import ScenarioClass


class BoundSource(enum.Enum):
    CALIBRATED = "calibrated"
    RM_PREDICTED = "rm"


@dataclass(frozen=True)
class RiskConfig:
    c_s: float = 1.0
    c_d: float = 1.0
    threshold_r: float = 0.8
    input_source: BoundSource = BoundSource.CALIBRATED

    def __post_init__(self):
        if not (self.c_s > 0 and self.c_d > 0):
            raise ValueError("sensitivity parameters must be positive")
        if not (0.0 < self.threshold_r < 1.0):
            raise ValueError("risk threshold must lie in (0, 1)")


@dataclass(frozen=True, eq=False)
class CriticalPointReport:
    scenario: ScenarioClass | None
    alpha: float
    critical_t_s: float | None
    critical_t_d: float | None
    critical_t_joint: float | None
    risk_series: np.ndarray = field(repr=False)


def logistic_risk(width, c: float):
    """1 / (1 + c e^-width); strictly increasing in width, in (0, 1)."""
    return 1.0 / (1.0 + c * np.exp(-np.asarray(width, dtype=float)))


def risk_at(s_width: float, d_width: float, cfg: RiskConfig) -> float:
    """Joint risk of one step: the larger directional logistic risk."""
    if s_width < 0 or d_width < 0:
        raise ValueError("interval widths must be nonnegative")
    return float(
        max(logistic_risk(s_width, cfg.c_s), logistic_risk(d_width, cfg.c_d))
    )


def directional_critical_point(widths, c: float, r: float, dt: float) -> float | None:
    """First step whose risk exceeds r, in seconds; None when the whole
    horizon stays at or below the threshold."""
    risks = logistic_risk(np.asarray(widths, dtype=float), c)
    above = np.nonzero(risks > r)[0]
    if above.size == 0:
        return None
    return float(above[0] * dt)


def critical_point(
    cal: CalibrationResult,
    cfg: RiskConfig,
    rm_bounds: tuple[np.ndarray, np.ndarray] | None = None,
) -> CriticalPointReport:
    """Directional and joint critical points of a calibration's widths.

    With input_source RM_PREDICTED, the per-step bounds predicted by the
    reliability curves must be supplied as (bounds_s, bounds_d).
    """
    if cfg.input_source is BoundSource.RM_PREDICTED:
        if rm_bounds is None:
            raise ValueError("RM-predicted source requires rm_bounds=(s, d) arrays")
        widths_s = np.asarray(rm_bounds[0], dtype=float)
        widths_d = np.asarray(rm_bounds[1], dtype=float)
        if widths_s.shape != (cal.horizon,) or widths_d.shape != (cal.horizon,):
            raise ValueError("rm_bounds must match the calibration horizon")
    else:
        widths_s = cal.quantiles.q_s
        widths_d = cal.quantiles.q_d

    t_s = directional_critical_point(widths_s, cfg.c_s, cfg.threshold_r, cal.dt)
    t_d = directional_critical_point(widths_d, cfg.c_d, cfg.threshold_r, cal.dt)
    if t_s is None and t_d is None:
        t_joint = None
    else:
        t_joint = min(t for t in (t_s, t_d) if t is not None)
    risk_series = np.maximum(
        logistic_risk(widths_s, cfg.c_s), logistic_risk(widths_d, cfg.c_d)
    )
    return CriticalPointReport(
        scenario=cal.scenario,
        alpha=cal.alpha,
        critical_t_s=t_s,
        critical_t_d=t_d,
        critical_t_joint=t_joint,
        risk_series=risk_series,
    )
