"""Two-split joint calibration and the Bonferroni baseline.

The joint (all-steps, both-directions) coverage target is met in two ways:

* shared-level search: marginal CDFs are estimated per timestep/direction on
  the first calibration split; on the second split, the smallest shared
  marginal level ``beta`` is found whose per-cell thresholds cover the
  required corrected fraction of records in every cell simultaneously. The
  search runs on the integer rank grid of the first split, so the result is
  exact and deterministic.
* Bonferroni: the miscoverage budget is divided across the 2 * T_f
  timestep/direction cells and each cell gets an independent corrected
  quantile.
"""

from __future__ import annotations

import enum
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    AlphaTooSmallForN,
    EmptyCalibration,
    FrenetCpError,
    HorizonMismatch,
    InfeasibleLevel,
    InsufficientData,
)
from .records import ScenarioClass, ScenarioRecord, group_by_scenario
from .scores import LAT, LON, QuantileVector, corrected_rank, score_matrix


class CalibrationMethod(enum.Enum):
    COPULA_SHARED = "copula"
    BONFERRONI = "bonferroni"

    @classmethod
    def parse(cls, name: str) -> "CalibrationMethod":
        for member in cls:
            if member.value == name:
                return member
        raise ValueError(f"unknown method {name!r}; expected 'copula' or 'bonferroni'")


@dataclass(frozen=True)
class CopulaLevel:
    """Shared per-cell marginal quantile level and the joint target it
    serves. For Bonferroni, beta is the per-cell level 1 - alpha/(2 T_f)."""

    beta: float
    alpha: float
    method: CalibrationMethod

    def __post_init__(self):
        if not (0.0 < self.beta <= 1.0):
            raise ValueError("beta must lie in (0, 1]")
        if not (0.0 < self.alpha < 1.0):
            raise ValueError("alpha must lie in (0, 1)")


@dataclass(frozen=True, eq=False)
class MarginalCdf:
    """Per (timestep, direction) sorted score sample with its empirical CDF."""

    sorted_scores: np.ndarray  # (n, T_f, 2), ascending along axis 0

    def __post_init__(self):
        scores = np.asarray(self.sorted_scores, dtype=float)
        if scores.ndim != 3 or scores.shape[2] != 2 or scores.shape[0] < 1:
            raise EmptyCalibration("marginal CDF needs an (n, T_f, 2) sample, n >= 1")
        object.__setattr__(self, "sorted_scores", scores)

    @property
    def n(self) -> int:
        return self.sorted_scores.shape[0]

    @property
    def horizon(self) -> int:
        return self.sorted_scores.shape[1]

    def cdf(self, x: float, t: int, direction: int) -> float:
        """Right-continuous empirical CDF: fraction of the sample <= x."""
        column = self.sorted_scores[:, t, direction]
        return float(np.searchsorted(column, x, side="right")) / self.n

    def inverse(self, beta: float, t: int, direction: int) -> float:
        """Smallest sample value whose CDF reaches beta (beta in (0, 1])."""
        if not (0.0 < beta <= 1.0):
            raise ValueError("beta must lie in (0, 1]")
        k = max(int(np.ceil(beta * self.n - 1e-9)), 1)
        return float(self.sorted_scores[k - 1, t, direction])

    def ranks(self, scores: np.ndarray) -> np.ndarray:
        """Per cell, the smallest rank k such that the k-th sorted sample
        value is >= the score; n+1 when the score exceeds the whole sample."""
        scores = np.asarray(scores, dtype=float)
        out = np.empty(scores.shape, dtype=np.int64)
        for t in range(self.horizon):
            for direction in (LON, LAT):
                column = self.sorted_scores[:, t, direction]
                out[:, t, direction] = (
                    np.searchsorted(column, scores[:, t, direction], side="left") + 1
                )
        return out

    def thresholds_at_rank(self, k: int) -> np.ndarray:
        return self.sorted_scores[k - 1]


@dataclass(frozen=True, eq=False)
class CalibrationResult:
    scenario: ScenarioClass | None
    quantiles: QuantileVector
    level: CopulaLevel
    n_d1: int
    n_d2: int
    dt: float

    @property
    def alpha(self) -> float:
        return self.level.alpha

    @property
    def method(self) -> CalibrationMethod:
        return self.level.method

    @property
    def horizon(self) -> int:
        return self.quantiles.horizon


def fit_marginals(d1_scores: np.ndarray) -> MarginalCdf:
    """Sort the first-split score matrix into per-cell empirical CDFs."""
    d1_scores = np.asarray(d1_scores, dtype=float)
    if d1_scores.size == 0:
        raise EmptyCalibration("first calibration split is empty")
    return MarginalCdf(np.sort(d1_scores, axis=0, kind="stable"))


def calibrate_copula_shared(
    marginals: MarginalCdf, d2_scores: np.ndarray, alpha: float
) -> tuple[CopulaLevel, QuantileVector]:
    """Smallest shared level covering the corrected fraction of the second
    split jointly across all cells; returns the level and its thresholds.

    A second-split record is covered at level beta when every one of its
    2 * T_f scores is at or below the beta-quantile of the matching marginal
    CDF. The required covered fraction is (1 - alpha)(1 + 1/n_d2).
    """
    d2_scores = np.asarray(d2_scores, dtype=float)
    if d2_scores.ndim != 3 or d2_scores.shape[0] < 1:
        raise InfeasibleLevel("second calibration split is empty")
    if d2_scores.shape[1] != marginals.horizon:
        raise HorizonMismatch(
            f"second split horizon {d2_scores.shape[1]} != marginal horizon "
            f"{marginals.horizon}"
        )
    n2 = d2_scores.shape[0]
    try:
        need = corrected_rank(alpha, n2)
    except AlphaTooSmallForN as exc:
        raise InfeasibleLevel(
            f"second split too small for alpha = {alpha}: {exc}"
        ) from None

    # smallest rank on the D1 grid covering each record in every cell at once
    record_rank = marginals.ranks(d2_scores).reshape(n2, -1).max(axis=1)
    k_star = int(np.sort(record_rank, kind="stable")[need - 1])
    if k_star > marginals.n:
        raise InfeasibleLevel(
            "even beta = 1 misses the corrected joint coverage on the second "
            f"split (need {need}/{n2} records within the first split's range)"
        )
    thresholds = marginals.thresholds_at_rank(k_star)
    level = CopulaLevel(
        beta=k_star / marginals.n, alpha=alpha, method=CalibrationMethod.COPULA_SHARED
    )
    quantiles = QuantileVector(
        q_s=thresholds[:, LON], q_d=thresholds[:, LAT], alpha=alpha, n=marginals.n
    )
    return level, quantiles


def calibrate_bonferroni(
    scores: np.ndarray,
    alpha: float,
    *,
    scenario: ScenarioClass | None = None,
    dt: float = 1.0,
    n_d1: int | None = None,
    n_d2: int = 0,
) -> CalibrationResult:
    """Independent corrected quantile per cell at level alpha / (2 T_f)."""
    scores = np.asarray(scores, dtype=float)
    if scores.ndim != 3 or scores.shape[2] != 2:
        raise ValueError("score matrix must have shape (n, T_f, 2)")
    n, horizon = scores.shape[0], scores.shape[1]
    cell_alpha = alpha / (2.0 * horizon)
    try:
        k = corrected_rank(cell_alpha, n)
    except AlphaTooSmallForN as exc:
        raise AlphaTooSmallForN(
            f"per-cell level alpha/(2*T_f) = {cell_alpha} over {2 * horizon} "
            f"timestep/direction cells: {exc}"
        ) from None
    ordered = np.sort(scores, axis=0, kind="stable")[k - 1]
    quantiles = QuantileVector(
        q_s=ordered[:, LON], q_d=ordered[:, LAT], alpha=alpha, n=n
    )
    level = CopulaLevel(
        beta=1.0 - cell_alpha, alpha=alpha, method=CalibrationMethod.BONFERRONI
    )
    return CalibrationResult(
        scenario=scenario,
        quantiles=quantiles,
        level=level,
        n_d1=n if n_d1 is None else n_d1,
        n_d2=n_d2,
        dt=dt,
    )


def _uniform_dt(records: Sequence[ScenarioRecord]) -> float:
    dt = records[0].forecast.dt
    for record in records:
        if record.forecast.dt != dt:
            raise HorizonMismatch(f"record {record.id}: dt {record.forecast.dt} != {dt}")
    return dt


def calibrate_scenario(
    calib_d1: Sequence[ScenarioRecord],
    calib_d2: Sequence[ScenarioRecord],
    alpha: float,
    method: CalibrationMethod,
) -> dict[ScenarioClass, CalibrationResult]:
    """One independent calibration per scenario class present in the splits.

    The copula path uses the two splits as estimation/calibration sets; the
    Bonferroni path pools them. Errors raised for one class are re-raised
    labeled with the class name.
    """
    by_class_d1 = group_by_scenario(calib_d1)
    by_class_d2 = group_by_scenario(calib_d2)
    results: dict[ScenarioClass, CalibrationResult] = {}
    for scenario in ScenarioClass:
        d1 = by_class_d1.get(scenario, [])
        d2 = by_class_d2.get(scenario, [])
        if not d1 and not d2:
            continue
        try:
            if not d1 or (method is CalibrationMethod.COPULA_SHARED and not d2):
                raise InsufficientData(
                    f"class needs records in both calibration splits, got "
                    f"{len(d1)}/{len(d2)}"
                )
            dt = _uniform_dt(d1 + d2)
            scores_d1 = score_matrix(d1)
            if method is CalibrationMethod.COPULA_SHARED:
                scores_d2 = score_matrix(d2)
                if scores_d2.shape[1] != scores_d1.shape[1]:
                    raise HorizonMismatch(
                        f"split horizons differ: {scores_d1.shape[1]} vs "
                        f"{scores_d2.shape[1]}"
                    )
                level, quantiles = calibrate_copula_shared(
                    fit_marginals(scores_d1), scores_d2, alpha
                )
                results[scenario] = CalibrationResult(
                    scenario=scenario,
                    quantiles=quantiles,
                    level=level,
                    n_d1=len(d1),
                    n_d2=len(d2),
                    dt=dt,
                )
            else:
                pooled = (
                    np.concatenate([scores_d1, score_matrix(d2)]) if d2 else scores_d1
                )
                results[scenario] = calibrate_bonferroni(
                    pooled, alpha, scenario=scenario, dt=dt, n_d1=len(d1), n_d2=len(d2)
                )
        except FrenetCpError as exc:
            raise type(exc)(f"{scenario.value}: {exc}") from None
    return results


def calibration_to_obj(result: CalibrationResult) -> dict:
    return {
        "scenario": result.scenario.value if result.scenario else None,
        "alpha": result.alpha,
        "method": result.method.value,
        "dt": result.dt,
        "q_s": result.quantiles.q_s.tolist(),
        "q_d": result.quantiles.q_d.tolist(),
        "n_d1": result.n_d1,
        "n_d2": result.n_d2,
        "beta": result.level.beta,
    }


def calibration_from_obj(obj: dict) -> CalibrationResult:
    method = CalibrationMethod.parse(obj["method"])
    level = CopulaLevel(beta=obj["beta"], alpha=obj["alpha"], method=method)
    quantiles = QuantileVector(
        q_s=obj["q_s"], q_d=obj["q_d"], alpha=obj["alpha"], n=obj["n_d1"]
    )
    scenario = ScenarioClass.parse(obj["scenario"]) if obj["scenario"] else None
    return CalibrationResult(
        scenario=scenario,
        quantiles=quantiles,
        level=level,
        n_d1=obj["n_d1"],
        n_d2=obj["n_d2"],
        dt=obj["dt"],
    )


def write_calibration(path: str | Path, result: CalibrationResult) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(
        json.dumps(calibration_to_obj(result), sort_keys=True) + "\n", encoding="utf-8"
    )
    os.replace(tmp, path)


def read_calibration(path: str | Path) -> CalibrationResult:
    with open(path, encoding="utf-8") as fh:
        return calibration_from_obj(json.load(fh))
