"""Min-over-modes L1 nonconformity scores and finite-sample quantiles.

Scores are kept per direction: longitudinal and lateral absolute errors are
minimized over the forecast modes independently, so the two minima at one
timestep may come from different modes. A score matrix stacks records into
shape (n, T_f, 2) with axis 2 ordered (s, d).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import AlphaTooSmallForN, HorizonMismatch
from .records import ScenarioRecord

LON = 0
LAT = 1

_CEIL_TOLERANCE = 1e-9


@dataclass(frozen=True, eq=False)
class QuantileVector:
    """Per-timestep longitudinal/lateral quantile half-widths."""

    q_s: np.ndarray
    q_d: np.ndarray
    alpha: float
    n: int

    def __post_init__(self):
        object.__setattr__(self, "q_s", np.asarray(self.q_s, dtype=float))
        object.__setattr__(self, "q_d", np.asarray(self.q_d, dtype=float))
        if self.q_s.shape != self.q_d.shape or self.q_s.ndim != 1:
            raise ValueError("q_s and q_d must be 1-D arrays of equal length")
        if np.any(self.q_s < 0) or np.any(self.q_d < 0):
            raise ValueError("quantile entries must be nonnegative")

    @property
    def horizon(self) -> int:
        return self.q_s.shape[0]


def corrected_rank(alpha: float, n: int) -> int:
    """Rank k = ceil((1 - alpha)(n + 1)) of the finite-sample-corrected
    quantile; raises AlphaTooSmallForN when k exceeds the sample size."""
    if not (0.0 < alpha < 1.0):
        raise ValueError("alpha must lie in (0, 1)")
    if n < 1:
        raise AlphaTooSmallForN("empty score sample")
    k = math.ceil((1.0 - alpha) * (n + 1) - _CEIL_TOLERANCE)
    if k > n:
        raise AlphaTooSmallForN(
            f"rank ceil((1-alpha)(n+1)) = {k} exceeds n = {n}; "
            "more calibration data is required for this alpha"
        )
    return k


def score(record: ScenarioRecord) -> np.ndarray:
    """Per-timestep (L1_s, L1_d): min over modes of the absolute error in
    each direction independently. Shape (T_f, 2)."""
    return np.abs(record.forecast.modes - record.truth[None]).min(axis=0)


def score_matrix(records: Sequence[ScenarioRecord]) -> np.ndarray:
    """Stack per-record scores into shape (n, T_f, 2); horizons must agree."""
    if not records:
        return np.empty((0, 0, 2))
    horizon = records[0].forecast.horizon
    for record in records:
        if record.forecast.horizon != horizon:
            raise HorizonMismatch(
                f"record {record.id}: horizon {record.forecast.horizon} != {horizon}"
            )
    return np.stack([score(r) for r in records])


def quantile(scores, alpha: float) -> float:
    """k-th smallest score with k = ceil((1-alpha)(n+1)): the empirical
    quantile at level (1-alpha)(1+1/n) under the 'higher' convention."""
    values = np.asarray(scores, dtype=float).ravel()
    k = corrected_rank(alpha, values.shape[0])
    return float(np.sort(values, kind="stable")[k - 1])


def quantile_vector(scores: np.ndarray, alpha: float) -> QuantileVector:
    """Column-wise corrected quantile of an (n, T_f, 2) score matrix."""
    scores = np.asarray(scores, dtype=float)
    if scores.ndim != 3 or scores.shape[2] != 2:
        raise ValueError("score matrix must have shape (n, T_f, 2)")
    n, horizon = scores.shape[0], scores.shape[1]
    try:
        k = corrected_rank(alpha, n)
    except AlphaTooSmallForN as exc:
        raise AlphaTooSmallForN(f"{exc} (every timestep/direction affected)") from None
    ordered = np.sort(scores, axis=0, kind="stable")
    q = ordered[k - 1]
    return QuantileVector(q_s=q[:, LON], q_d=q[:, LAT], alpha=alpha, n=n)
