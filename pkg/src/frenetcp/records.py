"""Scenario record schema, line-delimited IO, and calibration/test splits.

One record = one agent in one scenario: a reference route, a K-mode
forecast over T_f steps, and the matching ground truth, all in Frenet
coordinates once loaded. Files are line-delimited JSON; records may arrive
pre-projected (``frame: "frenet"``) or as planar points plus a route
(``frame: "planar"``), in which case they are projected on load.
"""

from __future__ import annotations

import enum
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DegenerateRoute, GeometryError, InsufficientData, SchemaError
from .geometry import ReferenceRoute, project_trajectory


class ScenarioClass(enum.Enum):
    LANE_CHANGE = "LaneChange"
    INTERSECTION = "Intersection"
    ROUNDABOUT = "Roundabout"
    NORMAL_DRIVING = "NormalDriving"

    @classmethod
    def parse(cls, name: str) -> "ScenarioClass":
        for member in cls:
            if member.value == name:
                return member
        allowed = ", ".join(m.value for m in cls)
        raise ValueError(f"unknown scenario {name!r}; expected one of: {allowed}")


@dataclass(eq=False)
class MultimodalForecast:
    """K x T_f x 2 grid of (s, d) points plus the step size in seconds."""

    modes: np.ndarray
    dt: float

    def __post_init__(self):
        self.modes = np.asarray(self.modes, dtype=float)
        if self.modes.ndim != 3 or self.modes.shape[2] != 2:
            raise ValueError("modes must have shape (K, T_f, 2)")
        if self.modes.shape[0] < 1 or self.modes.shape[1] < 1:
            raise ValueError("forecast needs K >= 1 modes and T_f >= 1 steps")
        if not np.all(np.isfinite(self.modes)):
            raise ValueError("forecast points must be finite")
        if not (self.dt > 0):
            raise ValueError("dt must be positive")

    @property
    def n_modes(self) -> int:
        return self.modes.shape[0]

    @property
    def horizon(self) -> int:
        return self.modes.shape[1]


@dataclass(eq=False)
class ScenarioRecord:
    id: str
    scenario: ScenarioClass
    route: ReferenceRoute
    forecast: MultimodalForecast
    truth: np.ndarray  # (T_f, 2) rows of (s, d)
    agent_id: str = ""

    def __post_init__(self):
        self.truth = np.asarray(self.truth, dtype=float)
        if self.truth.shape != (self.forecast.horizon, 2):
            raise ValueError(
                f"record {self.id}: truth length {self.truth.shape[0]} != "
                f"forecast horizon {self.forecast.horizon}"
            )
        if not np.all(np.isfinite(self.truth)):
            raise ValueError(f"record {self.id}: truth points must be finite")


@dataclass(frozen=True)
class SplitConfig:
    calib_fraction: float
    d1_fraction: float
    seed: int

    def __post_init__(self):
        if not (0.0 < self.calib_fraction < 1.0 and 0.0 < self.d1_fraction < 1.0):
            raise ValueError("split fractions must lie in (0, 1)")


_REQUIRED_FIELDS = ("id", "scenario", "dt", "route", "modes", "truth", "frame")


def _record_from_obj(obj: dict, line: int) -> ScenarioRecord:
    for key in _REQUIRED_FIELDS:
        if key not in obj:
            raise SchemaError(f"missing field {key!r}", line)
    rec_id = obj["id"]
    if not isinstance(rec_id, str):
        raise SchemaError("field 'id' must be a string", line)
    try:
        scenario = ScenarioClass.parse(obj["scenario"])
    except ValueError as exc:
        raise SchemaError(f"record {rec_id}: {exc}", line) from None
    frame = obj["frame"]
    if frame not in ("frenet", "planar"):
        raise SchemaError(f"record {rec_id}: frame must be 'frenet' or 'planar'", line)

    try:
        route = ReferenceRoute.from_points(obj["route"])
    except DegenerateRoute as exc:
        raise GeometryError(f"record {rec_id}: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"record {rec_id}: malformed route: {exc}", line) from None

    try:
        modes = np.asarray(obj["modes"], dtype=float)
        truth = np.asarray(obj["truth"], dtype=float)
        dt = float(obj["dt"])
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"record {rec_id}: malformed numeric field: {exc}", line) from None
    if modes.ndim != 3 or modes.shape[2] != 2:
        raise SchemaError(f"record {rec_id}: modes must be K lists of T_f pairs", line)
    if truth.ndim != 2 or truth.shape[1] != 2:
        raise SchemaError(f"record {rec_id}: truth must be a list of pairs", line)
    if truth.shape[0] != modes.shape[1]:
        raise SchemaError(
            f"record {rec_id}: truth length {truth.shape[0]} != forecast horizon "
            f"{modes.shape[1]}",
            line,
        )

    if frame == "planar":
        modes = np.stack([project_trajectory(route, m) for m in modes])
        truth = project_trajectory(route, truth)

    try:
        forecast = MultimodalForecast(modes, dt)
        return ScenarioRecord(
            id=rec_id,
            scenario=scenario,
            route=route,
            forecast=forecast,
            truth=truth,
            agent_id=str(obj.get("agent_id", "")),
        )
    except ValueError as exc:
        raise SchemaError(str(exc), line) from None


def load_records(path: str | Path) -> list[ScenarioRecord]:
    """Load and validate a line-delimited record file, in file order."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON: {exc.msg}", line_no) from None
            if not isinstance(obj, dict):
                raise SchemaError("each line must be a JSON object", line_no)
            records.append(_record_from_obj(obj, line_no))
    return records


def record_to_obj(record: ScenarioRecord) -> dict:
    return {
        "id": record.id,
        "scenario": record.scenario.value,
        "dt": record.forecast.dt,
        "route": record.route.vertices.tolist(),
        "modes": record.forecast.modes.tolist(),
        "truth": record.truth.tolist(),
        "frame": "frenet",
        "agent_id": record.agent_id,
    }


def write_records(path: str | Path, records: Sequence[ScenarioRecord]) -> None:
    """Write records as line-delimited JSON (always in the frenet frame).
    The write is whole-file atomic (temp file then rename)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record_to_obj(record), sort_keys=True))
            fh.write("\n")
    os.replace(tmp, path)


def split(
    records: Sequence[ScenarioRecord], cfg: SplitConfig
) -> tuple[list[ScenarioRecord], list[ScenarioRecord], list[ScenarioRecord]]:
    """Stratified (calib D1, calib D2, test) partition.

    Each scenario class is shuffled deterministically by the seed, then cut
    by flooring the fractional counts; the remainder lands in the last
    bucket. Raises InsufficientData when a class cannot populate all three
    buckets.
    """
    rng = np.random.default_rng(cfg.seed)
    d1: list[ScenarioRecord] = []
    d2: list[ScenarioRecord] = []
    test: list[ScenarioRecord] = []
    for scenario in ScenarioClass:
        members = [r for r in records if r.scenario is scenario]
        if not members:
            continue
        order = rng.permutation(len(members))
        shuffled = [members[i] for i in order]
        n_calib = int(np.floor(cfg.calib_fraction * len(members)))
        n_d1 = int(np.floor(cfg.d1_fraction * n_calib))
        n_d2 = n_calib - n_d1
        n_test = len(members) - n_calib
        if min(n_d1, n_d2, n_test) < 1:
            raise InsufficientData(
                f"scenario {scenario.value}: {len(members)} records cannot fill "
                f"D1/D2/test buckets ({n_d1}/{n_d2}/{n_test})"
            )
        d1.extend(shuffled[:n_d1])
        d2.extend(shuffled[n_d1:n_calib])
        test.extend(shuffled[n_calib:])
    return d1, d2, test


def group_by_scenario(
    records: Sequence[ScenarioRecord],
) -> dict[ScenarioClass, list[ScenarioRecord]]:
    grouped: dict[ScenarioClass, list[ScenarioRecord]] = {}
    for record in records:
        grouped.setdefault(record.scenario, []).append(record)
    return grouped
