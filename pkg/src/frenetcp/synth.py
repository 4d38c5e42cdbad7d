"""Seeded synthetic scenario records with controllable error structure.

Each scenario class has a fixed route template (straight, lateral-sigmoid,
quarter arc, long arc); the ground truth advances along the template at
constant speed and every forecast mode is the truth plus structured noise.
Per-step noise grows geometrically and can be independent, comonotone, or
AR(1) across steps, so coverage and efficiency claims can be checked against
analytic expectations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import ReferenceRoute
from .records import MultimodalForecast, ScenarioClass, ScenarioRecord

SPEED = 8.0  # m/s along the route
LANE_WIDTH = 3.5  # m, lateral sigmoid amplitude of the lane-change route
LANE_COMMIT_JUMP = 1.5  # lane change only: lateral deviations gain this many
# extra sigmas (toward their own side) once the maneuver onset is passed

DEPENDENCE_KINDS = ("independent", "comonotone", "ar1")


@dataclass(frozen=True)
class SynthConfig:
    scenario: ScenarioClass
    n_records: int
    n_modes: int = 6
    horizon: int = 8
    dt: float = 0.5
    noise_scale_s: float = 0.5
    noise_scale_d: float = 0.2
    error_growth: float = 1.0
    dependence: str = "independent"
    rho: float = 0.0
    wrong_intent_offset: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_records < 1 or self.n_modes < 1 or self.horizon < 1:
            raise ValueError("counts must be positive")
        if not (self.dt > 0):
            raise ValueError("dt must be positive")
        if self.noise_scale_s < 0 or self.noise_scale_d < 0:
            raise ValueError("noise scales must be nonnegative")
        if self.error_growth < 1.0:
            raise ValueError("error_growth must be >= 1")
        if self.dependence not in DEPENDENCE_KINDS:
            raise ValueError(f"dependence must be one of {DEPENDENCE_KINDS}")
        if self.dependence == "ar1" and not (0.0 <= self.rho < 1.0):
            raise ValueError("ar1 rho must lie in [0, 1)")


def _route_template(scenario: ScenarioClass, length: float) -> ReferenceRoute:
    if scenario is ScenarioClass.NORMAL_DRIVING:
        return ReferenceRoute.from_points([(0.0, 0.0), (length, 0.0)])
    if scenario is ScenarioClass.LANE_CHANGE:
        x = np.linspace(0.0, length, max(int(length / 2.0), 8) + 1)
        y = LANE_WIDTH / (1.0 + np.exp(-(x - length / 2.0) / (length / 12.0)))
        return ReferenceRoute.from_points(np.stack([x, y], axis=1))
    if scenario is ScenarioClass.INTERSECTION:
        sweep = math.pi / 2.0
    else:  # roundabout
        sweep = 1.5 * math.pi
    # inflate the radius so the polyline chord length still covers `length`
    radius = 1.02 * length / sweep
    phi = np.linspace(0.0, sweep, 97)
    pts = np.stack([radius * np.sin(phi), radius * (1.0 - np.cos(phi))], axis=1)
    return ReferenceRoute.from_points(pts)


def _standardized_noise(rng: np.random.Generator, cfg: SynthConfig) -> np.ndarray:
    """Unit-variance noise of shape (n, K, T_f, 2) with the configured
    cross-step dependence."""
    shape = (cfg.n_records, cfg.n_modes, cfg.horizon, 2)
    if cfg.dependence == "independent":
        return rng.standard_normal(shape)
    if cfg.dependence == "comonotone":
        z = rng.standard_normal((cfg.n_records, cfg.n_modes, 1, 1))
        return np.broadcast_to(z, shape).copy()
    nu = rng.standard_normal(shape)
    u = np.empty(shape)
    u[:, :, 0] = nu[:, :, 0]
    scale = math.sqrt(1.0 - cfg.rho**2)
    for t in range(1, cfg.horizon):
        u[:, :, t] = cfg.rho * u[:, :, t - 1] + scale * nu[:, :, t]
    return u


def generate(cfg: SynthConfig) -> list[ScenarioRecord]:
    """Generate records deterministically from the seed.

    The ground truth is shared by all records of a config; modes add
    per-step noise with standard deviation scale * growth^t. For lane
    changes, lateral deviations past the maneuver midpoint gain a commit
    jump of LANE_COMMIT_JUMP sigmas toward their own side, which changes
    the deviation-to-bound relation there and gives the class its
    two-regime error profile. A positive ``wrong_intent_offset`` applies a
    lateral intent-error ramp to every record of any class without
    consuming extra random draws, so paired configs stay comparable draw
    for draw.
    """
    rng = np.random.default_rng(cfg.seed)
    steps = np.arange(cfg.horizon)
    sigma_s = cfg.noise_scale_s * cfg.error_growth**steps
    sigma_d = cfg.noise_scale_d * cfg.error_growth**steps

    margin = 6.0 * max(sigma_s.max(), cfg.noise_scale_s) + 2.0
    span = SPEED * cfg.dt * cfg.horizon
    route = _route_template(cfg.scenario, margin + span + margin)
    s0 = margin

    truth = np.zeros((cfg.horizon, 2))
    truth[:, 0] = s0 + SPEED * cfg.dt * (steps + 1)

    noise = _standardized_noise(rng, cfg)
    if cfg.scenario is ScenarioClass.LANE_CHANGE:
        onset = cfg.horizon // 2
        lateral = noise[..., onset:, 1]
        lateral += LANE_COMMIT_JUMP * np.sign(lateral)

    modes = np.empty((cfg.n_records, cfg.n_modes, cfg.horizon, 2))
    modes[..., 0] = truth[:, 0] + noise[..., 0] * sigma_s
    modes[..., 1] = truth[:, 1] + noise[..., 1] * sigma_d

    if cfg.wrong_intent_offset > 0.0:
        ramp = cfg.wrong_intent_offset * (steps + 1) / cfg.horizon
        modes[..., 1] += ramp

    np.clip(modes[..., 0], 0.0, route.length, out=modes[..., 0])

    prefix = cfg.scenario.value.lower()
    records = []
    for i in range(cfg.n_records):
        forecast = MultimodalForecast(modes[i], cfg.dt)
        records.append(
            ScenarioRecord(
                id=f"{prefix}-{cfg.seed}-{i:05d}",
                scenario=cfg.scenario,
                route=route,
                forecast=forecast,
                truth=truth,
                agent_id="a0",
            )
        )
    return records
