"""Scenario reliability curves: deviation profile -> calibrated bound.

The curve family is a sum of a cubic polynomial P, an exponential E, and a
sigmoid-derivative bump SD; which terms are active depends on the scenario
(and, for lane changes, on the maneuver segment). Fitting is damped
Gauss-Newton least squares with analytic Jacobians.
"""

from __future__ import annotations

import json
import os
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .calibration import CalibrationResult
from .errors import EmptySet, FitDiverged, HorizonMismatch, InsufficientPoints
from .records import ScenarioClass, ScenarioRecord
from .scores import LAT, LON, score_matrix

TERM_P = "P"
TERM_E = "E"
TERM_SD = "SD"

SEGMENT_WHOLE = "whole"
SEGMENT_LC1 = "LaneChange1"
SEGMENT_LC2 = "LaneChange2"

_EXP_CLAMP = 700.0
_PARAMS_BY_TERM = {TERM_P: ("a", "b", "c", "d"), TERM_E: ("f", "g", "h"), TERM_SD: ("k", "m", "z")}
_MAX_ITER = 200
_REL_TOL = 1e-10
_Z_FLOOR = 1e-8


class ExpClampWarning(UserWarning):
    """An exponential argument exceeded the overflow guard and was clamped."""


class ExtrapolationWarning(UserWarning):
    """Model evaluated outside its fitted domain; boundary value returned."""


class DegeneratePairsWarning(UserWarning):
    """Training pairs have zero spread on the deviation axis."""


def default_terms(scenario: ScenarioClass, segment: str = SEGMENT_WHOLE) -> tuple[str, ...]:
    if scenario is ScenarioClass.LANE_CHANGE:
        if segment == SEGMENT_LC1:
            return (TERM_P, TERM_SD, TERM_E)
        if segment == SEGMENT_LC2:
            return (TERM_P, TERM_SD)
        raise ValueError("lane change models are fitted per segment")
    if scenario is ScenarioClass.NORMAL_DRIVING:
        return (TERM_P, TERM_SD)
    return (TERM_P, TERM_E)  # intersection, roundabout


@dataclass(frozen=True)
class ReliabilityCoefficients:
    a: float = 0.0
    b: float = 0.0
    c: float = 0.0
    d: float = 0.0
    f: float = 0.0
    g: float = 0.0
    h: float = 0.0
    k: float = 0.0
    m: float = 0.0
    z: float = 0.0
    active_terms: tuple[str, ...] = (TERM_P,)

    def __post_init__(self):
        unknown = set(self.active_terms) - {TERM_P, TERM_E, TERM_SD}
        if unknown:
            raise ValueError(f"unknown terms {sorted(unknown)}")
        for term, names in _PARAMS_BY_TERM.items():
            if term not in self.active_terms:
                for name in names:
                    if getattr(self, name) != 0.0:
                        raise ValueError(f"{name} must be 0 when {term} is inactive")
        if TERM_SD in self.active_terms and not (self.z > 0):
            raise ValueError("z must be positive when SD is active")


def rm_eval(coeffs: ReliabilityCoefficients, x) -> float | np.ndarray:
    """Sum of the active terms at x. Exponential arguments beyond +/-700 are
    clamped and flagged through ExpClampWarning."""
    xv = np.asarray(x, dtype=float)
    out = np.zeros_like(xv)
    clamped = False
    if TERM_P in coeffs.active_terms:
        out = out + ((coeffs.a * xv + coeffs.b) * xv + coeffs.c) * xv + coeffs.d
    if TERM_E in coeffs.active_terms:
        arg = coeffs.g * xv + coeffs.h
        clamped |= bool(np.any(np.abs(arg) > _EXP_CLAMP))
        out = out + coeffs.f * np.exp(np.clip(arg, -_EXP_CLAMP, _EXP_CLAMP))
    if TERM_SD in coeffs.active_terms:
        arg = -coeffs.m * xv
        clamped |= bool(np.any(np.abs(arg) > _EXP_CLAMP))
        u = np.exp(np.clip(arg, -_EXP_CLAMP, _EXP_CLAMP))
        out = out + coeffs.k * coeffs.m * u / (u + coeffs.z) ** 2
    if clamped:
        warnings.warn(
            "exponential argument clamped at +/-700", ExpClampWarning, stacklevel=2
        )
    return float(out) if np.isscalar(x) or np.ndim(x) == 0 else out


@dataclass(frozen=True, eq=False)
class DeviationProfile:
    """Per-step mean of the min-over-modes absolute error, per direction."""

    mae_s: np.ndarray
    mae_d: np.ndarray

    @property
    def horizon(self) -> int:
        return self.mae_s.shape[0]


def compute_deviation_profile(records: Sequence[ScenarioRecord]) -> DeviationProfile:
    if not records:
        raise EmptySet("deviation profile needs at least one record")
    mean_scores = score_matrix(records).mean(axis=0)
    return DeviationProfile(mae_s=mean_scores[:, LON], mae_d=mean_scores[:, LAT])


def pair_training_data(
    profile: DeviationProfile, cal: CalibrationResult, direction: str
) -> np.ndarray:
    """(T_f, 2) rows (deviation, calibrated bound), one per timestep."""
    if direction not in ("s", "d"):
        raise ValueError("direction must be 's' or 'd'")
    if profile.horizon != cal.horizon:
        raise HorizonMismatch(
            f"profile horizon {profile.horizon} != calibration horizon {cal.horizon}"
        )
    x = profile.mae_s if direction == "s" else profile.mae_d
    y = cal.quantiles.q_s if direction == "s" else cal.quantiles.q_d
    if np.ptp(x) == 0.0:
        warnings.warn(
            "training pairs are degenerate: zero spread in the deviation axis",
            DegeneratePairsWarning,
            stacklevel=2,
        )
    return np.stack([x, y], axis=1)


@dataclass(frozen=True)
class ReliabilityModel:
    scenario: ScenarioClass
    direction: str
    segment: str
    coeffs: ReliabilityCoefficients
    fit_rmse: float
    domain: tuple[float, float]

    def predict(self, x) -> float | np.ndarray:
        """Evaluate the curve, holding the boundary value outside the fitted
        domain (flagged through ExtrapolationWarning)."""
        xv = np.asarray(x, dtype=float)
        lo, hi = self.domain
        if np.any(xv < lo) or np.any(xv > hi):
            warnings.warn(
                f"evaluation outside fitted domain [{lo}, {hi}]; boundary value used",
                ExtrapolationWarning,
                stacklevel=2,
            )
        return rm_eval(self.coeffs, np.clip(xv, lo, hi) if np.ndim(x) else float(np.clip(xv, lo, hi)))


def _pack(values: dict[str, float], names: list[str]) -> np.ndarray:
    return np.array([values[name] for name in names])


def _coeffs_from(params: np.ndarray, names: list[str], terms: tuple[str, ...]) -> ReliabilityCoefficients:
    values = dict(zip(names, params))
    return ReliabilityCoefficients(
        **{name: float(values.get(name, 0.0)) for name in "abcdfghkmz"},
        active_terms=terms,
    )


def _model_and_jacobian(params, names, terms, x):
    """Curve values and d(curve)/d(param) columns at the current params.
    Clamped exponentials contribute zero derivative."""
    values = dict(zip(names, params))
    y = np.zeros_like(x)
    jac = np.zeros((x.shape[0], len(names)))
    col = {name: i for i, name in enumerate(names)}
    if TERM_P in terms:
        a, b, c, d = values["a"], values["b"], values["c"], values["d"]
        y += ((a * x + b) * x + c) * x + d
        jac[:, col["a"]] = x**3
        jac[:, col["b"]] = x**2
        jac[:, col["c"]] = x
        jac[:, col["d"]] = 1.0
    if TERM_E in terms:
        f, g, h = values["f"], values["g"], values["h"]
        arg = g * x + h
        live = np.abs(arg) <= _EXP_CLAMP
        e = np.exp(np.clip(arg, -_EXP_CLAMP, _EXP_CLAMP))
        y += f * e
        jac[:, col["f"]] = e
        jac[:, col["g"]] = f * x * e * live
        jac[:, col["h"]] = f * e * live
    if TERM_SD in terms:
        k, m, z = values["k"], values["m"], values["z"]
        arg = -m * x
        live = np.abs(arg) <= _EXP_CLAMP
        u = np.exp(np.clip(arg, -_EXP_CLAMP, _EXP_CLAMP))
        denom = (u + z) ** 2
        y += k * m * u / denom
        jac[:, col["k"]] = m * u / denom
        jac[:, col["m"]] = k * u / denom * (1.0 - m * x + 2.0 * m * x * u / (u + z)) * live + (
            k * u / denom * (1.0 - live)
        )
        jac[:, col["z"]] = -2.0 * k * m * u / (u + z) ** 3
    return y, jac


def _damped_gauss_newton(x, y, terms, names, params, max_iter):
    """One damped Gauss-Newton run from `params`. Steps that would increase
    the residual are retried with stronger damping, so the objective is
    monotone over accepted iterations. Returns (params, sse, progressed)."""

    def sse_of(p):
        with np.errstate(over="ignore", invalid="ignore"):
            yv, _ = _model_and_jacobian(p, names, terms, x)
            value = float((yv - y) @ (yv - y))
        return value if np.isfinite(value) else np.inf

    params = params.copy()
    sse = sse_of(params)
    lam = 1e-3
    progressed = False
    for _ in range(max_iter):
        with np.errstate(over="ignore", invalid="ignore"):
            yv, jac = _model_and_jacobian(params, names, terms, x)
        residual = yv - y
        grad = jac.T @ residual
        hess = jac.T @ jac
        damping = np.maximum(np.diag(hess), 1e-12)
        accepted = False
        for _ in range(30):
            try:
                step = np.linalg.solve(hess + lam * np.diag(damping), -grad)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            candidate = params + step
            if TERM_SD in terms:
                zi = names.index("z")
                candidate[zi] = max(candidate[zi], _Z_FLOOR)
            sse_new = sse_of(candidate)
            if sse_new <= sse:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            break
        rel_drop = (sse - sse_new) / max(sse, np.finfo(float).tiny)
        progressed = progressed or sse_new < sse
        params, sse = candidate, sse_new
        lam = max(lam / 10.0, 1e-12)
        if rel_drop < _REL_TOL:
            break
    return params, sse, progressed


_G_SCALES = (0.1, 0.2, 0.3, 0.45, 0.7, 1.0, 1.5, 2.2, 3.3, 5.0)
_M_SCALES = (0.2, 0.45, 1.0, 2.2, 5.0)
_Z_GRID = (0.3, 1.0, 3.0)
_SCREEN_ITER = 15
_FINALISTS = 5


def _projection_basis(x, terms, g, m, z):
    """Design matrix of the coefficients that enter linearly once the
    nonlinear shape parameters are fixed, with its coefficient labels."""
    columns, labels = [], []
    if TERM_P in terms:
        columns += [x**3, x**2, x, np.ones_like(x)]
        labels += ["a", "b", "c", "d"]
    if TERM_E in terms:
        columns.append(np.exp(np.clip(g * x, -50.0, 50.0)))
        labels.append("f")
    if TERM_SD in terms:
        u = np.exp(np.clip(-m * x, -50.0, 50.0))
        columns.append(m * u / (u + z) ** 2)
        labels.append("k")
    return np.stack(columns, axis=1), labels


def _varpro_refine(x, y, terms, names, params):
    """Polish the nonlinear shape parameters on the projected objective
    (linear coefficients solved exactly at every step), which is far better
    conditioned than the full parameter space, then rebuild the full
    vector. Returns None when the term set has no nonlinear parameters."""
    theta_names = [n for n in ("g", "m", "z") if n in names]
    if not theta_names:
        return None
    values = dict(zip(names, params))
    theta = np.array([values[n] for n in theta_names])

    def residual_of(th):
        local = dict(values)
        local.update(dict(zip(theta_names, th)))
        g, m, z = local.get("g", 0.0), local.get("m", 0.0), max(local.get("z", 0.0), _Z_FLOOR)
        basis, _ = _projection_basis(x, terms, g, m, z)
        sol = np.linalg.lstsq(basis, y, rcond=None)[0]
        return basis @ sol - y

    def sse_of(th):
        r = residual_of(th)
        value = float(r @ r)
        return value if np.isfinite(value) else np.inf

    sse = sse_of(theta)
    lam = 1e-3
    for _ in range(60):
        base = residual_of(theta)
        jac = np.zeros((x.shape[0], len(theta_names)))
        for j in range(len(theta_names)):
            h = 1e-6 * max(abs(theta[j]), 1e-3)
            probe = theta.copy()
            probe[j] += h
            jac[:, j] = (residual_of(probe) - base) / h
        grad = jac.T @ base
        hess = jac.T @ jac
        damping = np.maximum(np.diag(hess), 1e-15)
        accepted = False
        for _ in range(25):
            try:
                step = np.linalg.solve(hess + lam * np.diag(damping), -grad)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            candidate = theta + step
            if "z" in theta_names:
                zi = theta_names.index("z")
                candidate[zi] = max(candidate[zi], _Z_FLOOR)
            sse_new = sse_of(candidate)
            if sse_new <= sse:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            break
        rel_drop = (sse - sse_new) / max(sse, np.finfo(float).tiny)
        theta, sse = candidate, sse_new
        lam = max(lam / 10.0, 1e-12)
        if rel_drop < _REL_TOL:
            break

    final = dict(zip(theta_names, theta))
    g, m, z = final.get("g", 0.0), final.get("m", 0.0), max(final.get("z", 0.0), _Z_FLOOR)
    basis, labels = _projection_basis(x, terms, g, m, z)
    sol = np.linalg.lstsq(basis, y, rcond=None)[0]
    rebuilt = dict(zip(labels, (float(v) for v in sol)))
    rebuilt.update({"h": 0.0, "g": g, "m": m, "z": z})
    return _pack({name: rebuilt.get(name, 0.0) for name in names}, names)


def _candidate_inits(x, y, terms, names):
    """Starting points for the fit: the prescribed init (d = mean(y), the
    rest 1e-2) first, then variable-projection seeds. Conditional on the
    nonlinear shape parameters (g, m, z) the curve is linear in the
    remaining coefficients, so every grid combination gets an exact linear
    solve; the short screening runs in fit_rm decide which basins to
    polish, since the damped iteration cannot cross between them."""
    prescribed = {name: 1e-2 for name in names}
    if "d" in prescribed:
        prescribed["d"] = float(np.mean(y))
    inits = [_pack(prescribed, names)]

    x_scale = max(float(np.max(np.abs(x))), 1e-9)
    g_grid = (
        [s / x_scale for s in _G_SCALES] + [-s / x_scale for s in _G_SCALES]
        if TERM_E in terms
        else [0.0]
    )
    m_grid = [s / x_scale for s in _M_SCALES] if TERM_SD in terms else [0.0]
    z_grid = _Z_GRID if TERM_SD in terms else (0.0,)

    ones = np.ones_like(x)
    for g in g_grid:
        e_col = np.exp(np.clip(g * x, -50.0, 50.0)) if TERM_E in terms else None
        for m in m_grid:
            u = np.exp(np.clip(-m * x, -50.0, 50.0)) if TERM_SD in terms else None
            for z in z_grid:
                columns, labels = [], []
                if TERM_P in terms:
                    columns += [x**3, x**2, x, ones]
                    labels += ["a", "b", "c", "d"]
                if TERM_E in terms:
                    columns.append(e_col)
                    labels.append("f")
                if TERM_SD in terms:
                    columns.append(m * u / (u + z) ** 2)
                    labels.append("k")
                basis = np.stack(columns, axis=1)
                sol = np.linalg.lstsq(basis, y, rcond=None)[0]
                seed = dict(zip(labels, (float(v) for v in sol)))
                seed.update({"g": g, "h": 0.0, "m": m, "z": max(z, _Z_FLOOR)})
                inits.append(_pack({name: seed.get(name, 0.0) for name in names}, names))
    return inits


def fit_rm(
    x,
    y,
    scenario: ScenarioClass,
    direction: str,
    segment: str = SEGMENT_WHOLE,
    terms: tuple[str, ...] | None = None,
) -> ReliabilityModel:
    """Least-squares fit of the active coefficients.

    Every candidate start gets a short damped Gauss-Newton screening run;
    the most promising few (the prescribed start always among them) are
    polished with the full iteration budget and the lowest residual wins.
    Needs at least twice as many points as free coefficients.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise ValueError("x and y must have equal lengths")
    terms = tuple(terms) if terms is not None else default_terms(scenario, segment)
    names = [name for term in (TERM_P, TERM_E, TERM_SD) if term in terms for name in _PARAMS_BY_TERM[term]]
    if x.shape[0] < 2 * len(names):
        raise InsufficientPoints(
            f"{x.shape[0]} points for {len(names)} free coefficients; "
            f"need at least {2 * len(names)}"
        )

    inits = _candidate_inits(x, y, terms, names)
    with np.errstate(over="ignore", invalid="ignore"):
        first_values, _ = _model_and_jacobian(inits[0], names, terms, x)
        sse_start = float((first_values - y) @ (first_values - y))

    screened = []
    any_progress = False
    for index, start in enumerate(inits):
        params, sse, progressed = _damped_gauss_newton(
            x, y, terms, names, start, min(_SCREEN_ITER, _MAX_ITER)
        )
        any_progress = any_progress or progressed
        screened.append((sse, index, params))
    prescribed_entry = screened[0]
    screened.sort(key=lambda item: (item[0], item[1]))
    finalists = screened[:_FINALISTS]
    if all(entry[1] != 0 for entry in finalists):
        finalists.append(prescribed_entry)

    best_params, best_sse = None, np.inf
    for _, _, start in finalists:
        params, sse, progressed = _damped_gauss_newton(
            x, y, terms, names, start, _MAX_ITER
        )
        any_progress = any_progress or progressed
        if sse < best_sse:
            best_params, best_sse = params, sse

    if _MAX_ITER > 0:
        refined = _varpro_refine(x, y, terms, names, best_params)
        if refined is not None:
            params, sse, progressed = _damped_gauss_newton(
                x, y, terms, names, refined, _MAX_ITER
            )
            any_progress = any_progress or progressed
            if sse < best_sse:
                best_params, best_sse = params, sse
    if not any_progress and best_sse >= sse_start and sse_start > 0:
        raise FitDiverged(
            f"no residual reduction within {_MAX_ITER} iterations "
            f"({scenario.value}/{direction}/{segment})"
        )

    return ReliabilityModel(
        scenario=scenario,
        direction=direction,
        segment=segment,
        coeffs=_coeffs_from(best_params, names, terms),
        fit_rmse=float(np.sqrt(best_sse / x.shape[0])),
        domain=(float(np.min(x)), float(np.max(x))),
    )


def lane_change_split(pairs: np.ndarray, min_first: int = 2, min_second: int = 2) -> int:
    """Changepoint index t* minimizing the total residual of two per-segment
    line fits over the step-ordered pairs. Segment 1 is t <= t*; candidate
    splits keep at least min_first/min_second points per side."""
    pairs = np.asarray(pairs, dtype=float)
    n = pairs.shape[0]
    min_first = max(min_first, 2)
    min_second = max(min_second, 2)
    if n < min_first + min_second:
        raise InsufficientPoints(
            f"changepoint search needs at least {min_first + min_second} pairs, got {n}"
        )

    def line_sse(chunk):
        xs, ys = chunk[:, 0], chunk[:, 1]
        basis = np.stack([xs, np.ones_like(xs)], axis=1)
        sol, residual, _, _ = np.linalg.lstsq(basis, ys, rcond=None)
        if residual.size:
            return float(residual[0])
        return float(np.sum((ys - basis @ sol) ** 2))

    best_t, best_sse = min_first - 1, np.inf
    for t_star in range(min_first - 1, n - min_second):
        total = line_sse(pairs[: t_star + 1]) + line_sse(pairs[t_star + 1 :])
        if total < best_sse - 1e-15:
            best_t, best_sse = t_star, total
    return best_t


def fit_scenario_models(
    profile: DeviationProfile,
    cal: CalibrationResult,
    scenario: ScenarioClass,
    direction: str,
) -> list[ReliabilityModel]:
    """Fit the models mandated for one scenario/direction: a single whole-
    range model, or the two lane-change segments split at the changepoint."""
    pairs = pair_training_data(profile, cal, direction)
    if scenario is not ScenarioClass.LANE_CHANGE:
        return [fit_rm(pairs[:, 0], pairs[:, 1], scenario, direction)]
    t_star = lane_change_changepoint(pairs)
    first, second = pairs[: t_star + 1], pairs[t_star + 1 :]
    return [
        fit_rm(first[:, 0], first[:, 1], scenario, direction, segment=SEGMENT_LC1),
        fit_rm(second[:, 0], second[:, 1], scenario, direction, segment=SEGMENT_LC2),
    ]


def lane_change_changepoint(pairs: np.ndarray) -> int:
    """Changepoint with both segments kept large enough for their term
    sets' coefficient counts, so the per-segment fits stay feasible."""
    n_free_first = sum(
        len(_PARAMS_BY_TERM[t]) for t in default_terms(ScenarioClass.LANE_CHANGE, SEGMENT_LC1)
    )
    n_free_second = sum(
        len(_PARAMS_BY_TERM[t]) for t in default_terms(ScenarioClass.LANE_CHANGE, SEGMENT_LC2)
    )
    return lane_change_split(pairs, 2 * n_free_first, 2 * n_free_second)


def model_to_obj(model: ReliabilityModel) -> dict:
    coeffs = model.coeffs
    obj = {
        "scenario": model.scenario.value,
        "direction": model.direction,
        "segment": model.segment,
        "active_terms": list(coeffs.active_terms),
        "fit_rmse": model.fit_rmse,
        "x_min": model.domain[0],
        "x_max": model.domain[1],
    }
    for name in "abcdfghkmz":
        obj[name] = getattr(coeffs, name)
    return obj


def model_from_obj(obj: dict) -> ReliabilityModel:
    coeffs = ReliabilityCoefficients(
        **{name: obj[name] for name in "abcdfghkmz"},
        active_terms=tuple(obj["active_terms"]),
    )
    return ReliabilityModel(
        scenario=ScenarioClass.parse(obj["scenario"]),
        direction=obj["direction"],
        segment=obj["segment"],
        coeffs=coeffs,
        fit_rmse=obj["fit_rmse"],
        domain=(obj["x_min"], obj["x_max"]),
    )


def write_model(path: str | Path, model: ReliabilityModel) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(model_to_obj(model), sort_keys=True) + "\n", encoding="utf-8")
    os.replace(tmp, path)


def read_model(path: str | Path) -> ReliabilityModel:
    with open(path, encoding="utf-8") as fh:
        return model_from_obj(json.load(fh))
