"""Reference-route geometry and Cartesian/Frenet projection.

A route is an arc-length-parameterized polyline. Frenet coordinates are
(s, d): s is longitudinal progress along the route, d is the signed lateral
offset, positive to the left of the direction of travel.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DegenerateRoute, OutOfRange

_MIN_SEGMENT_LENGTH = 1e-9
_ARCLENGTH_TOLERANCE = 1e-9


class PlanarPoint(NamedTuple):
    x: float
    y: float


class FrenetPoint(NamedTuple):
    s: float
    d: float


class ProjectionQualityWarning(UserWarning):
    """Projection fell at a corner or beyond the corridor of unambiguous
    lateral offsets; the result is deterministic but not perpendicular-exact."""


@dataclass(frozen=True, eq=False)
class ReferenceRoute:
    """Polyline with cached cumulative arc length.

    ``vertices`` has shape (n, 2) with n >= 2; ``cum_arclength`` has shape
    (n,), starts at 0 and increases by exactly the segment lengths.
    """

    vertices: np.ndarray
    cum_arclength: np.ndarray
    # per interior vertex: signed turn (+1 left / -1 right / 0 straight) and
    # tan(theta/2) of the turn angle, used for corridor checks
    _turn_sign: np.ndarray = field(repr=False, default=None)
    _turn_tan_half: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        vertices = np.asarray(self.vertices, dtype=float)
        cum = np.asarray(self.cum_arclength, dtype=float)
        if vertices.ndim != 2 or vertices.shape[1] != 2 or vertices.shape[0] < 2:
            raise DegenerateRoute("route needs at least 2 planar vertices")
        if not np.all(np.isfinite(vertices)):
            raise DegenerateRoute("route vertices must be finite")
        if cum.shape != (vertices.shape[0],) or cum[0] != 0.0:
            raise DegenerateRoute("cum_arclength must match vertices and start at 0")
        seg_len = np.hypot(*np.diff(vertices, axis=0).T)
        if np.any(seg_len <= _MIN_SEGMENT_LENGTH):
            raise DegenerateRoute("consecutive route vertices must be distinct")
        if np.any(np.diff(cum) <= 0):
            raise DegenerateRoute("cum_arclength must be strictly increasing")
        if np.any(np.abs(np.diff(cum) - seg_len) > _ARCLENGTH_TOLERANCE):
            raise DegenerateRoute("cum_arclength inconsistent with vertex spacing")
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "cum_arclength", cum)

        deltas = np.diff(vertices, axis=0)
        dirs = deltas / seg_len[:, None]
        cross = dirs[:-1, 0] * dirs[1:, 1] - dirs[:-1, 1] * dirs[1:, 0]
        dot = np.clip((dirs[:-1] * dirs[1:]).sum(axis=1), -1.0, 1.0)
        theta = np.arctan2(np.abs(cross), dot)
        object.__setattr__(self, "_turn_sign", np.sign(cross))
        object.__setattr__(self, "_turn_tan_half", np.tan(theta / 2.0))

    @classmethod
    def from_points(cls, points: Sequence | np.ndarray) -> "ReferenceRoute":
        vertices = np.asarray(points, dtype=float)
        if vertices.ndim != 2 or vertices.shape[1] != 2 or vertices.shape[0] < 2:
            raise DegenerateRoute("route needs at least 2 planar vertices")
        if not np.all(np.isfinite(vertices)):
            raise DegenerateRoute("route vertices must be finite")
        seg_len = np.hypot(*np.diff(vertices, axis=0).T)
        cum = np.concatenate([[0.0], np.cumsum(seg_len)])
        return cls(vertices, cum)

    @property
    def length(self) -> float:
        return float(self.cum_arclength[-1])


def _project_array(route: ReferenceRoute, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Project (m, 2) planar points; returns (s, d) arrays and emits one
    quality warning if any projection is corner-bound or beyond-corridor."""
    starts = route.vertices[:-1]
    deltas = np.diff(route.vertices, axis=0)
    seg_len = np.diff(route.cum_arclength)

    rel = points[:, None, :] - starts[None, :, :]
    t = np.einsum("msk,sk->ms", rel, deltas) / (seg_len**2)[None, :]
    t = np.clip(t, 0.0, 1.0)
    feet = starts[None] + t[:, :, None] * deltas[None]
    diff = points[:, None, :] - feet
    dist2 = np.einsum("msk,msk->ms", diff, diff)

    # argmin takes the first minimum, which is the smallest s on exact ties
    win = np.argmin(dist2, axis=1)
    rows = np.arange(points.shape[0])
    t_win = t[rows, win]
    s = route.cum_arclength[win] + t_win * seg_len[win]
    off = diff[rows, win]
    cross = deltas[win, 0] * off[:, 1] - deltas[win, 1] * off[:, 0]
    dist = np.sqrt(dist2[rows, win])
    d = np.where(cross < 0, -dist, dist)

    # foot pinned to an interior vertex: no perpendicular exists there, the
    # offset is a corner-fan distance rather than a lateral one
    n_seg = route.vertices.shape[0] - 1
    at_corner = ((t_win == 0.0) & (win > 0) | (t_win == 1.0) & (win < n_seg - 1)) & (dist > 0)
    if np.any(at_corner):
        warnings.warn(
            f"{int(np.sum(at_corner))} projection(s) fell on a route corner; "
            "offsets there are not perpendicular-exact",
            ProjectionQualityWarning,
            stacklevel=3,
        )
    return s, d


def _warn_beyond_corridor(route: ReferenceRoute, seg: np.ndarray, fr: np.ndarray) -> None:
    """Flag (s, d) inputs whose |d| reaches the kink center of an adjacent
    concave corner; projecting the result back would land on the other
    segment, so the round trip is not exact there."""
    n_seg = route.vertices.shape[0] - 1
    if n_seg < 2:
        return
    s, d = fr[:, 0], fr[:, 1]
    sign_d = np.sign(d)
    tan_half = route._turn_tan_half
    turn = route._turn_sign
    with np.errstate(divide="ignore", invalid="ignore"):
        prev_corner = np.clip(seg - 1, 0, n_seg - 2)
        bound_prev = (s - route.cum_arclength[seg]) / tan_half[prev_corner]
        flagged = (
            (seg > 0)
            & (sign_d == turn[prev_corner])
            & (tan_half[prev_corner] > 0)
            & (np.abs(d) >= bound_prev)
        )
        next_corner = np.clip(seg, 0, n_seg - 2)
        bound_next = (route.cum_arclength[seg + 1] - s) / tan_half[next_corner]
        flagged |= (
            (seg < n_seg - 1)
            & (sign_d == turn[next_corner])
            & (tan_half[next_corner] > 0)
            & (np.abs(d) >= bound_next)
        )
    if np.any(flagged):
        warnings.warn(
            f"{int(np.sum(flagged))} offset(s) at or beyond the concave-corner "
            "corridor; the projection round trip is not exact there",
            ProjectionQualityWarning,
            stacklevel=3,
        )


def project(route: ReferenceRoute, p: PlanarPoint | tuple) -> FrenetPoint:
    """Project a planar point onto the route.

    Returns the arc length of the closest polyline point and the signed
    perpendicular distance (positive left of the travel direction). When two
    segments are equidistant the smaller s wins.
    """
    pt = np.asarray(p, dtype=float).reshape(1, 2)
    if not np.all(np.isfinite(pt)):
        raise ValueError("cannot project non-finite point")
    s, d = _project_array(route, pt)
    return FrenetPoint(float(s[0]), float(d[0]))


def project_trajectory(route: ReferenceRoute, traj) -> np.ndarray:
    """Element-wise projection of an (m, 2) planar trajectory; returns an
    (m, 2) array of (s, d) rows. Empty input yields an empty (0, 2) array."""
    pts = np.asarray(traj, dtype=float).reshape(-1, 2)
    if pts.shape[0] == 0:
        return np.empty((0, 2))
    if not np.all(np.isfinite(pts)):
        raise ValueError("cannot project non-finite trajectory")
    s, d = _project_array(route, pts)
    return np.stack([s, d], axis=1)


def unproject(route: ReferenceRoute, f: FrenetPoint | tuple) -> PlanarPoint:
    """Planar point at arc length s, offset d along the left normal of the
    containing segment. Raises OutOfRange when s is outside the route."""
    s, d = float(f[0]), float(f[1])
    if not (0.0 <= s <= route.length):
        raise OutOfRange(f"s={s} outside route span [0, {route.length}]")
    xy = _unproject_array(route, np.array([[s, d]]))
    return PlanarPoint(float(xy[0, 0]), float(xy[0, 1]))


def unproject_trajectory(route: ReferenceRoute, frenet) -> np.ndarray:
    """Vectorized inverse projection of (m, 2) rows of (s, d)."""
    fr = np.asarray(frenet, dtype=float).reshape(-1, 2)
    if fr.shape[0] == 0:
        return np.empty((0, 2))
    if np.any(fr[:, 0] < 0.0) or np.any(fr[:, 0] > route.length):
        raise OutOfRange("s outside route span")
    return _unproject_array(route, fr)


def _unproject_array(route: ReferenceRoute, fr: np.ndarray) -> np.ndarray:
    cum = route.cum_arclength
    seg = np.clip(np.searchsorted(cum, fr[:, 0], side="right") - 1, 0, len(cum) - 2)
    _warn_beyond_corridor(route, seg, fr)
    deltas = np.diff(route.vertices, axis=0)
    seg_len = np.diff(cum)
    t = (fr[:, 0] - cum[seg]) / seg_len[seg]
    base = route.vertices[seg] + t[:, None] * deltas[seg]
    normal = np.stack([-deltas[seg, 1], deltas[seg, 0]], axis=1) / seg_len[seg, None]
    return base + fr[:, 1:2] * normal
