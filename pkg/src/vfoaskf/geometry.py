"""Angle conventions and direction arithmetic shared by the whole package.

Conventions, fixed here once for every producer and consumer of angular
data:

* The world frame is right-handed with the z axis pointing up; x and y
  span the horizontal plane.
* A direction is a (pan, tilt) pair in degrees. Pan is the azimuth of
  the horizontal projection, measured counterclockwise from +x as
  ``atan2(dy, dx)``. Tilt is the elevation, ``asin(dz / range)``.
* Pan lives in (-180, 180], tilt in [-90, 90].
* When the horizontal projection of a segment is shorter than 1e-9 m
  the pan is undefined and set to 0 by convention (near-vertical lines
  of sight do not occur between seated or standing interaction
  partners).

Angular state vectors elsewhere in the package are kept unwrapped;
wrapping is applied only to residuals and to values exposed as
:class:`Direction`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "DegenerateGeometryError",
    "Direction",
    "Position3D",
    "angular_distance",
    "direction_from_points",
    "wrap_angle",
    "wrap_delta",
]

#: Points closer than this (meters) cannot define a direction.
MIN_SEPARATION_M = 1e-9


class DegenerateGeometryError(ValueError):
    """Two points are too close to define the direction between them."""


def wrap_angle(angle_deg: float) -> float:
    """Wrap an angle in degrees into (-180, 180]."""
    wrapped = angle_deg % 360.0
    if wrapped > 180.0:
        wrapped -= 360.0
    return wrapped


def wrap_delta(a_deg: float, b_deg: float) -> float:
    """Difference ``a - b`` in degrees, wrapped into (-180, 180].

    This is the residual used throughout the Kalman arithmetic so that
    innovations behave across the +/-180 seam.
    """
    return wrap_angle(a_deg - b_deg)


@dataclass(frozen=True)
class Direction:
    """A (pan, tilt) direction in degrees.

    Pan is wrapped into (-180, 180] on construction; tilt outside
    [-90, 90] or non-finite components are rejected.
    """

    pan: float
    tilt: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.pan) and math.isfinite(self.tilt)):
            raise ValueError(f"non-finite direction ({self.pan}, {self.tilt})")
        if not -90.0 <= self.tilt <= 90.0:
            raise ValueError(f"tilt {self.tilt} outside [-90, 90]")
        object.__setattr__(self, "pan", wrap_angle(float(self.pan)))
        object.__setattr__(self, "tilt", float(self.tilt))

    def as_array(self) -> np.ndarray:
        return np.array([self.pan, self.tilt], dtype=float)


@dataclass(frozen=True)
class Position3D:
    """A point in the shared world frame, in meters."""

    x: float
    y: float
    z: float

    def __post_init__(self) -> None:
        for v in (self.x, self.y, self.z):
            if not math.isfinite(v):
                raise ValueError(f"non-finite position ({self.x}, {self.y}, {self.z})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)


def direction_from_points(src: Position3D, dst: Position3D) -> Direction:
    """Direction of the line of sight from ``src`` to ``dst``.

    Raises :class:`DegenerateGeometryError` when the points are closer
    than ``MIN_SEPARATION_M``.
    """
    dx = dst.x - src.x
    dy = dst.y - src.y
    dz = dst.z - src.z
    dist = math.sqrt(dx * dx + dy * dy + dz * dz)
    if dist <= MIN_SEPARATION_M:
        raise DegenerateGeometryError(f"points {src} and {dst} are coincident")
    horizontal = math.hypot(dx, dy)
    pan = 0.0 if horizontal < MIN_SEPARATION_M else math.degrees(math.atan2(dy, dx))
    # Clamp guards against |dz/dist| creeping past 1 by rounding.
    tilt = math.degrees(math.asin(max(-1.0, min(1.0, dz / dist))))
    return Direction(pan, tilt)


def angular_distance(d1: Direction, d2: Direction) -> float:
    """Euclidean norm of the wrapped (pan, tilt) difference, in degrees."""
    return math.hypot(wrap_delta(d1.pan, d2.pan), wrap_delta(d1.tilt, d2.tilt))
