"""Coordinate frames, the pseudo-range observation model, and its Jacobian.

All positions are WGS-84 ECEF in meters. The receiver state is the 4-vector
[x, y, z, clock_bias] with the clock bias kept in seconds; the observation
model multiplies it by the speed of light internally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .constants import SPEED_OF_LIGHT, WGS84_A, WGS84_B, WGS84_E2


class DegenerateGeometryError(ValueError):
    """Receiver/satellite geometry does not admit the requested computation."""


@dataclass(frozen=True)
class EcefPosition:
    """Earth-centered Earth-fixed position [m]."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z)):
            raise ValueError("ECEF components must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    @staticmethod
    def from_array(a) -> "EcefPosition":
        a = np.asarray(a, dtype=float)
        return EcefPosition(float(a[0]), float(a[1]), float(a[2]))


@dataclass(frozen=True)
class NavState:
    """Receiver navigation state: ECEF position plus clock bias [s]."""

    position: EcefPosition
    clock_bias: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.clock_bias):
            raise ValueError("clock bias must be finite")

    def as_array(self) -> np.ndarray:
        """State as [x, y, z, clock_bias] with the bias still in seconds."""
        return np.array(
            [self.position.x, self.position.y, self.position.z, self.clock_bias],
            dtype=float,
        )

    @staticmethod
    def from_array(a) -> "NavState":
        a = np.asarray(a, dtype=float)
        return NavState(EcefPosition(float(a[0]), float(a[1]), float(a[2])), float(a[3]))


@dataclass(frozen=True)
class SatelliteChannel:
    """One satellite's measurement and channel metadata for an epoch.

    ``truth_bias`` holds the injected pseudo-range error [m] for synthetic
    epochs (None on real data); ``truth_is_biased`` flags whether that error
    came from the heavy-tailed outlier branch of the noise model.
    """

    sat_id: str
    position: EcefPosition
    pseudo_range: float
    elevation: float = math.pi / 2
    cn0: float = 45.0
    acceleration: float = 0.0
    truth_bias: float | None = None
    truth_is_biased: bool | None = None

    def __post_init__(self):
        if not self.pseudo_range > 0:
            raise ValueError(f"pseudo_range must be > 0, got {self.pseudo_range}")
        if not 0.0 <= self.elevation <= math.pi / 2:
            raise ValueError(f"elevation must be in [0, pi/2], got {self.elevation}")
        if self.cn0 < 0:
            raise ValueError(f"cn0 must be >= 0, got {self.cn0}")


@dataclass(frozen=True)
class Epoch:
    """One navigation epoch: N satellite channels plus optional ground truth.

    N must be at least 5 so that every leave-one-out subset remains solvable.
    """

    channels: tuple[SatelliteChannel, ...]
    truth_state: NavState | None = None

    def __post_init__(self):
        if len(self.channels) < 5:
            raise ValueError(f"an epoch needs >= 5 satellites, got {len(self.channels)}")
        ids = [ch.sat_id for ch in self.channels]
        if len(set(ids)) != len(ids):
            raise ValueError("satellite ids must be unique within an epoch")
        object.__setattr__(self, "channels", tuple(self.channels))

    @property
    def n(self) -> int:
        return len(self.channels)

    def sat_positions(self) -> np.ndarray:
        """(N, 3) array of satellite ECEF positions."""
        return np.array([ch.position.as_array() for ch in self.channels])

    def pseudo_ranges(self) -> np.ndarray:
        """(N,) array of measured pseudo-ranges [m]."""
        return np.array([ch.pseudo_range for ch in self.channels])

    def permuted(self, order) -> "Epoch":
        """Epoch with channels reordered by the given index sequence."""
        return Epoch(tuple(self.channels[i] for i in order), self.truth_state)


def observation_function(state: NavState, sat: EcefPosition) -> float:
    """Modeled pseudo-range: geometric range plus the clock-bias term [m]."""
    d = state.position.as_array() - sat.as_array()
    rng = float(np.sqrt(d @ d))
    if rng == 0.0:
        raise DegenerateGeometryError("receiver and satellite positions coincide")
    return rng + SPEED_OF_LIGHT * state.clock_bias


def jacobian_row(state: NavState, sat: EcefPosition) -> np.ndarray:
    """Gradient of the observation w.r.t. [x, y, z, clock_bias].

    Returns [-u, c] where u is the unit line-of-sight vector from the
    receiver to the satellite.
    """
    d = sat.as_array() - state.position.as_array()
    rng = float(np.sqrt(d @ d))
    if rng == 0.0:
        raise DegenerateGeometryError("zero range: receiver at satellite position")
    return np.array([-d[0] / rng, -d[1] / rng, -d[2] / rng, SPEED_OF_LIGHT])


def geodetic_to_ecef(lat: float, lon: float, height: float = 0.0) -> np.ndarray:
    """WGS-84 geodetic (lat, lon in radians; height in m) to ECEF [m]."""
    s, c = math.sin(lat), math.cos(lat)
    n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * s * s)
    return np.array(
        [
            (n + height) * c * math.cos(lon),
            (n + height) * c * math.sin(lon),
            (n * (1.0 - WGS84_E2) + height) * s,
        ]
    )


def ecef_to_geodetic(p) -> tuple[float, float, float]:
    """ECEF [m] to WGS-84 geodetic (lat, lon in radians; height in m).

    Bowring's closed form followed by fixed-point refinement; accurate to
    well below a millimeter for terrestrial and orbital points.
    """
    x, y, z = np.asarray(p, dtype=float)
    lon = math.atan2(y, x)
    rho = math.hypot(x, y)
    if rho == 0.0 and z == 0.0:
        raise DegenerateGeometryError("point at Earth center has no geodetic coordinates")
    # Bowring initial guess via the parametric latitude
    u = math.atan2(z * WGS84_A, rho * WGS84_B)
    ep2 = (WGS84_A**2 - WGS84_B**2) / WGS84_B**2
    lat = math.atan2(
        z + ep2 * WGS84_B * math.sin(u) ** 3,
        rho - WGS84_E2 * WGS84_A * math.cos(u) ** 3,
    )
    for _ in range(3):
        s = math.sin(lat)
        n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * s * s)
        height = rho / math.cos(lat) - n if abs(lat) < 1.4 else z / s - n * (1.0 - WGS84_E2)
        lat = math.atan2(z, rho * (1.0 - WGS84_E2 * n / (n + height)))
    s = math.sin(lat)
    n = WGS84_A / math.sqrt(1.0 - WGS84_E2 * s * s)
    height = rho / math.cos(lat) - n if abs(lat) < 1.4 else z / s - n * (1.0 - WGS84_E2)
    return lat, lon, height


def enu_rotation(lat: float, lon: float) -> np.ndarray:
    """Rotation matrix taking ECEF deltas to local East-North-Up."""
    sl, cl = math.sin(lat), math.cos(lat)
    so, co = math.sin(lon), math.cos(lon)
    return np.array(
        [
            [-so, co, 0.0],
            [-sl * co, -sl * so, cl],
            [cl * co, cl * so, sl],
        ]
    )


def ecef_to_enu(point, origin) -> np.ndarray:
    """East-North-Up offset [m] of ``point`` relative to ``origin``.

    ``origin`` may be an EcefPosition, a NavState, or a length-3 array; the
    local frame is anchored at the origin's WGS-84 geodetic coordinates.
    """
    if isinstance(origin, NavState):
        origin = origin.position
    o = origin.as_array() if isinstance(origin, EcefPosition) else np.asarray(origin, dtype=float)
    p = point.as_array() if isinstance(point, EcefPosition) else np.asarray(point, dtype=float)
    lat, lon, _ = ecef_to_geodetic(o)
    return enu_rotation(lat, lon) @ (p - o)
