"""Physical and geodetic constants shared across the package."""

# SI-defined speed of light [m/s]
SPEED_OF_LIGHT = 299_792_458.0

# WGS-84 ellipsoid
WGS84_A = 6378137.0                 # semi-major axis [m]
WGS84_F = 1.0 / 298.257223563       # flattening
WGS84_B = WGS84_A * (1.0 - WGS84_F)  # semi-minor axis [m]
WGS84_E2 = WGS84_F * (2.0 - WGS84_F)  # first eccentricity squared

# Nominal GNSS MEO orbit radius from Earth center [m]
DEFAULT_ORBIT_RADIUS = 26_560_000.0
