"""
Geodesy helpers: local equirectangular projection and great-circle distance.
"""

from dataclasses import dataclass

import numpy as np

EARTH_RADIUS = 6371008.8  # mean earth radius [m]


@dataclass(frozen=True)
class LocalProjection:
    """
    Equirectangular projection about a reference latitude/longitude.

    x points east and y points north, both in metres. Accurate to well below
    a metre over the few kilometres a road section or trace spans.
    """

    lat0: float
    lon0: float

    def __post_init__(self):
        if not -90.0 < self.lat0 < 90.0:
            raise ValueError(f"Reference latitude {self.lat0} is not in (-90, 90).")

    @classmethod
    def about(cls, lat, lon) -> "LocalProjection":
        """Projection centred on the mean of the given coordinates."""
        return cls(float(np.mean(lat)), float(np.mean(lon)))

    def forward(self, lat, lon) -> tuple[np.ndarray, np.ndarray]:
        lat = np.asarray(lat, dtype=float)
        lon = np.asarray(lon, dtype=float)
        x = np.radians(lon - self.lon0) * EARTH_RADIUS * np.cos(np.radians(self.lat0))
        y = np.radians(lat - self.lat0) * EARTH_RADIUS
        return x, y

    def inverse(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        lat = self.lat0 + np.degrees(y / EARTH_RADIUS)
        lon = self.lon0 + np.degrees(x / (EARTH_RADIUS * np.cos(np.radians(self.lat0))))
        return lat, lon


def great_circle(lat1, lon1, lat2, lon2):
    """Haversine distance in metres; broadcasts over arrays."""
    p1 = np.radians(lat1)
    p2 = np.radians(lat2)
    dp = p2 - p1
    dl = np.radians(np.asarray(lon2) - np.asarray(lon1))
    a = np.sin(dp / 2.0) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dl / 2.0) ** 2
    return 2.0 * EARTH_RADIUS * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))
