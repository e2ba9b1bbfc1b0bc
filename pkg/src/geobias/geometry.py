"""Planar and spherical geometry for ZIP polygons.

Coordinates are plain (lat, lon) decimal degrees. Boundary distances are
computed in raw degree space (no latitude correction); great-circle
distances on a sphere of radius 3958.8 miles. Longitudes are treated as
plain numbers: antimeridian wrap is not handled (continental U.S. data).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

EARTH_RADIUS_MILES = 3958.8
MILES_PER_DEGREE = 50.0


@dataclass(frozen=True, slots=True)
class GeoPoint:
    """A point in decimal degrees, lat in [-90, 90], lon in [-180, 180]."""

    lat: float
    lon: float

    def __post_init__(self) -> None:
        if not (-90.0 <= self.lat <= 90.0):
            raise ValueError(f"latitude {self.lat} outside [-90, 90]")
        if not (-180.0 <= self.lon <= 180.0):
            raise ValueError(f"longitude {self.lon} outside [-180, 180]")


Ring = tuple[GeoPoint, ...]


@dataclass(frozen=True)
class ZipPolygon:
    """A ZIP's ring geometry plus the Census-style attributes.

    ``rings`` is a flat list: the first ring of each part is an outer
    boundary, later rings holes. Containment uses even-odd parity, so the
    flat representation needs no outer/hole bookkeeping. Areas are square
    miles; ``internal_point`` must lie inside the polygon.
    """

    zip: str
    rings: tuple[Ring, ...]
    internal_point: GeoPoint
    land_area: float
    water_area: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "rings", tuple(tuple(r) for r in self.rings))
        if len(self.zip) != 5:
            raise ValueError(f"zip {self.zip!r} is not 5 characters")
        if not self.rings:
            raise ValueError("polygon has no rings")
        for ring in self.rings:
            if len(ring) < 4:
                raise ValueError("ring has fewer than 4 vertices")
            if ring[0] != ring[-1]:
                raise ValueError("ring is not closed (first != last vertex)")
        if self.land_area < 0 or self.water_area < 0:
            raise ValueError("negative area")
        if self.total_area <= 0:
            raise ValueError("total area must be positive")
        if not point_in_polygon(self.internal_point, self):
            raise ValueError(
                f"internal point of {self.zip} lies outside the polygon"
            )

    @property
    def total_area(self) -> float:
        return self.land_area + self.water_area


def haversine_miles(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in miles on a sphere of radius 3958.8 mi."""
    if a == b:
        return 0.0
    phi1 = math.radians(a.lat)
    phi2 = math.radians(b.lat)
    dphi = math.radians(b.lat - a.lat)
    dlam = math.radians(b.lon - a.lon)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2) ** 2
    return 2.0 * EARTH_RADIUS_MILES * math.asin(min(1.0, math.sqrt(h)))


def _on_segment(p: GeoPoint, a: GeoPoint, b: GeoPoint) -> bool:
    """True if p lies on segment a-b (degree space, exact-ish arithmetic)."""
    cross = (p.lat - a.lat) * (b.lon - a.lon) - (p.lon - a.lon) * (b.lat - a.lat)
    if abs(cross) > 1e-12:
        return False
    dot = (p.lat - a.lat) * (p.lat - b.lat) + (p.lon - a.lon) * (p.lon - b.lon)
    return dot <= 1e-12


def point_in_polygon(p: GeoPoint, poly: ZipPolygon) -> bool:
    """Even-odd containment test; edge and vertex points count as inside."""
    inside = False
    for ring in poly.rings:
        for i in range(len(ring) - 1):
            a, b = ring[i], ring[i + 1]
            if _on_segment(p, a, b):
                return True
            # Ray cast eastward in lon; half-open rule avoids double-counting
            # at vertices.
            if (a.lat > p.lat) != (b.lat > p.lat):
                lon_cross = a.lon + (p.lat - a.lat) * (b.lon - a.lon) / (b.lat - a.lat)
                if p.lon < lon_cross:
                    inside = not inside
    return inside


def _point_segment_distance(p: GeoPoint, a: GeoPoint, b: GeoPoint) -> float:
    ax, ay = a.lat, a.lon
    bx, by = b.lat, b.lon
    px, py = p.lat, p.lon
    dx, dy = bx - ax, by - ay
    seg_len_sq = dx * dx + dy * dy
    if seg_len_sq == 0.0:
        return math.hypot(px - ax, py - ay)
    t = ((px - ax) * dx + (py - ay) * dy) / seg_len_sq
    t = max(0.0, min(1.0, t))
    return math.hypot(px - (ax + t * dx), py - (ay + t * dy))


def boundary_distance_degrees(p: GeoPoint, poly: ZipPolygon) -> float:
    """Distance in degrees from p to the polygon; 0 if inside or on it.

    Exterior points (including points inside holes) get the minimum
    Euclidean degree-space distance to any boundary segment of any ring.
    """
    if point_in_polygon(p, poly):
        return 0.0
    best = math.inf
    for ring in poly.rings:
        for i in range(len(ring) - 1):
            d = _point_segment_distance(p, ring[i], ring[i + 1])
            if d < best:
                best = d
    return best


def degrees_to_approx_miles(d: float) -> float:
    """Display conversion: one degree is (very) roughly 50 miles."""
    if d < 0:
        raise ValueError("distance in degrees must be nonnegative")
    return MILES_PER_DEGREE * d
