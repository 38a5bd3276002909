"""Planar polygon geometry for the regions of a partition.

Coordinates are metres in a projected CRS. Rings are stored open (the closing
vertex is dropped) as ``(k, 2)`` float arrays.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidGeometryError, ParseError

log = logging.getLogger(__name__)


def _as_ring(vertices) -> np.ndarray:
    ring = np.asarray(vertices, dtype=float)
    if ring.ndim != 2 or ring.shape[1] != 2:
        raise InvalidGeometryError(f"ring must be a sequence of (x, y) pairs, got shape {ring.shape}")
    if len(ring) > 1 and np.array_equal(ring[0], ring[-1]):
        ring = ring[:-1]
    if len(ring) < 3:
        raise InvalidGeometryError(f"degenerate ring with {len(ring)} distinct vertices")
    return ring


def ring_area(ring: np.ndarray) -> float:
    """Signed shoelace area (positive for counter-clockwise rings)."""
    x, y = ring[:, 0], ring[:, 1]
    # shift to the first vertex so large projected offsets do not cancel
    x = x - x[0]
    y = y - y[0]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _segments_intersect(p1, p2, q1, q2) -> np.ndarray:
    """Vectorised closed-segment intersection test; q1, q2 are arrays."""

    def orient(a, b, c):
        return (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (
            c[..., 0] - a[..., 0]
        )

    def on_seg(a, b, c):
        return (
            (np.minimum(a[..., 0], b[..., 0]) <= c[..., 0])
            & (c[..., 0] <= np.maximum(a[..., 0], b[..., 0]))
            & (np.minimum(a[..., 1], b[..., 1]) <= c[..., 1])
            & (c[..., 1] <= np.maximum(a[..., 1], b[..., 1]))
        )

    p1 = np.broadcast_to(p1, q1.shape)
    p2 = np.broadcast_to(p2, q1.shape)
    d1 = orient(q1, q2, p1)
    d2 = orient(q1, q2, p2)
    d3 = orient(p1, p2, q1)
    d4 = orient(p1, p2, q2)
    proper = (np.sign(d1) * np.sign(d2) < 0) & (np.sign(d3) * np.sign(d4) < 0)
    touch = (
        ((d1 == 0) & on_seg(q1, q2, p1))
        | ((d2 == 0) & on_seg(q1, q2, p2))
        | ((d3 == 0) & on_seg(p1, p2, q1))
        | ((d4 == 0) & on_seg(p1, p2, q2))
    )
    return proper | touch


def ring_is_simple(ring: np.ndarray) -> bool:
    """True if no two non-adjacent edges of the closed ring intersect."""
    n = len(ring)
    a = ring
    b = np.roll(ring, -1, axis=0)
    for i in range(n):
        # edges i+2 .. n-1, skipping the edge adjacent through the closing vertex
        js = np.arange(i + 2, n if i > 0 else n - 1)
        if js.size == 0:
            continue
        if np.any(_segments_intersect(a[i], b[i], a[js], b[js])):
            return False
    return True


def _ring_point_test(ring: np.ndarray, pts: np.ndarray, tol: float):
    """Return (strictly-inside-by-even-odd, on-boundary) masks for ``pts``."""
    x = pts[:, 0]
    y = pts[:, 1]
    inside = np.zeros(len(pts), dtype=bool)
    on_edge = np.zeros(len(pts), dtype=bool)
    n = len(ring)
    for i in range(n):
        x1, y1 = ring[i]
        x2, y2 = ring[(i + 1) % n]
        crosses = (y1 > y) != (y2 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (x < xint)
        dx, dy = x2 - x1, y2 - y1
        seg_len = np.hypot(dx, dy)
        cross = (x - x1) * dy - (y - y1) * dx
        dot = (x - x1) * dx + (y - y1) * dy
        on_edge |= (np.abs(cross) <= tol * max(seg_len, 1.0)) & (dot >= -tol) & (dot <= seg_len**2 + tol)
    return inside, on_edge


@dataclass(frozen=True, eq=False)
class Polygon:
    shell: np.ndarray
    holes: tuple = ()

    def contains_many(self, pts: np.ndarray, tol: float) -> np.ndarray:
        inside, edge = _ring_point_test(self.shell, pts, tol)
        result = inside | edge
        for hole in self.holes:
            h_in, h_edge = _ring_point_test(hole, pts, tol)
            result &= ~(h_in & ~h_edge)
        return result

    @property
    def area(self) -> float:
        return abs(ring_area(self.shell)) - sum(abs(ring_area(h)) for h in self.holes)


@dataclass(frozen=True, eq=False)
class Region:
    """One areal unit: an id and one or more polygons (outer ring + holes)."""

    id: str
    polygons: tuple
    bbox: tuple = field(init=False)

    def __post_init__(self):
        if not self.polygons:
            raise InvalidGeometryError(f"region {self.id!r} has no polygons")
        shells = np.vstack([p.shell for p in self.polygons])
        lo = shells.min(axis=0)
        hi = shells.max(axis=0)
        object.__setattr__(self, "bbox", (float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])))

    @classmethod
    def from_rings(cls, id: str, rings: Sequence, validate: bool = True) -> "Region":
        """Build a single-polygon region; ``rings[0]`` is the outer ring."""
        if len(rings) == 0:
            raise InvalidGeometryError(f"region {id!r} has no rings")
        parsed = [_as_ring(r) for r in rings]
        region = cls(str(id), (Polygon(parsed[0], tuple(parsed[1:])),))
        if validate:
            validate_region(region)
        return region

    @property
    def rings(self) -> list:
        return [r for p in self.polygons for r in (p.shell, *p.holes)]

    @property
    def _tol(self) -> float:
        x0, y0, x1, y1 = self.bbox
        return 1e-9 * max(1.0, x1 - x0, y1 - y0)

    def contains_many(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        x0, y0, x1, y1 = self.bbox
        tol = self._tol
        result = np.zeros(len(pts), dtype=bool)
        cand = (
            (pts[:, 0] >= x0 - tol) & (pts[:, 0] <= x1 + tol) & (pts[:, 1] >= y0 - tol) & (pts[:, 1] <= y1 + tol)
        )
        if cand.any():
            sub = pts[cand]
            hit = np.zeros(len(sub), dtype=bool)
            for poly in self.polygons:
                hit |= poly.contains_many(sub, tol)
            result[cand] = hit
        return result


def validate_region(region: Region) -> None:
    for poly in region.polygons:
        for ring in (poly.shell, *poly.holes):
            if len(ring) < 3:
                raise InvalidGeometryError(f"region {region.id!r}: ring with fewer than 3 vertices")
            if not ring_is_simple(ring):
                raise InvalidGeometryError(f"region {region.id!r}: self-intersecting ring")
        for hole in poly.holes:
            inside, edge = _ring_point_test(poly.shell, hole, region._tol)
            if not np.all(inside | edge):
                raise InvalidGeometryError(f"region {region.id!r}: hole outside outer ring")
    area(region)


def contains(region: Region, p) -> bool:
    """Closed-region membership: boundary points count as inside, hole interiors do not."""
    for poly in region.polygons:
        if len(poly.shell) < 3:
            raise InvalidGeometryError(f"region {region.id!r}: degenerate ring")
    return bool(region.contains_many(np.asarray(p, dtype=float).reshape(1, 2))[0])


def area(region: Region) -> float:
    """Shoelace area of the outer ring(s) minus hole areas, in m²."""
    a = sum(p.area for p in region.polygons)
    if not a > 0:
        raise InvalidGeometryError(f"region {region.id!r} has non-positive area {a}")
    return a


@dataclass(frozen=True, eq=False)
class Partition:
    regions: tuple
    study_area_bbox: tuple = field(init=False)

    def __post_init__(self):
        ids = [r.id for r in self.regions]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise InvalidGeometryError(f"duplicate region ids: {dup}")
        if not self.regions:
            raise InvalidGeometryError("partition has no regions")
        b = np.array([r.bbox for r in self.regions])
        object.__setattr__(
            self,
            "study_area_bbox",
            (float(b[:, 0].min()), float(b[:, 1].min()), float(b[:, 2].max()), float(b[:, 3].max())),
        )

    def __len__(self):
        return len(self.regions)

    def __iter__(self):
        return iter(self.regions)

    @property
    def ids(self) -> list:
        return [r.id for r in self.regions]

    def areas(self) -> np.ndarray:
        return np.array([area(r) for r in self.regions])

    def locate(self, pts) -> np.ndarray:
        """Index of the first listed region containing each point, -1 if none."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        out = np.full(len(pts), -1, dtype=int)
        for i, region in enumerate(self.regions):
            free = out < 0
            if not free.any():
                break
            hit = region.contains_many(pts[free])
            idx = np.flatnonzero(free)[hit]
            out[idx] = i
        return out

    def contains_any(self, pts) -> np.ndarray:
        return self.locate(pts) >= 0


def check_overlap(partition: Partition, samples_per_axis: int = 8) -> None:
    """Sampled-point overlap test: interior lattice points of each region must
    not fall strictly inside any other region."""
    regions = partition.regions
    for i, ri in enumerate(regions):
        x0, y0, x1, y1 = ri.bbox
        gx = x0 + (np.arange(samples_per_axis) + 0.5) * (x1 - x0) / samples_per_axis
        gy = y0 + (np.arange(samples_per_axis) + 0.5) * (y1 - y0) / samples_per_axis
        pts = np.column_stack([a.ravel() for a in np.meshgrid(gx, gy)])
        pts = pts[ri.contains_many(pts)]
        if len(pts) == 0:
            continue
        for j, rj in enumerate(regions):
            if j == i or not _bbox_overlap(ri.bbox, rj.bbox):
                continue
            hit = rj.contains_many(pts)
            if not hit.any():
                continue
            # points on rj's boundary are shared edges, not overlap
            tol = rj._tol
            interior = np.zeros(hit.sum(), dtype=bool)
            for poly in rj.polygons:
                inside, edge = _ring_point_test(poly.shell, pts[hit], tol)
                interior |= inside & ~edge
            if interior.any():
                raise InvalidGeometryError(f"regions {ri.id!r} and {rj.id!r} overlap")


def _bbox_overlap(a, b) -> bool:
    return a[0] < b[2] and b[0] < a[2] and a[1] < b[3] and b[1] < a[3]


def _polygon_from_coords(coords, fid) -> Polygon:
    rings = []
    for ring in coords:
        arr = np.asarray(ring, dtype=float)
        if arr.ndim != 2 or arr.shape[1] < 2:
            raise ParseError(f"feature {fid!r}: malformed ring")
        arr = arr[:, :2]
        if len(arr) < 4 or not np.array_equal(arr[0], arr[-1]):
            if len(arr) >= 1 and not np.array_equal(arr[0], arr[-1]):
                raise ParseError(f"feature {fid!r}: unclosed ring")
            raise ParseError(f"feature {fid!r}: degenerate ring with {len(arr) - 1} vertices")
        rings.append(arr[:-1])
    if not rings:
        raise ParseError(f"feature {fid!r}: polygon without rings")
    return Polygon(rings[0], tuple(rings[1:]))


def load_partition(source, check_overlaps: bool = True) -> Partition:
    """Parse a GeoJSON FeatureCollection of Polygon/MultiPolygon features.

    ``source`` may be a mapping, a JSON string, or a path. Feature ids come from
    ``properties.id``; feature order is preserved.
    """
    if isinstance(source, (str, os.PathLike)) and not str(source).lstrip().startswith("{"):
        with open(source) as fh:
            doc = json.load(fh)
    elif isinstance(source, str):
        doc = json.loads(source)
    else:
        doc = source
    if doc.get("type") != "FeatureCollection":
        raise ParseError("expected a GeoJSON FeatureCollection")
    regions = []
    for k, feat in enumerate(doc.get("features", [])):
        props = feat.get("properties") or {}
        if "id" not in props or props["id"] is None:
            raise ParseError(f"feature #{k} has no 'id' property")
        fid = str(props["id"])
        geom = feat.get("geometry") or {}
        gtype = geom.get("type")
        if gtype == "Polygon":
            polys = [_polygon_from_coords(geom["coordinates"], fid)]
        elif gtype == "MultiPolygon":
            polys = [_polygon_from_coords(c, fid) for c in geom["coordinates"]]
        else:
            raise ParseError(f"feature {fid!r}: unsupported geometry type {gtype!r}")
        region = Region(fid, tuple(polys))
        try:
            validate_region(region)
        except InvalidGeometryError as exc:
            raise ParseError(f"feature {fid!r}: {exc}") from exc
        regions.append(region)
    try:
        partition = Partition(tuple(regions))
        if check_overlaps:
            check_overlap(partition)
    except InvalidGeometryError as exc:
        raise ParseError(str(exc)) from exc
    return partition


def partition_to_geojson(partition: Partition) -> dict:
    feats = []
    for r in partition.regions:
        polys = []
        for p in r.polygons:
            rings = [np.vstack([ring, ring[:1]]).tolist() for ring in (p.shell, *p.holes)]
            polys.append(rings)
        if len(polys) == 1:
            geom = {"type": "Polygon", "coordinates": polys[0]}
        else:
            geom = {"type": "MultiPolygon", "coordinates": polys}
        feats.append({"type": "Feature", "properties": {"id": r.id}, "geometry": geom})
    return {"type": "FeatureCollection", "features": feats}


def square_partition(nx: int, ny: int, size: float, origin=(0.0, 0.0), prefix: str = "R") -> Partition:
    """Regular ``nx`` by ``ny`` lattice of square regions, row-major from the lower left."""
    x0, y0 = origin
    regions = []
    for j in range(ny):
        for i in range(nx):
            a, b = x0 + i * size, y0 + j * size
            ring = [(a, b), (a + size, b), (a + size, b + size), (a, b + size)]
            regions.append(Region.from_rings(f"{prefix}{j * nx + i:03d}", [ring], validate=False))
    return Partition(tuple(regions))


def points_in_bbox_lattice(bbox: Iterable[float], spacing: float) -> np.ndarray:
    x0, y0, x1, y1 = bbox
    xs = np.arange(x0 + spacing / 2, x1, spacing)
    ys = np.arange(y0 + spacing / 2, y1, spacing)
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()])
