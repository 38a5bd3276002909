"""Gridded population surface m(x): ESRI ASCII I/O, point lookup, region mass."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateOffsetError, OutOfBoundsError, ParseError
from .geometry import Region

log = logging.getLogger(__name__)

_HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")


@dataclass(frozen=True, eq=False)
class PopulationRaster:
    """Regular grid with ``values[0]`` the top (northernmost) row.

    ``origin`` is the lower-left corner of the grid in metres.
    """

    origin: tuple
    cell_size: float
    values: np.ndarray
    nodata: float | None = -9999.0

    def __post_init__(self):
        if not self.cell_size > 0:
            raise ValueError(f"cell_size must be positive, got {self.cell_size}")
        vals = np.asarray(self.values)
        if vals.ndim != 2:
            raise ValueError("raster values must be a 2-D grid")
        object.__setattr__(self, "values", vals)
        data = vals[~self.nodata_mask]
        if np.any(data < 0):
            raise ValueError("raster values must be non-negative")

    @property
    def nrows(self) -> int:
        return self.values.shape[0]

    @property
    def ncols(self) -> int:
        return self.values.shape[1]

    @property
    def nodata_mask(self) -> np.ndarray:
        if self.nodata is None:
            return np.zeros(self.values.shape, dtype=bool)
        return self.values == self.nodata

    @property
    def extent(self) -> tuple:
        x0, y0 = self.origin
        return (x0, y0, x0 + self.ncols * self.cell_size, y0 + self.nrows * self.cell_size)

    def clean_values(self) -> np.ndarray:
        """Float grid with nodata replaced by zero."""
        vals = self.values.astype(float)
        vals[self.nodata_mask] = 0.0
        return vals

    def cell_centers(self) -> np.ndarray:
        """(nrows*ncols, 2) centres in row-major order matching ``values.ravel()``."""
        x0, y0 = self.origin
        cs = self.cell_size
        xs = x0 + (np.arange(self.ncols) + 0.5) * cs
        ys = y0 + (self.nrows - np.arange(self.nrows) - 0.5) * cs
        gx, gy = np.meshgrid(xs, ys)
        return np.column_stack([gx.ravel(), gy.ravel()])

    def cell_index(self, pts) -> tuple:
        """(row, col) of the half-open cell holding each point."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        x0, y0, x1, y1 = self.extent
        x, y = pts[:, 0], pts[:, 1]
        bad = (x < x0) | (x > x1) | (y < y0) | (y > y1) | ~np.isfinite(x) | ~np.isfinite(y)
        if bad.any():
            p = pts[np.flatnonzero(bad)[0]]
            raise OutOfBoundsError(f"point ({p[0]}, {p[1]}) outside raster extent {self.extent}")
        col = np.floor((x - x0) / self.cell_size).astype(int)
        row_up = np.floor((y - y0) / self.cell_size).astype(int)
        # the far edges of the extent belong to the last cell
        col = np.minimum(col, self.ncols - 1)
        row_up = np.minimum(row_up, self.nrows - 1)
        return self.nrows - 1 - row_up, col


def sample(raster: PopulationRaster, p) -> float:
    """Value of the cell containing ``p``; nodata reads as 0."""
    return float(sample_many(raster, np.asarray(p, dtype=float).reshape(1, 2))[0])


def sample_many(raster: PopulationRaster, pts) -> np.ndarray:
    rows, cols = raster.cell_index(pts)
    vals = raster.values[rows, cols].astype(float)
    if raster.nodata is not None:
        nd = raster.values[rows, cols] == raster.nodata
        if nd.any():
            log.warning("%d lookup(s) hit nodata cells; treated as 0", int(nd.sum()))
            vals[nd] = 0.0
    return vals


def region_cells(raster: PopulationRaster, region: Region) -> np.ndarray:
    """Flat indices of cells whose centre lies in ``region``."""
    return np.flatnonzero(region.contains_many(raster.cell_centers()))


def region_mass(raster: PopulationRaster, region: Region, per_m2: bool = False) -> float:
    """m_i: sum of cell values with centres inside the region.

    With ``per_m2`` the values are densities and each is multiplied by the cell area.
    """
    idx = region_cells(raster, region)
    vals = raster.clean_values().ravel()[idx]
    mass = float(vals.sum())
    if per_m2:
        mass *= raster.cell_size**2
    if not mass > 0:
        raise DegenerateOffsetError(f"region {region.id!r} has no population support (mass {mass})")
    return mass


def region_max_density(raster: PopulationRaster, region: Region) -> float:
    """Largest cell value reachable from inside the region (probe at quarter-cell spacing)."""
    x0, y0, x1, y1 = region.bbox
    rx0, ry0, rx1, ry1 = raster.extent
    x0, y0, x1, y1 = max(x0, rx0), max(y0, ry0), min(x1, rx1), min(y1, ry1)
    step = raster.cell_size / 4
    xs = np.arange(x0 + step / 2, x1, step)
    ys = np.arange(y0 + step / 2, y1, step)
    if xs.size == 0 or ys.size == 0:
        return 0.0
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    pts = pts[region.contains_many(pts)]
    if len(pts) == 0:
        return 0.0
    rows, cols = raster.cell_index(pts)
    vals = raster.clean_values()[rows, cols]
    return float(vals.max())


# ---------------------------------------------------------------------------
# ESRI ASCII grid


def read_ascii_grid(path) -> PopulationRaster:
    """Read an ESRI ASCII grid. Integer-valued files load as an integer array."""
    with open(path) as fh:
        text = fh.read()
    return parse_ascii_grid(text)


def parse_ascii_grid(text: str) -> PopulationRaster:
    lines = text.splitlines()
    header = {}
    k = 0
    while k < len(lines):
        parts = lines[k].split()
        if not parts:
            k += 1
            continue
        key = parts[0].lower()
        if key[0].isdigit() or key[0] in "-+.":
            break
        if len(parts) != 2:
            raise ParseError(f"malformed header line: {lines[k]!r}")
        header[key] = parts[1]
        k += 1
    for key in ("ncols", "nrows", "cellsize"):
        if key not in header:
            raise ParseError(f"ASCII grid header missing {key!r}")
    ncols, nrows = int(header["ncols"]), int(header["nrows"])
    cs = float(header["cellsize"])
    if "xllcorner" in header:
        x0 = float(header["xllcorner"])
    elif "xllcenter" in header:
        x0 = float(header["xllcenter"]) - cs / 2
    else:
        raise ParseError("ASCII grid header missing xllcorner")
    if "yllcorner" in header:
        y0 = float(header["yllcorner"])
    elif "yllcenter" in header:
        y0 = float(header["yllcenter"]) - cs / 2
    else:
        raise ParseError("ASCII grid header missing yllcorner")
    tokens = " ".join(lines[k:]).split()
    if len(tokens) != nrows * ncols:
        raise ParseError(f"expected {nrows * ncols} values, found {len(tokens)}")
    is_int = all(_looks_int(t) for t in tokens) and _looks_int(header.get("nodata_value", "0"))
    dtype = np.int64 if is_int else float
    values = np.array([int(t) if is_int else float(t) for t in tokens], dtype=dtype).reshape(nrows, ncols)
    nodata = header.get("nodata_value")
    if nodata is not None:
        nodata = int(nodata) if is_int else float(nodata)
    return PopulationRaster(origin=(x0, y0), cell_size=cs, values=values, nodata=nodata)


def _looks_int(tok: str) -> bool:
    t = tok.lstrip("+-")
    return t.isdigit()


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def format_ascii_grid(raster: PopulationRaster) -> str:
    x0, y0 = raster.origin
    head = [
        f"ncols {raster.ncols}",
        f"nrows {raster.nrows}",
        f"xllcorner {_fmt(x0)}",
        f"yllcorner {_fmt(y0)}",
        f"cellsize {_fmt(raster.cell_size)}",
    ]
    if raster.nodata is not None:
        head.append(f"NODATA_value {_fmt(raster.nodata)}")
    if np.issubdtype(raster.values.dtype, np.integer):
        body = [" ".join(str(int(v)) for v in row) for row in raster.values]
    else:
        body = [" ".join(repr(float(v)) for v in row) for row in raster.values]
    return "\n".join(head + body) + "\n"


def write_ascii_grid(raster: PopulationRaster, path) -> None:
    with open(path, "w") as fh:
        fh.write(format_ascii_grid(raster))
