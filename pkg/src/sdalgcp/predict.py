"""Spatially continuous prediction of S*(x) and region-level incidence summaries.

For each latent draw eta_(j), S*(x) is Gaussian with mean
c(x)' Sigma^-1 (eta_(j) - D beta) and variance sigma2 - c(x)' Sigma^-1 c(x),
where c_i(x) = sigma2 * (weighted mean of rho(||x - x_k||) over region i's
quadrature points).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .covariance import CacheEntry, matern_corr
from .errors import DegenerateWeightError, NumericalConsistencyError
from .geometry import Partition
from .latent import LatentSample
from .model import DataVector, ModelParams
from .raster import PopulationRaster, write_ascii_grid

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PredictionGrid:
    """Prediction locations plus optional lattice layout for raster output.

    ``mask`` (nrows x ncols, row 0 at the top) marks lattice cells that are
    prediction locations; ``centers`` lists those cells in row-major order.
    """

    centers: np.ndarray
    origin: tuple | None = None
    spacing: float | None = None
    mask: np.ndarray | None = None
    mean: np.ndarray | None = None
    sd: np.ndarray | None = None
    lower95: np.ndarray | None = None
    upper95: np.ndarray | None = None
    exceedance: dict = field(default_factory=dict)

    @classmethod
    def regular(cls, partition: Partition, spacing: float = 300.0, bbox=None) -> "PredictionGrid":
        """Lattice of ``spacing`` covering ``bbox`` (default: the partition's), clipped to the regions."""
        x0, y0, x1, y1 = bbox if bbox is not None else partition.study_area_bbox
        ncols = max(1, int(np.ceil((x1 - x0) / spacing - 1e-9)))
        nrows = max(1, int(np.ceil((y1 - y0) / spacing - 1e-9)))
        xs = x0 + (np.arange(ncols) + 0.5) * spacing
        ys = y0 + (nrows - np.arange(nrows) - 0.5) * spacing
        gx, gy = np.meshgrid(xs, ys)
        pts = np.column_stack([gx.ravel(), gy.ravel()])
        inside = partition.contains_any(pts)
        return cls(pts[inside], (x0, y0), spacing, inside.reshape(nrows, ncols))

    def __len__(self):
        return len(self.centers)

    def to_raster(self, values: np.ndarray, nodata: float = -9999.0) -> PopulationRaster:
        if self.mask is None:
            raise ValueError("grid has no lattice layout")
        full = np.full(self.mask.shape, nodata, dtype=float)
        full[self.mask] = values
        return PopulationRaster(self.origin, self.spacing, full, nodata)


def cross_cov_matrix(x, quads, params: ModelParams) -> np.ndarray:
    """Rows c(x)' for each location in ``x``; shape (len(x), n)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    out = np.empty((len(x), len(quads)))
    for i, q in enumerate(quads):
        w = np.asarray(q.weights, dtype=float)
        total = w.sum()
        if not total > 0:
            raise DegenerateWeightError(f"region {q.region_id!r}: weights sum to zero")
        pts = np.asarray(q.points, dtype=float)
        d = np.hypot(x[:, 0, None] - pts[None, :, 0], x[:, 1, None] - pts[None, :, 1])
        out[:, i] = matern_corr(d, params.phi, params.kappa) @ w / total
    return params.sigma2 * out


def cross_cov_vector(x, quads, params: ModelParams) -> np.ndarray:
    """c(x): covariance between S*(x) and each region's S*_i."""
    return cross_cov_matrix(np.asarray(x, dtype=float).reshape(1, 2), quads, params)[0]


def conditional_moments(C: np.ndarray, draws: np.ndarray, data: DataVector, params: ModelParams,
                        entry: CacheEntry):
    """Per-draw means (N x G) and the shared variance (G) of S*(x) given eta."""
    Sigma_inv = entry.inv / params.sigma2
    A = C @ Sigma_inv
    resid = draws - data.D @ params.beta
    means = resid @ A.T
    var = params.sigma2 - np.einsum("ij,ij->i", A, C)
    floor = -1e-8 * params.sigma2
    if np.any(var < floor):
        raise NumericalConsistencyError(
            f"negative predictive variance {var.min():.3g} (sigma2={params.sigma2:g}); cache and quadrature disagree"
        )
    return means, np.maximum(var, 0.0)


def predict_surface(draws: LatentSample, fit, grid: PredictionGrid, quads, data: DataVector,
                    entry: CacheEntry, seed=0, thresholds=(), chunk: int = 256) -> PredictionGrid:
    """Monte Carlo summaries of exp{S*(x)} over the grid, one S* draw per eta draw.

    ``fit`` is a FitResult or the ModelParams to predict at.
    """
    params = fit if isinstance(fit, ModelParams) else fit.estimates
    rng = seed if isinstance(seed, np.random.Generator) else np.random.Generator(np.random.PCG64(seed))
    G = len(grid)
    mean = np.empty(G)
    sd = np.empty(G)
    lo = np.empty(G)
    hi = np.empty(G)
    exceed = {float(c): np.empty(G) for c in thresholds}
    eta = draws.draws
    for start in range(0, G, chunk):
        sl = slice(start, min(G, start + chunk))
        C = cross_cov_matrix(grid.centers[sl], quads, params)
        mu, var = conditional_moments(C, eta, data, params, entry)
        S = mu + np.sqrt(var) * rng.standard_normal(mu.shape)
        R = np.exp(S)
        mean[sl] = R.mean(axis=0)
        sd[sl] = R.std(axis=0, ddof=1) if len(R) > 1 else 0.0
        lo[sl], hi[sl] = np.quantile(R, [0.025, 0.975], axis=0)
        for c in exceed:
            exceed[c][sl] = (R > c).mean(axis=0)
    return replace(grid, mean=mean, sd=sd, lower95=lo, upper95=hi, exceedance=exceed)


@dataclass(frozen=True, eq=False)
class RegionPrediction:
    ids: tuple
    mean: np.ndarray
    sd: np.ndarray
    lower95: np.ndarray
    upper95: np.ndarray


def predict_regions(draws: LatentSample, data: DataVector) -> RegionPrediction:
    """Summaries of lambda_i = m_i exp(eta_i) across the draws."""
    lam = data.m * np.exp(draws.draws)
    sd = lam.std(axis=0, ddof=1) if len(lam) > 1 else np.zeros(data.n)
    lo, hi = np.quantile(lam, [0.025, 0.975], axis=0)
    ids = tuple(data.ids) if data.ids else tuple(str(i) for i in range(data.n))
    return RegionPrediction(ids, lam.mean(axis=0), sd, lo, hi)


def write_region_csv(pred: RegionPrediction, path, header_comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        w.writerow(["region_id", "mean", "sd", "lo95", "hi95"])
        for row in zip(pred.ids, pred.mean, pred.sd, pred.lower95, pred.upper95):
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


def write_surface(grid: PredictionGrid, outdir, prefix: str = "risk") -> list:
    """Write mean, sd and exceedance grids; returns the written paths."""
    import os

    paths = []
    layers = {"mean": grid.mean, "sd": grid.sd}
    for c, v in grid.exceedance.items():
        layers[f"exceed_{c:g}"] = v
    for name, values in layers.items():
        path = os.path.join(outdir, f"{prefix}_{name}.asc")
        write_ascii_grid(grid.to_raster(values), path)
        paths.append(path)
    return paths
