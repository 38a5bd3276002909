"""Simulation study: Gaussian field on a raster, Poisson cell counts aggregated
to regions, SDA fit and prediction, and bias / RMSE / WPI / CP summaries."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .covariance import PhiGrid, build_cache
from .errors import GridSizeError, ShapeError
from .geometry import Partition, square_partition
from .latent import LatentChainConfig, run_mala
from .mcml import McmlConfig, fit
from .model import DataVector
from .predict import PredictionGrid, predict_regions, predict_surface
from .quadrature import QuadratureConfig, build_quadrature
from .raster import PopulationRaster, region_cells
from .seeding import rng_for

log = logging.getLogger(__name__)

MAX_GRF_CELLS = 20_000


@dataclass(frozen=True)
class SimScenario:
    sigma: float = 0.706
    phi: float = 800.0
    cell_size: float = 300.0
    B: int = 50
    seed: int = 1
    # layout: nx by ny square regions of region_cells x region_cells raster cells
    nx: int = 10
    ny: int = 10
    region_cells: int = 3
    cases_per_cell: float = 0.5
    population_log_sd: float = 0.5
    weighting: str = "population"
    phi_grid: str = "50:2000:40"
    n_iter: int = 22_000
    burn_in: int = 2_000
    thin: int = 2
    outer_iters: int = 2

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.B < 1:
            raise ValueError("B must be at least 1")
        if not self.phi > 0 or not self.cell_size > 0:
            raise ValueError("phi and cell_size must be positive")

    @classmethod
    def from_text(cls, text: str) -> "SimScenario":
        """Parse ``key=value`` lines; ``#`` starts a comment."""
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key not in types:
                raise ValueError(f"unknown scenario key {key!r}")
            kind = types[key]
            kw[key] = int(value) if kind == "int" else float(value) if kind == "float" else value
        return cls(**kw)

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in asdict(self).items())


@dataclass(frozen=True)
class MetricReport:
    target: str
    bias: float
    rmse: float
    wpi: float
    cp: float

    def as_dict(self) -> dict:
        return asdict(self)


def simulate_grf(centers, sigma: float, phi: float, seed, max_cells: int = MAX_GRF_CELLS) -> np.ndarray:
    """Zero-mean field with covariance sigma^2 exp(-u/phi) at ``centers`` by dense Cholesky."""
    centers = np.asarray(centers, dtype=float)
    n = len(centers)
    if n > max_cells:
        raise GridSizeError(f"{n} cells exceed the dense-Cholesky budget of {max_cells}; use a coarser grid")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.Generator(np.random.PCG64(seed))
    z = rng.standard_normal(n)
    if sigma == 0:
        return np.zeros(n)
    d = np.hypot(centers[:, 0, None] - centers[None, :, 0], centers[:, 1, None] - centers[None, :, 1])
    K = np.exp(-d / phi)
    K[np.diag_indices(n)] += 1e-10
    L = np.linalg.cholesky(K)
    return sigma * (L @ z)


@dataclass(frozen=True, eq=False)
class SimCounts:
    counts: np.ndarray
    cell_counts: np.ndarray
    cell_region: np.ndarray
    dropped: int

    @property
    def total(self) -> int:
        return int(self.cell_counts.sum())


def simulate_counts(field_values, raster: PopulationRaster, partition: Partition, seed) -> SimCounts:
    """Poisson(m(cell) exp(S(cell))) per cell, attributed to the region holding the cell centre."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.Generator(np.random.PCG64(seed))
    m = raster.clean_values().ravel()
    S = np.asarray(field_values, dtype=float).ravel()
    if S.shape != m.shape:
        raise ShapeError(f"field has {S.size} cells, raster has {m.size}")
    cell_counts = rng.poisson(m * np.exp(S))
    owner = partition.locate(raster.cell_centers())
    counts = np.bincount(owner[owner >= 0], weights=cell_counts[owner >= 0], minlength=len(partition))
    dropped = int(cell_counts[owner < 0].sum())
    if dropped:
        log.info("%d simulated events fell outside every region and were dropped", dropped)
    return SimCounts(counts.astype(np.int64), cell_counts, owner, dropped)


def metrics(truths, predictions, intervals, target: str = "region-incidence") -> MetricReport:
    """Average bias, RMSE, interval width and coverage over all regions (or cells) and replicates."""
    t = np.asarray(truths, dtype=float)
    p = np.asarray(predictions, dtype=float)
    lo, hi = (np.asarray(a, dtype=float) for a in intervals)
    if not (t.shape == p.shape == lo.shape == hi.shape):
        raise ShapeError(f"shape mismatch: truths {t.shape}, predictions {p.shape}, intervals {lo.shape}/{hi.shape}")
    err = p - t
    with np.errstate(invalid="ignore"):
        width = hi - lo
    return MetricReport(
        target=target,
        bias=float(err.mean()),
        rmse=float(math.sqrt(np.mean(err**2))),
        wpi=float(width.mean()),
        cp=float(np.mean((lo <= t) & (t <= hi))),
    )


@dataclass
class StudySetup:
    scenario: SimScenario
    partition: Partition
    raster: PopulationRaster
    quads: list
    cache: object
    cells: np.ndarray = field(default=None)
    cell_owner: np.ndarray = field(default=None)


def make_setup(scenario: SimScenario) -> StudySetup:
    """Fixed geometry, population surface, quadrature and covariance cache shared by all replicates."""
    cs = scenario.cell_size
    size = scenario.region_cells * cs
    partition = square_partition(scenario.nx, scenario.ny, size)
    nrows, ncols = scenario.ny * scenario.region_cells, scenario.nx * scenario.region_cells
    rng = rng_for(scenario.seed, "population")
    pop = scenario.cases_per_cell * np.exp(
        scenario.population_log_sd * rng.standard_normal((nrows, ncols)) - 0.5 * scenario.population_log_sd**2
    )
    raster = PopulationRaster((0.0, 0.0), cs, pop, nodata=None)
    quads = build_quadrature(partition, QuadratureConfig(), scenario.weighting, raster, seed=scenario.seed)
    cache = build_cache(quads, PhiGrid.parse(scenario.phi_grid))
    cells = raster.cell_centers()
    owner = partition.locate(cells)
    return StudySetup(scenario, partition, raster, quads, cache, cells, owner)


def run_replicate(setup: StudySetup, b: int) -> dict:
    sc = setup.scenario
    S = simulate_grf(setup.cells, sc.sigma, sc.phi, rng_for(sc.seed, "grf", b))
    sim = simulate_counts(S, setup.raster, setup.partition, rng_for(sc.seed, "counts", b))
    m_cell = setup.raster.clean_values().ravel()
    n = len(setup.partition)
    m = np.bincount(setup.cell_owner[setup.cell_owner >= 0], weights=m_cell[setup.cell_owner >= 0], minlength=n)
    data = DataVector.intercept_only(sim.counts, m, setup.partition.ids)
    chain = LatentChainConfig(sc.n_iter, sc.burn_in, sc.thin)
    cfg = McmlConfig(n_samples=chain.n_samples, outer_iters=sc.outer_iters)
    res = fit(data, setup.cache, cfg, chain, seed=int(rng_for(sc.seed, "fit", b).integers(2**31)))
    est = res.estimates
    entry = setup.cache.entry(est.phi)
    draws = run_mala(data, est, entry, chain, seed=rng_for(sc.seed, "predict-mala", b))
    regions = predict_regions(draws, data)
    inside = setup.cell_owner >= 0
    grid = PredictionGrid(setup.cells[inside])
    surface = predict_surface(draws, est, grid, setup.quads, data, entry, seed=rng_for(sc.seed, "surface", b))
    lam_true = np.bincount(setup.cell_owner[inside], weights=(m_cell * np.exp(S))[inside], minlength=n)
    return {
        "replicate": b,
        "counts": sim.counts,
        "dropped": sim.dropped,
        "fit": res,
        "region_truth": lam_true,
        "region_pred": regions,
        "risk_truth": np.exp(S[inside]),
        "surface": surface,
    }


def run_study(scenario: SimScenario, workers: int = 1, replicates=None):
    """Run all replicates; returns (metric reports, per-replicate results)."""
    setup = make_setup(scenario)
    idx = list(range(scenario.B)) if replicates is None else list(replicates)
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(run_replicate, [setup] * len(idx), idx))
    else:
        results = [run_replicate(setup, b) for b in idx]
    return summarize(results), results


def summarize(results) -> list:
    reg = metrics(
        np.array([r["region_truth"] for r in results]),
        np.array([r["region_pred"].mean for r in results]),
        (np.array([r["region_pred"].lower95 for r in results]), np.array([r["region_pred"].upper95 for r in results])),
        "region-incidence",
    )
    cont = metrics(
        np.array([r["risk_truth"] for r in results]),
        np.array([r["surface"].mean for r in results]),
        (np.array([r["surface"].lower95 for r in results]), np.array([r["surface"].upper95 for r in results])),
        "continuous-risk",
    )
    return [reg, cont]
