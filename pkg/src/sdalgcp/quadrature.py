"""Per-region quadrature points by weighted simple sequential inhibition.

Points are proposed uniformly over the region, accepted with probability
w(x) / w_max, and must keep an inhibition distance from every earlier point.
The number of points follows from a packing density, either fixed or grown
adaptively until the region-pair correlation integral stabilises.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import covariance
from .errors import DegenerateWeightError
from .geometry import Partition, Region, area
from .raster import PopulationRaster, region_mass, region_max_density, sample_many
from .seeding import rng_for

log = logging.getLogger(__name__)

MAX_PACKING = math.pi / math.sqrt(12)

WeightFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class QuadratureConfig:
    delta: float | None = None
    gamma: float = 0.55
    mode: str = "non-adaptive"
    batch_size_k: int = 20
    rel_tol_eps: float = 1e-3
    max_attempts_per_point: int = 2000
    max_rounds: int = 60
    min_delta_frac: float = 0.1

    def __post_init__(self):
        if not 0 < self.gamma <= MAX_PACKING:
            raise ValueError(f"gamma must lie in (0, {MAX_PACKING:.4f}], got {self.gamma}")
        if self.delta is not None and not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if not self.rel_tol_eps > 0:
            raise ValueError("rel_tol_eps must be positive")
        if self.mode not in ("non-adaptive", "adaptive"):
            raise ValueError(f"unknown quadrature mode {self.mode!r}")
        if self.batch_size_k < 1 or self.max_attempts_per_point < 1:
            raise ValueError("batch_size_k and max_attempts_per_point must be positive")


@dataclass(frozen=True, eq=False)
class QuadratureSet:
    region_id: str
    points: np.ndarray
    weights: np.ndarray
    weighting: str = "uniform"

    def __len__(self):
        return len(self.points)


def default_delta(areas: Sequence[float]) -> float:
    """A quarter of the square root of the median region area."""
    return 0.25 * math.sqrt(float(np.median(areas)))


def point_budget(config: QuadratureConfig, region_area: float, delta: float | None = None) -> int:
    """Number of points giving packing density ``gamma`` at inhibition distance ``delta``."""
    delta = config.delta if delta is None else delta
    if delta is None:
        raise ValueError("point_budget needs an inhibition distance")
    if not region_area > 0:
        raise ValueError("region_area must be positive")
    return max(1, math.ceil(4.0 * config.gamma * region_area / (math.pi * delta**2)))


def uniform_weight(region: Region) -> WeightFn:
    a = area(region)

    def fn(pts):
        return np.full(len(np.atleast_2d(pts)), 1.0 / a)

    return fn


def population_weight(raster: PopulationRaster, region: Region, per_m2: bool = False) -> WeightFn:
    """w_i(x) = m(x) / m_i read from the raster."""
    mass = region_mass(raster, region, per_m2=per_m2)

    def fn(pts):
        return sample_many(raster, pts) / mass

    fn.mass = mass
    fn.w_max = region_max_density(raster, region) / mass
    return fn


def _probe_max(region: Region, weight_fn: WeightFn, n: int = 64) -> float:
    x0, y0, x1, y1 = region.bbox
    xs = np.linspace(x0, x1, n)
    ys = np.linspace(y0, y1, n)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    pts = pts[region.contains_many(pts)]
    pts = np.vstack([pts, np.vstack([p.shell for p in region.polygons])])
    return float(np.max(weight_fn(pts))) if len(pts) else 0.0


class InhibitionSampler:
    """Sequential inhibition sampler for one region that can be extended in batches."""

    def __init__(self, region: Region, weight_fn: WeightFn, rng: np.random.Generator,
                 weighting: str = "population", w_max: float | None = None,
                 min_delta_frac: float = 0.1, max_attempts: int = 2000):
        self.region = region
        self.weight_fn = weight_fn
        self.rng = rng
        self.weighting = weighting
        if w_max is None:
            w_max = getattr(weight_fn, "w_max", None)
        if w_max is None:
            w_max = _probe_max(region, weight_fn)
        if not w_max > 0:
            raise DegenerateWeightError(f"region {region.id!r}: weight is zero everywhere")
        self.w_max = float(w_max)
        self.min_delta_frac = min_delta_frac
        self.max_attempts = max_attempts
        self.points = np.empty((0, 2))
        self.weights = np.empty(0)
        self.relaxations = 0

    def _thresholds(self, delta: float) -> np.ndarray:
        if self.weighting == "uniform":
            return np.full(len(self.weights), delta)
        shrink = delta * (1.0 - self.weights / self.w_max)
        return np.maximum(self.min_delta_frac * delta, shrink)

    def _proposals(self, size: int):
        x0, y0, x1, y1 = self.region.bbox
        xy = self.rng.uniform((x0, y0), (x1, y1), size=(size, 2))
        u = self.rng.uniform(size=size)
        return xy, u

    def extend(self, count: int, delta: float) -> float:
        """Add ``count`` points; returns the inhibition distance finally used."""
        new_pts = []
        new_w = []
        pts = self.points
        thr = self._thresholds(delta)
        attempts = 0
        while len(new_pts) < count:
            xy, u = self._proposals(128)
            inside = self.region.contains_many(xy)
            xy, u = xy[inside], u[inside]
            if len(xy) == 0:
                continue
            w = self.weight_fn(xy)
            for x, ui, wi in zip(xy, u, w):
                attempts += 1
                if wi > self.w_max:
                    self.w_max = float(wi)
                    thr = self._thresholds(delta)
                ok = ui <= wi / self.w_max and wi > 0
                if ok and len(pts):
                    d = np.hypot(pts[:, 0] - x[0], pts[:, 1] - x[1])
                    ok = bool(np.all(d > thr))
                if ok:
                    pts = np.vstack([pts, x])
                    self.weights = np.append(self.weights, wi)
                    thr = self._thresholds(delta)
                    new_pts.append(x)
                    attempts = 0
                    if len(new_pts) == count:
                        break
                elif attempts >= self.max_attempts:
                    delta *= 0.9
                    self.relaxations += 1
                    log.info("region %s: relaxing inhibition distance to %.4g after %d attempts",
                             self.region.id, delta, attempts)
                    thr = self._thresholds(delta)
                    attempts = 0
        self.points = pts
        return delta

    def to_set(self) -> QuadratureSet:
        return QuadratureSet(self.region.id, self.points.copy(), self.weights.copy(), self.weighting)


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


def sample_inhibition(region: Region, weight_fn: WeightFn, config: QuadratureConfig, L: int,
                      rng_seed, weighting: str = "population", w_max: float | None = None) -> QuadratureSet:
    """Draw exactly ``L`` inhibition-separated points in ``region``.

    If the ``max_attempts_per_point`` budget runs out, the inhibition distance is
    relaxed by a factor 0.9 and sampling continues.
    """
    delta = config.delta if config.delta is not None else default_delta([area(region)])
    sampler = InhibitionSampler(region, weight_fn, _as_rng(rng_seed), weighting, w_max,
                                config.min_delta_frac, config.max_attempts_per_point)
    sampler.extend(int(L), delta)
    return sampler.to_set()


def weight_functions(partition: Partition, weighting: str, raster: PopulationRaster | None = None,
                     per_m2: bool = False) -> list:
    if weighting == "uniform":
        return [uniform_weight(r) for r in partition]
    if weighting == "population":
        if raster is None:
            raise ValueError("population weighting needs a raster")
        return [population_weight(raster, r, per_m2) for r in partition]
    raise ValueError(f"unknown weighting {weighting!r}")


def build_quadrature(partition: Partition, config: QuadratureConfig, weighting: str = "uniform",
                     raster: PopulationRaster | None = None, seed: int = 0,
                     per_m2: bool = False) -> list:
    """Non-adaptive quadrature sets for every region of the partition."""
    areas = partition.areas()
    delta = config.delta if config.delta is not None else default_delta(areas)
    cfg = replace(config, delta=delta)
    wfs = weight_functions(partition, weighting, raster, per_m2)
    quads = []
    for region, a, wf in zip(partition, areas, wfs):
        L = point_budget(cfg, a)
        quads.append(sample_inhibition(region, wf, cfg, L, rng_for(seed, "quadrature", region.id), weighting))
    return quads


@dataclass
class AdaptiveResult:
    sets: list
    value: object
    rounds: int
    converged: bool
    history: list = field(default_factory=list)

    def __iter__(self):
        # (qi, qj, value) unpacking for the pair case
        return iter((*self.sets, self.value))


def _initial_delta(config: QuadratureConfig, region_area: float, delta: float) -> float:
    k = config.batch_size_k
    cap = math.sqrt(4.0 * config.gamma * region_area / (k * math.pi))
    return min(delta, cap)


def _adaptive_loop(samplers, areas, delta, phi, config, evaluate, rel_change):
    k = config.batch_size_k
    base = [_initial_delta(config, a, delta) for a in areas]
    for s, d in zip(samplers, base):
        s.extend(k, d)
    I_old = evaluate()
    history = [I_old]
    for r in range(2, config.max_rounds + 1):
        # packing intensity gamma(k)/r for the r-th batch of k points
        for s, d in zip(samplers, base):
            s.extend(k, d / math.sqrt(r))
        I_new = evaluate()
        history.append(I_new)
        if rel_change(I_old, I_new) < config.rel_tol_eps or np.array_equal(I_old, I_new):
            return I_new, r - 1, True, history
        I_old = I_new
    log.warning("adaptive quadrature did not converge in %d rounds (phi=%g)", config.max_rounds, phi)
    return history[-1], config.max_rounds - 1, False, history


def adaptive_quadrature(region_pair, weight_fns, phi: float, config: QuadratureConfig, seed: int = 0,
                        weighting: str = "uniform") -> AdaptiveResult:
    """Adaptive refinement of the quadrature for one region pair at scale ``phi``.

    Batches of ``k`` points are added to both regions, the r-th batch at packing
    intensity gamma(k)/r, until successive values of the pair correlation differ
    by less than ``rel_tol_eps`` relative to the newer value. Unpacks as
    ``(qi, qj, value)``; ``rounds`` counts refinement steps after the first batch.
    """
    if not phi > 0:
        raise ValueError("phi must be positive")
    ri, rj = region_pair
    wi, wj = weight_fns
    areas = [area(ri), area(rj)]
    delta = config.delta if config.delta is not None else default_delta(areas)
    samplers = [
        InhibitionSampler(r, w, rng_for(seed, "adaptive", r.id, tag), weighting,
                          min_delta_frac=config.min_delta_frac, max_attempts=config.max_attempts_per_point)
        for r, w, tag in ((ri, wi, 0), (rj, wj, 1))
    ]

    def evaluate():
        a, b = samplers[0].to_set(), samplers[1].to_set()
        return covariance.region_pair_corr(a, b, phi)

    value, rounds, ok, hist = _adaptive_loop(samplers, areas, delta, phi, config, evaluate,
                                              lambda o, n: abs(o - n) / abs(n))
    return AdaptiveResult([s.to_set() for s in samplers], value, rounds, ok, hist)


def adaptive_partition_quadrature(partition: Partition, weight_fns, phi: float, config: QuadratureConfig,
                                  seed: int = 0, weighting: str = "uniform") -> AdaptiveResult:
    """Refine all regions jointly until R(phi) is stable to ``rel_tol_eps`` in relative Frobenius norm."""
    areas = partition.areas()
    delta = config.delta if config.delta is not None else default_delta(areas)
    samplers = [
        InhibitionSampler(r, w, rng_for(seed, "quadrature", r.id), weighting,
                          min_delta_frac=config.min_delta_frac, max_attempts=config.max_attempts_per_point)
        for r, w in zip(partition, weight_fns)
    ]

    def evaluate():
        return covariance.corr_matrix([s.to_set() for s in samplers], phi)

    def rel_change(old, new):
        # Frobenius norm: entries near zero for distant pairs would make a per-entry ratio meaningless
        return float(np.linalg.norm(old - new) / np.linalg.norm(new))

    value, rounds, ok, hist = _adaptive_loop(samplers, areas, delta, phi, config, evaluate, rel_change)
    return AdaptiveResult([s.to_set() for s in samplers], value, rounds, ok, hist)


def write_quadrature_csv(quads, path, header_comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        w.writerow(["region_id", "x", "y", "weight"])
        for q in quads:
            for (x, y), wt in zip(q.points, q.weights):
                w.writerow([q.region_id, repr(float(x)), repr(float(y)), repr(float(wt))])


def read_quadrature_csv(path) -> list:
    rows: dict = {}
    with open(path, newline="") as fh:
        for rec in csv.DictReader(line for line in fh if not line.startswith("#")):
            rows.setdefault(rec["region_id"], []).append((float(rec["x"]), float(rec["y"]), float(rec["weight"])))
    out = []
    for rid, vals in rows.items():
        arr = np.array(vals)
        out.append(QuadratureSet(rid, arr[:, :2], arr[:, 2]))
    return out
