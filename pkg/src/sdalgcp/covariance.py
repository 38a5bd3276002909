"""Correlation kernels, region-pair correlation sums, and the per-phi cache.

For each candidate scale on the phi grid the cache holds the region
correlation matrix R(phi), whose (i, j) entry is the weighted double sum of
rho(||x_k - x_k'||; phi) over the two regions' quadrature points. The latent
covariance is sigma2 * R(phi).
"""

from __future__ import annotations

import hashlib
import logging
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import gamma as gamma_fn
from scipy.special import kv

from .errors import DegenerateWeightError, NumericalDegeneracyError

log = logging.getLogger(__name__)

JITTER_START = 1e-10
JITTER_MAX = 1e-6


def matern_corr(u, phi: float, kappa: float = 0.5):
    """Matérn correlation at distance ``u``; exactly exp(-u/phi) when kappa = 0.5."""
    u = np.asarray(u, dtype=float)
    if np.any(u < 0):
        raise ValueError("distance must be non-negative")
    if not phi > 0 or not kappa > 0:
        raise ValueError("phi and kappa must be positive")
    if kappa == 0.5:
        out = np.exp(-u / phi)
    else:
        r = u / phi
        with np.errstate(invalid="ignore", over="ignore"):
            out = (r**kappa) * kv(kappa, r) / (2.0 ** (kappa - 1.0) * gamma_fn(kappa))
        out = np.where(r == 0, 1.0, out)
        # kv underflows to 0 for large arguments, leaving nan via 0*inf guards
        out = np.nan_to_num(out, nan=0.0)
    return out if out.ndim else float(out)


def exp_corr(u, phi: float):
    return np.exp(-np.asarray(u, dtype=float) / phi)


def _pair_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.hypot(a[:, 0, None] - b[None, :, 0], a[:, 1, None] - b[None, :, 1])


def region_pair_corr(qi, qj, phi: float, kappa: float = 0.5) -> float:
    """Weighted average of rho over all point pairs of two quadrature sets."""
    wi = np.asarray(qi.weights, dtype=float)
    wj = np.asarray(qj.weights, dtype=float)
    denom = wi.sum() * wj.sum()
    if not denom > 0:
        raise DegenerateWeightError(f"regions {qi.region_id!r}/{qj.region_id!r}: all weight products zero")
    rho = matern_corr(_pair_distances(np.asarray(qi.points), np.asarray(qj.points)), phi, kappa)
    return float(wi @ rho @ wj / denom)


class DistanceTable:
    """Point-to-point distances grouped by region, computed once per quadrature level."""

    def __init__(self, quads):
        self.quads = list(quads)
        self.points = np.vstack([np.asarray(q.points, dtype=float) for q in self.quads])
        self.weights = np.concatenate([np.asarray(q.weights, dtype=float) for q in self.quads])
        sizes = np.array([len(q.points) for q in self.quads])
        self.starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        self.stops = self.starts + sizes
        self.totals = np.array([self.weights[a:b].sum() for a, b in zip(self.starts, self.stops)])
        if np.any(self.totals <= 0):
            bad = self.quads[int(np.argmin(self.totals))].region_id
            raise DegenerateWeightError(f"region {bad!r}: weights sum to zero")
        P = len(self.points)
        self._blocks = None
        if P * P <= 2.5e7:
            self._blocks = [self._block(i) for i in range(len(self.quads))]

    def _block(self, i: int) -> np.ndarray:
        a, b = self.starts[i], self.stops[i]
        return _pair_distances(self.points[a:b], self.points)

    def block(self, i: int) -> np.ndarray:
        return self._blocks[i] if self._blocks is not None else self._block(i)

    def corr(self, phi: float, kappa: float = 0.5) -> np.ndarray:
        n = len(self.quads)
        R = np.empty((n, n))
        for i in range(n):
            a, b = self.starts[i], self.stops[i]
            rho = matern_corr(self.block(i), phi, kappa)
            row = (self.weights[a:b] @ rho) * self.weights
            R[i] = np.add.reduceat(row, self.starts)
        R /= np.outer(self.totals, self.totals)
        return 0.5 * (R + R.T)


def corr_matrix(quads, phi: float, kappa: float = 0.5) -> np.ndarray:
    """Full n x n matrix of region-pair correlations at one phi."""
    return DistanceTable(quads).corr(phi, kappa)


@dataclass(frozen=True)
class PhiGrid:
    values: np.ndarray = field(default_factory=lambda: np.linspace(50.0, 2000.0, 100))

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if v.size == 0 or np.any(v <= 0) or np.any(np.diff(v) <= 0):
            raise ValueError("phi grid must be positive and strictly increasing")
        object.__setattr__(self, "values", v)

    @classmethod
    def parse(cls, spec: str) -> "PhiGrid":
        """``lo:hi:n`` for n equally spaced values."""
        lo, hi, n = spec.split(":")
        return cls(np.linspace(float(lo), float(hi), int(n)))

    def __len__(self):
        return len(self.values)

    def index(self, phi: float) -> int:
        idx = int(np.argmin(np.abs(self.values - phi)))
        if not np.isclose(self.values[idx], phi, rtol=1e-9, atol=0):
            raise KeyError(f"phi={phi} is not on the grid")
        return idx

    @property
    def median(self) -> float:
        return float(self.values[(len(self.values) - 1) // 2])


@dataclass(frozen=True, eq=False)
class CacheEntry:
    """R is stored without jitter; chol, logdet and inv include it."""

    phi: float
    R: np.ndarray
    chol: np.ndarray
    logdet: float
    inv: np.ndarray
    jitter: float = 0.0


def factorize(R: np.ndarray, phi: float = float("nan")) -> CacheEntry:
    """Cholesky, log-determinant and inverse of R, escalating diagonal jitter if needed."""
    n = len(R)
    jitter = 0.0
    while True:
        try:
            Rj = R + jitter * np.eye(n) if jitter else R
            L = np.linalg.cholesky(Rj)
            break
        except np.linalg.LinAlgError:
            jitter = JITTER_START if jitter == 0 else jitter * 10
            if jitter > JITTER_MAX * 1.0001:
                raise NumericalDegeneracyError(f"R(phi={phi:g}) not positive definite after jitter {JITTER_MAX:g}")
            log.info("adding jitter %.0e to R(phi=%g)", jitter, phi)
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    inv = linalg.cho_solve((L, True), np.eye(n))
    inv = 0.5 * (inv + inv.T)
    return CacheEntry(float(phi), R, L, logdet, inv, jitter)


@dataclass(frozen=True, eq=False)
class CovarianceCache:
    grid: PhiGrid
    entries: tuple
    kappa: float = 0.5

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, i) -> CacheEntry:
        return self.entries[i]

    def entry(self, phi: float) -> CacheEntry:
        return self.entries[self.grid.index(phi)]

    @property
    def n(self) -> int:
        return len(self.entries[0].R)


def build_cache(quads, grid: PhiGrid, kappa: float = 0.5, threads: int = 1) -> CovarianceCache:
    """Correlation matrices and their factorizations for every phi on the grid."""
    table = DistanceTable(quads)

    def one(phi):
        return factorize(table.corr(phi, kappa), phi)

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(threads) as pool:
            entries = tuple(pool.map(one, grid.values))
    else:
        entries = tuple(one(phi) for phi in grid.values)
    return CovarianceCache(grid, entries, kappa)


# ---------------------------------------------------------------------------
# binary cache file: header, then little-endian float64 payload

_MAGIC = b"SDACACHE"
_VERSION = 1
_HEADER = struct.Struct("<8sIII32s")


def cache_key(partition_hash: str, seed: int, grid: PhiGrid, extra: str = "") -> bytes:
    h = hashlib.sha256()
    h.update(partition_hash.encode())
    h.update(str(int(seed)).encode())
    h.update(np.asarray(grid.values, dtype="<f8").tobytes())
    h.update(extra.encode())
    return h.digest()


def partition_hash(partition) -> str:
    h = hashlib.sha256()
    for r in partition:
        h.update(r.id.encode())
        for ring in r.rings:
            h.update(np.asarray(ring, dtype="<f8").tobytes())
    return h.hexdigest()


def save_cache(cache: CovarianceCache, path, key: bytes) -> None:
    G, n = len(cache), cache.n
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, n, G, key))
        fh.write(np.float64(cache.kappa).astype("<f8").tobytes())
        fh.write(np.asarray(cache.grid.values, dtype="<f8").tobytes())
        fh.write(np.array([e.jitter for e in cache.entries], dtype="<f8").tobytes())
        for e in cache.entries:
            fh.write(np.ascontiguousarray(e.R, dtype="<f8").tobytes())


def load_cache(path, key: bytes | None = None) -> CovarianceCache:
    """Load a cache file; returns None when ``key`` does not match the stored key."""
    with open(path, "rb") as fh:
        magic, version, n, G, stored = _HEADER.unpack(fh.read(_HEADER.size))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a covariance cache file")
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported cache version {version}")
        if key is not None and stored != key:
            return None
        payload = np.frombuffer(fh.read(), dtype="<f8")
    kappa = float(payload[0])
    grid = PhiGrid(payload[1 : 1 + G].copy())
    jitters = payload[1 + G : 1 + 2 * G]
    mats = payload[1 + 2 * G :].reshape(G, n, n)
    entries = []
    for phi, jit, R in zip(grid.values, jitters, mats):
        e = factorize(R.copy(), phi)
        if e.jitter != jit:
            log.info("cache reload: jitter %g differs from stored %g at phi=%g", e.jitter, jit, phi)
        entries.append(e)
    return CovarianceCache(grid, tuple(entries), kappa)
