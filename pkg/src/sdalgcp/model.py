"""Data and parameter containers shared by the latent, mcml and predict modules."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True, eq=False)
class DataVector:
    """Counts y, offsets m and region-level design matrix D (intercept first)."""

    y: np.ndarray
    m: np.ndarray
    D: np.ndarray
    ids: tuple = ()
    covariate_names: tuple = ()

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        m = np.asarray(self.m, dtype=float).ravel()
        D = np.asarray(self.D, dtype=float)
        if D.ndim == 1:
            D = D[:, None]
        if not (len(y) == len(m) == len(D)):
            raise ValueError(f"length mismatch: y={len(y)}, m={len(m)}, D={len(D)}")
        if np.any(y < 0) or np.any(y != np.round(y)):
            raise ValueError("counts must be non-negative integers")
        if np.any(m <= 0):
            raise ValueError("offsets must be strictly positive")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "D", D)

    @classmethod
    def intercept_only(cls, y, m, ids=()):
        return cls(y, m, np.ones((len(np.ravel(y)), 1)), tuple(ids))

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def p(self) -> int:
        return self.D.shape[1]


@dataclass(frozen=True, eq=False)
class ModelParams:
    """psi = (beta, sigma2, phi); the Matérn smoothness is fixed at 0.5."""

    beta: np.ndarray
    sigma2: float
    phi: float
    kappa: float = field(default=0.5)

    def __post_init__(self):
        object.__setattr__(self, "beta", np.atleast_1d(np.asarray(self.beta, dtype=float)))
        if not self.sigma2 > 0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2}")
        if not self.phi > 0:
            raise ValueError(f"phi must be positive, got {self.phi}")

    def as_dict(self) -> dict:
        return {"beta": self.beta.tolist(), "sigma2": float(self.sigma2), "phi": float(self.phi),
                "kappa": float(self.kappa)}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        return cls(np.asarray(d["beta"]), float(d["sigma2"]), float(d["phi"]), float(d.get("kappa", 0.5)))

    def theta(self) -> np.ndarray:
        """(beta, log sigma2) vector used by the optimiser."""
        return np.append(self.beta, np.log(self.sigma2))
