"""Conditional distribution of the linear predictor eta given the counts.

The mode and curvature come from Newton iterations on

    log f(eta | y) = sum_i (y_i eta_i - m_i exp(eta_i)) - (eta - D beta)' Sigma^-1 (eta - D beta) / 2,

and draws from a Metropolis-adjusted Langevin chain run on the standardised
vector L^-1 (eta - eta_hat), where L L' is the inverse negative Hessian at the mode.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .covariance import CacheEntry
from .errors import ConvergenceError
from .model import DataVector, ModelParams

log = logging.getLogger(__name__)

TARGET_ACCEPTANCE = 0.574


@dataclass(frozen=True)
class LatentChainConfig:
    n_iter: int = 110_000
    burn_in: int = 10_000
    thin: int = 10
    step_size: float | None = None
    target_acceptance: float = TARGET_ACCEPTANCE
    adapt: bool = True

    def __post_init__(self):
        if not self.burn_in < self.n_iter:
            raise ValueError("burn_in must be smaller than n_iter")
        if self.thin < 1:
            raise ValueError("thin must be at least 1")
        if (self.n_iter - self.burn_in) % self.thin:
            raise ValueError("n_iter - burn_in must be a multiple of thin")

    @property
    def n_samples(self) -> int:
        return (self.n_iter - self.burn_in) // self.thin


@dataclass(frozen=True, eq=False)
class LatentSample:
    draws: np.ndarray
    acceptance_rate: float
    eta_hat: np.ndarray
    Sigma_hat: np.ndarray
    step_size: float
    accepted: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=bool))
    iterations: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))

    @property
    def N(self) -> int:
        return len(self.draws)

    @property
    def warning(self) -> bool:
        return not 0.1 <= self.acceptance_rate <= 0.9


def log_conditional(eta, data: DataVector, mu, Q) -> float:
    r = eta - mu
    return float(np.dot(data.y, eta) - np.dot(data.m, np.exp(eta)) - 0.5 * r @ Q @ r)


def grad_log_conditional(eta, data: DataVector, mu, Q) -> np.ndarray:
    return data.y - data.m * np.exp(eta) - Q @ (eta - mu)


def conditional_mode(data: DataVector, params: ModelParams, cache_entry: CacheEntry,
                     max_iter: int = 100, tol: float = 1e-8):
    """Mode eta_hat of f(eta | y) and Sigma_hat = (Sigma^-1 + diag(m exp(eta_hat)))^-1."""
    if cache_entry.phi == cache_entry.phi and not np.isclose(cache_entry.phi, params.phi):
        raise ValueError(f"cache entry phi={cache_entry.phi} does not match params phi={params.phi}")
    Q = cache_entry.inv / params.sigma2
    mu = data.D @ params.beta
    eta = mu.copy()
    f = log_conditional(eta, data, mu, Q)
    for it in range(max_iter):
        e = data.m * np.exp(eta)
        g = data.y - e - Q @ (eta - mu)
        if np.max(np.abs(g)) < tol:
            break
        H = Q + np.diag(e)
        step = linalg.solve(H, g, assume_a="pos")
        t = 1.0
        while True:
            cand = eta + t * step
            f_new = log_conditional(cand, data, mu, Q)
            if f_new >= f - 1e-12 * abs(f) or t < 1e-10:
                break
            t *= 0.5
        move = np.max(np.abs(cand - eta))
        eta, f = cand, f_new
        if move <= 4 * np.finfo(float).eps * (1.0 + np.max(np.abs(eta))):
            # further Newton steps are below roundoff
            break
    else:
        raise ConvergenceError(f"Newton iterations for the conditional mode did not converge in {max_iter} steps")
    H = Q + np.diag(data.m * np.exp(eta))
    Sigma_hat = linalg.cho_solve((linalg.cholesky(H, lower=True), True), np.eye(data.n))
    return eta, 0.5 * (Sigma_hat + Sigma_hat.T)


def run_mala(data: DataVector, params: ModelParams, cache_entry: CacheEntry,
             config: LatentChainConfig | None = None, seed=0) -> LatentSample:
    """MALA on the standardised random effects, started at the Laplace mode.

    The step size is tuned on the log scale by Robbins-Monro during burn-in and
    frozen afterwards. Draws are returned on the eta scale.
    """
    config = config or LatentChainConfig()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.Generator(np.random.PCG64(seed))
    eta_hat, Sigma_hat = conditional_mode(data, params, cache_entry)
    n = data.n
    Lc = np.linalg.cholesky(Sigma_hat)
    Q = cache_entry.inv / params.sigma2
    mu = data.D @ params.beta
    y, m = data.y, data.m

    def evaluate(t):
        eta = eta_hat + Lc @ t
        e = m * np.exp(eta)
        Qr = Q @ (eta - mu)
        lp = y @ eta - e.sum() - 0.5 * (eta - mu) @ Qr
        grad = Lc.T @ (y - e - Qr)
        return eta, lp, grad

    h = config.step_size if config.step_size is not None else 1.65 * n ** (-1.0 / 6.0)
    log_h = np.log(h)
    t = np.zeros(n)
    eta, lp, grad = evaluate(t)
    draws = np.empty((config.n_samples, n))
    kept_acc = np.empty(config.n_samples, dtype=bool)
    kept_it = np.empty(config.n_samples, dtype=int)
    n_acc = 0
    k = 0
    chunk = 4096
    for start in range(0, config.n_iter, chunk):
        size = min(chunk, config.n_iter - start)
        Z = rng.standard_normal((size, n))
        logU = np.log(rng.uniform(size=size))
        for j in range(size):
            i = start + j
            h = np.exp(log_h)
            h2 = 0.5 * h * h
            mean_fwd = t + h2 * grad
            t_new = mean_fwd + h * Z[j]
            eta_new, lp_new, grad_new = evaluate(t_new)
            mean_bwd = t_new + h2 * grad_new
            log_q_fwd = -np.sum((t_new - mean_fwd) ** 2) / (2 * h * h)
            log_q_bwd = -np.sum((t - mean_bwd) ** 2) / (2 * h * h)
            log_ratio = lp_new - lp + log_q_bwd - log_q_fwd
            accepted = bool(logU[j] < log_ratio)
            if accepted:
                t, eta, lp, grad = t_new, eta_new, lp_new, grad_new
            if i < config.burn_in:
                if config.adapt:
                    a = 1.0 if log_ratio >= 0 else float(np.exp(log_ratio))
                    log_h += (a - config.target_acceptance) / (i + 1) ** 0.6
            else:
                n_acc += accepted
                if (i - config.burn_in + 1) % config.thin == 0:
                    draws[k] = eta
                    kept_acc[k] = accepted
                    kept_it[k] = i
                    k += 1
    rate = n_acc / (config.n_iter - config.burn_in)
    sample = LatentSample(draws, rate, eta_hat, Sigma_hat, float(np.exp(log_h)), kept_acc, kept_it)
    if sample.warning:
        log.warning("MALA acceptance rate %.3f outside [0.1, 0.9]", rate)
    return sample


def write_trace_csv(sample: LatentSample, path, header_comment: str | None = None) -> None:
    n = sample.draws.shape[1]
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        w.writerow(["iter"] + [f"eta_{i + 1}" for i in range(n)] + ["accepted"])
        for it, row, acc in zip(sample.iterations, sample.draws, sample.accepted):
            w.writerow([int(it)] + [repr(float(v)) for v in row] + [int(acc)])
