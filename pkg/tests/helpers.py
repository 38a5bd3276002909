"""Shared numerical oracles for the tests."""

import numpy as np

from sdalgcp.covariance import factorize


def entry_for(Sigma_over_sigma2, phi=1.0):
    return factorize(np.atleast_2d(np.asarray(Sigma_over_sigma2, dtype=float)), phi)


def batch_se(x, batches: int = 50) -> float:
    """Monte Carlo standard error of the mean by non-overlapping batch means."""
    x = np.asarray(x, dtype=float)
    size = len(x) // batches
    means = x[: size * batches].reshape(batches, size).mean(axis=1)
    return float(means.std(ddof=1) / np.sqrt(batches))


def posterior_1d(y, m, mu, var, center, sd, nodes=10_000):
    """Trapezoid-rule mean and variance of eta for y ~ Poisson(m e^eta), eta ~ N(mu, var)."""
    eta = np.linspace(center - 8 * sd, center + 8 * sd, nodes)
    logp = y * eta - m * np.exp(eta) - 0.5 * (eta - mu) ** 2 / var
    p = np.exp(logp - logp.max())
    z = np.trapezoid(p, eta)
    mean = np.trapezoid(eta * p, eta) / z
    second = np.trapezoid((eta - mean) ** 2 * p, eta) / z
    return mean, second
