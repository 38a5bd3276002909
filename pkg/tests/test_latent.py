import numpy as np
import pytest
from scipy import optimize, stats

from sdalgcp.errors import ConvergenceError
from sdalgcp.latent import (LatentChainConfig, conditional_mode, grad_log_conditional, log_conditional, run_mala,
                            write_trace_csv)
from sdalgcp.model import DataVector, ModelParams

from helpers import batch_se, entry_for, posterior_1d


def scalar_model(y=2, m=1.0, beta=0.0, sigma2=1.0):
    data = DataVector.intercept_only([y], [m])
    return data, ModelParams([beta], sigma2, 1.0), entry_for([[1.0]])


def test_mode_scalar_bisection_oracle():
    data, params, entry = scalar_model()
    eta_hat, Sigma_hat = conditional_mode(data, params, entry)
    root = optimize.bisect(lambda e: 2 - np.exp(e) - e, -5, 5, xtol=1e-14)
    assert root == pytest.approx(0.4428544, abs=1e-6)
    assert eta_hat[0] == pytest.approx(root, abs=1e-10)
    assert Sigma_hat[0, 0] == pytest.approx(1 / (1 + np.exp(root)), rel=1e-10)


def test_mode_gradient_vanishes(small_cache):
    _, cache = small_cache
    rng = np.random.default_rng(0)
    n = cache.n
    data = DataVector(rng.poisson(5, n), rng.uniform(2, 8, n), np.column_stack([np.ones(n), rng.normal(size=n)]))
    params = ModelParams([0.1, 0.3], 0.8, 80.0)
    entry = cache.entry(80.0)
    eta_hat, Sigma_hat = conditional_mode(data, params, entry)
    g = grad_log_conditional(eta_hat, data, data.D @ params.beta, entry.inv / params.sigma2)
    assert np.max(np.abs(g)) < 1e-8
    assert np.array_equal(Sigma_hat, Sigma_hat.T)
    assert np.all(np.linalg.eigvalsh(Sigma_hat) > 0)


def test_mode_prior_dominates(small_cache):
    _, cache = small_cache
    n = cache.n
    data = DataVector(np.full(n, 9), np.ones(n), np.ones((n, 1)))
    params = ModelParams([-0.7], 1e-12, 40.0)
    eta_hat, _ = conditional_mode(data, params, cache.entry(40.0))
    assert np.max(np.abs(eta_hat + 0.7)) < 1e-4


def test_mode_iteration_limit():
    data, params, entry = scalar_model(y=50)
    with pytest.raises(ConvergenceError):
        conditional_mode(data, params, entry, max_iter=1)


def test_gradient_finite_differences(small_cache):
    _, cache = small_cache
    rng = np.random.default_rng(3)
    n = cache.n
    data = DataVector(rng.poisson(3, n), rng.uniform(1, 4, n), np.ones((n, 1)))
    Q = cache.entry(120.0).inv / 0.6
    mu = np.full(n, -0.2)
    h = 1e-5
    for _ in range(20):
        eta = rng.normal(0, 1, n)
        g = grad_log_conditional(eta, data, mu, Q)
        fd = np.array([
            (log_conditional(eta + h * e, data, mu, Q) - log_conditional(eta - h * e, data, mu, Q)) / (2 * h)
            for e in np.eye(n)
        ])
        assert np.max(np.abs(fd - g) / np.maximum(np.abs(g), 1.0)) < 1e-5


def test_small_step_always_accepts():
    data, params, entry = scalar_model()
    cfg = LatentChainConfig(n_iter=3000, burn_in=1000, thin=1, step_size=1e-4, adapt=False)
    s = run_mala(data, params, entry, cfg, seed=1)
    assert s.acceptance_rate > 0.999


def test_prior_only_target(small_cache):
    _, cache = small_cache
    n = cache.n
    # zero counts and negligible offsets leave only the Gaussian prior
    data = DataVector(np.zeros(n), np.full(n, 1e-12), np.ones((n, 1)))
    params = ModelParams([0.5], 0.7, 80.0)
    s = run_mala(data, params, cache.entry(80.0), LatentChainConfig(), seed=5)
    for k in range(n):
        assert abs(s.draws[:, k].mean() - 0.5) < 3 * batch_se(s.draws[:, k])


def test_scalar_posterior_matches_quadrature():
    data, params, entry = scalar_model(y=3, m=2.0, beta=0.2, sigma2=0.8)
    s = run_mala(data, params, entry, LatentChainConfig(), seed=12)
    eta_hat, Sig = s.eta_hat[0], s.Sigma_hat[0, 0]
    mean, var = posterior_1d(3, 2.0, 0.2, 0.8, eta_hat, np.sqrt(Sig))
    x = s.draws[:, 0]
    assert abs(x.mean() - mean) < 3 * batch_se(x)
    assert abs(0.574 - s.acceptance_rate) < 0.1


def test_two_region_ks(small_cache):
    R = np.array([[1.0, 0.6], [0.6, 1.0]])
    entry = entry_for(R)
    data = DataVector([4, 1], [2.0, 3.0], np.ones((2, 1)))
    params = ModelParams([0.0], 0.9, 1.0)
    s = run_mala(data, params, entry, LatentChainConfig(), seed=22)
    assert s.N == 10_000
    # dense 2-D grid oracle for each marginal
    Q = np.linalg.inv(0.9 * R)
    sd = np.sqrt(np.diag(s.Sigma_hat))
    g = [np.linspace(s.eta_hat[k] - 8 * sd[k], s.eta_hat[k] + 8 * sd[k], 801) for k in range(2)]
    E1, E2 = np.meshgrid(g[0], g[1], indexing="ij")
    logp = (4 * E1 - 2 * np.exp(E1) + E2 - 3 * np.exp(E2)
            - 0.5 * (Q[0, 0] * E1**2 + 2 * Q[0, 1] * E1 * E2 + Q[1, 1] * E2**2))
    p = np.exp(logp - logp.max())
    for k in range(2):
        marg = np.trapezoid(p, g[1 - k], axis=1 - k)
        cdf = np.concatenate([[0], np.cumsum(0.5 * (marg[1:] + marg[:-1]) * np.diff(g[k]))])
        cdf /= cdf[-1]
        res = stats.kstest(s.draws[:, k], lambda x, k=k, cdf=cdf: np.interp(x, g[k], cdf))
        assert res.pvalue > 0.01


def test_reproducible_and_counts(tmp_path):
    data, params, entry = scalar_model()
    cfg = LatentChainConfig(n_iter=2000, burn_in=500, thin=3)
    a = run_mala(data, params, entry, cfg, seed=4)
    b = run_mala(data, params, entry, cfg, seed=4)
    assert a.N == cfg.n_samples == 500
    assert a.draws.tobytes() == b.draws.tobytes()
    assert 0 < a.acceptance_rate < 1
    write_trace_csv(a, tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "iter,eta_1,accepted" and len(lines) == 501


def test_chain_config_validation():
    with pytest.raises(ValueError):
        LatentChainConfig(n_iter=10, burn_in=10)
    with pytest.raises(ValueError):
        LatentChainConfig(n_iter=100, burn_in=10, thin=7)
    assert LatentChainConfig().n_samples == 10_000


def test_data_vector_validation():
    with pytest.raises(ValueError):
        DataVector([1, 2], [1.0], np.ones((2, 1)))
    with pytest.raises(ValueError):
        DataVector([1], [0.0], np.ones((1, 1)))
    with pytest.raises(ValueError):
        DataVector([1.5], [1.0], np.ones((1, 1)))
