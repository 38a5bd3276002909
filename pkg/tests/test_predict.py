import numpy as np
import pytest

from sdalgcp.covariance import factorize
from sdalgcp.errors import NumericalConsistencyError
from sdalgcp.geometry import square_partition
from sdalgcp.latent import LatentSample
from sdalgcp.mcml import FitResult
from sdalgcp.model import DataVector, ModelParams
from sdalgcp.predict import (PredictionGrid, RegionPrediction, cross_cov_matrix, cross_cov_vector, predict_regions,
                             predict_surface, write_region_csv, write_surface)
from sdalgcp.quadrature import QuadratureSet
from sdalgcp.raster import read_ascii_grid


def sample_of(draws):
    draws = np.asarray(draws, dtype=float)
    n = draws.shape[1]
    return LatentSample(draws, 0.5, np.zeros(n), np.eye(n), 1.0)


def q(points, rid="a"):
    pts = np.asarray(points, dtype=float)
    return QuadratureSet(rid, pts, np.ones(len(pts)))


def test_cross_cov_examples():
    params = ModelParams([0.0], 2.0, 1.0)
    assert cross_cov_vector((3.0, 4.0), [q([(3, 4)])], params)[0] == 2.0
    far = ModelParams([0.0], 2.0, 10.0)
    assert cross_cov_vector((500.0, 0.0), [q([(0, 0)])], far)[0] < 1e-20 * 2.0
    two = q([(1, 0), (3, 0)])
    assert cross_cov_vector((0.0, 0.0), [two], params)[0] == pytest.approx(2.0 * (np.exp(-1) + np.exp(-3)) / 2,
                                                                          rel=1e-14)


def test_interpolates_at_single_point_region():
    params = ModelParams([0.3], 1.5, 2.0)
    quads = [q([(0, 0)], "a"), q([(5, 0)], "b")]
    R = np.array([[1.0, np.exp(-2.5)], [np.exp(-2.5), 1.0]])
    entry = factorize(R, 2.0)
    data = DataVector.intercept_only([1, 2], [1.0, 1.0])
    eta = np.random.default_rng(0).normal(0, 1, (200, 2))
    C = cross_cov_matrix([(0.0, 0.0)], quads, params)
    from sdalgcp.predict import conditional_moments

    mu, var = conditional_moments(C, eta, data, params, entry)
    assert var[0] == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(mu[:, 0], eta[:, 0] - 0.3, atol=1e-12)
    grid = PredictionGrid(np.array([[0.0, 0.0]]))
    out = predict_surface(sample_of(eta), params, grid, quads, data, entry, seed=1)
    assert np.allclose(np.log(out.mean), np.log(np.mean(np.exp(eta[:, 0] - 0.3))), atol=1e-9)


def test_degenerate_field_gives_unit_risk():
    params = ModelParams([0.0], 1e-14, 3.0)
    quads = [q([(0, 0), (1, 1)], "a"), q([(4, 0), (5, 1)], "b")]
    from sdalgcp.covariance import corr_matrix

    entry = factorize(corr_matrix(quads, 3.0), 3.0)
    data = DataVector.intercept_only([1, 2], [1.0, 1.0])
    eta = np.random.default_rng(1).normal(0, 1e-7, (100, 2))
    grid = PredictionGrid(np.array([[0.5, 0.5], [2.0, 0.0], [10.0, 3.0]]))
    out = predict_surface(sample_of(eta), params, grid, quads, data, entry)
    assert np.allclose(out.mean, 1.0, atol=1e-5) and np.all(out.sd < 1e-5)


def test_two_region_conditional_gaussian_oracle():
    params = ModelParams([0.2], 0.9, 3.0)
    quads = [q([(0, 0), (1, 0), (0, 1)], "a"), q([(3, 0), (4, 1)], "b")]
    from sdalgcp.covariance import corr_matrix

    R = corr_matrix(quads, 3.0)
    entry = factorize(R, 3.0)
    data = DataVector.intercept_only([1, 2], [1.0, 1.0])
    a = np.array([0.5, -0.1])
    V = np.array([[0.3, 0.1], [0.1, 0.2]])
    N = 20_000
    eta = np.random.default_rng(2).multivariate_normal(a, V, N)
    x = np.array([[2.0, 0.5]])
    # dense-matrix oracle for S*(x): law of c' Sigma^-1 (eta - D beta) + sqrt(v2) Z
    pts_a, pts_b = quads[0].points, quads[1].points
    c = 0.9 * np.array([np.exp(-np.hypot(*(pts_a - x).T) / 3.0).mean(), np.exp(-np.hypot(*(pts_b - x).T) / 3.0).mean()])
    Sigma = 0.9 * R
    A = np.linalg.solve(Sigma, c)
    m = A @ (a - 0.2)
    v = 0.9 - c @ A + A @ V @ A
    grid = PredictionGrid(x)
    out = predict_surface(sample_of(eta), params, grid, quads, data, entry, seed=3, thresholds=(1.0,))
    true_mean = np.exp(m + v / 2)
    true_sd = np.sqrt((np.exp(v) - 1) * np.exp(2 * m + v))
    assert abs(out.mean[0] - true_mean) < 3 * true_sd / np.sqrt(N)
    # sd of a lognormal sample: delta-method MC error bound
    assert abs(out.sd[0] - true_sd) / true_sd < 0.05
    from scipy import stats

    p_exceed = 1 - stats.norm.cdf(0, m, np.sqrt(v))
    assert abs(out.exceedance[1.0][0] - p_exceed) < 3 * np.sqrt(p_exceed * (1 - p_exceed) / N)


def test_negative_variance_raises():
    params = ModelParams([0.0], 1.0, 3.0)
    quads = [q([(0, 0)], "a")]
    # an inconsistent cache: region variance smaller than the cross-covariance implies
    entry = factorize(np.array([[0.25]]), 3.0)
    data = DataVector.intercept_only([1], [1.0])
    grid = PredictionGrid(np.array([[0.0, 0.0]]))
    with pytest.raises(NumericalConsistencyError):
        predict_surface(sample_of(np.zeros((10, 1))), params, grid, quads, data, entry)


def test_accepts_fit_result_and_reproducible():
    params = ModelParams([0.0], 1.0, 3.0)
    fr = FitResult(params, np.eye(1), np.eye(2), [(3.0, 0.0)], (3.0, 3.0), True, 10)
    quads = [q([(0, 0), (1, 0)], "a"), q([(5, 0)], "b")]
    from sdalgcp.covariance import corr_matrix

    entry = factorize(corr_matrix(quads, 3.0), 3.0)
    data = DataVector.intercept_only([1, 2], [1.0, 1.0])
    eta = sample_of(np.random.default_rng(4).normal(size=(50, 2)))
    grid = PredictionGrid(np.array([[2.0, 0.0], [1.0, 1.0]]))
    a = predict_surface(eta, fr, grid, quads, data, entry, seed=8)
    b = predict_surface(eta, params, grid, quads, data, entry, seed=8)
    assert a.mean.tobytes() == b.mean.tobytes() and a.upper95.tobytes() == b.upper95.tobytes()


def test_region_predictions():
    data = DataVector.intercept_only([1, 2, 3], [2.0, 5.0, 0.5], ["a", "b", "c"])
    zero = predict_regions(sample_of(np.zeros((40, 3))), data)
    assert np.array_equal(zero.mean, data.m) and np.array_equal(zero.lower95, zero.upper95)
    eta = np.random.default_rng(5).normal(size=(1000, 3))
    pred = predict_regions(sample_of(eta), data)
    lam = data.m * np.exp(eta)
    assert np.allclose(pred.lower95, np.quantile(lam, 0.025, axis=0))
    assert np.allclose(pred.upper95, np.quantile(lam, 0.975, axis=0))
    doubled = predict_regions(sample_of(eta), DataVector.intercept_only(data.y, 2 * data.m))
    assert np.allclose(doubled.mean, 2 * pred.mean, rtol=1e-14)
    assert np.allclose(doubled.lower95, 2 * pred.lower95, rtol=1e-14)
    assert np.allclose(doubled.upper95, 2 * pred.upper95, rtol=1e-14)
    assert np.all(pred.lower95 > 0) and pred.ids == ("a", "b", "c")


def test_regular_grid_and_outputs(tmp_path):
    part = square_partition(2, 2, 300.0)
    grid = PredictionGrid.regular(part, 300.0)
    assert len(grid) == 4 and grid.mask.shape == (2, 2)
    assert part.contains_any(grid.centers).all()
    filled = PredictionGrid(grid.centers, grid.origin, grid.spacing, grid.mask, np.arange(4.0), np.ones(4),
                            np.zeros(4), np.ones(4), {2.0: np.full(4, 0.5)})
    paths = write_surface(filled, tmp_path, "risk")
    assert [p.rsplit("/", 1)[-1] for p in paths] == ["risk_mean.asc", "risk_sd.asc", "risk_exceed_2.asc"]
    r = read_ascii_grid(paths[0])
    assert np.array_equal(r.values.ravel(), np.arange(4.0))
    pred = RegionPrediction(("a",), np.array([1.0]), np.array([0.5]), np.array([0.2]), np.array([2.0]))
    write_region_csv(pred, tmp_path / "r.csv", "config_hash=abc seed=1")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "# config_hash=abc seed=1" and lines[1] == "region_id,mean,sd,lo95,hi95"
