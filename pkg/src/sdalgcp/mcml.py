"""Monte Carlo maximum likelihood for (beta, sigma2, phi).

With draws eta_(j) from f(eta | y; psi0) the likelihood ratio is estimated by

    L_N(psi) = (1/N) sum_j f(eta_(j); psi) / f(eta_(j); psi0),

f being the N(D beta, sigma2 R(phi)) density. For each phi on the grid
(beta, log sigma2) is maximised with analytic derivatives; the per-phi maxima
form the profile likelihood of phi, interpolated with a natural cubic spline
to get its confidence interval.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.interpolate import CubicSpline

from .covariance import CacheEntry, CovarianceCache
from .latent import LatentChainConfig, LatentSample, run_mala
from .model import DataVector, ModelParams
from .seeding import rng_for

log = logging.getLogger(__name__)

PROFILE_CUTOFF = 1.921  # chi2_1(0.95) / 2
LOG_2PI = math.log(2 * math.pi)


@dataclass(frozen=True)
class McmlConfig:
    n_samples: int = 10_000
    outer_iters: int = 3
    param_tol: float = 1e-3
    log_sigma2_bounds: tuple = (-10.0, 10.0)
    ess_fraction: float = 0.01

    def __post_init__(self):
        if self.n_samples < 1000:
            raise ValueError("n_samples must be at least 1000")
        if self.outer_iters < 1:
            raise ValueError("outer_iters must be at least 1")
        lo, hi = self.log_sigma2_bounds
        if not lo < hi:
            raise ValueError("log_sigma2_bounds must be increasing")


class LogLikValue(float):
    """A float carrying importance-sampling diagnostics."""

    ess: float
    degenerate: bool

    def __new__(cls, value, ess=float("nan"), degenerate=False):
        obj = super().__new__(cls, value)
        obj.ess = ess
        obj.degenerate = degenerate
        return obj


class PhiObjective:
    """Sufficient statistics of the draws for one phi.

    log f(eta_j; beta, sigma2) depends on the draws only through
    a_j = eta_j' R^-1 eta_j and b_j = D' R^-1 eta_j.
    """

    def __init__(self, draws: np.ndarray, entry: CacheEntry, D: np.ndarray):
        E = draws @ entry.inv
        self.a = np.einsum("ij,ij->i", E, draws)
        self.B = E @ D
        self.C = D.T @ entry.inv @ D
        self.logdet = entry.logdet
        self.n = draws.shape[1]
        self.phi = entry.phi

    def quad(self, beta):
        return self.a - 2.0 * (self.B @ beta) + beta @ self.C @ beta

    def logdens(self, theta) -> np.ndarray:
        beta, tau = theta[:-1], theta[-1]
        return -0.5 * (self.n * (LOG_2PI + tau) + self.logdet + self.quad(beta) * math.exp(-tau))

    def scores(self, theta):
        """Per-draw gradient of log f with respect to (beta, tau), plus the quadratic forms."""
        beta, tau = theta[:-1], theta[-1]
        s = math.exp(-tau)
        Q = self.quad(beta)
        g_beta = s * (self.B - self.C @ beta)
        g_tau = -0.5 * self.n + 0.5 * s * Q
        return np.column_stack([g_beta, g_tau]), Q, s


def _weights(lw: np.ndarray):
    top = lw.max()
    e = np.exp(lw - top)
    total = e.sum()
    value = top + math.log(total) - math.log(len(lw))
    return value, e / total


def _value_grad_hess(obj: PhiObjective, theta, ell0, want_hess=True):
    lw = obj.logdens(theta) - ell0
    value, w = _weights(lw)
    G, Q, s = obj.scores(theta)
    grad = w @ G
    if not want_hess:
        return value, grad, None, w
    p = len(theta) - 1
    H = (G.T * w) @ G - np.outer(grad, grad)
    H[:p, :p] -= s * obj.C
    H[:p, p] -= w @ G[:, :p]
    H[p, :p] -= w @ G[:, :p]
    H[p, p] -= 0.5 * s * (w @ Q)
    return value, grad, 0.5 * (H + H.T), w


def _objective_for(params: ModelParams, draws: LatentSample, cache: CovarianceCache, D) -> PhiObjective:
    return PhiObjective(draws.draws, cache.entry(params.phi), D)


def _ell0(params0: ModelParams, draws: LatentSample, cache: CovarianceCache, D) -> np.ndarray:
    return _objective_for(params0, draws, cache, D).logdens(params0.theta())


def mc_loglik(params: ModelParams, params0: ModelParams, draws: LatentSample, cache: CovarianceCache,
              D: np.ndarray, ess_fraction: float = 0.01) -> LogLikValue:
    """log L_N(psi) relative to psi0, log-sum-exp stabilised."""
    ell0 = _ell0(params0, draws, cache, D)
    lw = _objective_for(params, draws, cache, D).logdens(params.theta()) - ell0
    value, w = _weights(lw)
    ess = 1.0 / float(np.sum(w * w))
    degenerate = ess < ess_fraction * len(lw)
    if degenerate:
        log.warning("importance weights degenerate: ESS %.1f of %d", ess, len(lw))
    return LogLikValue(value, ess, degenerate)


def mc_loglik_grad_hess(params: ModelParams, params0: ModelParams, draws: LatentSample,
                        cache: CovarianceCache, D: np.ndarray):
    """Gradient and Hessian of log L_N with respect to (beta, log sigma2) at fixed phi."""
    ell0 = _ell0(params0, draws, cache, D)
    obj = _objective_for(params, draws, cache, D)
    _, grad, hess, _ = _value_grad_hess(obj, params.theta(), ell0)
    return grad, hess


@dataclass
class PhiFit:
    phi: float
    theta: np.ndarray
    value: float
    hess: np.ndarray
    ess: float
    success: bool


def maximize_at_phi(obj: PhiObjective, ell0: np.ndarray, theta0: np.ndarray, bounds: tuple,
                    ess_fraction: float = 0.01) -> PhiFit:
    """Bounded quasi-Newton (L-BFGS-B) followed by safeguarded Newton polishing."""
    p1 = len(theta0)
    box = [(None, None)] * (p1 - 1) + [tuple(bounds)]

    def f(th):
        v, g, _, _ = _value_grad_hess(obj, th, ell0, want_hess=False)
        return -v, -g

    res = optimize.minimize(f, theta0, jac=True, method="L-BFGS-B", bounds=box,
                            options={"maxiter": 500, "ftol": 1e-14, "gtol": 1e-9})
    theta = np.array(res.x, dtype=float)
    value, grad, hess, w = _value_grad_hess(obj, theta, ell0)
    lo, hi = bounds
    for _ in range(20):
        if np.max(np.abs(grad)) < 1e-9:
            break
        try:
            step = -np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            break
        decrement = grad @ step
        if decrement <= 1e-12:
            break
        t = 1.0
        improved = False
        while t > 1e-8:
            cand = theta + t * step
            cand[-1] = min(max(cand[-1], lo), hi)
            v2, g2, h2, w2 = _value_grad_hess(obj, cand, ell0)
            if v2 >= value:
                improved = True
                break
            t *= 0.5
        if not improved:
            break
        theta, value, grad, hess, w = cand, v2, g2, h2, w2
    ess = 1.0 / float(np.sum(w * w))
    success = bool(np.all(np.isfinite(theta))) and np.isfinite(value)
    if ess < ess_fraction * len(w):
        log.info("phi=%g: importance weights degenerate (ESS %.1f)", obj.phi, ess)
    return PhiFit(obj.phi, theta, float(value), hess, ess, success)


def poisson_glm(data: DataVector, max_iter: int = 50) -> np.ndarray:
    """Poisson log-linear fit with offset log(m) by IRLS (spatial correlation ignored)."""
    X, y, off = data.D, data.y, np.log(data.m)
    beta = np.zeros(data.p)
    beta[0] = math.log(max(y.sum(), 0.5) / data.m.sum())
    for _ in range(max_iter):
        eta = X @ beta + off
        mu = np.exp(eta)
        z = eta - off + (y - mu) / mu
        XtW = X.T * mu
        new = np.linalg.solve(XtW @ X, XtW @ z)
        if np.max(np.abs(new - beta)) < 1e-10:
            beta = new
            break
        beta = new
    return beta


def profile_ci(phis, loglik, cutoff: float = PROFILE_CUTOFF, phi_hat: float | None = None):
    """Interval where the natural-spline profile lies within ``cutoff`` of its maximum.

    Returns (lower, upper, spline, (lower_censored, upper_censored)); a censored
    end means the profile never dropped by ``cutoff`` inside the grid.
    """
    phis = np.asarray(phis, dtype=float)
    ll = np.asarray(loglik, dtype=float)
    if phi_hat is None:
        phi_hat = phis[int(np.argmax(ll))]
    if len(phis) < 2:
        return float(phis[0]), float(phis[0]), None, (True, True)
    spline = CubicSpline(phis, ll, bc_type="natural")
    fine = np.union1d(np.linspace(phis[0], phis[-1], 20001), phis)
    ll_max = float(np.max(spline(fine)))

    def drop(x):
        return ll_max - float(spline(x)) - cutoff

    ends = []
    censored = []
    for direction in (-1, 1):
        side = fine[fine <= phi_hat][::-1] if direction < 0 else fine[fine >= phi_hat]
        d = ll_max - spline(side) - cutoff
        cross = np.flatnonzero(d >= 0)
        if cross.size == 0:
            ends.append(float(side[-1]))
            censored.append(True)
            continue
        k = cross[0]
        if k == 0:
            ends.append(float(side[0]))
            censored.append(False)
            continue
        a, b = sorted((side[k - 1], side[k]))
        ends.append(float(optimize.brentq(drop, a, b, xtol=1e-10)))
        censored.append(False)
    return ends[0], ends[1], spline, tuple(censored)


@dataclass
class FitResult:
    estimates: ModelParams
    beta_cov: np.ndarray
    theta_cov: np.ndarray
    phi_profile: list
    phi_ci_95: tuple
    converged: bool
    monte_carlo_N: int
    sigma2_ci_95: tuple = (float("nan"), float("nan"))
    phi_ci_censored: tuple = (False, False)
    outer_iterations: int = 0
    outer_converged: bool = False
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "estimates": self.estimates.as_dict(),
            "beta_cov": np.asarray(self.beta_cov).tolist(),
            "theta_cov": np.asarray(self.theta_cov).tolist(),
            "sigma2_ci_95": list(self.sigma2_ci_95),
            "phi_ci_95": list(self.phi_ci_95),
            "phi_ci_censored": list(self.phi_ci_censored),
            "phi_profile": [[float(a), float(b)] for a, b in self.phi_profile],
            "converged": bool(self.converged),
            "outer_converged": bool(self.outer_converged),
            "outer_iterations": int(self.outer_iterations),
            "monte_carlo_N": int(self.monte_carlo_N),
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        return cls(
            estimates=ModelParams.from_dict(d["estimates"]),
            beta_cov=np.asarray(d["beta_cov"]),
            theta_cov=np.asarray(d["theta_cov"]),
            phi_profile=[tuple(x) for x in d["phi_profile"]],
            phi_ci_95=tuple(d["phi_ci_95"]),
            converged=d["converged"],
            monte_carlo_N=d["monte_carlo_N"],
            sigma2_ci_95=tuple(d.get("sigma2_ci_95", (float("nan"),) * 2)),
            phi_ci_censored=tuple(d.get("phi_ci_censored", (False, False))),
            outer_iterations=d.get("outer_iterations", 0),
            outer_converged=d.get("outer_converged", False),
            diagnostics=d.get("diagnostics", {}),
        )

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _rel_change(new: ModelParams, old: ModelParams) -> float:
    a = np.append(new.theta(), math.log(new.phi))
    b = np.append(old.theta(), math.log(old.phi))
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))


def profile_pass(data: DataVector, cache: CovarianceCache, params0: ModelParams, draws: LatentSample,
                 config: McmlConfig, threads: int = 1) -> list:
    """Maximise over (beta, log sigma2) at every phi on the grid, reusing one draw set."""
    ell0 = _ell0(params0, draws, cache, data.D)
    theta0 = params0.theta()
    lo, hi = config.log_sigma2_bounds
    theta0[-1] = min(max(theta0[-1], lo), hi)

    def one(entry):
        obj = PhiObjective(draws.draws, entry, data.D)
        return maximize_at_phi(obj, ell0, theta0, config.log_sigma2_bounds, config.ess_fraction)

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(one, cache.entries))
    return [one(e) for e in cache.entries]


def fit(data: DataVector, cache: CovarianceCache, config: McmlConfig | None = None,
        chain: LatentChainConfig | None = None, seed: int = 0, threads: int = 1,
        init: ModelParams | None = None, keep_draws: bool = False) -> FitResult:
    """MCML fit over the cached phi grid.

    psi0 starts from a Poisson GLM for beta with sigma2 = 1 and phi at the grid
    median; each outer iteration draws eta at psi0, profiles phi over the grid
    and resets psi0 to the maximiser.
    """
    config = config or McmlConfig()
    chain = chain or LatentChainConfig()
    if chain.n_samples != config.n_samples:
        raise ValueError(f"chain yields {chain.n_samples} draws but McmlConfig.n_samples={config.n_samples}")
    grid = cache.grid
    if init is None:
        init = ModelParams(poisson_glm(data), 1.0, grid.median)
    params0 = init
    history = []
    fits = None
    draws = None
    outer_converged = False
    it = 0
    for it in range(1, config.outer_iters + 1):
        draws = run_mala(data, params0, cache.entry(params0.phi), chain, seed=rng_for(seed, "mala", it))
        fits = profile_pass(data, cache, params0, draws, config, threads)
        values = np.array([f.value if f.success else -np.inf for f in fits])
        best = fits[int(np.argmax(values))]
        new = ModelParams(best.theta[:-1], math.exp(best.theta[-1]), best.phi)
        change = _rel_change(new, params0)
        history.append({"iteration": it, "params0": params0.as_dict(), "estimate": new.as_dict(),
                        "relative_change": change, "acceptance_rate": draws.acceptance_rate,
                        "step_size": draws.step_size})
        log.info("outer iteration %d: phi=%g sigma2=%.4g beta=%s change=%.3g",
                 it, new.phi, new.sigma2, np.array2string(new.beta, precision=4), change)
        params_prev = params0
        params0 = new
        if change < config.param_tol:
            outer_converged = True
            break
    est = params0
    values = np.array([f.value for f in fits])
    best = fits[int(np.argmax(values))]
    degenerate = [f.ess < config.ess_fraction * config.n_samples for f in fits]
    H = best.hess
    try:
        theta_cov = np.linalg.inv(-H)
        cov_ok = bool(np.all(np.linalg.eigvalsh(-H) > 0))
    except np.linalg.LinAlgError:
        theta_cov = np.full_like(H, np.nan)
        cov_ok = False
    p = data.p
    se_tau = math.sqrt(theta_cov[p, p]) if cov_ok and theta_cov[p, p] > 0 else float("nan")
    tau = math.log(est.sigma2)
    sigma2_ci = (math.exp(tau - 1.959963984540054 * se_tau), math.exp(tau + 1.959963984540054 * se_tau))
    lo, hi, _, censored = profile_ci(grid.values, values, phi_hat=est.phi)
    converged = bool(best.success and not all(degenerate))
    diagnostics = {
        "history": history,
        "profile_ess": [float(f.ess) for f in fits],
        "degenerate_phi": [float(f.phi) for f, d in zip(fits, degenerate) if d],
        "all_phi_degenerate": bool(all(degenerate)),
        "hessian_negative_definite": cov_ok,
        "acceptance_rate": float(draws.acceptance_rate),
        "sigma2_at_bound": bool(abs(tau - config.log_sigma2_bounds[0]) < 1e-8
                                or abs(tau - config.log_sigma2_bounds[1]) < 1e-8),
        "draws_params0": params_prev.as_dict(),
    }
    result = FitResult(
        estimates=est,
        beta_cov=theta_cov[:p, :p],
        theta_cov=theta_cov,
        phi_profile=[(float(f.phi), float(f.value)) for f in fits],
        phi_ci_95=(lo, hi),
        converged=converged,
        monte_carlo_N=draws.N,
        sigma2_ci_95=sigma2_ci,
        phi_ci_censored=censored,
        outer_iterations=it,
        outer_converged=outer_converged,
        diagnostics=diagnostics,
    )
    if keep_draws:
        result.draws = draws
    return result
