"""Ground-truth gradients and the gradcheck harness.

The oracle computes E[f] by quadrature (Gauss-Hermite for Gaussian measures,
adaptive quadrature otherwise, summation for discrete measures) and
d/dtheta E[f] by Richardson-refined central differences of the quadrature
value, with a registry of closed forms for the common test cases.  The
``gradcheck`` harness compares a Monte Carlo estimate against the oracle at a
k-sigma tolerance; ``empirical_variance`` measures the variance of
single-sample estimates, the quantity the variance studies plot.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate
from scipy.special import roots_hermite

from .costs import CostFunction, make_cost
from .errors import CapabilityError
from .estimators import EstimatorConfig, get_estimator
from .measures import DiagGaussian, Gaussian, Measure
from .rng import RngStream

_GH_NODES = 128


@dataclass
class OracleResult:
    value: float
    method: str  # gauss_hermite | adaptive_quadrature | discrete_sum |
    #              finite_difference | closed_form
    est_abs_error: float


_ELEMENTWISE_KINDS = ("quadratic", "exp", "cos", "linear_sum", "fourth_power")


def _gauss_hermite_expectation(mu, sigma, fn, nodes=_GH_NODES):
    t, w = roots_hermite(nodes)
    x = mu + math.sqrt(2.0) * sigma * t
    return float(np.sum(w * fn(x)) / math.sqrt(math.pi))


def _gauss_hermite_adaptive(mu, sigma, fn, tol=1e-9, max_nodes=1024):
    """Gauss-Hermite starting at 128 nodes, doubling until the value is
    stable to ``tol``; returns (value, doubling difference)."""
    nodes = _GH_NODES
    v = _gauss_hermite_expectation(mu, sigma, fn, nodes)
    while nodes < max_nodes:
        nodes *= 2
        v_next = _gauss_hermite_expectation(mu, sigma, fn, nodes)
        diff = abs(v_next - v)
        v = v_next
        if diff < tol:
            return v, diff
    return v, abs(v - _gauss_hermite_expectation(mu, sigma, fn, nodes // 2))


def quadrature_expectation(m: Measure, f: CostFunction) -> OracleResult:
    """E[f(x)] under the measure, with an error estimate.

    Gaussian measures use 128-node Gauss-Hermite quadrature (error estimated
    by comparison against 96 nodes); other continuous univariate measures use
    adaptive quadrature of pdf * f; discrete measures are summed to tail mass
    below 1e-12.  Diagonal Gaussians require a coordinate-separable cost.
    """
    if f.kind == "constant":
        return OracleResult(float(f.k), "closed_form", 0.0)
    if isinstance(m, DiagGaussian):
        if f.kind not in _ELEMENTWISE_KINDS:
            raise CapabilityError(
                "multivariate quadrature needs a coordinate-separable cost"
            )
        scalar_f = make_cost(f.kind, f.k)
        total, err = 0.0, 0.0
        for d in range(m.dim):
            v, e = _gauss_hermite_adaptive(m.mu[d], m.sigma[d], scalar_f)
            total += v
            err += e
        return OracleResult(total, "gauss_hermite", max(err, 1e-15))
    if isinstance(m, Gaussian):
        v, e = _gauss_hermite_adaptive(m.mu, m.sigma, f)
        return OracleResult(v, "gauss_hermite", max(e, 1e-15))
    if m.discrete:
        pts = m.support_points(1e-12)
        v = float(np.sum(m.pdf(pts) * f(pts)))
        return OracleResult(v, "discrete_sum", 1e-12 * max(1.0, abs(v)))
    lo, hi = m.support()
    v, err = integrate.quad(
        lambda x: float(m.pdf(np.asarray([x]))[0] * f(np.asarray([x]))[0]),
        lo,
        hi,
        limit=400,
    )
    return OracleResult(float(v), "adaptive_quadrature", float(err))


def _closed_form_gradient(m: Measure, f: CostFunction) -> Optional[list]:
    """Registered closed forms for d/dtheta E[f]; None when unregistered."""
    def results(vals):
        return [OracleResult(float(v), "closed_form", 0.0) for v in vals]

    if f.kind == "constant":
        return results(np.zeros(m.n_params))
    if isinstance(m, Gaussian):
        mu, s = m.mu, m.sigma
        if f.kind == "quadratic":
            return results([2.0 * (mu - f.k), 2.0 * s])
        if f.kind == "cos":
            k = f.k
            damp = math.exp(-0.5 * k**2 * s**2)
            return results([-k * math.sin(k * mu) * damp,
                            -(k**2) * s * math.cos(k * mu) * damp])
        if f.kind == "exp":
            k = f.k
            a = 1.0 + 2.0 * k * s**2
            e = a ** (-0.5) * math.exp(-k * mu**2 / a)
            d_mu = e * (-2.0 * k * mu / a)
            d_s = 2.0 * s * e * (-k / a + 2.0 * k**2 * mu**2 / a**2)
            return results([d_mu, d_s])
        if f.kind == "linear_sum":
            return results([1.0, 0.0])
        if f.kind == "fourth_power":
            # E[x^4] = mu^4 + 6 mu^2 s^2 + 3 s^4
            return results(
                [4.0 * mu**3 + 12.0 * mu * s**2, 12.0 * mu**2 * s + 12.0 * s**3]
            )
    if isinstance(m, DiagGaussian) and f.kind == "linear_sum":
        return results(np.concatenate([np.ones(m.dim), np.zeros(m.dim)]))
    if m.family == "gamma" and f.kind == "linear_sum":
        return results([1.0 / m.beta, -m.alpha / m.beta**2])
    if m.family == "exponential" and f.kind == "linear_sum":
        return results([-1.0 / m.lam**2])
    if m.family == "uniform" and f.kind == "linear_sum":
        return results([0.5])
    if m.family == "poisson" and f.kind == "linear_sum":
        return results([1.0])
    if m.family == "bernoulli" and f.kind == "linear_sum":
        return results([1.0])
    return None


def oracle_gradient(m: Measure, f: CostFunction, allow_closed_form=True) -> list:
    """d/dtheta E[f] per parameter, as a list of :class:`OracleResult`.

    Uses a registered closed form when available, otherwise central finite
    differences of :func:`quadrature_expectation` with one Richardson
    refinement (step 1e-5 * max(1, |theta|)).
    """
    if allow_closed_form:
        cf = _closed_form_gradient(m, f)
        if cf is not None:
            return cf
    theta = np.asarray(m.param_values, dtype=float)
    out = []
    for j in range(theta.size):
        h = 1e-5 * max(1.0, abs(theta[j]))

        def central(step):
            up, dn = theta.copy(), theta.copy()
            up[j] += step
            dn[j] -= step
            e_up = quadrature_expectation(m.replace(up), f)
            e_dn = quadrature_expectation(m.replace(dn), f)
            quad_err = (e_up.est_abs_error + e_dn.est_abs_error) / (2.0 * step)
            return (e_up.value - e_dn.value) / (2.0 * step), quad_err

        d1, q1 = central(h)
        d2, q2 = central(h / 2.0)
        refined = (4.0 * d2 - d1) / 3.0
        err = abs(refined - d2) + q1 + q2
        out.append(OracleResult(refined, "finite_difference", err))
    return out


def mc_crn_fd_gradient(
    m: Measure, f: CostFunction, n: int, rng: RngStream, rel_step: float = 1e-4
) -> np.ndarray:
    """Monte Carlo finite-difference gradient with common random numbers.

    Replays the same stream for the theta+h and theta-h sample sets so the
    difference is computed on coupled draws.  A sampling-based cross-check for
    measures whose quadrature is awkward.
    """
    theta = np.asarray(m.param_values, dtype=float)
    out = np.empty(theta.size)
    for j in range(theta.size):
        h = rel_step * max(1.0, abs(theta[j]))
        up, dn = theta.copy(), theta.copy()
        up[j] += h
        dn[j] -= h
        f_up = f(m.replace(up).sample(rng.replica(), n))
        f_dn = f(m.replace(dn).sample(rng.replica(), n))
        out[j] = (f_up.mean() - f_dn.mean()) / (2.0 * h)
    return out


@dataclass
class ParamCheck:
    estimate: float
    oracle: float
    se: float
    abs_diff: float
    passed: bool


@dataclass
class GradCheckReport:
    estimator: str
    measure: str
    cost: str
    n_samples: int
    sigma_level: float
    params: list = field(default_factory=list)
    n_cost_evals: int = 0
    moment_checks: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        ok = all(p.passed for p in self.params)
        for sub in self.moment_checks.values():
            ok = ok and sub.passed
        return ok

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "measure": self.measure,
            "cost": self.cost,
            "n_samples": self.n_samples,
            "sigma_level": self.sigma_level,
            "passed": self.passed,
            "n_cost_evals": self.n_cost_evals,
            "params": [vars(p) for p in self.params],
            "moment_checks": {k: v.to_dict() for k, v in self.moment_checks.items()},
        }


def gradcheck(
    estimator_id: str,
    m: Measure,
    f: CostFunction,
    n_samples: int = 10_000,
    sigma_level: float = 4.0,
    rng: Optional[RngStream] = None,
    coupling: bool = True,
    include_moment_tests: bool = False,
) -> GradCheckReport:
    """Compare a Monte Carlo gradient estimate against the oracle.

    Passes when every parameter satisfies |estimate - oracle| <=
    sigma_level * SE + oracle error.  Failures are report outcomes, not
    exceptions: the score-function estimator on U[0, theta] is *expected*
    to fail here.  With ``include_moment_tests`` the harness also checks the
    gradient of E[x] (and of the central second moment when the variance is
    known) under the same estimator.
    """
    rng = rng if rng is not None else RngStream(0)
    est_fn = get_estimator(estimator_id)
    cfg = EstimatorConfig(n_samples=n_samples, coupling=coupling)
    est = est_fn(m, f, cfg, rng.split(1))
    oracle = oracle_gradient(m, f)
    report = GradCheckReport(
        estimator=estimator_id,
        measure=repr(m),
        cost=f.name,
        n_samples=n_samples,
        sigma_level=sigma_level,
        n_cost_evals=est.n_cost_evals,
    )
    for j in range(m.n_params):
        se = math.sqrt(max(est.variance[j], 0.0) / est.n_samples)
        diff = abs(est.mean[j] - oracle[j].value)
        tol = sigma_level * se + oracle[j].est_abs_error + 1e-9
        report.params.append(
            ParamCheck(
                estimate=float(est.mean[j]),
                oracle=float(oracle[j].value),
                se=se,
                abs_diff=float(diff),
                passed=bool(diff <= tol),
            )
        )
    if include_moment_tests:
        try:
            m.mean()
            report.moment_checks["mean"] = gradcheck(
                estimator_id, m, make_cost("linear_sum"), n_samples,
                sigma_level, rng.split(2), coupling,
            )
        except CapabilityError:
            pass
        try:
            mu0 = float(np.atleast_1d(m.mean())[0])
            m.variance()
            if m.dim == 1 and not m.discrete:
                report.moment_checks["central_second_moment"] = gradcheck(
                    estimator_id, m, make_cost("quadratic", k=mu0), n_samples,
                    sigma_level, rng.split(3), coupling,
                )
        except CapabilityError:
            pass
    return report


def jackknife_variance_se(contributions: np.ndarray) -> np.ndarray:
    """Delete-one jackknife standard error of the sample variance, per column."""
    c = np.atleast_2d(np.asarray(contributions, dtype=float))
    n = c.shape[0]
    if n < 3:
        return np.full(c.shape[1], np.nan)
    s1 = c.sum(axis=0)
    s2 = (c**2).sum(axis=0)
    mean_i = (s1 - c) / (n - 1.0)
    var_i = (s2 - c**2 - (n - 1.0) * mean_i**2) / (n - 2.0)
    jack_mean = var_i.mean(axis=0)
    jack_var = (n - 1.0) / n * ((var_i - jack_mean) ** 2).sum(axis=0)
    return np.sqrt(jack_var)


def empirical_variance(
    estimator_id: str,
    m: Measure,
    f: CostFunction,
    trials: int = 100_000,
    rng: Optional[RngStream] = None,
    coupling: bool = False,
) -> tuple:
    """Variance of single-sample (N=1) gradient estimates across trials.

    Returns (variance, jackknife_se), both per parameter.  The single-sample
    contributions come from one vectorised run, which is exactly the
    distribution of independent N=1 estimates.
    """
    rng = rng if rng is not None else RngStream(0)
    est_fn = get_estimator(estimator_id)
    cfg = EstimatorConfig(
        n_samples=trials, coupling=coupling, keep_contributions=True
    )
    est = est_fn(m, f, cfg, rng)
    return est.variance.copy(), jackknife_variance_se(est.contributions)
