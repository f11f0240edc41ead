"""Control variates, baselines and coupling constructions.

The linear control variate replaces f by f - beta*(h - E[h]) for an h with
known expectation; the optimal coefficient is Cov(f, h)/Var(h) and the
achievable variance ratio is 1 - Corr(f, h)^2.  The Taylor-expansion
("delta method") control variates specialise h to the second-order expansion
of the cost around the measure mean, whose Gaussian expectation is analytic,
and plug into either the score-function or the pathwise estimator.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .costs import CostFunction
from .errors import CapabilityError, ConfigError
from .estimators import EstimatorConfig, GradientEstimate, _finalize, _path_contributions
from .measures import DiagGaussian, Gaussian, Measure, WeakDerivativeTriple
from .rng import RngStream


class DegenerateControlWarning(UserWarning):
    """The control variate had zero sample variance; beta falls back to 0."""


def optimal_beta(f_samples, h_samples) -> float:
    """Empirical Cov(f, h) / Var(h); 0 (with a warning) for degenerate h."""
    f_samples = np.asarray(f_samples, dtype=float)
    h_samples = np.asarray(h_samples, dtype=float)
    if f_samples.shape != h_samples.shape:
        raise ConfigError("f and h sample arrays must have the same shape")
    if f_samples.size < 2:
        raise ConfigError("need at least two samples to estimate beta")
    var_h = h_samples.var(ddof=1)
    if var_h == 0.0:
        warnings.warn(
            "control variate has zero variance; using beta = 0",
            DegenerateControlWarning,
        )
        return 0.0
    cov = np.cov(f_samples, h_samples, ddof=1)[0, 1]
    return float(cov / var_h)


def linear_cv_estimate(f_samples, h_samples, eh: float, beta: float) -> tuple:
    """Mean and single-sample variance of f - beta*(h - E[h]).

    Unbiased for any fixed beta; with the optimal beta the variance shrinks
    by the squared correlation between f and h.
    """
    f_samples = np.asarray(f_samples, dtype=float)
    h_samples = np.asarray(h_samples, dtype=float)
    if f_samples.shape != h_samples.shape:
        raise ConfigError("f and h sample arrays must have the same shape")
    corrected = f_samples - beta * (h_samples - eh)
    var = corrected.var(ddof=1) if corrected.size > 1 else 0.0
    return float(corrected.mean()), float(var)


def multiplicative_cv_estimate(f_samples, h_samples, eh: float, form: str) -> float:
    """Non-linear (multiplicative) control variates.

    The sample means of f and h are combined so that the control's
    observed-versus-expected discrepancy rescales the plain estimate:

        ``ratio``   mean(f) * E[h] / mean(h)      (requires h > 0)
        ``power``   mean(f) ^ (mean(h) / E[h])    (requires f > 0)
        ``exp``     mean(f) * exp(E[h] - mean(h))

    Consistent (mean(h) -> E[h]) but biased at finite N, with the bias
    falling off like 1/N; no coefficient is needed.
    """
    f_samples = np.asarray(f_samples, dtype=float)
    h_samples = np.asarray(h_samples, dtype=float)
    f_bar = float(f_samples.mean())
    h_bar = float(h_samples.mean())
    if form == "ratio":
        if np.any(h_samples <= 0):
            raise ConfigError("ratio form requires h > 0")
        return f_bar * eh / h_bar
    if form == "power":
        if np.any(f_samples <= 0):
            raise ConfigError("power form requires f > 0")
        return f_bar ** (h_bar / eh)
    if form == "exp":
        return f_bar * math.exp(eh - h_bar)
    raise ConfigError(f"unknown multiplicative form {form!r}; valid: ratio, power, exp")


@dataclass
class ControlVariate:
    """A control h with analytic expectation under a parametric measure."""

    h: Callable
    h_grad: Optional[Callable]
    expectation: Callable[[Measure], float]
    expectation_grad: Callable[[Measure], np.ndarray]
    beta: Optional[np.ndarray] = None


def taylor_control_variate(f: CostFunction, x0) -> ControlVariate:
    """Second-order Taylor expansion of the cost around ``x0`` as a control.

    h(x) = f(x0) + (x-x0)^T g0 + 1/2 (x-x0)^T H0 (x-x0), with E[h] and its
    parameter gradient available in closed form for (diagonal) Gaussian
    measures.
    """
    if f.grad is None or f.hess is None:
        raise CapabilityError("the Taylor control needs f.grad and f.hess")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    dim = x0.size
    f0 = float(np.asarray(f(x0[None, :] if dim > 1 else x0[None])).reshape(-1)[0])
    g0 = np.atleast_1d(np.asarray(f.grad(x0 if dim > 1 else float(x0[0])), dtype=float))
    h0 = np.atleast_2d(np.asarray(f.hess(x0 if dim > 1 else float(x0[0])), dtype=float))

    def h_eval(x):
        x = np.asarray(x, dtype=float)
        d = x - x0 if x.ndim > 1 else (x - x0[0])[:, None]
        return f0 + d @ g0 + 0.5 * np.einsum("ni,ij,nj->n", d, h0, d)

    def h_grad(x):
        x = np.asarray(x, dtype=float)
        if x.ndim > 1:
            return g0 + (x - x0) @ h0
        return g0[0] + (x - x0[0]) * h0[0, 0]

    def _gaussian_params(m: Measure):
        if isinstance(m, DiagGaussian):
            return m.mu, m.sigma, m._scale_chain()
        if isinstance(m, Gaussian):
            return np.array([m.mu]), np.array([m.sigma]), np.array([1.0])
        raise CapabilityError("Taylor control expectation needs a Gaussian measure")

    def expectation(m: Measure) -> float:
        mu, sigma, _ = _gaussian_params(m)
        d = mu - x0
        return float(
            f0 + d @ g0 + 0.5 * (d @ h0 @ d) + 0.5 * np.sum(sigma**2 * np.diag(h0))
        )

    def expectation_grad(m: Measure) -> np.ndarray:
        mu, sigma, chain = _gaussian_params(m)
        d_mu = g0 + h0 @ (mu - x0)
        d_scale = sigma * np.diag(h0) * chain
        return np.concatenate([d_mu, d_scale])

    return ControlVariate(
        h=h_eval, h_grad=h_grad, expectation=expectation,
        expectation_grad=expectation_grad,
    )


def _per_param_beta(a: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Componentwise Cov(a_d, c_d)/Var(c_d) with degenerate columns at 0."""
    a = a - a.mean(axis=0)
    c = c - c.mean(axis=0)
    var_c = (c**2).mean(axis=0)
    cov = (a * c).mean(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        beta = np.where(var_c > 0, cov / np.where(var_c > 0, var_c, 1.0), 0.0)
    return beta


def delta_cv_score_function(
    m: Measure,
    f: CostFunction,
    cfg: EstimatorConfig,
    rng: RngStream,
    expansion_point=None,
    cv_coeff_samples: int = 25,
) -> GradientEstimate:
    """Score-function estimator with a Taylor-expansion control variate.

    Per parameter d the control is h(x) * score_d(x) with analytic expectation
    d/dtheta_d E[h].  By default beta_d is fitted on ``cv_coeff_samples``
    independent auxiliary samples, which keeps the main-run estimate strictly
    unbiased; ``cv_coeff_samples=0`` fits beta on the main samples instead
    (guaranteed non-increase of the sample variance at the cost of a small,
    O(1/N) coefficient-reuse bias).
    """
    if not m.has_score:
        raise CapabilityError(f"{m.family} does not expose a score function")
    x0 = expansion_point if expansion_point is not None else m.mean()
    cv = taylor_control_variate(f, x0)
    eh_grad = cv.expectation_grad(m)

    x = m.sample(rng.split(1), cfg.n_samples)
    s = m.score(x)
    fx = np.asarray(f(x), dtype=float)
    hx = np.asarray(cv.h(x), dtype=float)
    if cv_coeff_samples > 0:
        aux = m.sample(rng.split(0), cv_coeff_samples)
        s_aux = m.score(aux)
        a_aux = np.asarray(f(aux), dtype=float)[:, None] * s_aux
        c_aux = np.asarray(cv.h(aux), dtype=float)[:, None] * s_aux
        beta = _per_param_beta(a_aux, c_aux)
    else:
        beta = _per_param_beta(fx[:, None] * s, hx[:, None] * s)
    contributions = (fx[:, None] - beta * hx[:, None]) * s + beta * eh_grad
    return _finalize(
        contributions,
        n_cost_evals=cfg.n_samples + max(cv_coeff_samples, 0),
        keep=cfg.keep_contributions,
    )


def delta_cv_pathwise(
    m: Measure,
    f: CostFunction,
    cfg: EstimatorConfig,
    rng: RngStream,
    expansion_point=None,
    cv_coeff_samples: int = 25,
) -> GradientEstimate:
    """Pathwise estimator with a Taylor-expansion control variate.

    The control enters through its own pathwise term, grad h at the sampled
    point contracted with the path jacobian, and its analytic expectation
    gradient is added back.  Coefficient fitting follows
    :func:`delta_cv_score_function`.
    """
    if not m.has_path:
        raise CapabilityError(f"{m.family} has no differentiable sampling path")
    if f.grad is None:
        raise CapabilityError("pathwise estimation requires f.grad")
    x0 = expansion_point if expansion_point is not None else m.mean()
    cv = taylor_control_variate(f, x0)
    eh_grad = cv.expectation_grad(m)
    h_cost = CostFunction(name="taylor_control", eval=cv.h, grad=cv.h_grad)

    ps = m.path_sample(rng.split(1), cfg.n_samples)
    a = _path_contributions(m, f, ps)
    c = _path_contributions(m, h_cost, ps)
    if cv_coeff_samples > 0:
        ps_aux = m.path_sample(rng.split(0), cv_coeff_samples)
        beta = _per_param_beta(
            _path_contributions(m, f, ps_aux), _path_contributions(m, h_cost, ps_aux)
        )
    else:
        beta = _per_param_beta(a, c)
    contributions = a - beta * c + beta * eh_grad
    return _finalize(
        contributions,
        n_cost_evals=cfg.n_samples + max(cv_coeff_samples, 0),
        keep=cfg.keep_contributions,
    )


def coupled_triple_samples(
    triple: WeakDerivativeTriple, kind: str, rng: RngStream, n: int
) -> tuple:
    """Draw an (x+, x-) pair from a weak-derivative triple.

    ``kind`` selects the coupling: ``independent`` uses separate streams;
    otherwise it must name the triple's own common-random-number scheme,
    e.g. ``weibull_shared`` for the Gaussian mean triple or
    ``maxwell_gaussian`` for the Gaussian scale triple.
    """
    if kind == "independent":
        return (
            triple.sample_pos(rng.split(0), n),
            triple.sample_neg(rng.split(1), n),
        )
    if kind != triple.coupling_kind or triple.sample_coupled is None:
        raise ConfigError(
            f"coupling kind {kind!r} is incompatible with this triple "
            f"(supports {triple.coupling_kind!r} or 'independent')"
        )
    return triple.sample_coupled(rng, n)
