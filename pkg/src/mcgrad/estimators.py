"""Gradient estimators for d/dtheta E_{p(x;theta)}[f(x)].

Three core families plus Gaussian-specific and Gamma-specific variants:

* ``score_function_grad``   -- (f(x) - b) * d/dtheta log p(x; theta)
* ``pathwise_grad``         -- grad f(g(eps; theta)) through a sampling path
* ``pathwise_implicit_grad``-- same idea via the CDF: dx/dtheta = -dF/dtheta / p
* ``measure_valued_grad``   -- c * (f(x+) - f(x-)) from weak-derivative triples
* ``bonnet_price_grad``     -- Gaussian mean/scale gradients from E[grad f],
                               E[Hessian diag]
* ``weak_reparam_grad``     -- Gamma standardisation with a parameter-dependent
                               base density: pathwise term + score correction
* ``rejection_reparam_grad``-- pathwise through the rejection proposal plus a
                               score-function term for the acceptance reweighting

Every estimator returns a :class:`GradientEstimate` whose ``variance`` is the
per-parameter sample variance of the single-sample contributions from the same
run, which is the quantity the variance experiments report.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import digamma, polygamma

from .costs import CostFunction
from .errors import CapabilityError, ConfigError
from .measures import Gamma, Measure, gamma_rejection_sample
from .rng import RngStream


@dataclass
class GradientEstimate:
    """Per-parameter gradient mean and single-sample variance.

    ``contributions`` holds the raw (n_samples, D) single-sample terms when
    the run was configured with ``keep_contributions``; the variance studies
    and paired control-variate comparisons read them.
    """

    mean: np.ndarray
    variance: np.ndarray
    n_samples: int
    n_cost_evals: int
    contributions: Optional[np.ndarray] = None


@dataclass
class MovingAverageBaseline:
    """Running-average baseline for the score-function estimator."""

    decay: float = 0.9


@dataclass
class EstimatorConfig:
    """Common estimator knobs.

    ``baseline`` is None, a constant, or a :class:`MovingAverageBaseline`;
    it only affects the score-function estimator.  ``coupling`` makes the
    measure-valued estimator share randomness between its positive and
    negative samples.
    """

    n_samples: int = 1
    baseline: object = None
    coupling: bool = False
    keep_contributions: bool = False

    def __post_init__(self):
        if self.n_samples < 1:
            raise ConfigError("n_samples must be >= 1")


def _finalize(
    contributions: np.ndarray, n_cost_evals: int, keep: bool = False
) -> GradientEstimate:
    contributions = np.atleast_2d(np.asarray(contributions, dtype=float))
    n = contributions.shape[0]
    mean = contributions.mean(axis=0)
    var = (
        contributions.var(axis=0, ddof=1) if n > 1 else np.zeros(contributions.shape[1])
    )
    return GradientEstimate(
        mean=mean,
        variance=var,
        n_samples=n,
        n_cost_evals=n_cost_evals,
        contributions=contributions if keep else None,
    )


def _baseline_values(baseline, fx: np.ndarray) -> np.ndarray:
    if baseline is None:
        return np.zeros_like(fx)
    if isinstance(baseline, MovingAverageBaseline):
        # b_0 is the first cost value; each later b_n only uses costs before
        # sample n, so the correction stays (almost) unbiased.
        b = np.empty_like(fx)
        running = fx[0]
        for i in range(fx.size):
            b[i] = running
            running = baseline.decay * running + (1.0 - baseline.decay) * fx[i]
        return b
    return np.full_like(fx, float(baseline))


def score_function_grad(
    m: Measure, f: CostFunction, cfg: EstimatorConfig, rng: RngStream
) -> GradientEstimate:
    """Score-function (likelihood-ratio) estimator, optionally with a baseline.

    Unbiased for any fixed baseline because the score has zero expectation;
    biased by construction on support-parameterised measures such as
    U[0, theta], where absolute continuity fails.
    """
    if not m.has_score:
        raise CapabilityError(f"{m.family} does not expose a score function")
    x = m.sample(rng, cfg.n_samples)
    fx = f(x)
    b = _baseline_values(cfg.baseline, fx)
    contributions = (fx - b)[:, None] * m.score(x)
    return _finalize(contributions, n_cost_evals=cfg.n_samples, keep=cfg.keep_contributions)


def _path_contributions(m: Measure, f: CostFunction, ps) -> np.ndarray:
    g = f.grad(ps.x)
    if np.ndim(ps.x) == 1:
        return g[:, None] * ps.jac
    return g[:, m.coord_of_param] * ps.jac


def pathwise_grad(
    m: Measure, f: CostFunction, cfg: EstimatorConfig, rng: RngStream
) -> GradientEstimate:
    """Pathwise (reparameterisation) estimator through g(eps; theta)."""
    if not m.has_path:
        raise CapabilityError(f"{m.family} has no differentiable sampling path")
    if f.grad is None:
        raise CapabilityError(
            "pathwise estimation requires a differentiable cost (f.grad missing)"
        )
    ps = m.path_sample(rng, cfg.n_samples)
    return _finalize(
        _path_contributions(m, f, ps),
        n_cost_evals=cfg.n_samples,
        keep=cfg.keep_contributions,
    )


def pathwise_implicit_grad(
    m: Measure, f: CostFunction, cfg: EstimatorConfig, rng: RngStream
) -> GradientEstimate:
    """Pathwise estimator with dx/dtheta = -dF/dtheta / p(x) from the CDF.

    Sampling is decoupled from differentiation: any sampler for the measure
    works, and no sampling path has to be differentiated.
    """
    if not m.has_cdf_grad:
        raise CapabilityError(f"{m.family} has no CDF parameter gradient")
    if f.grad is None:
        raise CapabilityError(
            "pathwise estimation requires a differentiable cost (f.grad missing)"
        )
    x = m.sample(rng, cfg.n_samples)
    dx = -m.cdf_param_grad(x) / m.pdf(x)[:, None]
    contributions = f.grad(x)[:, None] * dx
    return _finalize(contributions, n_cost_evals=cfg.n_samples, keep=cfg.keep_contributions)


def measure_valued_grad(
    m: Measure, f: CostFunction, cfg: EstimatorConfig, rng: RngStream
) -> GradientEstimate:
    """Measure-valued (weak-derivative) estimator.

    Per parameter i the contribution is c_i * (f(x+) - f(x-)) with x+ and x-
    drawn from the positive and negative components of the weak derivative.
    For factorised multivariate measures the perturbation touches one
    coordinate at a time while the others keep their regular samples; with
    ``cfg.coupling`` those regular samples are shared between the two sides
    and the perturbed pair shares its base randomness too.

    Costs 2*N*D cost evaluations for D parameters.
    """
    if not m.has_weak_derivative:
        raise CapabilityError(f"{m.family} has no weak-derivative decomposition")
    n, d_params = cfg.n_samples, m.n_params
    contributions = np.empty((n, d_params))
    shared_base = m.sample(rng.split(0), n) if (m.dim > 1 and cfg.coupling) else None
    for i in range(d_params):
        triple = m.weak_derivative_triple(i)
        sub = rng.split(i + 1)
        if cfg.coupling and triple.sample_coupled is not None:
            wp, wm = triple.sample_coupled(sub, n)
        else:
            wp = triple.sample_pos(sub.split(0), n)
            wm = triple.sample_neg(sub.split(1), n)
        if m.dim == 1:
            xp, xm = wp, wm
        else:
            base_p = shared_base if shared_base is not None else m.sample(sub.split(2), n)
            base_m = shared_base if shared_base is not None else m.sample(sub.split(3), n)
            xp = base_p.copy()
            xm = base_m.copy()
            xp[:, triple.coord] = wp
            xm[:, triple.coord] = wm
        contributions[:, i] = triple.c * (f(xp) - f(xm))
    return _finalize(
        contributions, n_cost_evals=2 * n * d_params, keep=cfg.keep_contributions
    )


def bonnet_price_grad(
    m: Measure, f: CostFunction, cfg: EstimatorConfig, rng: RngStream
) -> GradientEstimate:
    """Gaussian-only estimator from the mean/covariance differentiation
    identities: d/dmu_i E[f] = E[d f/d x_i] and
    d/dSigma_ii E[f] = (1/2) E[d^2 f/d x_i^2], mapped to the measure's scale
    parameterisation by the chain rule.
    """
    if m.family not in ("gaussian", "diag_gaussian"):
        raise CapabilityError("bonnet_price_grad requires a Gaussian measure")
    if f.grad is None:
        raise CapabilityError("the mean gradient requires f.grad")
    if f.hess_diag is None:
        raise CapabilityError("the scale gradient requires f.hess_diag")
    x = m.sample(rng, cfg.n_samples)
    g = np.asarray(f.grad(x), dtype=float)
    h = np.asarray(f.hess_diag(x), dtype=float)
    if m.family == "gaussian":
        sigma = m.sigma
        contributions = np.stack([g, sigma * h], axis=-1)
    else:
        # d Sigma_dd / d sigma_d = 2 sigma_d; a log parameterisation adds
        # another factor sigma_d.
        scale = m.sigma * m._scale_chain()
        contributions = np.concatenate([g, scale * h], axis=-1)
    return _finalize(contributions, n_cost_evals=cfg.n_samples, keep=cfg.keep_contributions)


def _gamma_standardisation(alpha: float):
    """Digamma-based constants for the Gamma standardisation path."""
    psi = digamma(alpha)
    psi1 = float(polygamma(1, alpha))
    psi2 = float(polygamma(2, alpha))
    return psi, psi1, psi2


def weak_reparam_grad(
    m: Measure, f: CostFunction, cfg: EstimatorConfig, rng: RngStream
) -> GradientEstimate:
    """Hybrid pathwise/score-function estimator for the Gamma distribution.

    Uses the standardisation eps = (log x - digamma(alpha) + log beta) /
    sqrt(polygamma(1, alpha)), whose induced base density depends on alpha but
    not beta.  The gradient is the pathwise term through
    x = exp(eps*sqrt(psi1) + psi)/beta plus a score-function correction under
    the base density (zero for beta).
    """
    if not isinstance(m, Gamma):
        raise CapabilityError("weak_reparam_grad is specific to the Gamma measure")
    if f.grad is None:
        raise CapabilityError("the pathwise term requires f.grad")
    alpha, beta = m.alpha, m.beta
    psi, psi1, psi2 = _gamma_standardisation(alpha)
    sq = math.sqrt(psi1)

    x = m.sample(rng, cfg.n_samples)
    eps = (np.log(x) - psi + math.log(beta)) / sq

    gamma_x = f.grad(x)
    # d x / d alpha along the standardisation path, with eps held fixed.
    dx_dalpha = x * (eps * psi2 / (2.0 * sq) + psi1)
    dx_dbeta = -x / beta

    # d/dalpha log of the base density induced by the standardisation.
    bx = beta * x  # = exp(eps*sq + psi)
    dlog_base = (
        alpha * psi1
        + psi2 / (2.0 * psi1)
        + eps * sq
        + eps * alpha * psi2 / (2.0 * sq)
        - bx * (eps * psi2 / (2.0 * sq) + psi1)
    )

    fx = f(x)
    contributions = np.stack(
        [gamma_x * dx_dalpha + fx * dlog_base, gamma_x * dx_dbeta], axis=-1
    )
    return _finalize(
        contributions, n_cost_evals=cfg.n_samples, keep=cfg.keep_contributions
    )


def rejection_reparam_grad(
    m: Measure, f: CostFunction, cfg: EstimatorConfig, rng: RngStream
) -> GradientEstimate:
    """Gamma gradients through the rejection sampler's proposal path.

    The accepted base normal eps follows an effective distribution
    pi(eps) = p(eps) * p_theta(g(eps)) / r_theta(g(eps)); differentiating the
    reparameterised objective gives a pathwise term through the smooth
    proposal transform z = d*(1 + c*eps)^3 plus a score-function term weighted
    by d/dtheta log(p/r).  The rate is exactly reparameterised, so its score
    term vanishes.  Shapes below one use the G(alpha+1) * U^(1/alpha)
    augmentation.
    """
    if not isinstance(m, Gamma):
        raise CapabilityError("rejection_reparam_grad is specific to the Gamma measure")
    if f.grad is None:
        raise CapabilityError("the pathwise term requires f.grad")
    alpha, beta = m.alpha, m.beta
    n = cfg.n_samples

    augmented = alpha < 1.0
    a = alpha + 1.0 if augmented else alpha
    if augmented:
        u_boost = np.clip(rng.uniform(n), 1e-300, 1.0)
        boost = u_boost ** (1.0 / alpha)
        # boost = u^(1/alpha): d/dalpha = boost * log(u) * (-1/alpha^2)
        dboost_dalpha = boost * np.log(u_boost) * (-1.0 / alpha**2)
    z, eps = gamma_rejection_sample(rng, a, n)

    d = a - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    dc_da = -4.5 * c**3
    one_pc = 1.0 + c * eps

    x_tilde = z / beta
    dz_da = one_pc**3 + 3.0 * d * one_pc**2 * eps * dc_da

    # d/da of log p_a(z) - log r_a(z) at fixed eps: the total alpha-derivative
    # of log G(z | a, 1) along the proposal path plus d/da log |dz/deps|.
    log_p_a = math.log(1.0) - digamma(a) + np.log(z)  # d/da log G(z|a,1), beta=1
    dlogp_dz = (a - 1.0) / z - 1.0
    dlog_jac = 1.0 / d + dc_da / c + 2.0 * eps * dc_da / one_pc
    score_w = log_p_a + dlogp_dz * dz_da + dlog_jac

    if augmented:
        x = x_tilde * boost
        dx_da = (dz_da / beta) * boost + x_tilde * dboost_dalpha
    else:
        x = x_tilde
        dx_da = dz_da / beta
    dx_db = -x / beta

    gamma_x = f.grad(x)
    fx = f(x)
    contributions = np.stack(
        [gamma_x * dx_da + fx * score_w, gamma_x * dx_db], axis=-1
    )
    return _finalize(contributions, n_cost_evals=n, keep=cfg.keep_contributions)


def rejection_score_correction(
    m: Measure, f: CostFunction, n: int, rng: RngStream
) -> np.ndarray:
    """The score-function term of :func:`rejection_reparam_grad` alone
    (diagnostic: its expectation is zero for constant costs)."""
    if not isinstance(m, Gamma) or m.alpha < 1.0:
        raise CapabilityError("diagnostic defined for Gamma with shape >= 1")
    a, beta = m.alpha, m.beta
    z, eps = gamma_rejection_sample(rng, a, n)
    d = a - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    dc_da = -4.5 * c**3
    one_pc = 1.0 + c * eps
    dz_da = one_pc**3 + 3.0 * d * one_pc**2 * eps * dc_da
    log_p_a = -digamma(a) + np.log(z)
    dlogp_dz = (a - 1.0) / z - 1.0
    dlog_jac = 1.0 / d + dc_da / c + 2.0 * eps * dc_da / one_pc
    return f(z / beta) * (log_p_a + dlogp_dz * dz_da + dlog_jac)


def higher_order_score(m: Measure, x, order: int = 1) -> np.ndarray:
    """Higher-order score s^(k) = (d^k/dtheta^k p) / p, k <= 2.

    For k = 1 this is the ordinary score; for k >= 2 it is *not* the
    derivative of the log-density.  Available analytically for the Gaussian
    and Exponential families; exposed as a test diagnostic.
    """
    if order == 1:
        return m.score(x)
    if order != 2:
        raise CapabilityError("higher_order_score supports orders 1 and 2 only")
    x = np.asarray(x, dtype=float)
    if m.family == "gaussian":
        u = (x - m.mu) / m.sigma
        s2 = m.sigma**2
        s_mm = (u**2 - 1.0) / s2
        s_ms = u * (u**2 - 3.0) / s2
        s_ss = (u**4 - 5.0 * u**2 + 2.0) / s2
        out = np.empty(x.shape + (2, 2))
        out[..., 0, 0] = s_mm
        out[..., 0, 1] = s_ms
        out[..., 1, 0] = s_ms
        out[..., 1, 1] = s_ss
        return out
    if m.family == "exponential":
        lam = m.lam
        return ((1.0 / lam - x) ** 2 - 1.0 / lam**2)[..., None, None]
    raise CapabilityError(
        f"second-order score not available for {m.family}; use gaussian or exponential"
    )


def merge_estimates(estimates) -> GradientEstimate:
    """Pool estimates from independent runs (e.g. parallel split streams).

    Means combine by sample-weighted averaging; variances of the single-sample
    contributions pool through the within/between decomposition, so the result
    equals a single run over the union of the samples.
    """
    estimates = list(estimates)
    if not estimates:
        raise ConfigError("nothing to merge")
    ns = np.array([e.n_samples for e in estimates], dtype=float)
    means = np.stack([e.mean for e in estimates])
    variances = np.stack([e.variance for e in estimates])
    n_total = ns.sum()
    mean = (ns[:, None] * means).sum(axis=0) / n_total
    sum_sq = ((ns[:, None] - 1.0) * variances + ns[:, None] * means**2).sum(axis=0)
    var = (sum_sq - n_total * mean**2) / (n_total - 1.0) if n_total > 1 else 0.0 * mean
    return GradientEstimate(
        mean=mean,
        variance=np.maximum(var, 0.0),
        n_samples=int(n_total),
        n_cost_evals=sum(e.n_cost_evals for e in estimates),
    )


ESTIMATORS = {
    "score_function": score_function_grad,
    "pathwise": pathwise_grad,
    "pathwise_implicit": pathwise_implicit_grad,
    "measure_valued": measure_valued_grad,
    "bonnet_price": bonnet_price_grad,
    "weak_reparam": weak_reparam_grad,
    "rejection_reparam": rejection_reparam_grad,
}


def get_estimator(name: str):
    if name not in ESTIMATORS:
        raise ConfigError(
            f"unknown estimator {name!r}; valid: {sorted(ESTIMATORS)}"
        )
    return ESTIMATORS[name]


def estimator_applicable(name: str, m: Measure, f: CostFunction) -> bool:
    """Whether an estimator's capability requirements are met."""
    needs_grad = name in (
        "pathwise",
        "pathwise_implicit",
        "bonnet_price",
        "weak_reparam",
        "rejection_reparam",
    )
    if needs_grad and f.grad is None:
        return False
    if name == "score_function":
        return m.has_score
    if name == "pathwise":
        return m.has_path
    if name == "pathwise_implicit":
        return m.has_cdf_grad
    if name == "measure_valued":
        return (
            m.has_weak_derivative
            and len(m.weak_derivative_param_indices) == m.n_params
        )
    if name == "bonnet_price":
        return m.family in ("gaussian", "diag_gaussian") and f.hess_diag is not None
    if name in ("weak_reparam", "rejection_reparam"):
        return isinstance(m, Gamma)
    return False
