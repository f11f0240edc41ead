"""Distribution catalogue.

Each measure knows its log-density, score (gradient of the log-density with
respect to the distributional parameters), a sampler driven by an
:class:`~mcgrad.rng.RngStream`, and, where supported, a differentiable
sampling path, a CDF with parameter gradients, and weak-derivative triples
(c, p+, p-) satisfying

    d/d(theta_i) p(x; theta) = c_i * (p+_i(x) - p-_i(x)).

Capability flags are truthful: requesting an unsupported operation raises
:class:`~mcgrad.errors.CapabilityError` rather than silently falling back.

Parameter conventions follow the usual textbook forms: Gamma and Exponential
use rate parameters; the Weibull is W(x | alpha, beta, mu0) with density
``alpha*beta*(x-mu0)^(alpha-1) * exp(-beta*(x-mu0)^alpha)``; the double-sided
Maxwell is M(x | mu, sigma^2) with density proportional to
``(x-mu)^2 * exp(-(x-mu)^2 / (2 sigma^2))``.

All densities are computed in log space; probabilities are exponentiated only
at interfaces.  Measures are immutable after construction: ``replace`` returns
a new instance with updated parameter values (used by the finite-difference
oracles).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import special, stats

from .errors import CapabilityError, ConfigError, DomainError
from .rng import RngStream

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class PathSample:
    """A draw through a sampling path: base variate, output and path jacobian.

    ``jac[n, d]`` is the derivative of the output with respect to parameter d,
    evaluated at base draw n.  For multivariate measures the output coordinate
    that parameter d touches is ``measure.coord_of_param[d]`` (factorised
    paths only move one coordinate per parameter).
    """

    eps: np.ndarray
    x: np.ndarray
    jac: np.ndarray


@dataclass
class WeakDerivativeTriple:
    """Decomposition d/dtheta p = c * (p+ - p-) for one parameter.

    ``sample_pos``/``sample_neg`` draw the perturbed scalar component;
    ``sample_coupled``, when present, draws a positively correlated
    (x+, x-) pair from shared randomness.  ``coord`` is the coordinate of a
    factorised measure that this parameter perturbs (0 for univariate).
    """

    c: float
    sample_pos: Callable[[RngStream, int], np.ndarray]
    sample_neg: Callable[[RngStream, int], np.ndarray]
    sample_coupled: Optional[Callable[[RngStream, int], tuple]] = None
    coord: int = 0
    coupling_kind: str = "independent"


def _as_array(x):
    return np.asarray(x, dtype=float)


def _exp1(rng: RngStream, n: int) -> np.ndarray:
    """Unit-rate exponential variates by inversion."""
    return -np.log1p(-rng.uniform(n))


def _rayleigh(rng: RngStream, n: int) -> np.ndarray:
    """Weibull(alpha=2, beta=0.5) variates, the positive factor in the
    Gaussian-mean weak derivative."""
    return np.sqrt(2.0 * _exp1(rng, n))


def _maxwell_std(rng: RngStream, n: int) -> np.ndarray:
    """Standard double-sided Maxwell variates.

    The radial part is the square root of a Gamma(3/2, rate 1/2) (equivalently
    chi-squared with three degrees of freedom) variate, built from three
    inverse-CDF normals; an independent uniform supplies the sign.
    """
    r = np.sqrt(rng.normal(n) ** 2 + rng.normal(n) ** 2 + rng.normal(n) ** 2)
    sign = np.where(rng.uniform(n) < 0.5, -1.0, 1.0)
    return sign * r


def gamma_rejection_sample(
    rng: RngStream, alpha: float, n: int, max_rounds: int = 100
) -> tuple:
    """Marsaglia-Tsang accepted (z, eps) pairs for unit-rate Gamma, shape >= 1.

    Proposes z = d*(1 + c*eps)^3 through the cube-of-normal transform and
    accepts with the logarithmic squeeze check.  Returns both the variates and
    the accepted base normals, which the rejection-based gradient estimator
    needs.
    """
    if alpha < 1.0:
        raise DomainError("rejection proposal requires shape >= 1")
    d = alpha - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    z = np.empty(n)
    eps_out = np.empty(n)
    todo = np.arange(n)
    for _ in range(max_rounds):
        m = todo.size
        if m == 0:
            return z, eps_out
        eps = rng.normal(m)
        v = (1.0 + c * eps) ** 3
        u = rng.uniform(m)
        ok = v > 0
        with np.errstate(invalid="ignore", divide="ignore"):
            ok &= np.log(np.maximum(u, 1e-300)) < (
                0.5 * eps**2 + d - d * v + d * np.log(np.maximum(v, 1e-300))
            )
        z[todo[ok]] = d * v[ok]
        eps_out[todo[ok]] = eps[ok]
        todo = todo[~ok]
    from .errors import SamplerError

    raise SamplerError(f"gamma rejection sampler exceeded {max_rounds} rounds")


def _gamma_sample(rng: RngStream, alpha: float, n: int) -> np.ndarray:
    """Unit-rate Gamma variates; shapes below one use the standard shape
    augmentation G(alpha) = G(alpha + 1) * U^(1/alpha)."""
    if alpha < 1.0:
        boost = rng.uniform(n) ** (1.0 / alpha)
        return _gamma_sample(rng, alpha + 1.0, n) * boost
    return gamma_rejection_sample(rng, alpha, n)[0]


class Measure:
    """Base class; concrete families override the supported operations."""

    family = "abstract"
    param_names: tuple = ()
    has_score = False
    has_path = False
    has_cdf_grad = False
    has_weak_derivative = False
    discrete = False
    dim = 1

    @property
    def n_params(self) -> int:
        return len(self.param_names)

    @property
    def param_values(self) -> np.ndarray:
        raise NotImplementedError

    @property
    def coord_of_param(self) -> np.ndarray:
        """Output coordinate each parameter acts on (all 0 for univariate)."""
        return np.zeros(self.n_params, dtype=int)

    def replace(self, values) -> "Measure":
        """New instance of the same family with parameter vector ``values``."""
        raise NotImplementedError

    # -- density -----------------------------------------------------------
    def log_prob(self, x) -> np.ndarray:
        raise NotImplementedError

    def pdf(self, x) -> np.ndarray:
        return np.exp(self.log_prob(x))

    def score(self, x) -> np.ndarray:
        raise CapabilityError(f"{self.family} has no score function")

    # -- sampling ----------------------------------------------------------
    def sample(self, rng: RngStream, n: int) -> np.ndarray:
        raise NotImplementedError

    def path_sample(self, rng: RngStream, n: int) -> PathSample:
        raise CapabilityError(f"{self.family} has no differentiable sampling path")

    # -- CDF ---------------------------------------------------------------
    def cdf(self, x) -> np.ndarray:
        raise CapabilityError(f"{self.family} has no tractable CDF")

    def cdf_param_grad(self, x) -> np.ndarray:
        raise CapabilityError(f"{self.family} has no CDF parameter gradient")

    def cdf_and_param_grad(self, x):
        return self.cdf(x), self.cdf_param_grad(x)

    # -- weak derivative ---------------------------------------------------
    def weak_derivative_triple(self, i: int) -> WeakDerivativeTriple:
        raise CapabilityError(f"{self.family} has no weak-derivative triple")

    @property
    def weak_derivative_param_indices(self) -> tuple:
        """Parameter indices for which a weak-derivative triple exists."""
        return tuple(range(self.n_params)) if self.has_weak_derivative else ()

    # -- misc --------------------------------------------------------------
    def support(self) -> tuple:
        """(lo, hi) integration range for quadrature."""
        raise NotImplementedError

    def mean(self):
        raise CapabilityError(f"{self.family} mean not registered")

    def variance(self):
        raise CapabilityError(f"{self.family} variance not registered")

    def __repr__(self):
        vals = ", ".join(
            f"{k}={v:.6g}" for k, v in zip(self.param_names, np.atleast_1d(self.param_values))
        )
        return f"{type(self).__name__}({vals})"


class Gaussian(Measure):
    """Univariate Gaussian N(x | mu, sigma^2), parameters (mu, sigma)."""

    family = "gaussian"
    param_names = ("mu", "sigma")
    has_score = True
    has_path = True
    has_cdf_grad = True
    has_weak_derivative = True

    def __init__(self, mu: float, sigma: float):
        if sigma <= 0:
            raise DomainError("sigma must be positive")
        self.mu = float(mu)
        self.sigma = float(sigma)

    @property
    def param_values(self):
        return np.array([self.mu, self.sigma])

    def replace(self, values):
        return Gaussian(values[0], values[1])

    def log_prob(self, x):
        u = (_as_array(x) - self.mu) / self.sigma
        return -0.5 * _LOG_2PI - math.log(self.sigma) - 0.5 * u**2

    def score(self, x):
        u = (_as_array(x) - self.mu) / self.sigma
        return np.stack([u / self.sigma, (u**2 - 1.0) / self.sigma], axis=-1)

    def sample(self, rng, n):
        return self.mu + self.sigma * rng.normal(n)

    def path_sample(self, rng, n):
        eps = rng.normal(n)
        x = self.mu + self.sigma * eps
        jac = np.stack([np.ones(n), eps], axis=-1)
        return PathSample(eps, x, jac)

    def cdf(self, x):
        return special.ndtr((_as_array(x) - self.mu) / self.sigma)

    def cdf_param_grad(self, x):
        x = _as_array(x)
        p = self.pdf(x)
        return np.stack([-p, -p * (x - self.mu) / self.sigma], axis=-1)

    def weak_derivative_triple(self, i):
        mu, sigma = self.mu, self.sigma
        if i == 0:
            # mean: (1/(sigma*sqrt(2 pi)), mu + sigma*W(2, 1/2), mu - sigma*W(2, 1/2))
            def coupled(rng, n):
                w = _rayleigh(rng, n)
                return mu + sigma * w, mu - sigma * w

            return WeakDerivativeTriple(
                c=1.0 / (sigma * math.sqrt(2.0 * math.pi)),
                sample_pos=lambda rng, n: mu + sigma * _rayleigh(rng, n),
                sample_neg=lambda rng, n: mu - sigma * _rayleigh(rng, n),
                sample_coupled=coupled,
                coupling_kind="weibull_shared",
            )
        if i == 1:
            # scale: (1/sigma, M(mu, sigma^2), N(mu, sigma^2)); the coupled
            # pair reuses the Maxwell variate, scaled by a uniform, as the
            # Gaussian variate.
            def coupled(rng, n):
                e_pos = _maxwell_std(rng, n)
                e_neg = e_pos * rng.uniform(n)
                return mu + sigma * e_pos, mu + sigma * e_neg

            return WeakDerivativeTriple(
                c=1.0 / sigma,
                sample_pos=lambda rng, n: mu + sigma * _maxwell_std(rng, n),
                sample_neg=lambda rng, n: mu + sigma * rng.normal(n),
                sample_coupled=coupled,
                coupling_kind="maxwell_gaussian",
            )
        raise CapabilityError(f"gaussian has no parameter index {i}")

    def support(self):
        return (self.mu - 12 * self.sigma, self.mu + 12 * self.sigma)

    def mean(self):
        return self.mu

    def variance(self):
        return self.sigma**2


class DiagGaussian(Measure):
    """Factorised Gaussian N(x | mu, diag(sigma)^2) over R^dim.

    With ``log_scale=True`` the scale parameters are carried in log form and
    all gradients (score, path jacobian, weak-derivative constants) are taken
    with respect to log sigma via the chain rule.
    """

    family = "diag_gaussian"
    has_score = True
    has_path = True
    has_weak_derivative = True

    def __init__(self, mu, sigma, log_scale: bool = False):
        self.mu = np.atleast_1d(_as_array(mu)).copy()
        self.sigma = np.atleast_1d(_as_array(sigma)).copy()
        if self.mu.shape != self.sigma.shape:
            raise ConfigError("mu and sigma must have the same length")
        if np.any(self.sigma <= 0):
            raise DomainError("sigma must be positive")
        self.log_scale = bool(log_scale)
        self.dim = self.mu.size
        scale_name = "log_s" if log_scale else "sigma"
        self.param_names = tuple(
            [f"mu_{d}" for d in range(self.dim)]
            + [f"{scale_name}_{d}" for d in range(self.dim)]
        )

    @property
    def param_values(self):
        s = np.log(self.sigma) if self.log_scale else self.sigma
        return np.concatenate([self.mu, s])

    @property
    def coord_of_param(self):
        return np.concatenate([np.arange(self.dim), np.arange(self.dim)])

    def replace(self, values):
        values = _as_array(values)
        mu = values[: self.dim]
        s = values[self.dim:]
        sigma = np.exp(s) if self.log_scale else s
        return DiagGaussian(mu, sigma, log_scale=self.log_scale)

    def _scale_chain(self):
        # d sigma / d(scale parameter): sigma when parameterised in log form.
        return self.sigma if self.log_scale else np.ones(self.dim)

    def log_prob(self, x):
        u = (_as_array(x) - self.mu) / self.sigma
        return np.sum(
            -0.5 * _LOG_2PI - np.log(self.sigma) - 0.5 * u**2, axis=-1
        )

    def score(self, x):
        u = (_as_array(x) - self.mu) / self.sigma
        d_mu = u / self.sigma
        d_sigma = (u**2 - 1.0) / self.sigma * self._scale_chain()
        return np.concatenate([d_mu, d_sigma], axis=-1)

    def sample(self, rng, n):
        return self.mu + self.sigma * rng.normal((n, self.dim))

    def path_sample(self, rng, n):
        eps = rng.normal((n, self.dim))
        x = self.mu + self.sigma * eps
        jac = np.concatenate(
            [np.ones((n, self.dim)), eps * self._scale_chain()], axis=-1
        )
        return PathSample(eps, x, jac)

    def weak_derivative_triple(self, i):
        d = int(self.coord_of_param[i])
        comp = Gaussian(self.mu[d], self.sigma[d])
        t = comp.weak_derivative_triple(0 if i < self.dim else 1)
        c = t.c
        if i >= self.dim and self.log_scale:
            c = c * self.sigma[d]  # 1/sigma * sigma = 1
        return WeakDerivativeTriple(
            c=c,
            sample_pos=t.sample_pos,
            sample_neg=t.sample_neg,
            sample_coupled=t.sample_coupled,
            coord=d,
            coupling_kind=t.coupling_kind,
        )

    def mean(self):
        return self.mu.copy()

    def variance(self):
        return self.sigma**2


class Gamma(Measure):
    """Gamma G(x | alpha, beta) with shape alpha and rate beta."""

    family = "gamma"
    param_names = ("alpha", "beta")
    has_score = True
    has_cdf_grad = True
    has_weak_derivative = True

    def __init__(self, alpha: float, beta: float):
        if alpha <= 0 or beta <= 0:
            raise DomainError("alpha and beta must be positive")
        self.alpha = float(alpha)
        self.beta = float(beta)

    @property
    def param_values(self):
        return np.array([self.alpha, self.beta])

    def replace(self, values):
        return Gamma(values[0], values[1])

    def _check_domain(self, x):
        x = _as_array(x)
        if np.any(x < 0):
            raise DomainError("gamma density is supported on x >= 0")
        return x

    def log_prob(self, x):
        x = self._check_domain(x)
        with np.errstate(divide="ignore"):
            return (
                self.alpha * math.log(self.beta)
                - special.gammaln(self.alpha)
                + (self.alpha - 1.0) * np.log(x)
                - self.beta * x
            )

    def score(self, x):
        x = self._check_domain(x)
        with np.errstate(divide="ignore"):
            d_alpha = math.log(self.beta) - special.digamma(self.alpha) + np.log(x)
        d_beta = self.alpha / self.beta - x
        return np.stack([np.broadcast_to(d_alpha, x.shape), d_beta], axis=-1)

    def sample(self, rng, n):
        return _gamma_sample(rng, self.alpha, n) / self.beta

    def cdf(self, x):
        x = self._check_domain(x)
        return special.gammainc(self.alpha, self.beta * x)

    def cdf_param_grad(self, x):
        x = self._check_domain(x)
        # d/d(alpha) of the regularised lower incomplete gamma has no simple
        # closed form; a central difference on gammainc is accurate to ~1e-9.
        h = 1e-6 * max(1.0, self.alpha)
        d_alpha = (
            special.gammainc(self.alpha + h, self.beta * x)
            - special.gammainc(self.alpha - h, self.beta * x)
        ) / (2.0 * h)
        d_beta = (x / self.beta) * self.pdf(x)
        return np.stack([d_alpha, d_beta], axis=-1)

    def weak_derivative_triple(self, i):
        alpha, beta = self.alpha, self.beta
        if i == 0:
            return self._shape_weak_derivative()
        if i != 1:
            raise CapabilityError(f"gamma has no parameter index {i}")

        # rate: (alpha/beta, G(alpha, beta), G(alpha+1, beta)); coupling uses
        # G(alpha+1) = G(alpha) + E(beta) with the G(alpha) draw shared.
        def coupled(rng, n):
            g = _gamma_sample(rng, alpha, n) / beta
            return g, g + _exp1(rng, n) / beta

        return WeakDerivativeTriple(
            c=alpha / beta,
            sample_pos=lambda rng, n: _gamma_sample(rng, alpha, n) / beta,
            sample_neg=lambda rng, n: _gamma_sample(rng, alpha + 1.0, n) / beta,
            sample_coupled=coupled,
            coupling_kind="shared_gamma_increment",
        )

    def _shape_weak_derivative(self) -> WeakDerivativeTriple:
        """Shape triple built by the Hahn-Jordan decomposition.

        d/d(alpha) p(x) = p(x) * (log(beta x) - digamma(alpha)) changes sign
        exactly once, at x0 = exp(digamma(alpha))/beta, so its positive and
        negative lobes (normalised by the shared constant c) are the
        components.  No closed-form component densities exist for the shape,
        so the samplers invert tabulated component CDFs on a log-spaced grid;
        the shared inversion uniform gives a common-random-number coupling.
        """
        alpha, beta = self.alpha, self.beta
        psi = special.digamma(alpha)
        x0 = math.exp(psi) / beta
        # c equals d/d(alpha) of the regularised upper incomplete gamma at
        # the sign change; a central difference on gammaincc is ~1e-9 exact.
        h = 1e-6 * max(1.0, alpha)
        s0 = beta * x0
        c = (special.gammaincc(alpha + h, s0) - special.gammaincc(alpha - h, s0)) / (
            2.0 * h
        )

        lo = float(stats.gamma.ppf(1e-14, alpha, scale=1.0 / beta))
        hi = float(stats.gamma.ppf(1.0 - 1e-14, alpha, scale=1.0 / beta))
        lo = max(lo, 1e-300)

        def lobe_inverse_cdf(a, b, sign):
            grid = np.geomspace(max(a, 1e-12), b, 4096)
            dens = self.pdf(grid) * (np.log(beta * grid) - psi) * sign
            dens = np.maximum(dens, 0.0)
            cdf = np.concatenate(
                [[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))]
            )
            cdf /= cdf[-1]
            return lambda u: np.interp(u, cdf, grid)

        pos_inv = lobe_inverse_cdf(x0, hi, +1.0)
        neg_inv = lobe_inverse_cdf(lo, x0, -1.0)

        return WeakDerivativeTriple(
            c=float(c),
            sample_pos=lambda rng, n: pos_inv(rng.uniform(n)),
            sample_neg=lambda rng, n: neg_inv(rng.uniform(n)),
            sample_coupled=lambda rng, n: (
                lambda u: (pos_inv(u), neg_inv(u))
            )(rng.uniform(n)),
            coupling_kind="shared_inversion",
        )

    def support(self):
        hi = stats.gamma.ppf(1.0 - 1e-14, self.alpha, scale=1.0 / self.beta)
        return (0.0, float(hi))

    def mean(self):
        return self.alpha / self.beta

    def variance(self):
        return self.alpha / self.beta**2


class Exponential(Measure):
    """Exponential E(x | lam) = G(x | 1, lam) with rate lam."""

    family = "exponential"
    param_names = ("lam",)
    has_score = True
    has_path = True
    has_cdf_grad = True
    has_weak_derivative = True

    def __init__(self, lam: float):
        if lam <= 0:
            raise DomainError("rate must be positive")
        self.lam = float(lam)

    @property
    def param_values(self):
        return np.array([self.lam])

    def replace(self, values):
        return Exponential(values[0])

    def _check_domain(self, x):
        x = _as_array(x)
        if np.any(x < 0):
            raise DomainError("exponential density is supported on x >= 0")
        return x

    def log_prob(self, x):
        x = self._check_domain(x)
        return math.log(self.lam) - self.lam * x

    def score(self, x):
        x = self._check_domain(x)
        return (1.0 / self.lam - x)[..., None]

    def sample(self, rng, n):
        return _exp1(rng, n) / self.lam

    def path_sample(self, rng, n):
        u = rng.uniform(n)
        x = -np.log1p(-u) / self.lam
        jac = (np.log1p(-u) / self.lam**2)[:, None]  # = -x / lam
        return PathSample(u, x, jac)

    def cdf(self, x):
        x = self._check_domain(x)
        return -np.expm1(-self.lam * x)

    def cdf_param_grad(self, x):
        x = self._check_domain(x)
        return (x * np.exp(-self.lam * x))[..., None]

    def weak_derivative_triple(self, i):
        if i != 0:
            raise CapabilityError(f"exponential has no parameter index {i}")
        lam = self.lam

        # (1/lam, E(lam), Erlang(2, lam)); the Erlang is the shared
        # exponential plus an independent increment.
        def coupled(rng, n):
            e1 = _exp1(rng, n) / lam
            return e1, e1 + _exp1(rng, n) / lam

        return WeakDerivativeTriple(
            c=1.0 / lam,
            sample_pos=lambda rng, n: _exp1(rng, n) / lam,
            sample_neg=lambda rng, n: (_exp1(rng, n) + _exp1(rng, n)) / lam,
            sample_coupled=coupled,
            coupling_kind="shared_exponential",
        )

    def support(self):
        return (0.0, 37.0 / self.lam)

    def mean(self):
        return 1.0 / self.lam

    def variance(self):
        return 1.0 / self.lam**2


class Weibull(Measure):
    """Weibull W(x | alpha, beta, mu0): alpha*beta*t^(alpha-1)*exp(-beta*t^alpha),
    t = x - mu0.

    The shift mu0 is a fixed support offset, not a differentiable parameter.
    """

    family = "weibull"
    param_names = ("alpha", "beta")
    has_score = True
    has_path = True
    has_cdf_grad = True
    has_weak_derivative = True

    def __init__(self, alpha: float, beta: float, mu0: float = 0.0):
        if alpha <= 0 or beta <= 0:
            raise DomainError("alpha and beta must be positive")
        self.alpha = float(alpha)
        self.beta = float(beta)
        self.mu0 = float(mu0)

    @property
    def param_values(self):
        return np.array([self.alpha, self.beta])

    def replace(self, values):
        return Weibull(values[0], values[1], self.mu0)

    def _t(self, x):
        t = _as_array(x) - self.mu0
        if np.any(t < 0):
            raise DomainError("weibull density is supported on x >= mu0")
        return t

    def log_prob(self, x):
        t = self._t(x)
        with np.errstate(divide="ignore"):
            return (
                math.log(self.alpha)
                + math.log(self.beta)
                + (self.alpha - 1.0) * np.log(t)
                - self.beta * t**self.alpha
            )

    def score(self, x):
        t = self._t(x)
        with np.errstate(divide="ignore"):
            log_t = np.log(t)
        ta = t**self.alpha
        d_alpha = 1.0 / self.alpha + log_t * (1.0 - self.beta * ta)
        d_beta = 1.0 / self.beta - ta
        return np.stack([d_alpha, d_beta], axis=-1)

    def sample(self, rng, n):
        return self.mu0 + (_exp1(rng, n) / self.beta) ** (1.0 / self.alpha)

    def path_sample(self, rng, n):
        u = rng.uniform(n)
        e = -np.log1p(-u)
        t = (e / self.beta) ** (1.0 / self.alpha)
        x = self.mu0 + t
        with np.errstate(divide="ignore"):
            log_t = np.log(np.maximum(t, 1e-300))
        jac = np.stack(
            [-t * log_t / self.alpha, -t / (self.alpha * self.beta)], axis=-1
        )
        return PathSample(u, x, jac)

    def cdf(self, x):
        t = self._t(x)
        return -np.expm1(-self.beta * t**self.alpha)

    def cdf_param_grad(self, x):
        t = self._t(x)
        ta = t**self.alpha
        tail = np.exp(-self.beta * ta)
        with np.errstate(divide="ignore", invalid="ignore"):
            log_t = np.where(t > 0, np.log(np.maximum(t, 1e-300)), 0.0)
        return np.stack([tail * self.beta * ta * log_t, tail * ta], axis=-1)

    @property
    def weak_derivative_param_indices(self):
        return (1,)  # no catalogue entry for the shape

    def weak_derivative_triple(self, i):
        if i != 1:
            raise CapabilityError(
                "weibull weak derivative is available for the beta parameter only"
            )
        alpha, beta, mu0 = self.alpha, self.beta, self.mu0

        # (1/beta, W(alpha, beta), G(2, beta)^(1/alpha)); both parts are
        # powers of exponentials, so sharing the first exponential couples
        # them.
        def pos(rng, n):
            return mu0 + (_exp1(rng, n) / beta) ** (1.0 / alpha)

        def neg(rng, n):
            g2 = (_exp1(rng, n) + _exp1(rng, n)) / beta
            return mu0 + g2 ** (1.0 / alpha)

        def coupled(rng, n):
            e1 = _exp1(rng, n)
            e2 = _exp1(rng, n)
            xp = mu0 + (e1 / beta) ** (1.0 / alpha)
            xm = mu0 + ((e1 + e2) / beta) ** (1.0 / alpha)
            return xp, xm

        return WeakDerivativeTriple(
            c=1.0 / beta,
            sample_pos=pos,
            sample_neg=neg,
            sample_coupled=coupled,
            coupling_kind="shared_exponential",
        )

    def support(self):
        hi = (37.0 / self.beta) ** (1.0 / self.alpha)
        return (self.mu0, self.mu0 + hi)

    def mean(self):
        return self.mu0 + self.beta ** (-1.0 / self.alpha) * math.gamma(
            1.0 + 1.0 / self.alpha
        )


class Poisson(Measure):
    """Poisson P(x | theta) on non-negative integers."""

    family = "poisson"
    param_names = ("theta",)
    has_score = True
    has_weak_derivative = True
    discrete = True

    def __init__(self, theta: float):
        if theta <= 0:
            raise DomainError("theta must be positive")
        self.theta = float(theta)

    @property
    def param_values(self):
        return np.array([self.theta])

    def replace(self, values):
        return Poisson(values[0])

    def _check_domain(self, x):
        x = _as_array(x)
        if np.any(x < 0) or np.any(x != np.floor(x)):
            raise DomainError("poisson mass is defined on non-negative integers")
        return x

    def log_prob(self, x):
        x = self._check_domain(x)
        return -self.theta + x * math.log(self.theta) - special.gammaln(x + 1.0)

    def score(self, x):
        x = self._check_domain(x)
        return (x / self.theta - 1.0)[..., None]

    def sample(self, rng, n):
        return stats.poisson.ppf(rng.uniform(n), self.theta)

    def weak_derivative_triple(self, i):
        if i != 0:
            raise CapabilityError(f"poisson has no parameter index {i}")
        theta = self.theta

        def coupled(rng, n):
            k = stats.poisson.ppf(rng.uniform(n), theta)
            return k + 1.0, k

        return WeakDerivativeTriple(
            c=1.0,
            sample_pos=lambda rng, n: stats.poisson.ppf(rng.uniform(n), theta) + 1.0,
            sample_neg=lambda rng, n: stats.poisson.ppf(rng.uniform(n), theta),
            sample_coupled=coupled,
            coupling_kind="shared_count",
        )

    def support_points(self, tail_mass: float = 1e-12) -> np.ndarray:
        hi = int(stats.poisson.ppf(1.0 - tail_mass / 10.0, self.theta)) + 10
        return np.arange(0, hi + 1, dtype=float)

    def mean(self):
        return self.theta

    def variance(self):
        return self.theta


class Bernoulli(Measure):
    """Bernoulli B(x | theta) on {0, 1}."""

    family = "bernoulli"
    param_names = ("theta",)
    has_score = True
    has_weak_derivative = True
    discrete = True

    def __init__(self, theta: float):
        if not 0.0 < theta < 1.0:
            raise DomainError("theta must lie in (0, 1)")
        self.theta = float(theta)

    @property
    def param_values(self):
        return np.array([self.theta])

    def replace(self, values):
        return Bernoulli(values[0])

    def _check_domain(self, x):
        x = _as_array(x)
        if np.any((x != 0) & (x != 1)):
            raise DomainError("bernoulli mass is defined on {0, 1}")
        return x

    def log_prob(self, x):
        x = self._check_domain(x)
        return x * math.log(self.theta) + (1.0 - x) * math.log1p(-self.theta)

    def score(self, x):
        x = self._check_domain(x)
        return (x / self.theta - (1.0 - x) / (1.0 - self.theta))[..., None]

    def sample(self, rng, n):
        return (rng.uniform(n) < self.theta).astype(float)

    def weak_derivative_triple(self, i):
        if i != 0:
            raise CapabilityError(f"bernoulli has no parameter index {i}")
        # (1, delta_1, delta_0): deterministic on both sides.
        return WeakDerivativeTriple(
            c=1.0,
            sample_pos=lambda rng, n: np.ones(n),
            sample_neg=lambda rng, n: np.zeros(n),
            sample_coupled=lambda rng, n: (np.ones(n), np.zeros(n)),
            coupling_kind="deterministic",
        )

    def support_points(self, tail_mass: float = 0.0) -> np.ndarray:
        return np.array([0.0, 1.0])

    def mean(self):
        return self.theta

    def variance(self):
        return self.theta * (1.0 - self.theta)


class UniformSupport(Measure):
    """Uniform U[0, theta]: the textbook case where the support depends on
    the parameter, so the score-function estimator is biased (absolute
    continuity fails at the boundary) while the weak derivative
    (1/theta, delta_theta, U[0, theta]) recovers the correct gradient.
    """

    family = "uniform"
    param_names = ("theta",)
    has_score = True  # deliberately: the bias is a documented behaviour
    has_path = True
    has_cdf_grad = True
    has_weak_derivative = True

    def __init__(self, theta: float):
        if theta <= 0:
            raise DomainError("theta must be positive")
        self.theta = float(theta)

    @property
    def param_values(self):
        return np.array([self.theta])

    def replace(self, values):
        return UniformSupport(values[0])

    def log_prob(self, x):
        x = _as_array(x)
        if np.any(x < 0):
            raise DomainError("uniform support starts at 0")
        out = np.full(np.shape(x), -np.inf)
        inside = x <= self.theta
        return np.where(inside, -math.log(self.theta), out)

    def score(self, x):
        x = _as_array(x)
        return np.full(x.shape + (1,), -1.0 / self.theta)

    def sample(self, rng, n):
        return self.theta * rng.uniform(n)

    def path_sample(self, rng, n):
        u = rng.uniform(n)
        x = self.theta * u
        return PathSample(u, x, u[:, None])

    def cdf(self, x):
        return np.clip(_as_array(x) / self.theta, 0.0, 1.0)

    def cdf_param_grad(self, x):
        x = _as_array(x)
        inside = (x >= 0) & (x <= self.theta)
        return np.where(inside, -x / self.theta**2, 0.0)[..., None]

    def weak_derivative_triple(self, i):
        if i != 0:
            raise CapabilityError(f"uniform has no parameter index {i}")
        theta = self.theta
        return WeakDerivativeTriple(
            c=1.0 / theta,
            sample_pos=lambda rng, n: np.full(n, theta),
            sample_neg=lambda rng, n: theta * rng.uniform(n),
            sample_coupled=lambda rng, n: (np.full(n, theta), theta * rng.uniform(n)),
            coupling_kind="deterministic_positive_part",
        )

    def support(self):
        return (0.0, self.theta)

    def mean(self):
        return self.theta / 2.0

    def variance(self):
        return self.theta**2 / 12.0


class DoubleSidedMaxwell(Measure):
    """Double-sided Maxwell M(x | mu, sigma^2); the positive part of the
    Gaussian scale weak derivative."""

    family = "double_sided_maxwell"
    param_names = ("mu", "sigma")

    def __init__(self, mu: float, sigma: float):
        if sigma <= 0:
            raise DomainError("sigma must be positive")
        self.mu = float(mu)
        self.sigma = float(sigma)

    @property
    def param_values(self):
        return np.array([self.mu, self.sigma])

    def replace(self, values):
        return DoubleSidedMaxwell(values[0], values[1])

    def log_prob(self, x):
        u = (_as_array(x) - self.mu) / self.sigma
        with np.errstate(divide="ignore"):
            return (
                -3.0 * math.log(self.sigma)
                - 0.5 * _LOG_2PI
                + 2.0 * np.log(np.abs(u * self.sigma))
                - 0.5 * u**2
            )

    def sample(self, rng, n):
        return self.mu + self.sigma * _maxwell_std(rng, n)

    def support(self):
        return (self.mu - 14 * self.sigma, self.mu + 14 * self.sigma)

    def mean(self):
        return self.mu

    def variance(self):
        return 3.0 * self.sigma**2


class Erlang(Measure):
    """Erlang Er(x | k, lam): Gamma with integer shape k and rate lam."""

    family = "erlang"
    param_names = ("lam",)
    has_score = True

    def __init__(self, k: int, lam: float):
        if k < 1 or k != int(k):
            raise DomainError("k must be a positive integer")
        if lam <= 0:
            raise DomainError("lam must be positive")
        self.k = int(k)
        self.lam = float(lam)

    @property
    def param_values(self):
        return np.array([self.lam])

    def replace(self, values):
        return Erlang(self.k, values[0])

    def log_prob(self, x):
        x = _as_array(x)
        if np.any(x < 0):
            raise DomainError("erlang density is supported on x >= 0")
        with np.errstate(divide="ignore"):
            return (
                self.k * math.log(self.lam)
                + (self.k - 1.0) * np.log(x)
                - self.lam * x
                - special.gammaln(self.k)
            )

    def score(self, x):
        x = _as_array(x)
        return (self.k / self.lam - x)[..., None]

    def sample(self, rng, n):
        total = np.zeros(n)
        for _ in range(self.k):
            total += _exp1(rng, n)
        return total / self.lam

    def support(self):
        hi = stats.gamma.ppf(1.0 - 1e-14, self.k, scale=1.0 / self.lam)
        return (0.0, float(hi))

    def mean(self):
        return self.k / self.lam

    def variance(self):
        return self.k / self.lam**2


_FAMILIES = {
    "gaussian": (Gaussian, ("mu", "sigma")),
    "diag_gaussian": (DiagGaussian, ("mu", "sigma", "dim", "log_scale")),
    "gamma": (Gamma, ("alpha", "beta")),
    "exponential": (Exponential, ("lam",)),
    "weibull": (Weibull, ("alpha", "beta", "mu0")),
    "poisson": (Poisson, ("theta",)),
    "bernoulli": (Bernoulli, ("theta",)),
    "uniform": (UniformSupport, ("theta",)),
    "double_sided_maxwell": (DoubleSidedMaxwell, ("mu", "sigma")),
    "erlang": (Erlang, ("k", "lam")),
}

_SPEC_RE = re.compile(r"^\s*([a-zA-Z_][a-zA-Z0-9_]*)\s*\((.*)\)\s*$")


def parse_measure(text: str) -> Measure:
    """Build a measure from config text like ``gaussian(mu=1.0,sigma=1.0)``."""
    m = _SPEC_RE.match(text)
    if not m:
        raise ConfigError(f"cannot parse measure spec {text!r}")
    family, body = m.group(1).lower(), m.group(2)
    if family not in _FAMILIES:
        raise ConfigError(
            f"unknown measure family {family!r}; valid: {sorted(_FAMILIES)}"
        )
    cls, allowed = _FAMILIES[family]
    kwargs = {}
    if body.strip():
        for item in body.split(","):
            if "=" not in item:
                raise ConfigError(f"expected name=value in measure spec, got {item!r}")
            k, v = (s.strip() for s in item.split("=", 1))
            if k not in allowed:
                raise ConfigError(
                    f"unknown parameter {k!r} for {family}; valid: {allowed}"
                )
            if k == "log_scale":
                kwargs[k] = v.lower() in ("1", "true", "yes")
            elif k in ("dim", "k"):
                kwargs[k] = int(v)
            else:
                kwargs[k] = float(v)
    if family == "diag_gaussian":
        dim = kwargs.pop("dim", 1)
        mu = np.full(dim, kwargs.get("mu", 0.0))
        sigma = np.full(dim, kwargs.get("sigma", 1.0))
        return DiagGaussian(mu, sigma, log_scale=kwargs.get("log_scale", False))
    return cls(**kwargs)


def format_measure(m: Measure) -> str:
    """Inverse of :func:`parse_measure` for the supported scalar families."""
    if isinstance(m, DiagGaussian):
        scale = "log_scale=true," if m.log_scale else ""
        return (
            f"diag_gaussian(mu={m.mu[0]!r},sigma={m.sigma[0]!r},"
            f"{scale}dim={m.dim})"
        )
    if isinstance(m, Erlang):
        return f"erlang(k={m.k},lam={m.lam!r})"
    if isinstance(m, Weibull):
        return f"weibull(alpha={m.alpha!r},beta={m.beta!r},mu0={m.mu0!r})"
    vals = ",".join(
        f"{name}={float(v)!r}" for name, v in zip(m.param_names, m.param_values)
    )
    return f"{m.family}({vals})"
