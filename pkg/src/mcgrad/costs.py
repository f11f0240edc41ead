"""Cost functions f(x) with optional analytic gradients and Hessians.

All the test costs are sums of identical one-dimensional terms, so a cost
accepts either a univariate batch ``(n,)`` or a multivariate batch
``(n, dim)`` and reduces over the trailing dimension.  ``grad`` matches the
input shape; ``hess_diag`` gives the diagonal second derivatives per sample;
``hess`` gives the full Hessian matrix at a single point (used by the
Taylor-expansion control variates, where only the expansion point matters).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import expit

from .errors import ConfigError


@dataclass
class CostFunction:
    """Evaluator f(x) -> (n,) with optional derivative information."""

    name: str
    eval: Callable
    grad: Optional[Callable] = None
    hess: Optional[Callable] = None        # single point -> (dim, dim) or scalar
    hess_diag: Optional[Callable] = None   # batch -> diagonal entries, shaped like x
    lipschitz_hint: Optional[float] = None
    kind: str = ""
    k: Optional[float] = None

    def __call__(self, x):
        return self.eval(x)


def _reduce(values):
    values = np.asarray(values, dtype=float)
    return values.sum(axis=-1) if values.ndim > 1 else values


def _full_hess_from_diag(diag_fn):
    def hess(x0):
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        return np.diag(diag_fn(x0))

    return hess


def make_cost(kind: str, k: Optional[float] = None, dim: int = 1) -> CostFunction:
    """Construct one of the stock cost functions.

    kind is one of quadratic(k), exp(k), cos(k), constant(c), linear_sum,
    fourth_power.  All have analytic gradients and Hessians.  ``dim`` is
    informational; the returned callables are shape-agnostic.
    """
    if kind in ("quadratic", "exp", "cos", "constant") and k is None:
        raise ConfigError(f"cost kind {kind!r} requires a value for k")
    if dim < 1:
        raise ConfigError("dim must be >= 1")

    if kind == "quadratic":
        return CostFunction(
            name=f"quadratic(k={k:g})",
            eval=lambda x: _reduce((np.asarray(x, dtype=float) - k) ** 2),
            grad=lambda x: 2.0 * (np.asarray(x, dtype=float) - k),
            hess_diag=lambda x: np.full(np.shape(x), 2.0),
            hess=_full_hess_from_diag(lambda x: np.full(np.shape(x), 2.0)),
            kind=kind,
            k=k,
        )
    if kind == "exp":
        def h_diag(x):
            x = np.asarray(x, dtype=float)
            return (4.0 * k**2 * x**2 - 2.0 * k) * np.exp(-k * x**2)

        return CostFunction(
            name=f"exp(k={k:g})",
            eval=lambda x: _reduce(np.exp(-k * np.asarray(x, dtype=float) ** 2)),
            grad=lambda x: -2.0
            * k
            * np.asarray(x, dtype=float)
            * np.exp(-k * np.asarray(x, dtype=float) ** 2),
            hess_diag=h_diag,
            hess=_full_hess_from_diag(h_diag),
            lipschitz_hint=math.sqrt(2.0 * abs(k)) * math.exp(-0.5) if k > 0 else None,
            kind=kind,
            k=k,
        )
    if kind == "cos":
        return CostFunction(
            name=f"cos(k={k:g})",
            eval=lambda x: _reduce(np.cos(k * np.asarray(x, dtype=float))),
            grad=lambda x: -k * np.sin(k * np.asarray(x, dtype=float)),
            hess_diag=lambda x: -(k**2) * np.cos(k * np.asarray(x, dtype=float)),
            hess=_full_hess_from_diag(
                lambda x: -(k**2) * np.cos(k * np.asarray(x, dtype=float))
            ),
            lipschitz_hint=abs(k),
            kind=kind,
            k=k,
        )
    if kind == "constant":
        def const_eval(x):
            x = np.asarray(x, dtype=float)
            n = x.shape[0] if x.ndim else 1
            return np.full(n, float(k))

        return CostFunction(
            name=f"constant(c={k:g})",
            eval=const_eval,
            grad=lambda x: np.zeros(np.shape(x)),
            hess_diag=lambda x: np.zeros(np.shape(x)),
            hess=_full_hess_from_diag(lambda x: np.zeros(np.shape(x))),
            lipschitz_hint=0.0,
            kind=kind,
            k=k,
        )
    if kind == "linear_sum":
        return CostFunction(
            name="linear_sum",
            eval=lambda x: _reduce(np.asarray(x, dtype=float)),
            grad=lambda x: np.ones(np.shape(x)),
            hess_diag=lambda x: np.zeros(np.shape(x)),
            hess=_full_hess_from_diag(lambda x: np.zeros(np.shape(x))),
            lipschitz_hint=1.0,
            kind=kind,
        )
    if kind == "fourth_power":
        return CostFunction(
            name="fourth_power",
            eval=lambda x: _reduce(np.asarray(x, dtype=float) ** 4),
            grad=lambda x: 4.0 * np.asarray(x, dtype=float) ** 3,
            hess_diag=lambda x: 12.0 * np.asarray(x, dtype=float) ** 2,
            hess=_full_hess_from_diag(
                lambda x: 12.0 * np.asarray(x, dtype=float) ** 2
            ),
            kind=kind,
        )
    raise ConfigError(
        f"unknown cost kind {kind!r}; valid: quadratic, exp, cos, constant, "
        "linear_sum, fourth_power"
    )


def log_sigmoid(z):
    """log(1 / (1 + exp(-z))), stable at both tails."""
    return -np.logaddexp(0.0, -np.asarray(z, dtype=float))


def blr_loglik_cost(features, label) -> CostFunction:
    """Log-likelihood of one binary observation under logistic regression.

    eval(w) = log sigmoid(y * x^T w) for weights w, features x and
    label y in {-1, +1}.  Accepts a single weight vector or a batch (n, D).
    """
    x = np.asarray(features, dtype=float)
    y = float(label)
    if y not in (-1.0, 1.0):
        raise ConfigError("label must be -1 or +1")

    def ev(w):
        return log_sigmoid(y * (np.asarray(w, dtype=float) @ x))

    def gr(w):
        z = y * (np.asarray(w, dtype=float) @ x)
        return np.multiply.outer(y * expit(-z), x)

    def hess(w0):
        z = float(y * (np.asarray(w0, dtype=float) @ x))
        s = expit(z)
        return -s * (1.0 - s) * np.outer(x, x)

    def h_diag(w):
        z = y * (np.asarray(w, dtype=float) @ x)
        s = expit(z)
        return np.multiply.outer(-s * (1.0 - s), x**2)

    return CostFunction(
        name="blr_loglik", eval=ev, grad=gr, hess=hess, hess_diag=h_diag, kind="blr"
    )


_COST_RE = re.compile(r"^\s*([a-zA-Z_][a-zA-Z0-9_]*)\s*(?:\(\s*(?:k|c)\s*=\s*([^)]*)\))?\s*$")


def parse_cost(text: str) -> CostFunction:
    """Build a cost from config text like ``quadratic(k=3)`` or ``linear_sum``."""
    m = _COST_RE.match(text)
    if not m:
        raise ConfigError(f"cannot parse cost spec {text!r}")
    kind, kval = m.group(1).lower(), m.group(2)
    return make_cost(kind, k=float(kval) if kval is not None else None)


def format_cost(c: CostFunction) -> str:
    if c.kind in ("quadratic", "exp", "cos"):
        return f"{c.kind}(k={c.k!r})"
    if c.kind == "constant":
        return f"constant(c={c.k!r})"
    return c.kind or c.name
