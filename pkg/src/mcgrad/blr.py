"""Variational Bayesian logistic regression on the WDBC data set.

Mean-field model: weights w with prior N(0, c*I), likelihood
p(y_i | x_i, w) = sigmoid(y_i x_i^T w), variational posterior
q(w) = N(mu, diag(s)^2) with the scales carried in log form.  The ELBO

    L = sum_i E_q[log sigmoid(y_i x_i^T w)] - KL(q || prior)

is maximised by stochastic gradient ascent with cosine learning-rate decay,
estimating the expectation gradient with any of the package's estimators:
mini-batches of size B are scaled by I/B, the expected log-likelihood gradient
is a Monte Carlo estimate over N posterior samples, and the KL term and its
gradients are analytic.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit

from .costs import CostFunction, log_sigmoid
from .errors import ConfigError
from .estimators import (
    EstimatorConfig,
    MovingAverageBaseline,
    get_estimator,
)
from .measures import DiagGaussian
from .rng import RngStream
from .variance_reduction import delta_cv_pathwise, delta_cv_score_function


@dataclass
class Dataset:
    features: np.ndarray  # (I, D) standardised, constant column appended
    labels: np.ndarray    # (I,) in {-1, +1}
    feature_names: list

    @property
    def n_points(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


def _standardise_and_bias(raw: np.ndarray, names: list) -> Dataset:
    mean = raw.mean(axis=0)
    sd = raw.std(axis=0)
    if np.any(sd == 0):
        raise ConfigError("constant feature column cannot be standardised")
    feats = (raw - mean) / sd
    feats = np.concatenate([feats, np.ones((raw.shape[0], 1))], axis=1)
    return Dataset(features=feats, labels=None, feature_names=names + ["bias"])


def load_wdbc(path: str) -> Dataset:
    """Load a WDBC-layout CSV: id, diagnosis in {M, B}, then 30 real features.

    Malignant maps to +1, benign to -1; every raw feature is standardised to
    zero mean and unit variance and a constant-1 column is appended.
    """
    rows, labels = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 32:
                raise ConfigError(
                    f"{path}:{lineno}: expected 32 columns (id, diagnosis, "
                    f"30 features), got {len(parts)}"
                )
            diag = parts[1].strip()
            if diag not in ("M", "B"):
                raise ConfigError(f"{path}:{lineno}: diagnosis must be M or B")
            try:
                rows.append([float(v) for v in parts[2:]])
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: malformed feature value: {exc}")
            labels.append(1.0 if diag == "M" else -1.0)
    raw = np.asarray(rows, dtype=float)
    ds = _standardise_and_bias(raw, [f"f{j}" for j in range(raw.shape[1])])
    ds.labels = np.asarray(labels)
    return ds


def load_wdbc_bundled() -> Dataset:
    """The WDBC data set from scikit-learn's bundled copy (I=569, D=31 after
    preprocessing); avoids needing the raw CSV on disk."""
    from sklearn.datasets import load_breast_cancer

    data = load_breast_cancer()
    ds = _standardise_and_bias(
        np.asarray(data.data, dtype=float), list(data.feature_names)
    )
    # target 0 is malignant in the bundled encoding
    ds.labels = np.where(data.target == 0, 1.0, -1.0)
    return ds


@dataclass
class VariationalParams:
    mu: np.ndarray
    log_s: np.ndarray

    @property
    def s(self) -> np.ndarray:
        return np.exp(self.log_s)

    def measure(self) -> DiagGaussian:
        return DiagGaussian(self.mu, self.s, log_scale=True)

    def copy(self) -> "VariationalParams":
        return VariationalParams(self.mu.copy(), self.log_s.copy())


def kl_diag_gaussian(vp: VariationalParams, prior_scale: float) -> tuple:
    """KL(N(mu, diag(s)^2) || N(0, c I)) with gradients in (mu, log s).

    value = sum_d 1/2 (s_d^2/c + mu_d^2/c - 1 - log(s_d^2/c)).
    """
    if prior_scale <= 0:
        raise ConfigError("prior scale must be positive")
    c = float(prior_scale)
    s2 = vp.s**2
    value = 0.5 * np.sum(s2 / c + vp.mu**2 / c - 1.0 - np.log(s2 / c))
    grad_mu = vp.mu / c
    grad_log_s = s2 / c - 1.0
    return float(value), grad_mu, grad_log_s


def batch_cost(features: np.ndarray, labels: np.ndarray, scale: float) -> CostFunction:
    """Scaled batch log-likelihood sum_i log sigmoid(y_i x_i^T w) as a cost
    over weight vectors; gradients and Hessians are analytic."""
    X = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=float)

    def ev(w):
        z = np.atleast_2d(w) @ X.T
        return scale * log_sigmoid(y * z).sum(axis=1)

    def gr(w):
        w2 = np.atleast_2d(w)
        z = w2 @ X.T
        coef = y * expit(-y * z)  # (n, B)
        out = scale * (coef @ X)
        return out if np.asarray(w).ndim > 1 else out[0]

    def hess(w0):
        z = (X @ np.asarray(w0, dtype=float)).ravel()
        s = expit(z)
        return scale * -(X.T * (s * (1.0 - s))) @ X

    def h_diag(w):
        w2 = np.atleast_2d(w)
        z = w2 @ X.T
        s = expit(z)
        out = scale * -((s * (1.0 - s)) @ X**2)
        return out if np.asarray(w).ndim > 1 else out[0]

    return CostFunction(
        name="blr_batch_loglik", eval=ev, grad=gr, hess=hess, hess_diag=h_diag,
        kind="blr",
    )


@dataclass
class TrainConfig:
    batch_size: int = 32
    n_measure_samples: int = 50
    lr0: float = 1e-3
    schedule: str = "cosine"  # cosine | constant
    estimator_id: str = "pathwise"
    cv: str = "none"  # none | baseline_ma | delta
    prior_scale: float = 1.0
    steps: int = 5000
    seed: int = 0
    eval_posterior_samples: int = 1000
    record_interval: int = 10
    eval_interval: int = 250
    ma_decay: float = 0.9
    cv_coeff_samples: int = 25
    elbo_floor: float = -1e8
    checkpoint_interval: int = 0  # 0 disables parameter snapshots

    def __post_init__(self):
        if self.batch_size < 1 or self.n_measure_samples < 1:
            raise ConfigError("batch size and sample count must be >= 1")
        if self.schedule not in ("cosine", "constant"):
            raise ConfigError("schedule must be cosine or constant")
        if self.cv not in ("none", "baseline_ma", "delta"):
            raise ConfigError("cv must be none, baseline_ma or delta")


@dataclass
class MetricsTrace:
    steps: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    elbo: list = field(default_factory=list)
    accuracy: list = field(default_factory=list)  # NaN between evaluations
    var_grad_mu: list = field(default_factory=list)
    var_grad_log_s: list = field(default_factory=list)
    cost_evals: list = field(default_factory=list)
    wall_time: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)  # (step, VariationalParams)
    diverged: bool = False
    divergence_reason: str = ""
    final_params: Optional[VariationalParams] = None

    def as_rows(self):
        header = [
            "step", "lr", "elbo", "accuracy", "var_grad_mu",
            "var_grad_log_s", "cost_evals", "wall_time",
        ]
        rows = list(
            zip(
                self.steps, self.lr, self.elbo, self.accuracy,
                self.var_grad_mu, self.var_grad_log_s, self.cost_evals,
                self.wall_time,
            )
        )
        return header, rows


def _draw_batch(dataset: Dataset, batch_size: int, rng: RngStream) -> np.ndarray:
    """Mini-batch indices drawn uniformly with replacement."""
    return rng.integers(0, dataset.n_points, batch_size)


def elbo_and_grad(
    vp: VariationalParams, dataset: Dataset, cfg: TrainConfig, rng: RngStream,
    batch_idx: Optional[np.ndarray] = None,
) -> tuple:
    """One stochastic evaluation of the ELBO and its gradient.

    Returns (elbo_estimate, total_gradient over (mu, log s), likelihood
    GradientEstimate).  The expected log-likelihood part is estimated with
    the configured estimator; the KL term is added analytically.
    """
    if batch_idx is None:
        batch_idx = _draw_batch(dataset, cfg.batch_size, rng.split(0))
    scale = dataset.n_points / batch_idx.size
    cost = batch_cost(dataset.features[batch_idx], dataset.labels[batch_idx], scale)
    measure = vp.measure()

    est_cfg = EstimatorConfig(
        n_samples=cfg.n_measure_samples,
        coupling=True,
        keep_contributions=True,
    )
    sub = rng.split(1)
    if cfg.cv == "delta":
        if cfg.estimator_id == "score_function":
            est = delta_cv_score_function(
                measure, cost, est_cfg, sub, cv_coeff_samples=cfg.cv_coeff_samples
            )
        elif cfg.estimator_id == "pathwise":
            est = delta_cv_pathwise(
                measure, cost, est_cfg, sub, cv_coeff_samples=cfg.cv_coeff_samples
            )
        else:
            raise ConfigError("delta control variate supports score_function/pathwise")
    else:
        if cfg.cv == "baseline_ma":
            if cfg.estimator_id != "score_function":
                raise ConfigError("the moving-average baseline applies to score_function")
            est_cfg.baseline = MovingAverageBaseline(cfg.ma_decay)
        est = get_estimator(cfg.estimator_id)(measure, cost, est_cfg, sub)

    # ELBO value from an independent set of posterior samples would waste
    # draws; reuse the measure samples implied by the estimator run when
    # possible by re-sampling with a dedicated child stream.
    w = measure.sample(rng.split(2), cfg.n_measure_samples)
    kl, g_mu, g_log_s = kl_diag_gaussian(vp, cfg.prior_scale)
    elbo = float(cost(w).mean() - kl)
    total_grad = est.mean - np.concatenate([g_mu, g_log_s])
    return elbo, total_grad, est


def evaluate(
    vp: VariationalParams, dataset: Dataset, n_posterior_samples: int,
    rng: RngStream, prior_scale: float = 1.0,
) -> tuple:
    """Full-data ELBO and accuracy from posterior samples.

    A point is classified correctly when sign(mean_n sigmoid(x^T w_n) - 1/2)
    matches its label.
    """
    w = vp.measure().sample(rng, n_posterior_samples)  # (n, D)
    z = dataset.features @ w.T  # (I, n)
    kl, _, _ = kl_diag_gaussian(vp, prior_scale)
    elbo = float(log_sigmoid(dataset.labels[:, None] * z).mean(axis=1).sum() - kl)
    mean_prob = expit(z).mean(axis=1)
    accuracy = float(np.mean(np.sign(mean_prob - 0.5) == dataset.labels))
    return elbo, accuracy


def train(cfg: TrainConfig, dataset: Dataset) -> MetricsTrace:
    """Stochastic gradient ascent on the ELBO.

    The learning rate follows lr0 * (1 + cos(pi * t / T)) / 2 under the
    cosine schedule.  Divergence (non-finite or below-floor ELBO) halts
    training with a diagnostic in the trace instead of raising.
    """
    rng = RngStream(cfg.seed)
    mu = np.zeros(dataset.n_features)
    log_s = np.full(dataset.n_features, -1.0)
    vp = VariationalParams(mu, log_s)
    trace = MetricsTrace()
    t_start = time.perf_counter()
    dim = dataset.n_features

    def record(step, lr, elbo, est, with_eval):
        acc = np.nan
        if with_eval:
            _, acc = evaluate(
                vp, dataset, cfg.eval_posterior_samples,
                rng.split(10**9 + step), cfg.prior_scale,
            )
        trace.steps.append(step)
        trace.lr.append(lr)
        trace.elbo.append(elbo)
        trace.accuracy.append(acc)
        trace.var_grad_mu.append(float(est.variance[:dim].mean()))
        trace.var_grad_log_s.append(float(est.variance[dim:].mean()))
        trace.cost_evals.append(est.n_cost_evals)
        trace.wall_time.append(time.perf_counter() - t_start)

    total = max(cfg.steps, 1)
    for step in range(cfg.steps + 1):
        lr = (
            cfg.lr0 * 0.5 * (1.0 + np.cos(np.pi * step / total))
            if cfg.schedule == "cosine"
            else cfg.lr0
        )
        params_ok = (
            np.all(np.isfinite(vp.mu))
            and np.all(np.isfinite(vp.log_s))
            and np.all(np.abs(vp.log_s) < 300.0)
        )
        if not params_ok:
            trace.diverged = True
            trace.divergence_reason = (
                f"step {step}: variational parameters left the representable "
                "range; training halted"
            )
            break
        elbo, grad, est = elbo_and_grad(vp, dataset, cfg, rng.split(step))
        if not np.isfinite(elbo) or elbo < cfg.elbo_floor or not np.all(np.isfinite(grad)):
            trace.diverged = True
            trace.divergence_reason = (
                f"step {step}: elbo={elbo!r}; training halted"
            )
            break
        if step % cfg.record_interval == 0 or step == cfg.steps:
            record(step, lr, elbo, est, with_eval=(step % cfg.eval_interval == 0))
        if cfg.checkpoint_interval and step % cfg.checkpoint_interval == 0:
            trace.checkpoints.append((step, vp.copy()))
        if step == cfg.steps:
            break
        vp.mu += lr * grad[:dim]
        vp.log_s += lr * grad[dim:]
    trace.final_params = vp.copy()
    return trace


def estimator_variance_at(
    vp: VariationalParams, dataset: Dataset, batch_idx: np.ndarray,
    estimator_id: str, n_samples: int, rng: RngStream, cv: str = "none",
    cv_coeff_samples: int = 25, ma_decay: float = 0.9,
) -> tuple:
    """Per-block average gradient variance at a fixed iterate and batch.

    Returns (var_mu, var_log_s) averaged over the respective parameter
    blocks; used for matched-iterate estimator comparisons.
    """
    cfg = TrainConfig(
        batch_size=batch_idx.size, n_measure_samples=n_samples,
        estimator_id=estimator_id, cv=cv, cv_coeff_samples=cv_coeff_samples,
        ma_decay=ma_decay,
    )
    _, _, est = elbo_and_grad(vp, dataset, cfg, rng, batch_idx=batch_idx)
    dim = dataset.n_features
    return float(est.variance[:dim].mean()), float(est.variance[dim:].mean())


def paired_sf_delta_variance(
    vp: VariationalParams, dataset: Dataset, batch_idx: np.ndarray,
    n_samples: int, rng: RngStream,
) -> tuple:
    """Variance of the score-function estimator with and without the Taylor
    control variate, computed on the *same* measure samples.

    Returns (var_no_cv, var_with_cv) for the log-scale block.  Sharing the
    draws makes the comparison a paired one: sampling noise cancels, and with
    the per-parameter coefficient fitted on the shared draws the corrected
    contributions can only match or reduce the plain sample variance; the
    size of the reduction is the quantity of interest.
    """
    from .variance_reduction import _per_param_beta, taylor_control_variate

    scale = dataset.n_points / batch_idx.size
    cost = batch_cost(dataset.features[batch_idx], dataset.labels[batch_idx], scale)
    measure = vp.measure()
    dim = dataset.n_features

    cv = taylor_control_variate(cost, measure.mean())
    eh_grad = cv.expectation_grad(measure)

    x = measure.sample(rng.split(1), n_samples)
    s = measure.score(x)
    fx = np.asarray(cost(x))[:, None]
    hx = np.asarray(cv.h(x))[:, None]
    plain = fx * s
    controlled_raw = hx * s
    beta = _per_param_beta(plain, controlled_raw)
    controlled = plain - beta * controlled_raw + beta * eh_grad
    var_plain = plain.var(axis=0, ddof=1)[dim:].mean()
    var_cv = controlled.var(axis=0, ddof=1)[dim:].mean()
    return float(var_plain), float(var_cv)
