import math

import numpy as np
import pytest
from scipy import integrate

from mcgrad.blr import (
    Dataset,
    TrainConfig,
    VariationalParams,
    batch_cost,
    elbo_and_grad,
    estimator_variance_at,
    evaluate,
    kl_diag_gaussian,
    load_wdbc,
    load_wdbc_bundled,
    paired_sf_delta_variance,
    train,
)
from mcgrad.errors import ConfigError
from mcgrad.rng import RngStream


def _write_wdbc(path, rows):
    lines = []
    for rid, diag, feats in rows:
        lines.append(",".join([str(rid), diag] + [f"{v:.6f}" for v in feats]))
    path.write_text("\n".join(lines) + "\n")


def _synthetic_rows(n, seed=0, diag_fn=None):
    rng = RngStream(seed)
    rows = []
    for i in range(n):
        feats = rng.normal(30) * 2.0 + 1.0
        diag = diag_fn(i, feats) if diag_fn else ("M" if i % 2 == 0 else "B")
        rows.append((8510000 + i, diag, feats))
    return rows


def _separable_dataset(n=200, dim=4, seed=3):
    rng = RngStream(seed)
    w_true = np.array([2.0, -1.5, 0.7, 0.0])[:dim]
    X = rng.normal((n, dim))
    margins = X @ w_true
    y = np.where(margins >= 0, 1.0, -1.0)
    feats = np.concatenate([X, np.ones((n, 1))], axis=1)
    return Dataset(features=feats, labels=y,
                   feature_names=[f"f{j}" for j in range(dim)] + ["bias"]), w_true


# -- loading --------------------------------------------------------------------


def test_load_wdbc_synthetic_file(tmp_path):
    path = tmp_path / "wdbc.csv"
    _write_wdbc(path, _synthetic_rows(60))
    ds = load_wdbc(str(path))
    assert ds.features.shape == (60, 31)
    assert set(np.unique(ds.labels)) == {-1.0, 1.0}
    raw = ds.features[:, :30]
    assert np.all(np.abs(raw.mean(axis=0)) < 1e-9)
    assert np.all(np.abs(raw.std(axis=0) - 1.0) < 1e-9)
    np.testing.assert_allclose(ds.features[:, 30], 1.0)


def test_load_wdbc_all_benign(tmp_path):
    path = tmp_path / "benign.csv"
    _write_wdbc(path, _synthetic_rows(20, diag_fn=lambda i, f: "B"))
    ds = load_wdbc(str(path))
    assert np.all(ds.labels == -1.0)


def test_load_wdbc_malformed_rows(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("1,M," + ",".join(["1.0"] * 29) + "\n")  # 31 columns
    with pytest.raises(ConfigError, match="bad.csv:1"):
        load_wdbc(str(bad))
    bad2 = tmp_path / "bad2.csv"
    bad2.write_text("1,M," + ",".join(["1.0"] * 29 + ["oops"]) + "\n")
    with pytest.raises(ConfigError, match="malformed"):
        load_wdbc(str(bad2))
    bad3 = tmp_path / "bad3.csv"
    bad3.write_text("1,X," + ",".join(["1.0"] * 30) + "\n")
    with pytest.raises(ConfigError, match="diagnosis"):
        load_wdbc(str(bad3))


def test_bundled_dataset_dimensions():
    ds = load_wdbc_bundled()
    assert ds.n_points == 569
    assert ds.n_features == 31
    assert set(np.unique(ds.labels)) == {-1.0, 1.0}
    # 212 malignant cases in this data set
    assert int((ds.labels == 1.0).sum()) == 212


# -- KL term --------------------------------------------------------------------


def test_kl_zero_at_prior():
    c = 1.7
    vp = VariationalParams(np.zeros(3), np.full(3, 0.5 * math.log(c)))
    value, g_mu, g_log_s = kl_diag_gaussian(vp, c)
    assert value == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(g_mu, 0.0, atol=1e-12)
    np.testing.assert_allclose(g_log_s, 0.0, atol=1e-12)


def test_kl_reference_value_and_quadrature():
    vp = VariationalParams(np.array([1.0]), np.array([0.0]))
    value, _, _ = kl_diag_gaussian(vp, 1.0)
    assert value == pytest.approx(0.5, abs=1e-12)

    def integrand(w):
        logq = -0.5 * math.log(2 * math.pi) - 0.5 * (w - 1.0) ** 2
        logp = -0.5 * math.log(2 * math.pi) - 0.5 * w**2
        return math.exp(logq) * (logq - logp)

    want, _ = integrate.quad(integrand, -12, 14)
    assert value == pytest.approx(want, abs=1e-9)


def test_kl_gradients_match_fd():
    vp = VariationalParams(np.array([0.4, -1.2]), np.array([-0.3, 0.2]))
    c = 0.8
    _, g_mu, g_log_s = kl_diag_gaussian(vp, c)
    h = 1e-6
    for j in range(2):
        for field, grad in (("mu", g_mu), ("log_s", g_log_s)):
            up, dn = vp.copy(), vp.copy()
            getattr(up, field)[j] += h
            getattr(dn, field)[j] -= h
            fd = (kl_diag_gaussian(up, c)[0] - kl_diag_gaussian(dn, c)[0]) / (2 * h)
            assert grad[j] == pytest.approx(fd, abs=1e-6)


# -- ELBO gradient ------------------------------------------------------------------


def test_elbo_likelihood_term_at_tiny_scale():
    ds, _ = _separable_dataset()
    vp = VariationalParams(np.zeros(5), np.full(5, -9.0))
    cfg = TrainConfig(batch_size=16, n_measure_samples=8, steps=1)
    rng = RngStream(1)
    elbo, _, _ = elbo_and_grad(vp, ds, cfg, rng)
    kl, _, _ = kl_diag_gaussian(vp, cfg.prior_scale)
    # w ~ 0 deterministic: every likelihood term is log(1/2)
    assert elbo + kl == pytest.approx(ds.n_points * math.log(0.5), rel=1e-4)


def test_estimators_agree_at_fixed_iterate():
    ds, _ = _separable_dataset()
    vp = VariationalParams(np.full(5, 0.2), np.full(5, -1.0))
    rng = RngStream(2)
    batch = rng.split(0).integers(0, ds.n_points, 32)
    results = {}
    for est_id in ("pathwise", "score_function", "measure_valued"):
        cfg = TrainConfig(batch_size=32, n_measure_samples=10_000, estimator_id=est_id)
        _, grad, est = elbo_and_grad(vp, ds, cfg, rng.split(1), batch_idx=batch)
        results[est_id] = (grad, np.sqrt(est.variance / est.n_samples))
    for a, b in [("pathwise", "score_function"), ("pathwise", "measure_valued")]:
        ga, sa = results[a]
        gb, sb = results[b]
        assert np.all(np.abs(ga - gb) <= 4 * (sa + sb) + 1e-9)


def test_sf_variance_exceeds_pathwise_at_matched_iterate():
    ds = load_wdbc_bundled()
    vp = VariationalParams(np.zeros(31), np.full(31, -1.0))
    rng = RngStream(3)
    batch = rng.split(0).integers(0, ds.n_points, 32)
    _, v_sf = estimator_variance_at(vp, ds, batch, "score_function", 50, rng.split(1))
    _, v_pw = estimator_variance_at(vp, ds, batch, "pathwise", 50, rng.split(2))
    assert v_sf > 10 * v_pw


def test_paired_delta_cv_reduces_sf_variance():
    ds = load_wdbc_bundled()
    vp = VariationalParams(np.zeros(31), np.full(31, -1.0))
    rng = RngStream(4)
    batch = rng.split(0).integers(0, ds.n_points, 32)
    var_plain, var_cv = paired_sf_delta_variance(vp, ds, batch, 256, rng.split(1))
    assert var_cv < var_plain


# -- training -----------------------------------------------------------------------


def test_zero_steps_trace():
    ds, _ = _separable_dataset()
    cfg = TrainConfig(steps=0, batch_size=8, n_measure_samples=4, eval_interval=1)
    trace = train(cfg, ds)
    assert trace.steps == [0]
    assert not trace.diverged
    assert trace.final_params is not None


def test_short_training_improves_elbo():
    ds, _ = _separable_dataset()
    cfg = TrainConfig(
        steps=400, batch_size=32, n_measure_samples=20, lr0=5e-3,
        record_interval=5, eval_interval=200, seed=7,
    )
    trace = train(cfg, ds)
    assert not trace.diverged
    first = np.mean(trace.elbo[:8])
    last = np.mean(trace.elbo[-8:])
    assert last > first


def test_divergence_detector_halts():
    ds, _ = _separable_dataset()
    cfg = TrainConfig(steps=400, batch_size=8, n_measure_samples=4, lr0=50.0,
                      estimator_id="score_function", seed=1)
    trace = train(cfg, ds)
    assert trace.diverged
    assert "halted" in trace.divergence_reason


def test_cosine_schedule_endpoints():
    ds, _ = _separable_dataset()
    cfg = TrainConfig(steps=50, batch_size=8, n_measure_samples=4,
                      record_interval=1, eval_interval=50)
    trace = train(cfg, ds)
    assert trace.lr[0] == pytest.approx(cfg.lr0)
    assert trace.lr[-1] == pytest.approx(0.0, abs=1e-12)


# -- evaluation ---------------------------------------------------------------------


def test_evaluate_separable_point_mass():
    ds, w_true = _separable_dataset()
    mu = np.concatenate([w_true * 8.0, [0.0]])
    vp = VariationalParams(mu, np.full(5, -7.0))
    _, acc = evaluate(vp, ds, 200, RngStream(5))
    assert acc == 1.0


def test_evaluate_shuffled_labels_is_chance_level():
    ds, _ = _separable_dataset(n=400)
    perm = RngStream(6).integers(0, 2, 400) * 2.0 - 1.0  # random +/-1
    ds_shuffled = Dataset(ds.features, perm, ds.feature_names)
    vp = VariationalParams(np.full(5, 0.3), np.full(5, -2.0))
    _, acc = evaluate(vp, ds_shuffled, 200, RngStream(7))
    # binomial CI around 1/2 at n=400
    assert abs(acc - 0.5) < 4 * math.sqrt(0.25 / 400)


def test_evaluate_is_deterministic_given_seed():
    ds, _ = _separable_dataset()
    vp = VariationalParams(np.full(5, 0.1), np.full(5, -1.0))
    a = evaluate(vp, ds, 300, RngStream(8))
    b = evaluate(vp, ds, 300, RngStream(8))
    assert a == b


def test_batch_cost_matches_pointwise_sum():
    from mcgrad.costs import blr_loglik_cost

    ds, _ = _separable_dataset(n=6)
    cost = batch_cost(ds.features, ds.labels, scale=2.0)
    w = RngStream(9).normal(5)
    total = 2.0 * sum(
        float(blr_loglik_cost(ds.features[i], ds.labels[i])(w[None, :])[0])
        for i in range(6)
    )
    assert cost(w[None, :])[0] == pytest.approx(total, rel=1e-12)
