from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from bearingda import ParameterError, ShapeError
from bearingda import tensor as T
from bearingda.adapt import (Method, StepRngs, TrainConfig, build_net, combined_loss, evaluate,
                             mixup_augment, multilinear_map, train)
from bearingda.model import CLASSIFIER_KEYS, EXTRACTOR_KEYS, DiagnosisNet

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def probs(rng, b, k):
    return rng.dirichlet(np.ones(k), size=b)


# ---------------------------------------------------------------- multilinear map

def test_unit_vectors_give_single_entry():
    e = np.zeros((1, 256))
    e[0, 0] = 1
    y = np.zeros((1, 4))
    y[0, 2] = 1
    out = multilinear_map(T.Tensor(e), T.Tensor(y)).data
    assert out.shape == (1, 1024)
    assert np.flatnonzero(out).tolist() == [2] and out[0, 2] == 1


def test_feature_major_layout(rng):
    e, y = rng.standard_normal((3, 5)), probs(rng, 3, 4)
    out = multilinear_map(T.Tensor(e), T.Tensor(y)).data
    for i in range(5):
        for k in range(4):
            np.testing.assert_array_equal(out[:, i * 4 + k], e[:, i] * y[:, k])


def test_frobenius_identity(rng):
    e, y = rng.standard_normal((8, 256)), probs(rng, 8, 4)
    out = multilinear_map(T.Tensor(e), T.Tensor(y)).data
    np.testing.assert_allclose(np.linalg.norm(out, axis=1),
                               np.linalg.norm(e, axis=1) * np.linalg.norm(y, axis=1), rtol=1e-12)


def test_uniform_y_replicates_scaled_e(rng):
    e = rng.standard_normal((2, 6))
    out = multilinear_map(T.Tensor(e), T.Tensor(np.full((2, 3), 1 / 3))).data.reshape(2, 6, 3)
    for k in range(3):
        np.testing.assert_allclose(out[:, :, k], e / 3, rtol=1e-15)


@settings(max_examples=100, deadline=None)
@given(e1=arrays(np.float64, (3, 5), elements=finite), e2=arrays(np.float64, (3, 5), elements=finite),
       y=arrays(np.float64, (3, 4), elements=st.floats(0, 1)), a=finite)
def test_bilinearity(e1, e2, y, a):
    m = lambda e: multilinear_map(T.Tensor(e), T.Tensor(y)).data
    np.testing.assert_allclose(m(a * e1), a * m(e1), rtol=0, atol=1e-9)
    np.testing.assert_allclose(m(e1 + e2), m(e1) + m(e2), rtol=0, atol=1e-9)


def test_multilinear_shape_error():
    with pytest.raises(ShapeError):
        multilinear_map(T.Tensor(np.zeros((2, 3))), T.Tensor(np.zeros((3, 4))))


# ---------------------------------------------------------------- mixup

def test_mixup_lambda_one_is_identity(rng):
    e, y = rng.standard_normal((6, 8)), probs(rng, 6, 4)
    mb = mixup_augment(T.Tensor(e), y, 1.0, rng, lam=1.0)
    np.testing.assert_array_equal(mb.e_tilde.data, e)
    np.testing.assert_array_equal(mb.y_tilde.data, y)


def test_mixup_lambda_zero_is_permutation(rng):
    e, y = rng.standard_normal((6, 8)), probs(rng, 6, 4)
    mb = mixup_augment(T.Tensor(e), y, 1.0, rng, lam=0.0)
    np.testing.assert_array_equal(mb.e_tilde.data, e[mb.perm])
    np.testing.assert_array_equal(mb.y_tilde.data, y[mb.perm])
    assert sorted(mb.perm.tolist()) == list(range(6))


def test_beta_one_draws_are_uniform(rng):
    e = np.zeros((100_000, 2))
    mb = mixup_augment(T.Tensor(e), np.full((100_000, 2), 0.5), 1.0, rng, granularity="sample")
    assert mb.lambda_draws.size == 100_000
    assert abs(mb.lambda_draws.mean() - 0.5) <= 0.01
    assert mb.lambda_draws.min() >= 0 and mb.lambda_draws.max() <= 1


def test_one_lambda_per_batch_by_default(rng):
    mb = mixup_augment(T.Tensor(rng.standard_normal((5, 3))), probs(rng, 5, 2), 1.0, rng)
    assert mb.lambda_draws.shape == (1,)
    assert mb.z_tilde.shape == (5, 6)


def test_mixup_convexity_and_row_sums(rng):
    for _ in range(50):
        b = int(rng.integers(2, 10))
        e, y = rng.standard_normal((b, 7)), probs(rng, b, 4)
        mb = mixup_augment(T.Tensor(e), y, 1.0, rng)
        lo, hi = np.minimum(e, e[mb.perm]), np.maximum(e, e[mb.perm])
        assert np.all(mb.e_tilde.data >= lo - 1e-12) and np.all(mb.e_tilde.data <= hi + 1e-12)
        assert np.max(np.abs(mb.y_tilde.data.sum(axis=1) - 1)) <= 1e-9


def test_mixup_validation(rng):
    with pytest.raises(ParameterError):
        mixup_augment(T.Tensor(np.zeros((1, 4))), np.ones((1, 2)) / 2, 1.0, rng)
    with pytest.raises(ParameterError):
        mixup_augment(T.Tensor(np.zeros((3, 4))), np.ones((3, 2)) / 2, 1.0, rng, perm=[0, 0, 1])
    with pytest.raises(ParameterError):
        mixup_augment(T.Tensor(np.zeros((3, 4))), np.ones((3, 2)) / 2, 1.0, rng, lam=1.5)


def test_mixup_deterministic_given_rng():
    e, y = np.arange(12.0).reshape(4, 3), np.full((4, 2), 0.5)
    a = mixup_augment(T.Tensor(e), y, 1.0, np.random.default_rng(5))
    b = mixup_augment(T.Tensor(e), y, 1.0, np.random.default_rng(5))
    assert a.z_tilde.data.tobytes() == b.z_tilde.data.tobytes()


# ---------------------------------------------------------------- combined loss

def _grads_after_one_step(method, lambda_d, xs, ys, xt):
    cfg = TrainConfig(method=method, seed=4, lambda_d=lambda_d, dtype="float64")
    net = build_net(3, cfg)
    losses = combined_loss(net, xs, ys, xt, cfg, StepRngs.from_seed(4), training=True)
    T.backward(losses.total, net.parameters())
    return {k: net.params[k].grad for k in EXTRACTOR_KEYS + CLASSIFIER_KEYS}, losses


@pytest.mark.parametrize("method", [Method.DANN, Method.Conditional, Method.AugmentedConditional])
def test_lambda_zero_matches_source_only(method, rng):
    xs, ys, xt = rng.random((4, 1000)), np.array([0, 1, 2, 0]), rng.random((4, 1000))
    ref, ref_l = _grads_after_one_step(Method.SourceOnly, 0.0, xs, ys, xt)
    got, got_l = _grads_after_one_step(method, 0.0, xs, ys, xt)
    assert np.isnan(ref_l.disc) and got_l.disc > 0
    for k in ref:
        assert got[k].tobytes() == ref[k].tobytes(), k


def test_method_mode_mismatch(rng):
    cfg = TrainConfig(method=Method.Conditional)
    with pytest.raises(ShapeError):
        combined_loss(DiagnosisNet(3, mode="plain"), rng.random((2, 1000)), np.array([0, 1]),
                      rng.random((2, 1000)), cfg, StepRngs.from_seed(0))


def _disc_loss(net, z_s, z_t):
    logits = T.concat([net.discriminator_logits(z_s), net.discriminator_logits(z_t)])
    dom = np.r_[np.zeros(z_s.shape[0], int), np.ones(z_t.shape[0], int)]
    return T.cross_entropy(logits, dom)


@pytest.mark.parametrize("lam", [0.3, 1.0])
def test_reversed_gradient_does_not_decrease_disc_loss(lam, rng):
    # frozen discriminator; features are leaves standing in for f(x)
    net = DiagnosisNet(3, mode="plain", dtype=np.float64, seed=1)
    zs, zt = T.parameter(rng.standard_normal((5, 256))), T.parameter(rng.standard_normal((5, 256)) + 0.5)
    loss = _disc_loss(net, T.grad_scale(zs, -lam), T.grad_scale(zt, -lam))
    T.backward(loss, [zs, zt])
    gs, gt = zs.grad, zt.grad
    # a descent step on the total loss moves features along -grad
    L = lambda a: _disc_loss(net, T.Tensor(zs.data - a * gs), T.Tensor(zt.data - a * gt)).item()
    eps = 1e-6
    directional = (L(eps) - L(-eps)) / (2 * eps)
    assert directional >= 0
    assert L(1e-2) >= L(0.0)


def test_perfect_discriminator_loss_vanishes_and_reversal_confuses(rng):
    net = DiagnosisNet(3, mode="plain", dtype=np.float64, seed=2)
    zs_data = rng.standard_normal((16, 256)) + 2.0
    zt_data = rng.standard_normal((16, 256)) - 2.0
    opt = T.Adam([net.params[k] for k in ("disc0.w", "disc0.b", "disc1.w", "disc1.b")], lr=1e-3)
    for _ in range(200):
        opt.zero_grad()
        T.backward(_disc_loss(net, T.Tensor(zs_data), T.Tensor(zt_data)), opt.params)
        opt.step()
    base = _disc_loss(net, T.Tensor(zs_data), T.Tensor(zt_data)).item()
    assert base < 1e-2
    zs, zt = T.parameter(zs_data), T.parameter(zt_data)
    T.backward(_disc_loss(net, T.grad_scale(zs, -1.0), T.grad_scale(zt, -1.0)), [zs, zt])
    # the gradient is tiny near a perfect discriminator; step a unit distance along its direction
    g = np.concatenate([zs.grad, zt.grad])
    d = -g / np.linalg.norm(g)
    after = _disc_loss(net, T.Tensor(zs_data + d[:16]), T.Tensor(zt_data + d[16:])).item()
    assert after > base


# ---------------------------------------------------------------- training loop

def _arrays(domains):
    src, tgt, ev = domains
    return src.array(), src.labels(), tgt.array(), ev.array(), ev.labels()


def test_train_is_deterministic(small_domains):
    xs, ys, xt, _, _ = _arrays(small_domains)
    cfg = TrainConfig(method="proposed", epochs=2, batch_size=32, seed=7)
    a = train(xs, ys, xt, cfg, n_classes=4)
    b = train(xs, ys, xt, cfg, n_classes=4)
    assert [(l.clf_loss, l.disc_loss) for l in a.log] == [(l.clf_loss, l.disc_loss) for l in b.log]
    for k, v in a.net.state_dict().items():
        assert v.tobytes() == b.net.state_dict()[k].tobytes()


def test_train_log_is_key_value(small_domains):
    xs, ys, xt, xe, ye = _arrays(small_domains)
    lines = []
    train(xs, ys, xt, TrainConfig(method="dann", epochs=1, batch_size=64, seed=1), 4, xe, ye,
          log_fn=lambda e: lines.append(e.format()))
    fields = dict(kv.split("=") for kv in lines[0].split())
    assert {"epoch", "seed", "clf_loss", "disc_loss", "balanced_accuracy", "kappa"} <= fields.keys()
    assert fields["epoch"] == "1" and fields["seed"] == "1"


def test_train_rejects_empty_data():
    with pytest.raises(ParameterError):
        train(np.zeros((0, 1000)), np.zeros(0, int), np.zeros((3, 1000)), TrainConfig(epochs=1))
    with pytest.raises(ParameterError):
        train(np.zeros((3, 1000)), np.zeros(3, int), np.zeros((0, 1000)), TrainConfig(epochs=1))


def test_source_only_learns_source_distribution(small_domains):
    # 30 training and 10 validation samples per class, all synthetic
    src = small_domains.source
    x, y = src.array(), src.labels()
    rng = np.random.default_rng(0)
    val = np.concatenate([rng.choice(np.flatnonzero(y == c), 10, replace=False) for c in range(4)])
    tr = np.setdiff1d(np.arange(y.size), val)
    cfg = TrainConfig(method="source-only", epochs=60, batch_size=32, seed=0)
    res = train(x[tr], y[tr], x[tr], cfg, n_classes=4, eval_x=x[val], eval_y=y[val])
    assert res.log[-1].eval["accuracy"] > 0.9
    assert evaluate(res.net, x[val], y[val])["accuracy"] == res.log[-1].eval["accuracy"]


def test_config_validation():
    for bad in ({"epochs": 0}, {"batch_size": 1}, {"lambda_d": -1}, {"lr": 0}, {"method": "nope"},
                {"lambda_schedule": "cosine"}, {"mixup_scope": "source"}, {"mixup_granularity": "pixel"}):
        with pytest.raises(ParameterError):
            TrainConfig(**bad)


def test_lambda_ramp_schedule():
    cfg = TrainConfig(lambda_schedule="ramp", lambda_d=2.0)
    assert cfg.lambda_at(0.0) == 0.0
    assert cfg.lambda_at(1.0) == pytest.approx(2.0 * (2 / (1 + np.exp(-10)) - 1))
    assert TrainConfig().lambda_at(0.3) == 1.0


def test_method_aliases():
    assert Method.parse("Proposed") is Method.AugmentedConditional
    assert Method.parse("source_only") is Method.SourceOnly
    assert Method.parse("AugmentedConditional") is Method.AugmentedConditional
    assert replace(TrainConfig(), method="dann").method is Method.DANN
