import copy
import math

import numpy as np
import pytest
from scipy.special import erf

from playclass import classifier as clf
from playclass.classifier import (AdamWState, ModelConfig, TrainConfig, adamw_step,
                                  adaptive_avg_pool, backward, forward,
                                  inv_sqrt_class_weights, loss_and_grad)
from playclass.dataset_io import ValidationError


# --- adaptive pooling -------------------------------------------------------------

def test_pool_boundary_rule():
    tokens = np.array([[1.0], [2.0], [3.0], [4.0], [5.0]])
    out = adaptive_avg_pool(tokens, 2)
    np.testing.assert_allclose(out[:, 0], [1.5, 4.0])


def test_pool_identity_when_equal():
    tokens = np.arange(12.0).reshape(4, 3)
    assert np.array_equal(adaptive_avg_pool(tokens, 4), tokens)


def test_pool_matches_direct_mean_oracle(rng):
    tokens = rng.standard_normal((125, 8))
    k = 32
    out = adaptive_avg_pool(tokens, k)
    for i in range(k):
        lo, hi = (i * 125) // k, ((i + 1) * 125) // k
        np.testing.assert_allclose(out[i], tokens[lo:hi].mean(axis=0), atol=1e-12)


def test_pool_preserves_column_means_when_divisible(rng):
    tokens = rng.standard_normal((128, 5))
    out = adaptive_avg_pool(tokens, 32)
    np.testing.assert_allclose(out.mean(axis=0), tokens.mean(axis=0), atol=1e-12)


def test_pool_short_input_copies_preceding():
    # F < K: bounds are [0,0,1,1,2], so segments 0 and 2 are empty; each
    # copies the nearest preceding non-empty mean (the leading one copies
    # the first available segment)
    tokens = np.array([[1.0], [5.0]])
    out = adaptive_avg_pool(tokens, 4)
    assert np.isfinite(out).all()
    np.testing.assert_allclose(out[:, 0], [1.0, 1.0, 1.0, 5.0])


# --- forward ------------------------------------------------------------------------

def _tiny_cnn(hybrid=False):
    return ModelConfig(variant="cnn", d_in=3, k=4, h_bottleneck=5, h_conv=6,
                       kernel=3, h_attn=4, n_classes=3, hybrid=hybrid, feature_dim=7)


def test_attention_weights_sum_to_one(rng):
    config = _tiny_cnn()
    params = clf.init_params(config, rng)
    tokens = rng.standard_normal((9, config.k, config.d_in))
    _, cache = forward(params, config, tokens)
    np.testing.assert_allclose(cache["attn"].sum(axis=1), 1.0, atol=1e-12)


def test_zero_gate_gives_uniform_attention_mean_pooling(rng):
    config = _tiny_cnn()
    params = clf.init_params(config, rng)
    params["attn_w"][:] = 0.0
    tokens = rng.standard_normal((4, config.k, config.d_in))
    _, cache = forward(params, config, tokens)
    np.testing.assert_allclose(cache["attn"], 1.0 / config.k, atol=1e-12)
    np.testing.assert_allclose(cache["pooled"], cache["conv"].mean(axis=1), atol=1e-12)


def test_tiny_network_hand_computed_logits():
    # K=2, D=3, bottleneck 2, conv width 2, kernel 3, attention 2, classes 3;
    # the oracle below recomputes the whole pipeline with explicit scalar loops
    config = ModelConfig(variant="cnn", d_in=3, k=2, h_bottleneck=2, h_conv=2,
                         kernel=3, h_attn=2, n_classes=3)
    rng = np.random.default_rng(3)
    params = clf.init_params(config, rng)
    tokens = rng.standard_normal((1, 2, 3))
    logits, _ = forward(params, config, tokens)

    def g(v):
        return 0.5 * v * (1.0 + erf(v / math.sqrt(2)))

    x = tokens[0]
    hb = np.zeros((2, 2))
    for t in range(2):
        for j in range(2):
            hb[t, j] = g(sum(x[t, d] * params["w_bottleneck"][d, j] for d in range(3))
                         + params["b_bottleneck"][j])
    conv = np.zeros((2, 2))
    for t in range(2):
        for o in range(2):
            acc = params["b_conv"][o]
            for dt in (-1, 0, 1):
                if 0 <= t + dt < 2:
                    for j in range(2):
                        acc += hb[t + dt, j] * params["w_conv"][dt + 1, j, o]
            conv[t, o] = acc
    scores = np.zeros(2)
    for t in range(2):
        gate = np.tanh(conv[t] @ params["attn_v"]) * (1 / (1 + np.exp(-conv[t] @ params["attn_u"])))
        scores[t] = gate @ params["attn_w"]
    a = np.exp(scores - scores.max())
    a = a / a.sum()
    z = a[0] * conv[0] + a[1] * conv[1]
    want = z @ params["w_head"] + params["b_head"]
    np.testing.assert_allclose(logits[0], want, atol=1e-9)


def test_mlp_forward_shape(rng):
    config = ModelConfig(variant="mlp", d_in=10, h_bottleneck=6, n_classes=3)
    params = clf.init_params(config, rng)
    logits, _ = forward(params, config, rng.standard_normal((5, 10)))
    assert logits.shape == (5, 3)


def test_shape_mismatch_names_layer(rng):
    config = _tiny_cnn()
    params = clf.init_params(config, rng)
    with pytest.raises(ValidationError, match="cnn input"):
        forward(params, config, rng.standard_normal((2, 3, 3)))


# --- loss ----------------------------------------------------------------------------

def test_class_weights_from_imbalanced_supports():
    w = inv_sqrt_class_weights(np.array([12585, 1345, 585]))
    np.testing.assert_allclose(w, [0.3449, 1.0552, 1.5999], atol=2e-4)
    assert w.mean() == pytest.approx(1.0, abs=1e-12)


def test_absent_class_falls_back_to_count_one():
    w = inv_sqrt_class_weights(np.array([4, 0, 1]))
    assert np.isfinite(w).all()
    assert w.mean() == pytest.approx(1.0)


def test_smoothed_targets():
    logits = np.zeros((1, 3))
    loss, dl = loss_and_grad(logits, np.array([1]), np.ones(3), alpha=0.1)
    # targets (0.0333.., 0.9333.., 0.0333..): gradient = probs - targets
    np.testing.assert_allclose(dl[0], [1 / 3 - 0.1 / 3, 1 / 3 - (0.9 + 0.1 / 3), 1 / 3 - 0.1 / 3],
                               atol=1e-12)


def test_uniform_logits_loss_ln3():
    logits = np.zeros((4, 3))
    y = np.array([0, 1, 2, 0])
    loss, _ = loss_and_grad(logits, y, np.ones(3), alpha=0.0)
    assert loss == pytest.approx(math.log(3), rel=1e-12)


def test_loss_weight_normalisation():
    logits = np.array([[2.0, -1.0, 0.5], [0.1, 0.2, 0.3]])
    y = np.array([0, 2])
    w = np.array([0.5, 1.0, 1.5])
    loss, dl = loss_and_grad(logits, y, w, alpha=0.1)
    # independent recomputation
    def softmax(v):
        e = np.exp(v - v.max())
        return e / e.sum()
    total = 0.0
    for i in range(2):
        t = np.full(3, 0.1 / 3)
        t[y[i]] += 0.9
        total += w[y[i]] * -(t * np.log(softmax(logits[i]))).sum()
    assert loss == pytest.approx(total / (w[0] + w[2]), rel=1e-12)


# --- gradients -------------------------------------------------------------------------

def _loss_of(params, config, tokens, feats, y, weights, alpha):
    logits, _ = forward(params, config, tokens, feats)
    loss, _ = loss_and_grad(logits, y, weights, alpha)
    return loss


def _grad_check(config, rng, tokens, feats=None, tol=1e-4):
    params = clf.init_params(config, rng)
    y = rng.integers(0, config.n_classes, size=tokens.shape[0])
    weights = inv_sqrt_class_weights(np.bincount(y, minlength=config.n_classes))
    logits, cache = forward(params, config, tokens, feats)
    _, dlogits = loss_and_grad(logits, y, weights, 0.1)
    grads = backward(params, config, cache, dlogits)
    h = 1e-5
    worst = 0.0
    for name, p in params.items():
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = p[idx]
            p[idx] = orig + h
            up = _loss_of(params, config, tokens, feats, y, weights, 0.1)
            p[idx] = orig - h
            dn = _loss_of(params, config, tokens, feats, y, weights, 0.1)
            p[idx] = orig
            fd = (up - dn) / (2 * h)
            scale = max(abs(fd), abs(grads[name][idx]), 1e-8)
            worst = max(worst, abs(fd - grads[name][idx]) / scale)
    assert worst < tol, worst
    return worst


def test_gradients_mlp(rng):
    config = ModelConfig(variant="mlp", d_in=6, h_bottleneck=4, n_classes=3)
    _grad_check(config, rng, rng.standard_normal((5, 6)))


def test_gradients_cnn(rng):
    config = _tiny_cnn()
    _grad_check(config, rng, rng.standard_normal((4, 4, 3)))


def test_gradients_hybrid(rng):
    config = _tiny_cnn(hybrid=True)
    _grad_check(config, rng, rng.standard_normal((4, 4, 3)),
                feats=rng.standard_normal((4, 7)))


def test_zero_upstream_gradient_zero_grads(rng):
    config = _tiny_cnn()
    params = clf.init_params(config, rng)
    tokens = rng.standard_normal((3, 4, 3))
    _, cache = forward(params, config, tokens)
    grads = backward(params, config, cache, np.zeros((3, 3)))
    for g in grads.values():
        assert np.all(g == 0.0)


def test_duplicated_sample_doubles_contribution(rng):
    config = ModelConfig(variant="mlp", d_in=4, h_bottleneck=3, n_classes=3)
    params = clf.init_params(config, rng)
    x = rng.standard_normal((1, 4))
    y = np.array([1])
    w = np.ones(3)

    def raw_grad(xs, ys):
        logits, cache = forward(params, config, xs)
        _, dl = loss_and_grad(logits, ys, w, 0.0)
        # undo the 1/sum(w) batch normalisation to expose raw contributions
        return backward(params, config, cache, dl * len(ys))

    g1 = raw_grad(x, y)
    g2 = raw_grad(np.vstack([x, x]), np.array([1, 1]))
    for name in g1:
        np.testing.assert_allclose(g2[name], 2 * g1[name], rtol=1e-12)


# --- adamw -----------------------------------------------------------------------------

def test_adamw_closed_form_single_step():
    params = {"p": np.array([1.0])}
    grads = {"p": np.array([0.5])}
    cfg = TrainConfig(lr=1e-3, weight_decay=0.01)
    adamw_step(params, grads, AdamWState(), cfg)
    assert params["p"][0] == pytest.approx(0.99899, abs=1e-9)


def test_adamw_no_grad_no_decay_no_change():
    params = {"p": np.array([2.5])}
    cfg = TrainConfig(weight_decay=0.0)
    adamw_step(params, {"p": np.array([0.0])}, AdamWState(), cfg)
    assert params["p"][0] == 2.5


def test_adamw_rejects_nonfinite():
    with pytest.raises(ValidationError, match="non-finite"):
        adamw_step({"p": np.array([1.0])}, {"p": np.array([np.nan])},
                   AdamWState(), TrainConfig())


def test_adamw_bitwise_determinism(rng):
    p1 = {"a": rng.standard_normal(5)}
    p2 = {k: v.copy() for k, v in p1.items()}
    s1, s2 = AdamWState(), AdamWState()
    cfg = TrainConfig()
    for t in range(3):
        g = {"a": np.sin(np.arange(5.0) + t)}
        adamw_step(p1, g, s1, cfg)
        adamw_step(p2, {k: v.copy() for k, v in g.items()}, s2, cfg)
    assert p1["a"].tobytes() == p2["a"].tobytes()


# --- checkpoints -------------------------------------------------------------------------

def test_checkpoint_roundtrip(tmp_path, rng):
    config = _tiny_cnn(hybrid=True)
    params = clf.init_params(config, rng)
    clf.save_checkpoint(tmp_path / "m.ckpt", params, config, extra={"fold_id": 2})
    out, cfg2, extra = clf.load_checkpoint(tmp_path / "m.ckpt")
    assert cfg2 == config
    assert extra == {"fold_id": 2}
    assert sorted(out) == sorted(params)
    for name in params:
        assert out[name].tobytes() == params[name].tobytes()


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "bad.ckpt").write_bytes(b"whatever")
    with pytest.raises(ValidationError, match="not a checkpoint"):
        clf.load_checkpoint(tmp_path / "bad.ckpt")


# --- training sanity -----------------------------------------------------------------------

def test_loss_decreases_on_separable_data(rng):
    config = ModelConfig(variant="mlp", d_in=4, h_bottleneck=16, n_classes=3)
    params = clf.init_params(config, rng)
    n = 96
    y = rng.integers(0, 3, size=n)
    x = rng.standard_normal((n, 4)) * 0.2
    x[:, 0] += (y == 0) * 4
    x[:, 1] += (y == 1) * 4
    x[:, 2] += (y == 2) * 4
    weights = np.ones(3)
    cfg = TrainConfig(epochs=5, lr=1e-2)
    state = AdamWState()
    losses = []
    for epoch in range(5):
        perm = rng.permutation(n)
        for lo in range(0, n, 32):
            sel = perm[lo:lo + 32]
            logits, cache = forward(params, config, x[sel])
            loss, dl = loss_and_grad(logits, y[sel], weights, 0.1)
            grads = backward(params, config, cache, dl)
            adamw_step(params, grads, state, cfg)
        logits, _ = forward(params, config, x)
        losses.append(loss_and_grad(logits, y, weights, 0.1)[0])
    assert losses[-1] < losses[0]
    logits, _ = forward(params, config, x)
    assert (np.argmax(logits, axis=1) == y).mean() > 0.95
