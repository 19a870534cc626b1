"""Gated attention pooling and the momentum-SGD training step."""

import math

import numpy as np
import pytest

from pathohr.aggregation import (
    aggregate_and_predict,
    create_gated_params,
    gated_attention_weights,
    mse_loss,
    one_hot,
    pre_attention,
    slide_embedding,
    train_step,
)
from pathohr.autodiff import add, linear_apply, mul, power, reduce_mean, reshape, value_of
from pathohr.errors import DimensionError, EmptyInputError, TrainingDiverged
from pathohr.tokens import TokenSet


# ---- oracles ----

def gelu_scalar(x):
    return 0.5 * x * (1.0 + math.erf(x / math.sqrt(2.0)))


def pre_attention_oracle(x, p):
    n, _ = x.shape
    h = x @ p["pre_w1"] + p["pre_b1"]
    out = np.empty_like(h)
    for i in range(n):
        mu = h[i].mean()
        var = ((h[i] - mu) ** 2).mean()
        normed = (h[i] - mu) / math.sqrt(var + 1e-5) * p["pre_ln_gain"] + p["pre_ln_bias"]
        out[i] = [gelu_scalar(v) for v in normed]
    return out @ p["pre_w2"] + p["pre_b2"]


def gated_weights_oracle(x, p):
    scores = []
    for row in x:
        a = [math.tanh(v) for v in row @ p["attn_v"]]
        g = [1.0 / (1.0 + math.exp(-v)) for v in row @ p["attn_u"]]
        scores.append(sum(ai * gi * wi for ai, gi, wi in zip(a, g, p["attn_w"][:, 0])))
    m = max(scores)
    e = [math.exp(s - m) for s in scores]
    z = sum(e)
    return np.array([v / z for v in e])


def params_for(in_dim, seed=1):
    return create_gated_params(seed=seed, in_dim=in_dim, embed_dim=8, attn_dim=4)


class TestPreAttention:
    def test_matches_composition_oracle(self):
        rng = np.random.default_rng(130)
        p = params_for(5)
        for _ in range(5):
            x = rng.normal(size=(6, 5))
            out = pre_attention(TokenSet(x), p)
            np.testing.assert_allclose(value_of(out.tokens), pre_attention_oracle(x, p),
                                       rtol=1e-10, atol=1e-12)

    def test_zero_second_layer_gives_zero_output(self):
        p = params_for(4)
        p["pre_w2"] = np.zeros_like(p["pre_w2"])
        p["pre_b2"] = np.zeros_like(p["pre_b2"])
        out = pre_attention(TokenSet(np.random.default_rng(131).normal(size=(3, 4))), p)
        np.testing.assert_array_equal(value_of(out.tokens), np.zeros((3, 8)))

    def test_token_count_preserved(self):
        p = params_for(4)
        ts = TokenSet(np.ones((7, 4)), sizes=np.arange(1, 8))
        out = pre_attention(ts, p)
        assert len(out) == 7
        np.testing.assert_array_equal(out.sizes, ts.sizes)


class TestGatedAttentionWeights:
    # these score the pre-attention output space, so inputs are embed_dim wide
    def test_identical_features_give_uniform_weights(self):
        p = params_for(4)
        x = np.tile(np.arange(8, dtype=np.float64) / 4 - 1.0, (5, 1))
        w = value_of(gated_attention_weights(TokenSet(x), p))
        np.testing.assert_allclose(w, np.full(5, 0.2), rtol=1e-12)

    def test_single_token(self):
        p = params_for(3)
        w = value_of(gated_attention_weights(TokenSet(np.ones((1, 8))), p))
        np.testing.assert_array_equal(w, [1.0])

    def test_matches_hand_composed_oracle(self):
        rng = np.random.default_rng(132)
        p = params_for(4)
        # O(1) attention weights so tanh/sigmoid leave their linear zone
        p["attn_v"] = rng.normal(size=p["attn_v"].shape)
        p["attn_u"] = rng.normal(size=p["attn_u"].shape)
        p["attn_w"] = rng.normal(size=p["attn_w"].shape)
        for _ in range(5):
            x = rng.normal(size=(5, 8))
            w = value_of(gated_attention_weights(TokenSet(x), p))
            np.testing.assert_allclose(w, gated_weights_oracle(x, p),
                                       rtol=1e-12, atol=1e-14)

    def test_simplex_and_permutation_equivariance(self):
        rng = np.random.default_rng(133)
        p = params_for(6)
        for _ in range(10):
            x = rng.normal(size=(8, 8))
            w = value_of(gated_attention_weights(TokenSet(x), p))
            assert np.all(w >= 0)
            np.testing.assert_allclose(w.sum(), 1.0, rtol=1e-9)
            perm = rng.permutation(8)
            wp = value_of(gated_attention_weights(TokenSet(x[perm]), p))
            np.testing.assert_allclose(wp, w[perm], rtol=1e-12)

    def test_rejects_empty(self):
        with pytest.raises((EmptyInputError, DimensionError)):
            gated_attention_weights(TokenSet(np.zeros((0, 3))), params_for(3))


class TestSlideEmbedding:
    def test_uniform_weights_give_mean(self):
        rng = np.random.default_rng(134)
        x = rng.normal(size=(4, 5))
        emb = value_of(slide_embedding(TokenSet(x), np.full(4, 0.25)))
        np.testing.assert_allclose(emb, x.mean(axis=0), rtol=1e-12)

    def test_one_hot_weights_select_token(self):
        rng = np.random.default_rng(135)
        x = rng.normal(size=(4, 3))
        w = np.array([0.0, 0.0, 1.0, 0.0])
        np.testing.assert_array_equal(value_of(slide_embedding(TokenSet(x), w)), x[2])

    def test_matches_weighted_sum_oracle(self):
        rng = np.random.default_rng(136)
        x = rng.normal(size=(6, 4))
        w = rng.uniform(0.1, 1.0, size=6)
        w /= w.sum()
        want = np.zeros(4)
        for i in range(6):
            want += w[i] * x[i]
        np.testing.assert_allclose(value_of(slide_embedding(TokenSet(x), w)), want,
                                   rtol=1e-12, atol=1e-14)

    def test_convexity_bounds(self):
        rng = np.random.default_rng(137)
        for _ in range(10):
            x = rng.normal(size=(5, 3))
            w = rng.uniform(0.01, 1.0, size=5)
            w /= w.sum()
            emb = value_of(slide_embedding(TokenSet(x), w))
            assert np.all(emb >= x.min(axis=0) - 1e-10)
            assert np.all(emb <= x.max(axis=0) + 1e-10)

    def test_uniform_feature_input_reproduces_the_feature(self):
        p = params_for(4)
        x = np.tile(np.array([0.7, -0.2, 1.1, 0.4]), (6, 1))
        pre = pre_attention(TokenSet(x), p)
        w = gated_attention_weights(pre, p)
        emb = value_of(slide_embedding(pre, w))
        np.testing.assert_allclose(emb, value_of(pre.tokens)[0], atol=1e-10)

    def test_validation(self):
        x = TokenSet(np.ones((3, 2)))
        with pytest.raises(DimensionError):
            slide_embedding(x, np.array([0.5, 0.5]))
        with pytest.raises(DimensionError):
            slide_embedding(x, np.array([0.5, 0.4, 0.3]))


class TestMseLoss:
    def test_zero_when_equal(self):
        assert float(value_of(mse_loss(np.array([1.0, 2.0]), np.array([1.0, 2.0])))) == 0.0

    def test_hand_case(self):
        assert float(value_of(mse_loss(np.array([1.0, 0.0]), np.array([0.0, 0.0])))) == 0.5

    def test_matches_direct_summation(self):
        rng = np.random.default_rng(138)
        a, b = rng.normal(size=8), rng.normal(size=8)
        want = sum((x - y) ** 2 for x, y in zip(a, b)) / 8
        np.testing.assert_allclose(float(value_of(mse_loss(a, b))), want, rtol=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            mse_loss(np.zeros(3), np.zeros(4))


class TestOneHot:
    def test_encoding(self):
        np.testing.assert_array_equal(one_hot(0), [1.0, 0.0])
        np.testing.assert_array_equal(one_hot(1), [0.0, 1.0])
        np.testing.assert_array_equal(one_hot(2, n_classes=4), [0, 0, 1, 0])


class TestAggregateAndPredict:
    def test_shape_and_determinism(self):
        rng = np.random.default_rng(139)
        p = params_for(5)
        ts = TokenSet(rng.normal(size=(4, 5)))
        a = value_of(aggregate_and_predict(ts, p))
        b = value_of(aggregate_and_predict(ts, p))
        assert a.shape == (2,)
        np.testing.assert_array_equal(a, b)


class TestTrainStep:
    @staticmethod
    def quadratic_loss(tensors, _):
        return mse_loss(tensors["w"], np.array([3.0]))

    def test_zero_learning_rate_is_noop(self):
        params = {"w": np.array([1.5])}
        new, loss, _ = train_step(params, None, self.quadratic_loss, learning_rate=0.0)
        np.testing.assert_array_equal(new["w"], params["w"])
        assert loss == 2.25

    def test_negative_learning_rate_rejected(self):
        with pytest.raises(ValueError):
            train_step({"w": np.zeros(1)}, None, self.quadratic_loss, learning_rate=-0.1)

    def test_momentum_update_matches_hand_computation(self):
        # v <- 0.9 v - lr g;  w <- w + v;  g = 2(w - 3)
        params = {"w": np.array([0.0])}
        params, l0, vel = train_step(params, None, self.quadratic_loss,
                                     learning_rate=0.1, momentum=0.9)
        np.testing.assert_allclose(params["w"], [0.6], rtol=1e-12)
        assert l0 == 9.0
        params, l1, vel = train_step(params, None, self.quadratic_loss,
                                     learning_rate=0.1, momentum=0.9, velocity=vel)
        np.testing.assert_allclose(params["w"], [1.62], rtol=1e-12)
        np.testing.assert_allclose(l1, 5.76, rtol=1e-12)

    def test_linear_model_loss_strictly_decreases(self):
        rng = np.random.default_rng(8)
        X = rng.normal(size=(10, 3))
        y = (X @ np.array([[1.0], [-1.0], [2.0]])).ravel()

        def loss_fn(t, _):
            pred = add(linear_apply(X, t["w"]), t["b"])
            return mse_loss(reshape(pred, (10,)), y)

        params = {"w": np.zeros((3, 1)), "b": np.zeros(1)}
        vel, losses = None, []
        for _ in range(100):
            params, loss, vel = train_step(params, None, loss_fn,
                                           learning_rate=1e-3, momentum=0.9, velocity=vel)
            losses.append(loss)
        assert all(b < a for a, b in zip(losses, losses[1:]))
        assert losses[-1] < 0.05 * losses[0]

    def test_nonfinite_loss_diverges(self):
        def blowup(t, _):
            return reduce_mean(mul(t["w"], 1e308))

        with np.errstate(over="ignore"):
            with pytest.raises(TrainingDiverged):
                train_step({"w": np.array([10.0])}, None, blowup, learning_rate=1e-3)

    def test_nonfinite_gradient_diverges(self):
        # sqrt-like power at 0: value finite, derivative infinite
        def edge(t, _):
            return reduce_mean(power(t["w"], 0.5))

        with np.errstate(divide="ignore"):
            with pytest.raises(TrainingDiverged):
                train_step({"w": np.array([0.0])}, None, edge, learning_rate=1e-3)

    def test_linearly_separable_task_reaches_95_pct(self):
        rng = np.random.default_rng(7)
        w_star = np.array([1.0, -2.0, 0.5, 1.5])
        batch = []
        for _ in range(20):
            base = rng.normal(size=4)
            label = int(base @ w_star > 0)
            batch.append((base + 0.1 * rng.normal(size=(3, 4)), label))

        def loss_fn(tensors, items):
            total = None
            for feats, label in items:
                logits = aggregate_and_predict(TokenSet(feats), tensors)
                term = mse_loss(logits, one_hot(label))
                total = term if total is None else add(total, term)
            return mul(total, 1.0 / len(items))

        def accuracy(params):
            preds = [np.argmax(value_of(aggregate_and_predict(TokenSet(f), params)))
                     for f, _ in batch]
            return np.mean([p == l for p, (_, l) in zip(preds, batch)])

        params = params_for(4, seed=1)
        vel = None
        for step in range(1, 501):
            params, _, vel = train_step(params, batch, loss_fn,
                                        learning_rate=0.05, momentum=0.9, velocity=vel)
            if step % 25 == 0 and accuracy(params) >= 0.95:
                break
        assert accuracy(params) >= 0.95
