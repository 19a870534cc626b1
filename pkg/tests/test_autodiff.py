"""Numeric kernel tests: forward formulas against independent oracles,
reverse-mode gradients against central finite differences."""

import math

import numpy as np
import pytest

from pathohr.autodiff import (
    Tape,
    Tensor,
    add,
    clamp_min,
    concat,
    div,
    exp,
    flatten_arrays,
    gelu,
    getitem,
    grad_check,
    l2_normalize_rows,
    layer_norm,
    linear_apply,
    log,
    matmul,
    mul,
    power,
    reduce_mean,
    reduce_sum,
    reshape,
    sigmoid,
    softmax_rows,
    sqrt,
    sub,
    take_rows,
    tanh,
    transpose,
    unflatten_arrays,
    value_of,
)
from pathohr.errors import DimensionError, NumericError


# ---------------------------------------------------------------------------
# oracles (no pathohr numerics used)
# ---------------------------------------------------------------------------

def naive_matmul(a, b):
    """Triple-loop matrix product."""
    a, b = np.asarray(a), np.asarray(b)
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            s = 0.0
            for k in range(a.shape[1]):
                s += a[i, k] * b[k, j]
            out[i, j] = s
    return out


def softmax_rows_oracle(m):
    m = np.asarray(m, dtype=np.float64)
    out = np.empty_like(m)
    for i in range(m.shape[0]):
        z = m[i] - m[i].max()
        e = np.array([math.exp(v) for v in z])
        out[i] = e / e.sum()
    return out


def gelu_oracle(x):
    # math.erf route, independent of scipy
    return x * 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def central_diff(f, x, h=1e-6):
    """Scalar-function central difference, elementwise over x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        step = np.zeros_like(flat)
        step[i] = h
        gflat[i] = (f((flat + step).reshape(x.shape))
                    - f((flat - step).reshape(x.shape))) / (2 * h)
    return g


class TestSoftmaxRows:
    def test_symmetry(self):
        np.testing.assert_allclose(softmax_rows(np.array([[0.0, 0.0]])),
                                   [[0.5, 0.5]])

    def test_analytic_ln2(self):
        out = softmax_rows(np.array([[math.log(2.0), 0.0]]))
        np.testing.assert_allclose(out, [[2 / 3, 1 / 3]], rtol=1e-14)

    def test_row_sums_seeded(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            m = rng.normal(size=(5, 7)) * rng.uniform(0.1, 50)
            s = softmax_rows(m).sum(axis=1)
            assert np.all(np.abs(s - 1.0) <= 1e-12)

    def test_matches_direct_oracle(self):
        rng = np.random.default_rng(12)
        m = rng.normal(size=(6, 4)) * 3
        np.testing.assert_allclose(softmax_rows(m), softmax_rows_oracle(m),
                                   rtol=1e-13, atol=1e-15)

    def test_row_shift_invariance(self):
        rng = np.random.default_rng(13)
        m = rng.normal(size=(4, 5))
        shifted = m + rng.normal(size=(4, 1))
        np.testing.assert_allclose(softmax_rows(m), softmax_rows(shifted),
                                   atol=1e-10)

    def test_rejects_empty(self):
        with pytest.raises(DimensionError):
            softmax_rows(np.zeros((0, 3)))


class TestGelu:
    def test_zero(self):
        assert gelu(0.0) == 0.0

    def test_large_positive_saturates(self):
        assert abs(gelu(10.0) - 10.0) < 1e-9

    def test_at_one(self):
        # 1 * Phi(1) via high-precision erf
        assert abs(gelu(1.0) - gelu_oracle(1.0)) < 1e-14
        assert abs(gelu(1.0) - 0.841344746068543) < 1e-12

    def test_matches_oracle_seeded(self):
        rng = np.random.default_rng(14)
        xs = rng.normal(scale=2.0, size=50)
        got = gelu(xs)
        want = np.array([gelu_oracle(v) for v in xs])
        np.testing.assert_allclose(got, want, rtol=1e-13, atol=1e-15)


class TestLayerNorm:
    def test_constant_vector_is_zeroed(self):
        v = np.full(8, 3.7)
        out = layer_norm(v, np.ones(8), np.zeros(8))
        np.testing.assert_allclose(out, 0.0, atol=1e-7)

    def test_unit_variance_pair(self):
        out = layer_norm(np.array([1.0, -1.0]), np.ones(2), np.zeros(2), eps=1e-12)
        np.testing.assert_allclose(out, [1.0, -1.0], atol=1e-6)

    def test_moments_seeded(self):
        rng = np.random.default_rng(15)
        v = rng.normal(size=16) * 4 + 2
        out = value_of(layer_norm(v, np.ones(16), np.zeros(16), eps=1e-5))
        assert abs(out.mean()) < 1e-6
        assert abs(out.var() - 1.0) < 1e-4  # eps shifts variance slightly below 1

    def test_gain_bias(self):
        rng = np.random.default_rng(16)
        v, g, b = rng.normal(size=6), rng.normal(size=6), rng.normal(size=6)
        base = value_of(layer_norm(v, np.ones(6), np.zeros(6)))
        np.testing.assert_allclose(value_of(layer_norm(v, g, b)), base * g + b,
                                   rtol=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            layer_norm(np.zeros(4), np.ones(3), np.zeros(4))

    def test_bad_eps(self):
        with pytest.raises(ValueError):
            layer_norm(np.zeros(4), np.ones(4), np.zeros(4), eps=0.0)


class TestLinearApply:
    def test_identity(self):
        x = np.arange(6.0).reshape(2, 3)
        np.testing.assert_array_equal(linear_apply(x, np.eye(3), np.zeros(3)), x)

    def test_zero_weight_gives_bias(self):
        out = linear_apply(np.ones((3, 4)), np.zeros((4, 2)), np.array([5.0, -1.0]))
        np.testing.assert_array_equal(out, np.tile([5.0, -1.0], (3, 1)))

    def test_matches_naive_triple_loop(self):
        rng = np.random.default_rng(17)
        for _ in range(5):
            a, w = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
            np.testing.assert_allclose(linear_apply(a, w), naive_matmul(a, w),
                                       rtol=1e-12, atol=1e-14)

    def test_dim_mismatch(self):
        with pytest.raises(DimensionError):
            linear_apply(np.zeros((2, 3)), np.zeros((4, 2)))


class TestGradCheck:
    def test_square_function(self):
        err = grad_check(lambda w: reduce_sum(mul(w, w)), np.array([3.0]), h=1e-4)
        assert err < 1e-8

    def test_constant_gradient_zero(self):
        tape = Tape()
        x = Tensor(np.array([1.0, 2.0]), tape)
        loss = reduce_sum(mul(x, 0.0))
        tape.backward(loss)
        np.testing.assert_array_equal(x.grad, [0.0, 0.0])

    def test_nonfinite_rejected(self):
        with np.errstate(divide="ignore"):
            with pytest.raises(NumericError):
                grad_check(lambda w: div(reduce_sum(w), 0.0), np.array([1.0]))


class TestPrimitiveGradients:
    """Every differentiable primitive vs central differences, seeded inputs."""

    def _check(self, f, x, tol=1e-6):
        def loss(vec):
            # weighted sum makes the output scalar with a non-trivial cotangent
            out = f(Tensor(vec) if not isinstance(vec, Tensor) else vec)
            w = np.linspace(0.7, 1.9, value_of(out).size).reshape(value_of(out).shape)
            return reduce_sum(mul(out, w))

        tape = Tape()
        t = Tensor(np.asarray(x, dtype=np.float64), tape)
        tape.backward(loss(t))
        analytic = t.grad
        numeric = central_diff(lambda v: float(value_of(loss(Tensor(v)))), x)
        np.testing.assert_allclose(analytic, numeric, rtol=tol, atol=tol)

    def test_elementwise_ops(self):
        rng = np.random.default_rng(18)
        x = rng.normal(size=(3, 4))
        self._check(lambda t: add(t, 2.0), x)
        self._check(lambda t: sub(3.0, t), x)
        self._check(lambda t: mul(t, t), x)
        self._check(lambda t: div(1.0, add(mul(t, t), 1.0)), x)
        self._check(lambda t: exp(mul(t, 0.5)), x)
        self._check(lambda t: tanh(t), x)
        self._check(lambda t: sigmoid(t), x)
        self._check(lambda t: gelu(t), x)
        self._check(lambda t: power(add(mul(t, t), 1.0), 1.5), x)

    def test_log_sqrt_positive_domain(self):
        rng = np.random.default_rng(19)
        x = rng.uniform(0.5, 3.0, size=(2, 5))
        self._check(lambda t: log(t), x)
        self._check(lambda t: sqrt(t), x)

    def test_sqrt_subgradient_at_zero(self):
        tape = Tape()
        x = Tensor(np.array([0.0, 4.0]), tape)
        tape.backward(reduce_sum(sqrt(x)))
        np.testing.assert_allclose(x.grad, [0.0, 0.25])

    def test_clamp_min(self):
        # stay away from the kink at the floor
        x = np.array([[-2.0, -0.5, 0.5, 2.0]])
        self._check(lambda t: clamp_min(t, 0.0), x)

    def test_matmul_and_shapes(self):
        rng = np.random.default_rng(20)
        x = rng.normal(size=(3, 4))
        w = rng.normal(size=(4, 2))
        self._check(lambda t: matmul(t, w), x)
        self._check(lambda t: matmul(x, t), w.copy())
        self._check(lambda t: transpose(t), x)
        self._check(lambda t: reshape(t, (4, 3)), x)
        self._check(lambda t: getitem(t, (slice(0, 2), slice(1, 3))), x)
        self._check(lambda t: take_rows(t, np.array([0, 2, 2, 1])), x)
        self._check(lambda t: concat([t, mul(t, 2.0)], axis=0), x)

    def test_reductions_and_softmax(self):
        rng = np.random.default_rng(21)
        x = rng.normal(size=(4, 5))
        self._check(lambda t: reduce_sum(t, axis=1, keepdims=True), x)
        self._check(lambda t: reduce_mean(t, axis=0), x)
        self._check(lambda t: softmax_rows(t), x)
        self._check(lambda t: layer_norm(t, np.ones(5), np.zeros(5)), x)
        self._check(lambda t: l2_normalize_rows(t), x)

    def test_broadcast_gradients(self):
        rng = np.random.default_rng(22)
        x = rng.normal(size=(1, 5))
        big = rng.normal(size=(4, 5))
        self._check(lambda t: add(big, t), x)      # broadcast up the row axis
        self._check(lambda t: mul(big, t), x)
        bias = rng.normal(size=5)
        self._check(lambda t: add(big, t), bias)   # 1-D against 2-D


class TestTapeMechanics:
    def test_untaped_ops_return_plain_arrays(self):
        out = add(np.ones(3), np.ones(3))
        assert isinstance(out, np.ndarray)

    def test_tensor_without_tape_not_recorded(self):
        t = Tensor(np.ones(3))
        out = mul(t, 2.0)
        assert isinstance(out, Tensor) and out.tape is None

    def test_grad_accumulates_over_reuse(self):
        tape = Tape()
        x = Tensor(np.array([2.0]), tape)
        y = add(mul(x, x), mul(x, 3.0))  # x^2 + 3x -> dy/dx = 2x + 3 = 7
        tape.backward(reduce_sum(y))
        np.testing.assert_allclose(x.grad, [7.0])

    def test_backward_requires_scalar(self):
        tape = Tape()
        x = Tensor(np.ones((2, 2)), tape)
        with pytest.raises(DimensionError):
            tape.backward(mul(x, 1.0))

    def test_mixed_tapes_rejected(self):
        a = Tensor(np.ones(2), Tape())
        b = Tensor(np.ones(2), Tape())
        with pytest.raises(ValueError):
            add(a, b)

    def test_flatten_unflatten_roundtrip(self):
        rng = np.random.default_rng(23)
        arrays = {"a": rng.normal(size=(2, 3)), "b": rng.normal(size=4),
                  "c": np.asarray(1.5)}
        flat, spec = flatten_arrays(arrays)
        back = unflatten_arrays(flat, spec)
        for k in arrays:
            np.testing.assert_array_equal(value_of(back[k]), arrays[k])
