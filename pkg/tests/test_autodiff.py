import math

import numpy as np
import pytest

from app.autodiff import ComputeGraph, Tensor, ops
from app.services import model_service
from app.services.exceptions import DimensionError, GraphStateError, TokenIndexError

EPS = 1e-5


def _project(out: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar <out, weights> built from graph ops."""
    return ops.matmul(ops.reshape(out, (1, out.size)), Tensor(weights.reshape(-1, 1)))


def assert_gradients(build, inputs, seed=0, rtol=1e-6, atol=1e-9):
    """Backward of a random projection of build(*inputs) vs. central differences."""
    weights = np.random.default_rng(seed).standard_normal(build(*inputs).size)

    def value() -> float:
        return float(np.sum(build(*inputs).data.reshape(-1) * weights))

    for t in inputs:
        t.grad = None
    with ComputeGraph() as graph:
        loss = _project(build(*inputs), weights)
    graph.backward(loss, parameters=[t for t in inputs if t.requires_grad])

    for t in inputs:
        if not t.requires_grad:
            continue
        numeric = np.zeros_like(t.data)
        for index in np.ndindex(t.shape):
            original = t.data[index]
            t.data[index] = original + EPS
            plus = value()
            t.data[index] = original - EPS
            minus = value()
            t.data[index] = original
            numeric[index] = (plus - minus) / (2 * EPS)
        np.testing.assert_allclose(t.grad, numeric, rtol=rtol, atol=atol)


def _param(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


class TestOps:
    def test_matmul_identity_and_zero(self):
        eye = Tensor(np.eye(2))
        m = Tensor([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(ops.matmul(eye, m).data, m.data)
        assert np.array_equal(ops.matmul(Tensor([[1.0, 2.0]]), Tensor([[0.0], [0.0]])).data, [[0.0]])

    def test_matmul_gradient(self):
        rng = np.random.default_rng(1)
        assert_gradients(ops.matmul, [_param(rng, 5, 4), _param(rng, 4, 3)])

    def test_batched_matmul_gradient(self):
        rng = np.random.default_rng(2)
        assert_gradients(ops.matmul, [_param(rng, 2, 3, 4), _param(rng, 2, 4, 3)])

    def test_matmul_shape_mismatch(self):
        with pytest.raises(DimensionError):
            ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_add_broadcast_gradient(self):
        rng = np.random.default_rng(3)
        assert_gradients(ops.add, [_param(rng, 4, 3), _param(rng, 3)])

    def test_softmax_values(self):
        assert np.allclose(ops.softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5], rtol=0, atol=1e-15)
        assert np.allclose(ops.softmax(Tensor([1000.0, 0.0])).data, [1.0, 0.0], rtol=0, atol=1e-12)

    def test_softmax_matches_high_precision(self):
        v = np.random.default_rng(4).standard_normal(8) * 3
        shifted = np.exp(np.longdouble(v) - np.longdouble(v.max()))
        expected = shifted / shifted.sum()
        np.testing.assert_allclose(ops.softmax(Tensor(v)).data, expected.astype(np.float64), rtol=1e-14)

    def test_softmax_rows_sum_to_one(self):
        rows = np.random.default_rng(5).uniform(-1e4, 1e4, size=(6, 9))
        assert np.allclose(ops.softmax(Tensor(rows)).data.sum(axis=-1), 1.0, rtol=0, atol=1e-12)

    def test_softmax_gradient(self):
        assert_gradients(lambda x: ops.softmax(x, axis=-1), [_param(np.random.default_rng(6), 3, 5)])

    def test_layer_norm_values(self):
        ones, zeros = Tensor(np.ones(4)), Tensor(np.zeros(4))
        out = ops.layer_norm(Tensor(np.full((1, 4), 2.5)), ones, zeros)
        assert np.array_equal(out.data, np.zeros((1, 4)))
        out = ops.layer_norm(Tensor([[1.0, -1.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=0.0)
        assert np.allclose(out.data, [[1.0, -1.0]])

    def test_layer_norm_gradient(self):
        rng = np.random.default_rng(7)
        assert_gradients(ops.layer_norm, [_param(rng, 3, 6), _param(rng, 6), _param(rng, 6)])

    def test_gelu_gradient(self):
        assert_gradients(ops.gelu, [_param(np.random.default_rng(8), 4, 4)])

    def test_embedding_gradient_accumulates_repeats(self):
        table = _param(np.random.default_rng(9), 5, 3)
        assert_gradients(lambda t: ops.embedding(t, [1, 3, 1, 0]), [table])

    def test_embedding_out_of_range(self):
        with pytest.raises(TokenIndexError) as info:
            ops.embedding(Tensor(np.zeros((4, 2))), [0, 4])
        assert isinstance(info.value, IndexError)

    def test_conv1d_gradient_with_stride_and_padding(self):
        rng = np.random.default_rng(10)
        assert_gradients(lambda x, w: ops.conv1d(x, w, stride=2, padding=1), [_param(rng, 7, 3), _param(rng, 3, 3, 4)])

    def test_conv1d_output_length(self):
        out = ops.conv1d(Tensor(np.ones((9, 2))), Tensor(np.ones((3, 2, 5))), stride=2, padding=1)
        assert out.shape == (5, 5)

    def test_reshape_transpose_gradient(self):
        def build(x):
            return ops.transpose(ops.reshape(x, (2, 3, 2)), (1, 2, 0))
        assert_gradients(build, [_param(np.random.default_rng(11), 3, 4)])

    def test_cross_entropy_values(self):
        uniform = ops.cross_entropy(Tensor(np.zeros((3, 64))), [5, 7, 9])
        assert uniform.item() == pytest.approx(math.log(64), rel=1e-12)
        logits = np.zeros((1, 10))
        logits[0, 4] = 30.0
        assert ops.cross_entropy(Tensor(logits), [4]).item() < 1e-9

    def test_cross_entropy_gradient_is_softmax_minus_onehot(self):
        logits = _param(np.random.default_rng(12), 1, 6)
        with ComputeGraph() as graph:
            loss = ops.cross_entropy(logits, [2])
        graph.backward(loss)
        expected = ops.softmax(Tensor(logits.data)).data
        expected[0, 2] -= 1.0
        np.testing.assert_allclose(logits.grad, expected, rtol=1e-12)
        assert_gradients(lambda x: ops.cross_entropy(x, [2, 0, 5]), [_param(np.random.default_rng(13), 3, 6)])

    def test_cross_entropy_bad_target(self):
        with pytest.raises(TokenIndexError):
            ops.cross_entropy(Tensor(np.zeros((2, 4))), [0, 4])


class TestGraph:
    def test_square_gradient(self):
        theta = Tensor([[3.0]], requires_grad=True)
        with ComputeGraph() as graph:
            loss = ops.matmul(theta, theta)
        graph.backward(loss)
        assert theta.grad[0, 0] == pytest.approx(6.0)

    def test_fan_out_accumulates(self):
        x = Tensor([[2.0]], requires_grad=True)
        with ComputeGraph() as graph:
            loss = ops.add(ops.scale(x, 3.0), ops.scale(x, 4.0))
        graph.backward(loss)
        assert x.grad[0, 0] == pytest.approx(7.0)

    def test_constant_loss_gives_zero_grads(self):
        theta = Tensor(np.ones((2, 2)), requires_grad=True)
        with ComputeGraph() as graph:
            loss = ops.matmul(Tensor([[1.0]]), Tensor([[2.0]]))
        graph.backward(loss, parameters=[theta])
        assert np.array_equal(theta.grad, np.zeros((2, 2)))

    def test_backward_before_forward(self):
        with pytest.raises(GraphStateError):
            ComputeGraph().backward(Tensor(1.0))

    def test_non_scalar_loss(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        with ComputeGraph() as graph:
            out = ops.scale(x, 2.0)
        with pytest.raises(GraphStateError):
            graph.backward(out)

    def test_no_graph_means_no_recording(self):
        out = ops.scale(Tensor([1.0], requires_grad=True), 2.0)
        assert out.requires_grad is False


def _perturbed_model(config, tiny_splits):
    """Tiny model moved off its initial values, with backward grads of one utterance's loss."""
    model, _ = model_service.build(config)
    rng = np.random.default_rng(0)
    for _, p in model.named_parameters():
        p.data += rng.normal(0.0, 0.05, size=p.shape)
    item = tiny_splits["train"].items[0]
    model.clear_grad()
    model_service.sample_loss_and_grad(model, item.frames, item.target)
    return model, item


def _central_difference(model, item, param, index) -> float:
    original = param.data[index]
    param.data[index] = original + EPS
    plus = model.loss(item.frames, item.target).item()
    param.data[index] = original - EPS
    minus = model.loss(item.frames, item.target).item()
    param.data[index] = original
    return (plus - minus) / (2 * EPS)


def test_full_model_gradients_match_finite_differences(tiny_config, tiny_splits):
    """Seeded entries of every parameter tensor on a d_model=16 model."""
    model, item = _perturbed_model(tiny_config, tiny_splits)
    rng = np.random.default_rng(1)
    for pid, param in model.named_parameters():
        for flat in rng.choice(param.size, size=min(4, param.size), replace=False):
            index = np.unravel_index(int(flat), param.shape)
            numeric = _central_difference(model, item, param, index)
            assert param.grad[index] == pytest.approx(numeric, rel=1e-4, abs=1e-9), pid


@pytest.mark.slow
def test_every_model_gradient_matches_finite_differences(tiny_config, tiny_splits):
    model, item = _perturbed_model(tiny_config, tiny_splits)
    for pid, param in model.named_parameters():
        numeric = np.zeros_like(param.data)
        for index in np.ndindex(param.shape):
            numeric[index] = _central_difference(model, item, param, index)
        np.testing.assert_allclose(param.grad, numeric, rtol=1e-4, atol=1e-9, err_msg=pid)


def test_forward_is_deterministic(tiny_model, tiny_splits):
    model, _ = tiny_model
    item = tiny_splits["test_clean"].items[0]
    first = model.forward(item.frames, [0, *item.target]).data
    second = model.forward(item.frames, [0, *item.target]).data
    assert np.array_equal(first, second)
