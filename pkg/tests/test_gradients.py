"""Central finite-difference checks (float64, step 1e-4, relative error < 1e-3)."""
import numpy as np
import pytest

from lmtcnn import ops
from lmtcnn.tensor import Rng, dropout_mask

from oracles import numeric_grad, rel_error

STEP = 1e-4
TOL = 1e-3
N_INSTANCES = 20


def check_layer(kind, forward, inputs, params, options, rng):
    """Compare layer_backward against finite differences of sum(forward(...) * R)."""
    out = forward(*inputs, *params, **options)
    upstream = rng.normal(size=np.shape(out))

    def loss():
        return float(np.sum(forward(*inputs, *params, **options) * upstream))

    back_inputs = list(inputs) + ([params[0]] if params else [])
    dx, grads = ops.layer_backward(kind, upstream, *back_inputs, **options)
    assert rel_error(dx, numeric_grad(loss, inputs[0], STEP)) < TOL
    for name, p in zip(("weight", "bias"), params):
        assert rel_error(grads[name], numeric_grad(loss, p, STEP)) < TOL


def _separated(rng, shape):
    """Values at least 0.05 apart and away from zero, so kinks stay outside +-STEP."""
    n = int(np.prod(shape))
    vals = (rng.permutation(n) - n / 2 + 0.5) * 0.05
    return vals.reshape(shape).astype(np.float64)


@pytest.mark.parametrize("seed", range(N_INSTANCES))
def test_conv2d_grad(backend, seed):
    r = np.random.default_rng(seed)
    k, s = int(r.integers(1, 4)), int(r.integers(1, 3))
    padding = ("valid", "same")[seed % 2]
    x = r.normal(size=(int(r.integers(k, 7)), int(r.integers(k, 7)), 2))
    w, b = r.normal(size=(k, k, 2, 3)), r.normal(size=3)
    check_layer("conv2d", ops.conv2d_forward, [x], [w, b], dict(stride=s, padding=padding), r)


@pytest.mark.parametrize("seed", range(N_INSTANCES))
def test_depthwise_grad(backend, seed):
    r = np.random.default_rng(seed)
    k, s, m = int(r.integers(1, 4)), int(r.integers(1, 3)), int(r.integers(1, 3))
    padding = ("valid", "same")[seed % 2]
    x = r.normal(size=(int(r.integers(k, 7)), int(r.integers(k, 7)), 3))
    w, b = r.normal(size=(k, k, 3 * m)), r.normal(size=3 * m)
    check_layer("depthwise_conv2d", ops.depthwise_conv2d_forward, [x], [w, b],
                dict(stride=s, padding=padding), r)


@pytest.mark.parametrize("seed", range(N_INSTANCES))
def test_pointwise_grad(seed):
    r = np.random.default_rng(seed)
    x = r.normal(size=(3, 4, 3))
    check_layer("pointwise_conv2d", ops.pointwise_conv2d_forward, [x],
                [r.normal(size=(3, 5)), r.normal(size=5)], {}, r)


@pytest.mark.parametrize("seed", range(N_INSTANCES))
def test_fully_connected_grad(seed):
    r = np.random.default_rng(seed)
    shape = (7,) if seed % 2 else (3, 7)
    check_layer("fully_connected", ops.fully_connected, [r.normal(size=shape)],
                [r.normal(size=(7, 4)), r.normal(size=4)], {}, r)


@pytest.mark.parametrize("seed", range(N_INSTANCES))
def test_relu_grad(seed):
    r = np.random.default_rng(seed)
    check_layer("relu", ops.relu, [_separated(r, (4, 5))], [], {}, r)


def test_relu_grad_convention():
    dx, grads = ops.layer_backward("relu", np.array([5.0, 5.0]), np.array([-1.0, 2.0]))
    assert dx.tolist() == [0.0, 5.0] and grads == {}
    assert ops.relu_backward(np.array([0.0]), np.array([3.0])).tolist() == [0.0]


@pytest.mark.parametrize("seed", range(N_INSTANCES))
def test_maxpool_grad(backend, seed):
    r = np.random.default_rng(seed)
    k, s = int(r.integers(2, 4)), int(r.integers(1, 4))
    mode = ("valid", "ceil")[seed % 2]
    x = _separated(r, (int(r.integers(k, 8)), int(r.integers(k, 8)), 2))
    check_layer("maxpool2d", ops.maxpool2d, [x], [], dict(window=k, stride=s, mode=mode), r)


@pytest.mark.parametrize("seed", range(N_INSTANCES))
def test_lrn_grad(seed):
    r = np.random.default_rng(seed)
    spec = ops.LrnSpec(radius=int(r.integers(0, 4)), bias=float(r.uniform(0.5, 2)),
                       alpha=float(r.uniform(0.01, 0.5)), beta=float(r.uniform(0.3, 1)))
    x = r.normal(size=(2, 3, 6)) * 2
    check_layer("lrn", ops.lrn, [x], [], dict(spec=spec), r)


def test_lrn_grad_default_spec():
    r = np.random.default_rng(0)
    check_layer("lrn", ops.lrn, [r.normal(size=(2, 2, 12)) * 30], [], dict(spec=ops.LrnSpec()), r)


@pytest.mark.parametrize("seed", range(N_INSTANCES))
def test_softmax_grad(seed):
    r = np.random.default_rng(seed)
    logits = r.normal(size=(2, 6))
    upstream = r.normal(size=logits.shape)

    def loss():
        return float(np.sum(ops.softmax(logits) * upstream))

    dx, _ = ops.layer_backward("softmax", upstream, ops.softmax(logits))
    assert rel_error(dx, numeric_grad(loss, logits, STEP)) < TOL


@pytest.mark.parametrize("seed", range(N_INSTANCES))
def test_dropout_grad(seed):
    r = np.random.default_rng(seed)
    x = r.normal(size=(4, 8))
    mask = dropout_mask(Rng(seed), x.shape, 0.5, dtype=np.float64)
    upstream = r.normal(size=x.shape)

    def loss():
        # same seed -> same mask on every evaluation
        return float(np.sum(ops.dropout(x, 0.5, True, Rng(seed)) * upstream))

    dx, _ = ops.layer_backward("dropout", upstream, mask)
    assert rel_error(dx, numeric_grad(loss, x, STEP)) < TOL


def test_fc_identity_jacobian():
    g = np.random.default_rng(0).normal(size=5)
    dx, _ = ops.layer_backward("fully_connected", g, np.ones(5), np.eye(5))
    np.testing.assert_array_equal(dx, g)


def test_unknown_kind():
    with pytest.raises(ValueError):
        ops.layer_backward("batchnorm", np.zeros(1))
