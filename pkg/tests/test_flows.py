import json

import numpy as np
import pytest

from injflow.errors import InvalidLayerError, NumericError
from injflow.flows import (
    AutoregressiveLayer,
    CouplingLayer,
    FlowBlock,
    Mlp,
    identity_block,
    log_det_jacobian,
    make_autoregressive_block,
    make_coupling_block,
)


class _Const:
    """Constant-output subnet for closed-form coupling checks."""

    def __init__(self, value, width):
        self.value = float(value)
        self.width = width

    def __call__(self, b):
        b = np.atleast_2d(b)
        return np.full((b.shape[0], self.width), self.value)


class _Identity:
    def __call__(self, b):
        return np.atleast_2d(b)


def _coupling(dim=2, split=1, s=None, t=None, perm=None):
    s = s if s is not None else _Const(0.0, split)
    t = t if t is not None else _Const(0.0, split)
    return CouplingLayer(dim, split, s, t, perm=perm)


class TestCouplingExamples:
    def test_identity_case(self):
        layer = _coupling()
        x = np.array([0.7, -1.3])
        np.testing.assert_allclose(layer.forward(x), x, atol=1e-15)

    def test_shift_by_conditioner(self):
        layer = _coupling(t=_Identity())
        np.testing.assert_allclose(layer.forward([1.0, 2.0]), [3.0, 2.0])

    def test_constant_log2_scale(self):
        layer = _coupling(s=_Const(np.log(2.0), 1))
        np.testing.assert_allclose(layer.forward([1.0, 5.0]), [2.0, 5.0])

    def test_inverse_of_shift_example(self):
        layer = _coupling(t=_Identity())
        np.testing.assert_allclose(layer.inverse([3.0, 2.0]), [1.0, 2.0])

    def test_identity_inverse(self):
        layer = _coupling()
        y = np.array([4.0, -2.0])
        np.testing.assert_allclose(layer.inverse(y), y, atol=1e-15)

    def test_roundtrip_1000_random(self):
        rng = np.random.default_rng(0)
        block = make_coupling_block(4, 4, rng=rng, final_scale=0.6)
        x = rng.normal(size=(1000, 4))
        err = np.abs(block.inverse(block.forward(x)) - x).max()
        assert err <= 1e-10

    def test_nonfinite_subnet_output_raises(self):
        layer = _coupling(s=_Const(np.inf, 1))
        with pytest.raises(NumericError):
            layer.forward([1.0, 2.0])


class TestAutoregressiveExamples:
    def test_identity_conditioners(self):
        layer = AutoregressiveLayer(2, conditioners=[_Const(0.0, 2)])
        x = np.array([0.4, -0.9])
        np.testing.assert_allclose(layer.forward(x), x, atol=1e-15)

    def test_prefix_shift(self):
        # g_2(x1) = (log 1, x1): y2 = x2 * 1 + x1.
        class Cond:
            def __call__(self, prefix):
                prefix = np.atleast_2d(prefix)
                return np.column_stack([np.zeros(prefix.shape[0]), prefix[:, 0]])

        layer = AutoregressiveLayer(2, conditioners=[Cond()])
        np.testing.assert_allclose(layer.forward([1.0, 1.0]), [1.0, 2.0])
        np.testing.assert_allclose(layer.inverse([1.0, 2.0]), [1.0, 1.0])

    def test_roundtrip(self):
        rng = np.random.default_rng(1)
        block = make_autoregressive_block(3, 2, rng=rng, final_scale=0.6)
        x = rng.normal(size=(500, 3))
        err = np.abs(block.inverse(block.forward(x)) - x).max()
        assert err <= 1e-10

    def test_triangularity_exact(self):
        rng = np.random.default_rng(2)
        layer = AutoregressiveLayer(4, rng=rng, final_scale=0.5)
        x = rng.normal(size=4)
        y = layer.forward(x)
        for j in range(1, 4):
            x2 = x.copy()
            x2[j] += 10.0
            y2 = layer.forward(x2)
            assert (y2[:j] == y[:j]).all()


class TestLogDet:
    def test_identity_layer_zero(self):
        assert log_det_jacobian(_coupling(), [1.0, 2.0]) == 0.0

    def test_constant_scale(self):
        layer = _coupling(s=_Const(np.log(2.0), 1))
        assert abs(log_det_jacobian(layer, [1.0, 5.0]) - np.log(2.0)) < 1e-15

    def test_additivity_over_stack(self):
        layer = _coupling(s=_Const(np.log(2.0), 1))
        block = FlowBlock(2, [layer, _coupling(s=_Const(np.log(2.0), 1))])
        assert abs(log_det_jacobian(block, [1.0, 5.0]) - 2 * np.log(2.0)) < 1e-14

    def test_autoregressive_log_det(self):
        layer = AutoregressiveLayer(2, conditioners=[_Const(0.3, 2)],
                                    first_params=[0.2, 0.0])
        assert abs(log_det_jacobian(layer, [1.0, 1.0]) - 0.5) < 1e-14


class TestBijectivityProperty:
    def test_fifty_random_blocks(self):
        worst = 0.0
        for k in range(50):
            rng = np.random.default_rng(1000 + k)
            dim = int(rng.integers(2, 6))
            if k % 2 == 0:
                block = make_coupling_block(dim, int(rng.integers(1, 4)),
                                            rng=rng, final_scale=0.6, hidden=8)
            else:
                block = make_autoregressive_block(dim, int(rng.integers(1, 3)),
                                                  rng=rng, final_scale=0.6, hidden=8)
            x = rng.normal(size=(20, dim))
            worst = max(worst,
                        float(np.abs(block.inverse(block.forward(x)) - x).max()),
                        float(np.abs(block.forward(block.inverse(x)) - x).max()))
        assert worst <= 1e-10


class TestLipschitzBound:
    def test_bound_dominates_samples(self):
        rng = np.random.default_rng(3)
        block = make_coupling_block(3, 3, rng=rng, final_scale=0.8)
        x = rng.uniform(-2, 2, size=(300, 3))
        radius = float(np.linalg.norm(x, axis=1).max())
        y = block.forward(x)
        dx = np.linalg.norm(x[:, None] - x[None, :], axis=2)
        dy = np.linalg.norm(y[:, None] - y[None, :], axis=2)
        keep = dx > 1e-9
        assert (dy[keep] / dx[keep]).max() <= block.lipschitz_bound(radius)

    def test_autoregressive_bound_dominates_samples(self):
        rng = np.random.default_rng(14)
        block = make_autoregressive_block(3, 2, rng=rng, final_scale=0.8)
        x = rng.uniform(-2, 2, size=(200, 3))
        radius = float(np.linalg.norm(x, axis=1).max())
        y = block.forward(x)
        dx = np.linalg.norm(x[:, None] - x[None, :], axis=2)
        dy = np.linalg.norm(y[:, None] - y[None, :], axis=2)
        keep = dx > 1e-9
        assert (dy[keep] / dx[keep]).max() <= block.lipschitz_bound(radius)

    def test_monotone_in_clamp(self):
        rng = np.random.default_rng(4)
        s_net = Mlp([1, 8, 1], rng=rng, final_scale=1.0)
        s_net.biases[-1][:] = 3.0  # force the clamp to bind
        t_net = Mlp([1, 8, 1], rng=rng, final_scale=0.1)
        bounds = []
        for clamp in (1.0, 2.0):
            layer = CouplingLayer(2, 1, s_net, t_net, scale_clamp=clamp)
            bounds.append(layer.lipschitz_bound(radius=2.0))
        assert bounds[0] < bounds[1]
        # e^c times subnet terms dominates the reported bound
        lip_terms = 1.0 + 2.0 * s_net.lipschitz_bound() + t_net.lipschitz_bound()
        assert bounds[0] <= np.exp(1.0) * lip_terms + 1.0


def test_serialization_roundtrip():
    rng = np.random.default_rng(5)
    block = FlowBlock(3, make_coupling_block(3, 2, rng=rng, final_scale=0.7).layers
                      + make_autoregressive_block(3, 1, rng=rng, final_scale=0.7).layers)
    blob = json.dumps(block.to_config())
    clone = FlowBlock.from_config(json.loads(blob))
    x = rng.normal(size=(30, 3))
    np.testing.assert_array_equal(clone.forward(x), block.forward(x))
    np.testing.assert_array_equal(clone.inverse(x), block.inverse(x))


def test_identity_block_is_identity():
    x = np.random.default_rng(6).normal(size=(5, 3))
    blk = identity_block(3)
    assert (blk.forward(x) == x).all() and (blk.inverse(x) == x).all()


def test_bad_split_rejected():
    with pytest.raises(InvalidLayerError):
        CouplingLayer(2, 2, _Const(0, 1), _Const(0, 1))
    with pytest.raises(InvalidLayerError):
        CouplingLayer(2, 0, _Const(0, 1), _Const(0, 1))
