import functools

import numpy as np
import pytest

from injflow.errors import InvalidArgumentError, InvalidLayerError, NumericError
from injflow.expansive import (
    LinearExpansive,
    ZeroPad,
    random_injective_relu,
    random_linear_expansive,
)
from injflow.flows import CouplingLayer, FlowBlock, identity_block, make_coupling_block
from injflow.network import InjectiveNetwork, lipschitz_estimate


def _random_network(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    kind = int(rng.integers(0, 3))
    mid = 2 * n if kind == 2 else n + int(rng.integers(1, 3))
    m = mid + int(rng.integers(1, 3))
    t0 = (make_coupling_block(n, 2, rng=rng, final_scale=0.5, hidden=8)
          if n >= 2 else identity_block(n))
    if kind == 0:
        r1 = ZeroPad(n, mid)
    elif kind == 1:
        r1 = random_linear_expansive(n, mid, rng)
    else:
        r1 = random_injective_relu(n, mid, rng)
    t1 = make_coupling_block(mid, 2, rng=rng, final_scale=0.5, hidden=8)
    r2 = random_linear_expansive(mid, m, rng)
    t2 = make_coupling_block(m, 2, rng=rng, final_scale=0.5, hidden=8)
    return InjectiveNetwork([t0, r1, t1, r2, t2])


class TestForward:
    def test_identity_zero_pad(self):
        net = InjectiveNetwork([identity_block(1), ZeroPad(1, 2), identity_block(2)])
        np.testing.assert_array_equal(net.forward([3.0]), [3, 0])

    def test_single_linear_between_identity_flows(self):
        net = InjectiveNetwork([identity_block(1),
                                LinearExpansive([[1.0], [1.0]]),
                                identity_block(2)])
        np.testing.assert_array_equal(net.forward([2.0]), [2, 2])

    def test_injectivity_spot_check(self):
        net = _random_network(11)
        rng = np.random.default_rng(12)
        x = rng.uniform(-3, 3, size=(1000, net.latent_dim))
        x2 = rng.uniform(-3, 3, size=(1000, net.latent_dim))
        distinct = np.linalg.norm(x - x2, axis=1) > 1e-12
        gaps = np.linalg.norm(np.atleast_2d(net.forward(x))
                              - np.atleast_2d(net.forward(x2)), axis=1)
        assert (gaps[distinct] > 0.0).all()

    def test_stage_indexed_numeric_error(self):
        class Bad:
            def __call__(self, b):
                b = np.atleast_2d(b)
                return np.full((b.shape[0], 1), np.inf)

        bad_block = FlowBlock(2, [CouplingLayer(2, 1, Bad(), Bad())])
        net = InjectiveNetwork([identity_block(1), ZeroPad(1, 2), bad_block])
        with pytest.raises(NumericError) as err:
            net.forward([1.0])
        assert err.value.stage_index == 2


class TestConstruction:
    def test_monotone_dimensions_enforced(self):
        with pytest.raises(InvalidLayerError):
            InjectiveNetwork([identity_block(2),
                              LinearExpansive(np.eye(3)[:, :2].T, check=False),
                              identity_block(1)])

    def test_alternation_enforced(self):
        with pytest.raises(InvalidLayerError):
            InjectiveNetwork([ZeroPad(1, 2), identity_block(2)])
        with pytest.raises(InvalidLayerError):
            InjectiveNetwork([identity_block(1), ZeroPad(1, 2)])

    def test_invalid_expansive_rejected(self):
        with pytest.raises(InvalidLayerError):
            InjectiveNetwork([identity_block(2),
                              LinearExpansive(np.zeros((3, 2)), check=False),
                              identity_block(3)])


class TestLipschitz:
    def test_identity_network_bound_one(self):
        net = InjectiveNetwork([identity_block(2), ZeroPad(2, 3), identity_block(3)])
        assert net.lipschitz_bound(radius=5.0) == 1.0

    def test_estimate_of_scaling_map(self):
        rng = np.random.default_rng(1)
        samples = rng.normal(size=(20, 3))
        assert abs(lipschitz_estimate(lambda x: 2.0 * x, samples) - 2.0) <= 1e-12
        assert abs(lipschitz_estimate(lambda x: x, samples) - 1.0) <= 1e-12

    def test_estimate_below_bound_on_50_networks(self):
        for k in range(50):
            net = _random_network(100 + k)
            rng = np.random.default_rng(200 + k)
            samples = rng.uniform(-3, 3, size=(40, net.latent_dim))
            radius = float(np.linalg.norm(samples, axis=1).max())
            assert lipschitz_estimate(net, samples) <= net.lipschitz_bound(radius)

    def test_estimate_needs_two_usable_samples(self):
        with pytest.raises(InvalidArgumentError):
            lipschitz_estimate(lambda x: x, np.zeros((1, 2)))
        with pytest.raises(InvalidArgumentError):
            lipschitz_estimate(lambda x: x, np.zeros((5, 2)))  # coincident


class TestComposition:
    def test_stagewise_equals_fused_pipeline(self):
        net = _random_network(31)
        rng = np.random.default_rng(32)
        x = rng.normal(size=(50, net.latent_dim))
        fused = functools.reduce(
            lambda acc, stage: (stage.forward(acc) if isinstance(stage, FlowBlock)
                                else stage(acc)),
            net.stages, x)
        assert np.abs(np.atleast_2d(net.forward(x)) - fused).max() <= 1e-12


class TestCheckpoint:
    def test_roundtrip_bitwise(self, tmp_path):
        net = _random_network(41)
        path = tmp_path / "net.json"
        net.save_checkpoint(path)
        clone = InjectiveNetwork.load_checkpoint(path)
        rng = np.random.default_rng(42)
        x = rng.normal(size=(30, net.latent_dim))
        np.testing.assert_array_equal(np.atleast_2d(clone.forward(x)),
                                      np.atleast_2d(net.forward(x)))

    def test_unknown_format_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"format": "other", "stages": []}')
        with pytest.raises(InvalidArgumentError):
            InjectiveNetwork.load_checkpoint(path)
