import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import dwconv_oracle, project
from leanvae.bottleneck import AEBottleneck, CSBottleneck, ae_bottleneck
from leanvae.config import ModelConfig
from leanvae.errors import DimensionError
from leanvae.gradcheck import check_gradients
from leanvae.metrics import parameter_counts
from leanvae.tensor import Tensor, soft

CFG = ModelConfig(d1=4, d2=4, D=8, d=3, K=2, ff_expansion=2, dtype="float64")


def _randomize(module, rng):
    for _, p in module.named_parameters():
        p.data[...] = rng.uniform(-0.5, 0.5, p.shape)


def _gelu(v):
    return 0.5 * v * (1 + np.tanh(np.sqrt(2 / np.pi) * (v + 0.044715 * v**3)))


def _naf_oracle(x, layer):
    h = _gelu(dwconv_oracle(x, layer.conv_kernel.data, layer.conv_bias.data))
    return _gelu(h @ layer.w1.data + layer.b1.data) @ layer.w2.data + layer.b2.data


def _soft_oracle(v, t):
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def ista_oracle(z, bn):
    """Straight-line recovery: init, then K gradient + proximal stages."""
    phi = bn.phi.data
    p = z @ bn.phi_tilde.data.T
    for stage in bn.stages:
        rho = float(stage.rho.data)
        theta = float(np.log1p(np.exp(stage.theta_raw.data)))
        r = p - rho * ((p @ phi.T - z) @ phi)
        f = r
        for layer in stage.forward_net.layers:
            f = _naf_oracle(f, layer)
        s = _soft_oracle(f, theta)
        for layer in stage.backward_net.layers:
            s = _naf_oracle(s, layer)
        p = r + s
    return p


# -- soft-shrinkage ----------------------------------------------------------------------
def test_soft_examples(rng):
    assert soft(Tensor(np.asarray(3.0)), 1.0).item() == 2.0
    assert soft(Tensor(np.asarray(-0.5)), 1.0).item() == 0.0
    x = rng.standard_normal(20)
    np.testing.assert_array_equal(soft(Tensor(x), 0.0).data, x)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, 16, elements=st.floats(-5, 5)), arrays(np.float64, 16, elements=st.floats(-5, 5)),
       st.floats(0, 3))
def test_soft_properties(x, y, theta):
    sx = soft(Tensor(x), theta).data
    np.testing.assert_array_equal(soft(Tensor(-x), theta).data, -sx)
    assert np.all(np.abs(sx) <= np.abs(x))
    sy = soft(Tensor(y), theta).data
    assert np.all(np.abs(sx - sy) <= np.abs(x - y) + 1e-12)


# -- sensing / recovery ----------------------------------------------------------------------
def test_sense_shapes_and_infer_mode():
    cfg = ModelConfig()
    bn = CSBottleneck(cfg, np.random.default_rng(0))
    p = Tensor(np.random.default_rng(1).standard_normal((5, 32, 32, 512)).astype(np.float32))
    lat = bn.sense(p)
    assert lat.z.shape == (5, 32, 32, 4)
    assert np.array_equal(lat.z.data, lat.mu.data)


def test_train_mode_samples(rng):
    bn = CSBottleneck(CFG, rng)
    p = Tensor(rng.standard_normal((2, 2, 2, 8)))
    lat = bn.sense(p, "train", np.random.default_rng(0))
    assert not np.array_equal(lat.z.data, lat.mu.data)
    with pytest.raises(ValueError):
        bn.sense(p, "train")


def test_selector_sensing(rng):
    bn = CSBottleneck(CFG, rng)
    bn.phi.data[...] = np.eye(3, 8)
    bn.phi_sigma.data[...] = 0.0
    p = rng.standard_normal((2, 2, 2, 8))
    np.testing.assert_array_equal(bn.sense(Tensor(p)).z.data, p[..., :3])


def test_width_errors(rng):
    bn = CSBottleneck(CFG, rng)
    with pytest.raises(DimensionError):
        bn.sense(Tensor(np.zeros((2, 2, 2, 7))))
    with pytest.raises(DimensionError):
        bn.recover(Tensor(np.zeros((2, 2, 2, 4))))


def _kill_proximal(bn):
    for stage in bn.stages:
        stage.rho.data[...] = 0.0
        for layer in stage.backward_net.layers:
            layer.w2.data[...] = 0.0
            layer.b2.data[...] = 0.0


def test_degenerate_iterations_return_init(rng):
    bn = CSBottleneck(CFG, rng)
    _kill_proximal(bn)
    z = rng.standard_normal((2, 2, 2, 3))
    np.testing.assert_allclose(bn.recover(Tensor(z)).data, z @ bn.phi_tilde.data.T, atol=1e-14)


def test_huge_threshold_returns_init(rng):
    bn = CSBottleneck(CFG, rng)
    for stage in bn.stages:
        stage.rho.data[...] = 0.0
        stage.theta_raw.data[...] = 1e6
        for layer in stage.backward_net.layers:
            layer.b2.data[...] = 0.0
    z = rng.standard_normal((2, 2, 2, 3))
    np.testing.assert_allclose(bn.recover(Tensor(z)).data, z @ bn.phi_tilde.data.T, atol=1e-14)


def test_recover_matches_straight_line_oracle(rng):
    bn = CSBottleneck(CFG, rng)
    _randomize(bn, rng)
    z = rng.standard_normal((2, 4, 4, 3))
    assert np.abs(bn.recover(Tensor(z)).data - ista_oracle(z, bn)).max() < 1e-10


def test_fixed_point_keeps_gradient_step_idle(rng):
    # selector sensing with the init map as its transpose: Phi p_init == z exactly,
    # so r == p_init whatever rho is, and with a zero proximal branch recover returns p_init
    bn = CSBottleneck(CFG, rng)
    bn.phi.data[...] = np.eye(3, 8)
    bn.phi_tilde.data[...] = np.eye(8, 3)
    for stage in bn.stages:
        stage.rho.data[...] = rng.uniform(0.5, 2.0)
        for layer in stage.backward_net.layers:
            layer.w2.data[...] = 0.0
            layer.b2.data[...] = 0.0
    z = rng.standard_normal((2, 2, 2, 3))
    p_init = z @ bn.phi_tilde.data.T
    np.testing.assert_array_equal(bn.recover(Tensor(z)).data, p_init)


def test_recover_gradcheck(rng):
    bn = CSBottleneck(CFG.replace(K=1), rng)
    _randomize(bn, rng)
    z = Tensor(rng.standard_normal((2, 2, 2, 3)))
    stage = bn.stages[0]
    params = [bn.phi, bn.phi_tilde, stage.rho, stage.theta_raw,
              stage.forward_net.layers[0].w1, stage.backward_net.layers[1].w2]
    errs = check_gradients(lambda: project(bn.recover(z)), params, max_entries=20)
    assert max(errs.values()) < 1e-4


# -- AE baseline -------------------------------------------------------------------------------
def test_ae_pseudo_inverse_projection(rng):
    bn = AEBottleneck(CFG, rng)
    for net in bn.post_nets:
        for layer in net.layers:
            layer.w2.data[...] = 0.0
            layer.b2.data[...] = 0.0
    w = bn.w_down.data
    bn.w_up.data[...] = np.linalg.pinv(w)
    p = rng.standard_normal((2, 2, 2, 8))
    z, p_hat = ae_bottleneck(Tensor(p), bn)
    assert z.shape == (2, 2, 2, 3)
    proj = np.linalg.pinv(w) @ w
    np.testing.assert_allclose(p_hat.data, p @ proj.T, atol=1e-12)


def test_ae_parameter_parity():
    cs = sum(parameter_counts(ModelConfig()).values())
    ae = sum(parameter_counts(ModelConfig(bottleneck="ae")).values())
    assert abs(cs - ae) / cs <= 1e-3
