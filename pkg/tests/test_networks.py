import struct

import numpy as np
import pytest
import torch

from virtualcodec.image import ResampleMethod, resample
from virtualcodec.losses import fdnn_objective, ppnn_objective, upsample2x
from virtualcodec.networks import (
    CHECKPOINT_MAGIC, DECONV, FDNN, PPNN, VCNN, CheckpointError, LayerSpec,
    NonFiniteParameterError, OddDimensionsError, SpecMismatchError, build_network,
    fdnn_spec, forward, init_params, load_checkpoint, param_digest, ppnn_spec,
    save_checkpoint, vcnn_spec,
)


@pytest.fixture(scope="module")
def small():
    return {nid: build_network(nid, seed=0, width=8) for nid in (FDNN, PPNN, VCNN)}


# architecture

def test_layer_tables():
    f, p = fdnn_spec(), ppnn_spec()
    assert len(f) == 8 and len(p) == 8
    assert [(s.kernel, s.stride) for s in f] == [(9, 1), (3, 2)] + [(3, 1)] * 5 + [(9, 1)]
    assert [(s.kernel, s.stride) for s in p] == [(9, 1)] + [(3, 1)] * 6 + [(9, 2)]
    assert p[-1].kind == DECONV
    assert f[-1].activation == "none" and p[-1].activation == "none"
    assert all(s.activation == "relu" for s in f[:-1] + p[:-1])
    assert f[0].in_channels == 1 and f[0].out_channels == 128
    assert vcnn_spec() == ppnn_spec()


def test_fan_in():
    assert LayerSpec("conv", 9, 1, 128).fan_in == 81
    assert LayerSpec("conv", 3, 128, 128, stride=2).fan_in == 1152
    # each deconv output sees 81/4 taps per input channel
    assert LayerSpec("deconv", 9, 128, 1, stride=2).fan_in == 2592


@pytest.mark.parametrize("size", range(16, 161, 2))
def test_shapes_for_all_even_sizes(small, size):
    x = torch.rand(1, 1, size, size + 2)
    y = small[FDNN](x)
    assert y.shape == (1, 1, size // 2, size // 2 + 1)
    assert small[PPNN](y).shape == x.shape
    assert small[VCNN](y).shape == x.shape


def test_shapes_full_width():
    x = torch.rand(2, 1, 32, 48)
    y = build_network(FDNN, seed=1)(x)
    assert y.shape == (2, 1, 16, 24)
    for nid in (PPNN, VCNN):
        for border in ("zero", "replicate"):
            assert build_network(nid, seed=1, border=border)(y).shape == x.shape


def test_odd_dims_rejected(small):
    with pytest.raises(OddDimensionsError):
        small[FDNN](torch.rand(1, 1, 15, 16))
    small[PPNN](torch.rand(1, 1, 7, 9))  # any size is fine for upsampling


# initialization

@pytest.mark.parametrize("init", ["he", "interp"])
def test_init_is_seeded(init):
    a = build_network(PPNN, seed=3, init=init, width=8)
    b = build_network(PPNN, seed=3, init=init, width=8)
    c = build_network(PPNN, seed=4, init=init, width=8)
    assert param_digest(a) == param_digest(b) != param_digest(c)


def test_he_statistics():
    net = init_params(fdnn_spec(), seed=0, init="he")
    for s, layer in zip(net.spec, net.layers):
        w = layer.weight.detach().numpy()
        if w.size > 5000:
            assert w.std() == pytest.approx((2 / s.fan_in) ** 0.5, rel=0.05)
        assert np.all(layer.bias.detach().numpy() == 0)


def test_interp_init_reproduces_plain_resamplers():
    x = np.random.default_rng(0).random((24, 32))
    f = build_network(FDNN, seed=0, init="interp")
    p = build_network(PPNN, seed=1, init="interp", border="replicate")
    y = forward(f, x)
    np.testing.assert_allclose(y, resample(x, 0.5, ResampleMethod.AREA), atol=1e-6)
    np.testing.assert_allclose(forward(p, y), resample(y, 2, ResampleMethod.BICUBIC), atol=1e-6)


def test_unknown_options():
    with pytest.raises(ValueError):
        build_network(PPNN, init="xavier")
    with pytest.raises(ValueError):
        build_network(PPNN, border="mirror")
    with pytest.raises(KeyError):
        build_network("ENCODER")


# gradients through the networks

def _param_fd(net, loss_fn, count=10, eps=1e-6, seed=0):
    net = net.double()
    params = list(net.parameters())
    loss_fn(net).backward()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(count):
        p = params[rng.integers(len(params))]
        idx = int(rng.integers(p.numel()))
        ana = p.grad.view(-1)[idx].item()
        with torch.no_grad():
            orig = p.view(-1)[idx].item()
            p.view(-1)[idx] = orig + eps
            up = loss_fn(net).item()
            p.view(-1)[idx] = orig - eps
            down = loss_fn(net).item()
            p.view(-1)[idx] = orig
        num = (up - down) / (2 * eps)
        worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), 1e-6))
    return worst


def test_ppnn_parameter_gradients():
    g = torch.Generator().manual_seed(0)
    z = torch.rand(2, 1, 8, 8, generator=g, dtype=torch.float64)
    x = torch.rand(2, 1, 16, 16, generator=g, dtype=torch.float64)
    net = build_network(PPNN, seed=0, init="he", width=6)
    assert _param_fd(net, lambda n: ppnn_objective(x, n(z)).value) < 1e-2


def test_fdnn_parameter_gradients_through_frozen_proxy():
    g = torch.Generator().manual_seed(1)
    x = torch.rand(2, 1, 16, 16, generator=g, dtype=torch.float64)
    theta = build_network(VCNN, seed=1, init="he", width=6).double().requires_grad_(False)
    alpha = build_network(FDNN, seed=2, init="he", width=6)

    def loss(n):
        y = n(x)
        return fdnn_objective(x, theta(y), upsample2x(y)).value

    assert _param_fd(alpha, loss) < 1e-2
    assert all(p.grad is None for p in theta.parameters())


# checkpoints

@pytest.mark.parametrize("nid", [FDNN, PPNN, VCNN])
def test_checkpoint_round_trip(tmp_path, nid):
    net = build_network(nid, seed=5, width=8, border="zero")
    path = tmp_path / f"{nid}.ckpt"
    save_checkpoint(net, path)
    assert path.read_bytes()[:8] == CHECKPOINT_MAGIC
    back = load_checkpoint(path, nid)
    assert back.network_id == nid and back.border == "zero"
    assert param_digest(back) == param_digest(net)
    x = torch.rand(1, 1, 16, 16) if nid == FDNN else torch.rand(1, 1, 8, 8)
    with torch.no_grad():
        assert torch.equal(back(x), net(x))


def test_checkpoint_identity_is_checked(tmp_path):
    path = tmp_path / "p.ckpt"
    save_checkpoint(build_network(PPNN, width=8), path)
    with pytest.raises(SpecMismatchError):
        load_checkpoint(path, FDNN)
    with pytest.raises(SpecMismatchError):
        load_checkpoint(path, VCNN)
    assert load_checkpoint(path).network_id == PPNN


def test_checkpoint_corruption(tmp_path):
    path = tmp_path / "c.ckpt"
    save_checkpoint(build_network(VCNN, width=8), path)
    raw = bytearray(path.read_bytes())
    bad = tmp_path / "bad.ckpt"
    for mutated in (b"NOTACKPT" + raw[8:], raw[:-5], raw[:12],
                    raw[:8] + struct.pack("<I", 99) + raw[12:],
                    raw[:-1] + bytes([raw[-1] ^ 0xFF])):
        bad.write_bytes(bytes(mutated))
        with pytest.raises(CheckpointError):
            load_checkpoint(bad)


def test_non_finite_parameters_are_refused(tmp_path):
    net = build_network(PPNN, width=8)
    with torch.no_grad():
        net.layers[2].weight[0, 0, 0, 0] = float("nan")
    with pytest.raises(NonFiniteParameterError):
        save_checkpoint(net, tmp_path / "nan.ckpt")
    with pytest.raises(NonFiniteParameterError):
        forward(net, np.zeros((8, 8)))
    assert not (tmp_path / "nan.ckpt").exists()


@pytest.mark.parametrize("nid", [FDNN, PPNN])
def test_last_layer_is_linear(nid):
    net = build_network(nid, width=8)
    with torch.no_grad():
        net.layers[-1].bias.fill_(-10.0)
        out = net(torch.rand(1, 1, 16, 16))
        assert (out < 0).all()
        hidden = torch.rand(1, 1, 16, 16)
        for s, layer in zip(net.spec[:-1], net.layers[:-1]):
            hidden = torch.relu(layer(hidden))
        assert (hidden >= 0).all()
