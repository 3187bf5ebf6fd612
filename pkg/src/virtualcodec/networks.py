"""FDNN, PPNN and VCNN: plain conv stacks, initialization, checkpoints.

FDNN ``f(X)`` maps an HxW image to its (H/2)x(W/2) description; PPNN
``h(Z)`` and VCNN ``v(Y)`` share one architecture mapping hxw to 2hx2w.
"""

from __future__ import annotations

import hashlib
import json
import struct
import zlib
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .image import _cubic

CONV = "conv"
DECONV = "deconv"
RELU = "relu"
NONE = "none"

FDNN = "FDNN"
PPNN = "PPNN"
VCNN = "VCNN"
NETWORK_IDS = (FDNN, PPNN, VCNN)

CHECKPOINT_MAGIC = b"VCNNCKPT"
CHECKPOINT_VERSION = 1


class OddDimensionsError(ValueError):
    pass


class NonFiniteParameterError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


class SpecMismatchError(CheckpointError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    kernel: int
    in_channels: int
    out_channels: int
    stride: int = 1
    activation: str = RELU

    def __post_init__(self):
        if self.kind not in (CONV, DECONV):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kernel not in (3, 9) or self.stride not in (1, 2):
            raise ValueError(f"unsupported kernel/stride {self.kernel}/{self.stride}")
        if self.activation not in (RELU, NONE):
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def fan_in(self) -> int:
        # inputs feeding one output sample; a stride-s deconv sees k*k/s^2 taps
        taps = self.kernel * self.kernel
        if self.kind == DECONV:
            taps = taps / (self.stride * self.stride)
        return int(round(self.in_channels * taps))


def fdnn_spec(width=128) -> list[LayerSpec]:
    return [
        LayerSpec(CONV, 9, 1, width),
        LayerSpec(CONV, 3, width, width, stride=2),
        *[LayerSpec(CONV, 3, width, width) for _ in range(5)],
        LayerSpec(CONV, 9, width, 1, activation=NONE),
    ]


def ppnn_spec(width=128) -> list[LayerSpec]:
    return [
        LayerSpec(CONV, 9, 1, width),
        *[LayerSpec(CONV, 3, width, width) for _ in range(6)],
        LayerSpec(DECONV, 9, width, 1, stride=2, activation=NONE),
    ]


def vcnn_spec(width=128) -> list[LayerSpec]:
    return ppnn_spec(width)


SPECS = {FDNN: fdnn_spec, PPNN: ppnn_spec, VCNN: vcnn_spec}


class Network(nn.Module):
    """A plain stack built from a LayerSpec list.

    Convolutions zero-pad to keep stride-1 sizes (stride 2 halves even
    sizes). The deconvolution produces exactly twice its input size; with
    ``border="replicate"`` its input is edge-extended by two samples first,
    otherwise missing neighbours count as zero.
    """

    def __init__(self, network_id, spec, border="replicate"):
        super().__init__()
        if network_id not in NETWORK_IDS:
            raise ValueError(f"unknown network id {network_id!r}")
        if border not in ("zero", "replicate"):
            raise ValueError(f"unknown border mode {border!r}")
        self.network_id = network_id
        self.spec = list(spec)
        self.border = border
        layers = []
        for s in self.spec:
            if s.kind == CONV:
                layers.append(nn.Conv2d(s.in_channels, s.out_channels, s.kernel,
                                        stride=s.stride, padding=s.kernel // 2))
            else:
                ext = 2 if border == "replicate" else 0
                layers.append(nn.ConvTranspose2d(
                    s.in_channels, s.out_channels, s.kernel, stride=s.stride,
                    padding=s.kernel // 2 + s.stride * ext, output_padding=s.stride - 1))
        self.layers = nn.ModuleList(layers)

    @property
    def downsamples(self) -> bool:
        return any(s.kind == CONV and s.stride == 2 for s in self.spec)

    def forward(self, x):
        if self.downsamples and (x.shape[-1] % 2 or x.shape[-2] % 2):
            raise OddDimensionsError(
                f"{self.network_id} needs even input dims, got {tuple(x.shape[-2:])}")
        for s, layer in zip(self.spec, self.layers):
            if s.kind == DECONV and self.border == "replicate":
                x = F.pad(x, (2, 2, 2, 2), mode="replicate")
            x = layer(x)
            if s.activation == RELU:
                x = F.relu(x)
        return x

    def check_finite(self):
        for name, p in self.named_parameters():
            if not torch.isfinite(p).all():
                raise NonFiniteParameterError(f"{self.network_id}.{name} holds NaN/Inf")


def build_network(network_id, *, seed=0, init="interp", border="replicate", width=128) -> Network:
    """Construct and initialize one of the three networks."""
    return init_params(SPECS[network_id](width), seed, network_id=network_id,
                       init=init, border=border)


def init_params(spec, seed, *, network_id=None, init="he", border="replicate") -> Network:
    """Deterministic initialization.

    ``init="he"``: every weight ~ N(0, 2/fan_in), biases zero.

    ``init="interp"``: the same random weights, except that channel 0 is
    wired as a pass-through that reproduces a plain resampler: identity
    taps through the stride-1 convolutions, a 2x2 box average in the
    stride-2 layer, a bicubic x2 kernel in the deconvolution. Nothing feeds
    channel 0 but channel 0, and the output layer reads only channel 0, so
    at step 0 FDNN is AREA downsampling and PPNN/VCNN are BICUBIC
    upsampling; the random channels enter once training moves the output
    weights off zero.
    """
    spec = list(spec)
    if network_id is None:
        network_id = FDNN if any(s.stride == 2 and s.kind == CONV for s in spec) else PPNN
    net = Network(network_id, spec, border=border)
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for s, layer in zip(spec, net.layers):
            std = (2.0 / s.fan_in) ** 0.5
            layer.weight.copy_(torch.randn(layer.weight.shape, generator=gen) * std)
            layer.bias.zero_()
        if init == "interp":
            _wire_passthrough(net)
        elif init != "he":
            raise ValueError(f"unknown init scheme {init!r}")
    return net


def _bicubic_x2_kernel(k):
    # tap d = o - 2i lands at index d + k//2; source offset is d/2 - 1/4
    d = np.arange(k) - k // 2
    taps = _cubic(d / 2 - 0.25)
    return np.outer(taps, taps)


def _wire_passthrough(net: Network):
    for s, layer in zip(net.spec, net.layers):
        w = layer.weight
        c = s.kernel // 2
        if s.kind == DECONV:
            # weight layout (in, out, k, k)
            w.zero_()
            w[0, 0] = torch.as_tensor(_bicubic_x2_kernel(s.kernel), dtype=w.dtype)
            continue
        if s.out_channels == 1:
            w.zero_()
            w[0, 0, c, c] = 1.0
            continue
        w[0].zero_()
        if s.stride == 2:
            w[0, 0, c:c + 2, c:c + 2] = 0.25
        else:
            w[0, 0, c, c] = 1.0


def forward(net: Network, img) -> np.ndarray:
    """Evaluate on a single 2-D image; numpy in, numpy out."""
    net.check_finite()
    p = next(net.parameters())
    x = torch.as_tensor(np.asarray(img), dtype=p.dtype)[None, None]
    with torch.no_grad():
        y = net(x)
    return y[0, 0].numpy().astype(np.float64)


def param_digest(net: Network) -> str:
    h = hashlib.sha256()
    for name, p in net.named_parameters():
        h.update(name.encode())
        h.update(p.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


# Checkpoints
#
#   8 bytes   magic b"VCNNCKPT"
#   u32 LE    format version
#   u32 LE    header length L
#   L bytes   UTF-8 JSON: network_id, border, spec, tensors [{name, shape}], crc32
#   payload   the tensors in header order, float32 little-endian, C order

def save_checkpoint(net: Network, path) -> None:
    net.check_finite()
    names, arrays = [], []
    for name, p in net.state_dict().items():
        names.append(name)
        arrays.append(np.ascontiguousarray(p.detach().cpu().numpy(), dtype="<f4"))
    payload = b"".join(a.tobytes() for a in arrays)
    header = {
        "network_id": net.network_id,
        "border": net.border,
        "spec": [asdict(s) for s in net.spec],
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in zip(names, arrays)],
        "crc32": zlib.crc32(payload),
    }
    blob = json.dumps(header).encode()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(payload)
    tmp.replace(path)


def load_checkpoint(path, network_id=None) -> Network:
    """Read a checkpoint; with ``network_id`` given, insist it matches."""
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a network checkpoint")
    try:
        version, hlen = struct.unpack("<II", raw[8:16])
        header = json.loads(raw[16:16 + hlen])
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    payload = raw[16 + hlen:]
    if zlib.crc32(payload) != header.get("crc32"):
        raise CheckpointError(f"{path}: payload checksum mismatch")
    try:
        spec = [LayerSpec(**s) for s in header["spec"]]
        stored_id = header["network_id"]
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: malformed header: {exc}") from exc
    if stored_id not in NETWORK_IDS:
        raise CheckpointError(f"{path}: unknown network id {stored_id!r}")
    if network_id is not None:
        width = spec[0].out_channels if spec else 0
        expected = SPECS[network_id](width)
        if stored_id != network_id:
            raise SpecMismatchError(f"{path} holds a {stored_id}, expected {network_id}")
        if spec != expected:
            raise SpecMismatchError(f"{path}: layer spec differs from the {network_id} architecture")
    net = Network(network_id or stored_id, spec, border=header.get("border", "zero"))
    state = {}
    offset = 0
    try:
        for t in header["tensors"]:
            n = int(np.prod(t["shape"], dtype=np.int64))
            arr = np.frombuffer(payload, dtype="<f4", count=n, offset=offset).reshape(t["shape"])
            state[t["name"]] = torch.from_numpy(arr.astype(np.float32))
            offset += 4 * n
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: payload does not match the tensor table") from exc
    if offset != len(payload):
        raise CheckpointError(f"{path}: payload size does not match the tensor table")
    try:
        net.load_state_dict(state)
    except RuntimeError as exc:
        raise SpecMismatchError(f"{path}: {exc}") from exc
    net.check_finite()
    return net
