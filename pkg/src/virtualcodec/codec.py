"""The standard-codec stage: 8-bit bridge, baseline grayscale JPEG, bpp.

The encoder writes ITU-T T.81 baseline sequential streams (one component,
Annex K luminance quantization and Huffman tables) that any JPEG decoder
reads. The decoder accepts baseline/extended sequential Huffman grayscale
streams, including restart intervals, so files from other encoders load too.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.fft import dctn, idctn

SIDECAR_FORMAT = "virtualcodec-sidecar"
SIDECAR_VERSION = 1


class CorruptStreamError(ValueError):
    pass


class SidecarError(ValueError):
    pass


# Annex K.1, luminance, natural (row-major) order.
BASE_LUMA_TABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.int64)

# Annex K.3, luminance DC and AC tables: code counts per length, then symbols.
DC_BITS = (0, 1, 5, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0)
DC_VALS = tuple(range(12))
AC_BITS = (0, 2, 1, 3, 3, 2, 4, 3, 5, 5, 4, 4, 0, 0, 1, 0x7D)
AC_VALS = (
    0x01, 0x02, 0x03, 0x00, 0x04, 0x11, 0x05, 0x12, 0x21, 0x31, 0x41, 0x06,
    0x13, 0x51, 0x61, 0x07, 0x22, 0x71, 0x14, 0x32, 0x81, 0x91, 0xA1, 0x08,
    0x23, 0x42, 0xB1, 0xC1, 0x15, 0x52, 0xD1, 0xF0, 0x24, 0x33, 0x62, 0x72,
    0x82, 0x09, 0x0A, 0x16, 0x17, 0x18, 0x19, 0x1A, 0x25, 0x26, 0x27, 0x28,
    0x29, 0x2A, 0x34, 0x35, 0x36, 0x37, 0x38, 0x39, 0x3A, 0x43, 0x44, 0x45,
    0x46, 0x47, 0x48, 0x49, 0x4A, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59,
    0x5A, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68, 0x69, 0x6A, 0x73, 0x74, 0x75,
    0x76, 0x77, 0x78, 0x79, 0x7A, 0x83, 0x84, 0x85, 0x86, 0x87, 0x88, 0x89,
    0x8A, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9A, 0xA2, 0xA3,
    0xA4, 0xA5, 0xA6, 0xA7, 0xA8, 0xA9, 0xAA, 0xB2, 0xB3, 0xB4, 0xB5, 0xB6,
    0xB7, 0xB8, 0xB9, 0xBA, 0xC2, 0xC3, 0xC4, 0xC5, 0xC6, 0xC7, 0xC8, 0xC9,
    0xCA, 0xD2, 0xD3, 0xD4, 0xD5, 0xD6, 0xD7, 0xD8, 0xD9, 0xDA, 0xE1, 0xE2,
    0xE3, 0xE4, 0xE5, 0xE6, 0xE7, 0xE8, 0xE9, 0xEA, 0xF1, 0xF2, 0xF3, 0xF4,
    0xF5, 0xF6, 0xF7, 0xF8, 0xF9, 0xFA,
)


def _zigzag_order():
    # zigzag position -> natural index
    idx = sorted(((r, c) for r in range(8) for c in range(8)),
                 key=lambda rc: (rc[0] + rc[1], rc[1] if (rc[0] + rc[1]) % 2 == 0 else rc[0]))
    return np.array([r * 8 + c for r, c in idx])


ZIGZAG = _zigzag_order()


@dataclass(frozen=True)
class Bitstream:
    data: bytes
    quality: int
    coded_dims: tuple[int, int]
    original_dims: tuple[int, int] | None = None

    def __post_init__(self):
        if not self.data:
            raise ValueError("empty bitstream")


# 8-bit bridge

def quantize8(img) -> np.ndarray:
    """Clamp to [0, 1], scale by 255, round half away from zero."""
    x = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0
    return np.floor(x + 0.5).astype(np.uint8)


def dequantize8(raster) -> np.ndarray:
    return np.asarray(raster, dtype=np.float64) / 255.0


# Quantization tables

def quality_scale(quality: int) -> int:
    _check_quality(quality)
    return 5000 // quality if quality < 50 else 200 - 2 * quality


def quantization_table(quality: int) -> np.ndarray:
    """Annex K luminance table scaled the conventional (IJG) way, 8x8."""
    scale = quality_scale(quality)
    return np.clip((BASE_LUMA_TABLE * scale + 50) // 100, 1, 255)


def _check_quality(quality):
    if not isinstance(quality, (int, np.integer)) or not 1 <= quality <= 100:
        raise ValueError(f"JPEG quality must be an integer in [1, 100], got {quality!r}")


# Huffman coding

def _canonical_codes(bits, vals):
    """symbol -> (code, length) per Annex C."""
    codes = {}
    code = 0
    k = 0
    for length in range(1, 17):
        for _ in range(bits[length - 1]):
            codes[vals[k]] = (code, length)
            code += 1
            k += 1
        code <<= 1
    return codes


def _lookup_table(bits, vals):
    """16-bit peek -> (length, symbol); (0, None) marks an invalid code."""
    table = [(0, None)] * 65536
    for sym, (code, length) in _canonical_codes(bits, vals).items():
        start = code << (16 - length)
        span = 1 << (16 - length)
        table[start:start + span] = [(length, sym)] * span
    return table


DC_CODES = _canonical_codes(DC_BITS, DC_VALS)
AC_CODES = _canonical_codes(AC_BITS, AC_VALS)


class _BitWriter:
    def __init__(self):
        self.out = bytearray()
        self.acc = 0
        self.n = 0

    def write(self, value, length):
        self.acc = (self.acc << length) | (value & ((1 << length) - 1))
        self.n += length
        while self.n >= 8:
            self.n -= 8
            byte = (self.acc >> self.n) & 0xFF
            self.out.append(byte)
            if byte == 0xFF:
                self.out.append(0x00)
        self.acc &= (1 << self.n) - 1

    def flush(self):
        if self.n:
            self.write((1 << (8 - self.n)) - 1, 8 - self.n)
        return bytes(self.out)


def _magnitude(v):
    s = abs(v).bit_length()
    return s, (v if v >= 0 else v + (1 << s) - 1)


def _segment(marker, payload):
    return struct.pack(">BBH", 0xFF, marker, len(payload) + 2) + payload


def _dht(tc, th, bits, vals):
    return bytes([(tc << 4) | th]) + bytes(bits) + bytes(vals)


# Encoder

def jpeg_encode(raster, quality: int, original_dims=None) -> Bitstream:
    """Baseline sequential grayscale JPEG of an 8-bit raster."""
    _check_quality(quality)
    raster = np.asarray(raster)
    if raster.ndim != 2 or raster.size == 0:
        raise ValueError(f"expected a non-empty 2-D raster, got shape {raster.shape}")
    if raster.dtype != np.uint8:
        raise TypeError(f"expected a uint8 raster, got {raster.dtype}")
    h, w = raster.shape
    table = quantization_table(quality)

    ph, pw = -h % 8, -w % 8
    padded = np.pad(raster, ((0, ph), (0, pw)), mode="edge").astype(np.float64) - 128.0
    bh, bw = padded.shape[0] // 8, padded.shape[1] // 8
    blocks = padded.reshape(bh, 8, bw, 8).transpose(0, 2, 1, 3)
    coef = dctn(blocks, axes=(2, 3), norm="ortho") / table
    quant = (np.sign(coef) * np.floor(np.abs(coef) + 0.5)).astype(np.int64)
    zz = quant.reshape(bh * bw, 64)[:, ZIGZAG]

    bw_ = _BitWriter()
    pred = 0
    for block in zz.tolist():
        diff = block[0] - pred
        pred = block[0]
        s, bits = _magnitude(diff)
        code, length = DC_CODES[s]
        bw_.write(code, length)
        if s:
            bw_.write(bits, s)
        run = 0
        last = 63
        while last > 0 and block[last] == 0:
            last -= 1
        for k in range(1, last + 1):
            v = block[k]
            if v == 0:
                run += 1
                continue
            while run > 15:
                code, length = AC_CODES[0xF0]
                bw_.write(code, length)
                run -= 16
            s, bits = _magnitude(v)
            code, length = AC_CODES[(run << 4) | s]
            bw_.write(code, length)
            bw_.write(bits, s)
            run = 0
        if last < 63:
            code, length = AC_CODES[0x00]
            bw_.write(code, length)
    scan = bw_.flush()

    out = bytearray(b"\xFF\xD8")
    out += _segment(0xE0, b"JFIF\x00\x01\x01\x00\x00\x01\x00\x01\x00\x00")
    out += _segment(0xDB, bytes([0]) + bytes(table.ravel()[ZIGZAG].tolist()))
    out += _segment(0xC0, struct.pack(">BHHB", 8, h, w, 1) + bytes([1, 0x11, 0]))
    out += _segment(0xC4, _dht(0, 0, DC_BITS, DC_VALS) + _dht(1, 0, AC_BITS, AC_VALS))
    out += _segment(0xDA, bytes([1, 1, 0x00, 0, 63, 0]))
    out += scan
    out += b"\xFF\xD9"
    if original_dims is not None:
        original_dims = (int(original_dims[0]), int(original_dims[1]))
    return Bitstream(bytes(out), int(quality), (h, w), original_dims)


# Decoder

@dataclass
class JpegHeader:
    height: int
    width: int
    qtables: dict
    dc_tables: dict
    ac_tables: dict
    restart_interval: int
    component_tables: tuple[int, int, int]
    scan_start: int


def _parse(data: bytes) -> JpegHeader:
    if data[:2] != b"\xFF\xD8":
        raise CorruptStreamError("missing SOI marker")
    pos = 2
    qtables, dc, ac = {}, {}, {}
    restart = 0
    frame = None
    while True:
        while pos < len(data) and data[pos] == 0xFF and data[pos + 1] == 0xFF:
            pos += 1  # fill bytes
        if pos + 4 > len(data) or data[pos] != 0xFF:
            raise CorruptStreamError(f"expected a marker at byte {pos}")
        marker = data[pos + 1]
        (length,) = struct.unpack(">H", data[pos + 2:pos + 4])
        body = data[pos + 4:pos + 2 + length]
        if len(body) != length - 2:
            raise CorruptStreamError("truncated segment")
        pos += 2 + length
        if marker == 0xDB:
            i = 0
            while i < len(body):
                pq, tq = body[i] >> 4, body[i] & 15
                if pq == 0:
                    vals = np.frombuffer(body[i + 1:i + 65], dtype=np.uint8).astype(np.int64)
                    i += 65
                else:
                    vals = np.frombuffer(body[i + 1:i + 129], dtype=">u2").astype(np.int64)
                    i += 129
                if vals.size != 64:
                    raise CorruptStreamError("truncated quantization table")
                natural = np.empty(64, dtype=np.int64)
                natural[ZIGZAG] = vals
                qtables[tq] = natural.reshape(8, 8)
        elif marker == 0xC4:
            i = 0
            while i < len(body):
                tc, th = body[i] >> 4, body[i] & 15
                bits = tuple(body[i + 1:i + 17])
                n = sum(bits)
                vals = tuple(body[i + 17:i + 17 + n])
                if len(bits) != 16 or len(vals) != n:
                    raise CorruptStreamError("truncated Huffman table")
                (dc if tc == 0 else ac)[th] = _lookup_table(bits, vals)
                i += 17 + n
        elif marker in (0xC0, 0xC1):
            precision, h, w, nc = struct.unpack(">BHHB", body[:6])
            if precision != 8:
                raise CorruptStreamError(f"unsupported sample precision {precision}")
            if nc != 1:
                raise CorruptStreamError(f"only grayscale streams are supported, got {nc} components")
            if h == 0 or w == 0:
                raise CorruptStreamError("zero image dimension")
            frame = (h, w, body[6], body[8])
        elif 0xC2 <= marker <= 0xCF and marker not in (0xC4, 0xC8, 0xCC):
            raise CorruptStreamError(f"unsupported JPEG process (SOF marker 0x{marker:02X})")
        elif marker == 0xDD:
            (restart,) = struct.unpack(">H", body[:2])
        elif marker == 0xDA:
            if frame is None:
                raise CorruptStreamError("scan before frame header")
            if body[0] != 1 or body[1] != frame[2]:
                raise CorruptStreamError("scan component does not match frame")
            td, ta = body[2] >> 4, body[2] & 15
            return JpegHeader(frame[0], frame[1], qtables, dc, ac, restart,
                              (frame[3], td, ta), pos)
        elif marker == 0xD9:
            raise CorruptStreamError("EOI before any scan")
        # APPn, COM and anything else: skip


def read_header(data: bytes) -> JpegHeader:
    try:
        return _parse(data)
    except CorruptStreamError:
        raise
    except (IndexError, struct.error, ValueError) as exc:
        raise CorruptStreamError(f"malformed JPEG header: {exc}") from exc


def _scan_segments(data, start):
    """Entropy-coded bytes split at RST markers, with 0xFF00 unstuffed."""
    segments = []
    cur = bytearray()
    i = start
    n = len(data)
    while i < n:
        b = data[i]
        if b != 0xFF:
            cur.append(b)
            i += 1
            continue
        if i + 1 >= n:
            break
        nxt = data[i + 1]
        if nxt == 0x00:
            cur.append(0xFF)
            i += 2
        elif 0xD0 <= nxt <= 0xD7:
            segments.append(bytes(cur))
            cur = bytearray()
            i += 2
        elif nxt == 0xFF:
            i += 1
        else:
            break  # EOI or another marker ends the scan
    segments.append(bytes(cur))
    return segments


def _decode_blocks(header: JpegHeader, data: bytes) -> np.ndarray:
    tq, td, ta = header.component_tables
    try:
        dc_lut, ac_lut = header.dc_tables[td], header.ac_tables[ta]
    except KeyError as exc:
        raise CorruptStreamError(f"missing Huffman table {exc}") from exc
    bh, bw = -(-header.height // 8), -(-header.width // 8)
    total = bh * bw
    coefs = np.zeros((total, 64), dtype=np.int64)
    interval = header.restart_interval or total
    segments = _scan_segments(data, header.scan_start)
    block = 0
    for seg in segments:
        if block >= total:
            break
        bits = "".join(map("{:08b}".format, seg)) + "1" * 32
        limit = len(seg) * 8
        pos = 0
        pred = 0
        for _ in range(min(interval, total - block)):
            length, s = dc_lut[int(bits[pos:pos + 16], 2)]
            if s is None:
                raise CorruptStreamError(f"invalid DC code in block {block}")
            pos += length
            diff = 0
            if s:
                diff = int(bits[pos:pos + s], 2)
                if diff < (1 << (s - 1)):
                    diff -= (1 << s) - 1
                pos += s
            pred += diff
            row = coefs[block]
            row[0] = pred
            k = 1
            while k < 64:
                length, rs = ac_lut[int(bits[pos:pos + 16], 2)]
                if rs is None:
                    raise CorruptStreamError(f"invalid AC code in block {block}")
                pos += length
                r, s = rs >> 4, rs & 15
                if s == 0:
                    if r != 15:
                        break
                    k += 16
                    continue
                k += r
                if k > 63:
                    raise CorruptStreamError(f"AC run overflow in block {block}")
                v = int(bits[pos:pos + s], 2)
                if v < (1 << (s - 1)):
                    v -= (1 << s) - 1
                pos += s
                row[k] = v
                k += 1
            if pos > limit:
                raise CorruptStreamError("entropy-coded data ended early")
            block += 1
    if block < total:
        raise CorruptStreamError(f"stream holds {block} of {total} blocks")
    try:
        table = header.qtables[tq]
    except KeyError as exc:
        raise CorruptStreamError(f"missing quantization table {tq}") from exc
    natural = np.empty_like(coefs)
    natural[:, ZIGZAG] = coefs
    deq = natural.reshape(bh, bw, 8, 8) * table
    pix = idctn(deq.astype(np.float64), axes=(2, 3), norm="ortho") + 128.0
    pix = np.clip(np.floor(pix + 0.5), 0, 255).astype(np.uint8)
    full = pix.transpose(0, 2, 1, 3).reshape(bh * 8, bw * 8)
    return full[:header.height, :header.width]


def decode_raster(data: bytes) -> np.ndarray:
    """Decode JPEG bytes to a uint8 raster."""
    header = read_header(data)
    try:
        return _decode_blocks(header, data)
    except CorruptStreamError:
        raise
    except (IndexError, ValueError) as exc:
        raise CorruptStreamError(f"corrupt entropy-coded data: {exc}") from exc


def jpeg_decode(bs: Bitstream) -> np.ndarray:
    """Decode to intensities in [0, 1] with the stream's coded dimensions."""
    raster = decode_raster(bs.data)
    if raster.shape != tuple(bs.coded_dims):
        raise CorruptStreamError(
            f"stream decodes to {raster.shape}, metadata says {tuple(bs.coded_dims)}")
    return dequantize8(raster)


def jpeg_roundtrip(img, quality: int) -> tuple[np.ndarray, Bitstream]:
    """g(Y): quantize to 8 bits, encode, decode. Returns (decoded, stream)."""
    bs = jpeg_encode(quantize8(img), quality)
    return jpeg_decode(bs), bs


# Rate

def bpp(bs: Bitstream, area: str = "original") -> float:
    """Bits per pixel of the whole file (headers included).

    The default divides by the original (full-resolution) pixel count;
    ``area="coded"`` divides by the coded raster instead.
    """
    if area == "original":
        if bs.original_dims is None:
            raise ValueError("bitstream has no original dimensions")
        m, n = bs.original_dims
    elif area == "coded":
        m, n = bs.coded_dims
    else:
        raise ValueError(f"unknown bpp area {area!r}")
    if m * n <= 0:
        raise ValueError("zero-area dimensions")
    return 8.0 * len(bs.data) / (m * n)


# Files: .jpg plus a JSON sidecar carrying quality and dimensions

def sidecar_path(jpg_path) -> Path:
    return Path(jpg_path).with_suffix(".sidecar.json")


def write_bitstream(jpg_path, bs: Bitstream) -> Path:
    jpg_path = Path(jpg_path)
    jpg_path.write_bytes(bs.data)
    meta = {
        "format": SIDECAR_FORMAT,
        "version": SIDECAR_VERSION,
        "quality": bs.quality,
        "coded_dims": list(bs.coded_dims),
        "original_dims": list(bs.original_dims) if bs.original_dims else None,
    }
    side = sidecar_path(jpg_path)
    side.write_text(json.dumps(meta, indent=2) + "\n")
    return side


def read_bitstream(jpg_path) -> Bitstream:
    jpg_path = Path(jpg_path)
    data = jpg_path.read_bytes()
    side = sidecar_path(jpg_path)
    try:
        meta = json.loads(side.read_text())
    except FileNotFoundError as exc:
        raise SidecarError(f"missing sidecar {side}") from exc
    except json.JSONDecodeError as exc:
        raise SidecarError(f"unreadable sidecar {side}: {exc}") from exc
    if meta.get("format") != SIDECAR_FORMAT or meta.get("version") != SIDECAR_VERSION:
        raise SidecarError(f"unsupported sidecar format in {side}")
    header = read_header(data)
    coded = tuple(meta["coded_dims"])
    if (header.height, header.width) != coded:
        raise SidecarError(
            f"sidecar says {coded}, stream is {(header.height, header.width)}")
    orig = meta.get("original_dims")
    return Bitstream(data, int(meta["quality"]), coded, tuple(orig) if orig else None)
