"""Minimal deterministic image I/O: 8/16-bit PNG and 32-bit float PFM.

Both codecs are self-contained (zlib + struct only) so that byte-identical
output is guaranteed for identical input, which the reproducibility tests
rely on. The PNG writer always emits filter type 0 scanlines; the reader
handles all five standard filters so externally produced files load too.

PFM files are used for HDR data (environment maps, linear renders).
Convention: our PFM rows are written top-to-bottom with a negative scale
(little-endian), and equirectangular environment maps put the zenith on
row 0.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
_COLOR_TYPE = {1: 0, 3: 2}  # channels -> PNG color type (gray, RGB)
_CHANNELS = {0: 1, 2: 3}


def _chunk(tag: bytes, payload: bytes) -> bytes:
    return (
        struct.pack(">I", len(payload))
        + tag
        + payload
        + struct.pack(">I", zlib.crc32(tag + payload) & 0xFFFFFFFF)
    )


def write_png(path, image: np.ndarray) -> None:
    """Write a (H, W) or (H, W, C) uint8/uint16 array as a PNG file.

    C must be 1 or 3. uint16 data is stored at 16 bits per channel.
    """
    image = np.asarray(image)
    if image.ndim == 2:
        image = image[:, :, None]
    if image.ndim != 3 or image.shape[2] not in (1, 3):
        raise ValueError(f"expected (H, W) or (H, W, 1|3) image, got shape {image.shape}")
    if image.dtype == np.uint8:
        depth = 8
    elif image.dtype == np.uint16:
        depth = 16
    else:
        raise ValueError(f"expected uint8 or uint16 pixels, got {image.dtype}")
    h, w, c = image.shape
    header = struct.pack(">IIBBBBB", w, h, depth, _COLOR_TYPE[c], 0, 0, 0)
    raw = image.astype(">u2" if depth == 16 else "u1").tobytes()
    stride = w * c * (depth // 8)
    scanlines = b"".join(
        b"\x00" + raw[y * stride : (y + 1) * stride] for y in range(h)
    )
    data = zlib.compress(scanlines, 6)
    with open(path, "wb") as f:
        f.write(_PNG_SIGNATURE)
        f.write(_chunk(b"IHDR", header))
        f.write(_chunk(b"IDAT", data))
        f.write(_chunk(b"IEND", b""))


def _unfilter(scanlines: bytes, h: int, stride: int, bpp: int) -> bytearray:
    out = bytearray(h * stride)
    pos = 0
    for y in range(h):
        ftype = scanlines[pos]
        pos += 1
        line = bytearray(scanlines[pos : pos + stride])
        pos += stride
        prev = out[(y - 1) * stride : y * stride] if y > 0 else bytes(stride)
        if ftype == 1:  # Sub
            for i in range(bpp, stride):
                line[i] = (line[i] + line[i - bpp]) & 0xFF
        elif ftype == 2:  # Up
            for i in range(stride):
                line[i] = (line[i] + prev[i]) & 0xFF
        elif ftype == 3:  # Average
            for i in range(stride):
                a = line[i - bpp] if i >= bpp else 0
                line[i] = (line[i] + ((a + prev[i]) >> 1)) & 0xFF
        elif ftype == 4:  # Paeth
            for i in range(stride):
                a = line[i - bpp] if i >= bpp else 0
                b = prev[i]
                cc = prev[i - bpp] if i >= bpp else 0
                p = a + b - cc
                pa, pb, pc = abs(p - a), abs(p - b), abs(p - cc)
                pred = a if (pa <= pb and pa <= pc) else (b if pb <= pc else cc)
                line[i] = (line[i] + pred) & 0xFF
        elif ftype != 0:
            raise ValueError(f"unsupported PNG filter type {ftype}")
        out[y * stride : (y + 1) * stride] = line
    return out


def read_png(path) -> np.ndarray:
    """Read a gray or RGB PNG at 8 or 16 bits; returns uint8/uint16 (H, W[, 3])."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:8] != _PNG_SIGNATURE:
        raise ValueError(f"{path}: not a PNG file")
    pos = 8
    idat = b""
    header = None
    while pos < len(blob):
        (length,) = struct.unpack(">I", blob[pos : pos + 4])
        tag = blob[pos + 4 : pos + 8]
        payload = blob[pos + 8 : pos + 8 + length]
        pos += 12 + length
        if tag == b"IHDR":
            header = struct.unpack(">IIBBBBB", payload)
        elif tag == b"IDAT":
            idat += payload
        elif tag == b"IEND":
            break
    if header is None:
        raise ValueError(f"{path}: missing IHDR chunk")
    w, h, depth, color, _, _, interlace = header
    if interlace != 0:
        raise ValueError(f"{path}: interlaced PNG not supported")
    if color not in _CHANNELS or depth not in (8, 16):
        raise ValueError(f"{path}: unsupported PNG layout (color {color}, depth {depth})")
    c = _CHANNELS[color]
    bpp = c * depth // 8
    stride = w * bpp
    raw = _unfilter(zlib.decompress(idat), h, stride, bpp)
    dtype = ">u2" if depth == 16 else "u1"
    arr = np.frombuffer(bytes(raw), dtype=dtype).reshape(h, w, c)
    arr = arr.astype(np.uint16 if depth == 16 else np.uint8)
    return arr[:, :, 0] if c == 1 else arr


def to_uint16(values: np.ndarray) -> np.ndarray:
    """Quantize [0, 1] floats to uint16 with round-to-nearest."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.round(v * 65535.0).astype(np.uint16)


def from_uint16(values: np.ndarray) -> np.ndarray:
    return np.asarray(values, dtype=np.float64) / 65535.0


def write_pfm(path, image: np.ndarray) -> None:
    """Write a (H, W) or (H, W, 3) float array as a little-endian PFM."""
    image = np.asarray(image, dtype=np.float32)
    if image.ndim == 2:
        header = b"Pf"
        data = image
    elif image.ndim == 3 and image.shape[2] == 3:
        header = b"PF"
        data = image
    else:
        raise ValueError(f"expected (H, W) or (H, W, 3), got shape {image.shape}")
    h, w = image.shape[:2]
    with open(path, "wb") as f:
        f.write(header + b"\n")
        f.write(f"{w} {h}\n".encode())
        f.write(b"-1.0\n")  # negative scale: little endian, rows top-to-bottom
        f.write(data.astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        kind = f.readline().strip()
        if kind not in (b"PF", b"Pf"):
            raise ValueError(f"{path}: not a PFM file")
        w, h = (int(tok) for tok in f.readline().split())
        scale = float(f.readline())
        count = w * h * (3 if kind == b"PF" else 1)
        data = np.frombuffer(f.read(count * 4), dtype="<f4" if scale < 0 else ">f4")
    shape = (h, w, 3) if kind == b"PF" else (h, w)
    image = data.reshape(shape).astype(np.float64)
    if scale > 0:
        # Positive scale means big-endian rows bottom-to-top.
        image = image[::-1]
    return image * abs(scale) if abs(scale) not in (0.0, 1.0) else image


def linear_to_srgb(linear: np.ndarray) -> np.ndarray:
    """sRGB transfer curve on linear values clipped to [0, 1]."""
    v = np.clip(linear, 0.0, 1.0)
    return np.where(v <= 0.0031308, 12.92 * v, 1.055 * np.power(v, 1.0 / 2.4) - 0.055)


def tonemap(hdr: np.ndarray, exposure: float = 1.0) -> np.ndarray:
    """Simple exposure + Reinhard curve mapping HDR radiance into [0, 1)."""
    v = np.maximum(hdr, 0.0) * exposure
    return v / (1.0 + v)


def luminance(rgb: np.ndarray) -> np.ndarray:
    """Rec. 709 luma of a linear RGB image."""
    rgb = np.asarray(rgb)
    return 0.2126 * rgb[..., 0] + 0.7152 * rgb[..., 1] + 0.0722 * rgb[..., 2]


def resize_bilinear(img: np.ndarray, out_res: int) -> np.ndarray:
    """Bilinear resize of a square (H, W, C) array to (out_res, out_res, C)."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    ys = (np.arange(out_res) + 0.5) * h / out_res - 0.5
    xs = (np.arange(out_res) + 0.5) * w / out_res - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    fy = np.clip(ys - y0, 0.0, 1.0)[:, None, None]
    fx = np.clip(xs - x0, 0.0, 1.0)[None, :, None]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def box_downsample2(img: np.ndarray) -> np.ndarray:
    """Average 2x2 blocks of an even-sized (H, W, C) array."""
    h, w = img.shape[:2]
    if h % 2 or w % 2:
        raise ValueError(f"box_downsample2 needs even dimensions, got {(h, w)}")
    return 0.25 * (img[0::2, 0::2] + img[0::2, 1::2] + img[1::2, 0::2] + img[1::2, 1::2])
