"""Minimal 8-bit grayscale / RGB PNG reader and writer.

Writes use filter type 0 and a fixed zlib level so output bytes are a pure
function of the pixels. Reads accept all five filter types but only
non-interlaced 8-bit grayscale or RGB images.
"""

import struct
import zlib

import numpy as np

SIGNATURE = b"\x89PNG\r\n\x1a\n"
_CHANNELS = {0: 1, 2: 3}


class PNGError(ValueError):
    pass


def _chunk(tag, data):
    crc = zlib.crc32(data, zlib.crc32(tag)) & 0xFFFFFFFF
    return struct.pack(">I", len(data)) + tag + data + struct.pack(">I", crc)


def encode_png(pixels):
    """Bytes of a PNG for a uint8 array shaped (H, W) or (H, W, 3)."""
    a = np.asarray(pixels)
    if a.dtype != np.uint8:
        raise PNGError(f"expected uint8 pixels, got {a.dtype}")
    if a.ndim == 2:
        color_type = 0
    elif a.ndim == 3 and a.shape[2] == 3:
        color_type = 2
    else:
        raise PNGError(f"unsupported pixel array shape {a.shape}")
    h, w = a.shape[:2]
    rows = a.reshape(h, -1)
    raw = np.zeros((h, rows.shape[1] + 1), dtype=np.uint8)
    raw[:, 1:] = rows
    header = struct.pack(">IIBBBBB", w, h, 8, color_type, 0, 0, 0)
    return (SIGNATURE + _chunk(b"IHDR", header)
            + _chunk(b"IDAT", zlib.compress(raw.tobytes(), 9)) + _chunk(b"IEND", b""))


def _paeth(a, b, c):
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    return b if pb <= pc else c


def _unfilter(data, h, stride, bpp):
    out = np.zeros((h, stride), dtype=np.uint8)
    prev = np.zeros(stride, dtype=np.int64)
    pos = 0
    for y in range(h):
        ftype = data[pos]
        line = np.frombuffer(data, dtype=np.uint8, count=stride, offset=pos + 1).astype(np.int64)
        pos += stride + 1
        if ftype == 0:
            cur = line
        elif ftype == 1:
            cur = line.copy()
            for x in range(bpp, stride):
                cur[x] = (cur[x] + cur[x - bpp]) & 0xFF
        elif ftype == 2:
            cur = (line + prev) & 0xFF
        elif ftype == 3:
            cur = line.copy()
            for x in range(stride):
                left = cur[x - bpp] if x >= bpp else 0
                cur[x] = (cur[x] + ((left + prev[x]) >> 1)) & 0xFF
        elif ftype == 4:
            cur = line.copy()
            for x in range(stride):
                left = cur[x - bpp] if x >= bpp else 0
                upleft = prev[x - bpp] if x >= bpp else 0
                cur[x] = (cur[x] + _paeth(left, prev[x], upleft)) & 0xFF
        else:
            raise PNGError(f"bad filter type {ftype} on row {y}")
        out[y] = cur
        prev = cur
    return out


def decode_png(blob):
    """uint8 array (H, W) or (H, W, 3) from PNG bytes."""
    if blob[:8] != SIGNATURE:
        raise PNGError("not a PNG file")
    pos = 8
    header = None
    idat = []
    while pos < len(blob):
        if pos + 8 > len(blob):
            raise PNGError("truncated chunk header")
        (length,) = struct.unpack(">I", blob[pos:pos + 4])
        tag = blob[pos + 4:pos + 8]
        data = blob[pos + 8:pos + 8 + length]
        (crc,) = struct.unpack(">I", blob[pos + 8 + length:pos + 12 + length])
        if zlib.crc32(data, zlib.crc32(tag)) & 0xFFFFFFFF != crc:
            raise PNGError(f"CRC mismatch in {tag!r} chunk")
        pos += 12 + length
        if tag == b"IHDR":
            header = struct.unpack(">IIBBBBB", data)
        elif tag == b"IDAT":
            idat.append(data)
        elif tag == b"IEND":
            break
    if header is None:
        raise PNGError("missing IHDR")
    w, h, depth, color_type, _, _, interlace = header
    if depth != 8:
        raise PNGError(f"unsupported bit depth {depth} (only 8-bit)")
    if color_type not in _CHANNELS:
        raise PNGError(f"unsupported color type {color_type} (only grayscale or RGB, no palette/alpha)")
    if interlace:
        raise PNGError("interlaced PNGs are not supported")
    ch = _CHANNELS[color_type]
    raw = zlib.decompress(b"".join(idat))
    if len(raw) != h * (w * ch + 1):
        raise PNGError("image data length does not match the header")
    rows = _unfilter(raw, h, w * ch, ch)
    return rows.reshape(h, w, ch) if ch == 3 else rows.reshape(h, w)


def to_uint8(values):
    """Quantize [0, 1] floats to uint8 (round half to even, clamped)."""
    return np.clip(np.rint(np.asarray(values, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def save_png(path, image, channels_last=False):
    """Save a float image ``[3,H,W]`` (or ``[H,W,3]`` with ``channels_last``) or a mask ``[H,W]``.

    Values are in [0,1]. The layout is never guessed from the shape, since
    ``[3,H,3]`` would be ambiguous.
    """
    a = np.asarray(image, dtype=np.float64)
    if a.ndim == 3 and not channels_last:
        if a.shape[0] != 3:
            raise PNGError(f"expected a [3,H,W] image, got shape {a.shape}")
        a = a.transpose(1, 2, 0)
    with open(path, "wb") as fh:
        fh.write(encode_png(to_uint8(a)))


def save_png_uint8(path, pixels):
    with open(path, "wb") as fh:
        fh.write(encode_png(np.asarray(pixels, dtype=np.uint8)))


def load_png(path, raw=False):
    """Float image ``[3,H,W]`` or mask ``[H,W]`` in [0,1]; ``raw=True`` keeps uint8 HxW(x3)."""
    with open(path, "rb") as fh:
        a = decode_png(fh.read())
    if raw:
        return a
    f = a.astype(np.float64) / 255.0
    return f.transpose(2, 0, 1) if f.ndim == 3 else f
