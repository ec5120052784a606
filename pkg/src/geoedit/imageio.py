"""Plain PGM image I/O (P2 ascii and P5 binary), 8-bit only.

Pixel values map linearly between a configurable float range and [0, 255].
The default range is [-1, 1], the convention used by every image in the
pipeline; importance heatmaps pass ``vmin=0, vmax=1`` instead.  Values
outside the range are clamped on write, so a freshly read image always
lies inside the declared range.
"""

import os

import numpy as np

from .errors import ContractError, ImageFormatError


def _quantize(img, vmin, vmax):
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise ContractError(f"expected a 2-D image, got shape {arr.shape}")
    if not vmax > vmin:
        raise ContractError(f"empty value range [{vmin}, {vmax}]")
    scaled = (np.clip(arr, vmin, vmax) - vmin) * (255.0 / (vmax - vmin))
    return np.rint(scaled).astype(np.uint8)


def encode_pgm(img, vmin=-1.0, vmax=1.0, binary=True) -> bytes:
    """Serialize a 2-D float image to P5 (binary) or P2 (ascii) PGM bytes."""
    pixels = _quantize(img, vmin, vmax)
    h, w = pixels.shape
    if binary:
        return f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()
    lines = "\n".join(" ".join(str(v) for v in row) for row in pixels)
    return f"P2\n{w} {h}\n255\n".encode("ascii") + lines.encode("ascii") + b"\n"


def write_pgm(path, img, vmin=-1.0, vmax=1.0, binary=True):
    """Write a 2-D float image as P5 (binary) or P2 (ascii) PGM.

    The write is atomic: a temp file in the same directory is renamed over
    the target, so a crashed run never leaves a half-written image.
    """
    payload = encode_pgm(img, vmin, vmax, binary)
    tmp = f"{path}.tmp.{os.getpid()}"
    try:
        with open(tmp, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_tokens(data, count, pos):
    """Pull `count` whitespace-separated header tokens, skipping # comments."""
    tokens = []
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos >= n:
            raise ImageFormatError("truncated PGM header")
        if data[pos : pos + 1] == b"#":
            eol = data.find(b"\n", pos)
            if eol == -1:
                raise ImageFormatError("truncated PGM header")
            pos = eol + 1
            continue
        start = pos
        while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        tokens.append(data[start:pos])
    return tokens, pos


def read_pgm(path, vmin=-1.0, vmax=1.0):
    """Read a P2/P5 PGM into a float image over [vmin, vmax]."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] not in (b"P2", b"P5"):
        raise ImageFormatError(f"not a PGM file (magic {data[:2]!r}): {path}")
    magic = data[:2]
    fields, pos = _read_tokens(data, 3, 2)
    try:
        w, h, maxval = (int(tok) for tok in fields)
    except ValueError:
        raise ImageFormatError(f"non-integer PGM header fields in {path}") from None
    if w <= 0 or h <= 0:
        raise ImageFormatError(f"bad PGM dimensions {w}x{h} in {path}")
    if not 0 < maxval <= 255:
        raise ImageFormatError(f"unsupported PGM maxval {maxval} in {path} (8-bit only)")
    if magic == b"P5":
        pos += 1  # single whitespace byte after maxval
        raster = data[pos : pos + w * h]
        if len(raster) < w * h:
            raise ImageFormatError(f"truncated P5 raster in {path}")
        pixels = np.frombuffer(raster, dtype=np.uint8).astype(np.float64)
    else:
        try:
            values = [int(tok) for tok in data[pos:].split()]
        except ValueError:
            raise ImageFormatError(f"non-integer P2 pixel in {path}") from None
        if len(values) < w * h:
            raise ImageFormatError(f"truncated P2 raster in {path}")
        pixels = np.asarray(values[: w * h], dtype=np.float64)
    if pixels.max(initial=0.0) > maxval:
        raise ImageFormatError(f"pixel exceeds declared maxval {maxval} in {path}")
    img = pixels.reshape(h, w) * ((vmax - vmin) / maxval) + vmin
    return img
