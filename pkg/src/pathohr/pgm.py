"""Binary PGM ("P5") image I/O, 8-bit grayscale, maxval 255.

Slides come in and masks go out through this format; writes are byte-exact
(canonical header, raw row-major payload) so pipeline re-runs are
bit-identical.
"""

from __future__ import annotations

import numpy as np

from .errors import FormatError


def write_pgm(path, image: np.ndarray) -> None:
    """Write a 2-D uint8 array as binary PGM with a canonical header."""
    image = np.asarray(image)
    if image.ndim != 2:
        raise FormatError("PGM payload must be a 2-D grayscale array")
    if image.dtype != np.uint8:
        if image.min() < 0 or image.max() > 255:
            raise FormatError("pixel values outside [0, 255]")
        image = image.astype(np.uint8)
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(image.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM; returns a (height, width) uint8 array.

    Accepts standard whitespace/comment variations in the header but
    requires magic "P5" and maxval 255.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:2] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (bad magic)")

    # header = magic + 3 whitespace-separated integers, '#' comments allowed
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PGM header")
        try:
            fields.append(int(blob[start:pos]))
        except ValueError as exc:
            raise FormatError(f"{path}: malformed PGM header") from exc
    pos += 1  # single whitespace byte after maxval

    width, height, maxval = fields
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 supported (got {maxval})")
    if width <= 0 or height <= 0:
        raise FormatError(f"{path}: invalid dimensions {width}x{height}")
    payload = blob[pos : pos + width * height]
    if len(payload) != width * height:
        raise FormatError(f"{path}: truncated pixel payload")
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width).copy()
