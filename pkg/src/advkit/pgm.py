"""Binary PGM (P5) reading and writing for grayscale image export.

Images are unit-range floats in memory; files hold one byte per pixel with
maxval 255 (value = round(pixel * 255)).
"""

import numpy as np

from .errors import FormatError, InputError


def write_pgm(path, image) -> None:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise InputError(f"PGM export needs a 2-D image, got shape {image.shape}")
    h, w = image.shape
    data = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (magic {raw[:2]!r})", offset=0)
    # header: magic, width, height, maxval separated by whitespace;
    # '#' comments run to end of line
    fields, pos = [], 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PGM header", offset=pos)
        fields.append(raw[start:pos])
    pos += 1  # single whitespace byte after maxval
    try:
        w, h, maxval = (int(f) for f in fields)
    except ValueError:
        raise FormatError(f"{path}: non-numeric PGM header fields", offset=2)
    if maxval != 255:
        raise FormatError(f"{path}: unsupported maxval {maxval}", offset=pos)
    if len(raw) - pos < w * h:
        raise FormatError(f"{path}: payload holds {len(raw) - pos} bytes, "
                          f"expected {w * h}", offset=pos)
    data = np.frombuffer(raw, dtype=np.uint8, count=w * h, offset=pos)
    return data.reshape(h, w).astype(np.float64) / 255.0
