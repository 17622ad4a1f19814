"""Binary PPM / PGM image files.

Color renders go out as P6 (8-bit, sRGB-encoded, clamped). Label images are
P5 with maxval 65535, big-endian 16-bit samples, with a JSON sidecar mapping
instance id -> class.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


def _read_header(data: bytes, magic: bytes):
    """Parse a PNM header, skipping comments; returns (fields, offset)."""
    if not data.startswith(magic):
        raise ValueError(f"expected {magic!r} file")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos] in b" \t\r\n":
            pos += 1
        if data[pos:pos + 1] == b"#":
            while data[pos] not in b"\r\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and data[pos] not in b" \t\r\n":
            pos += 1
        fields.append(int(data[start:pos]))
    return fields, pos + 1  # single whitespace after maxval


def _srgb_encode(linear: np.ndarray) -> np.ndarray:
    x = np.clip(linear, 0.0, 1.0)
    return np.where(x <= 0.0031308, 12.92 * x,
                    1.055 * np.power(x, 1 / 2.4) - 0.055)


def _srgb_decode(encoded: np.ndarray) -> np.ndarray:
    x = np.clip(encoded, 0.0, 1.0)
    return np.where(x <= 0.04045, x / 12.92, np.power((x + 0.055) / 1.055, 2.4))


def write_ppm(path, rgb: np.ndarray) -> None:
    """Write an (H, W, 3) linear-[0,1] image as binary P6, sRGB, 8-bit."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError("expected an (H, W, 3) image")
    h, w = rgb.shape[:2]
    payload = (np.round(_srgb_encode(rgb) * 255.0).astype(np.uint8)).tobytes()
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + payload)


def read_ppm(path) -> np.ndarray:
    """Read a binary P6 file back to a linear-[0,1] (H, W, 3) array."""
    data = Path(path).read_bytes()
    (w, h, maxval), off = _read_header(data, b"P6")
    if maxval != 255:
        raise ValueError("only 8-bit P6 supported")
    raw = np.frombuffer(data, dtype=np.uint8, count=h * w * 3, offset=off)
    return _srgb_decode(raw.reshape(h, w, 3).astype(np.float64) / 255.0)


def write_label_pgm(path, ids: np.ndarray, id_to_class=None) -> None:
    """Write an (H, W) uint16 id map as P5 maxval 65535 (big-endian), with
    an optional {id: class} JSON sidecar at <path>.json."""
    ids = np.asarray(ids)
    if ids.ndim != 2:
        raise ValueError("expected an (H, W) id map")
    h, w = ids.shape
    payload = ids.astype(">u2").tobytes()
    path = Path(path)
    path.write_bytes(b"P5\n%d %d\n65535\n" % (w, h) + payload)
    if id_to_class is not None:
        sidecar = {str(int(k)): int(v) for k, v in id_to_class.items()}
        path.with_suffix(path.suffix + ".json").write_text(
            json.dumps(sidecar, indent=2, sort_keys=True))


def read_label_pgm(path, with_classes: bool = False):
    """Read a 16-bit P5 id map; optionally its {id: class} sidecar."""
    path = Path(path)
    data = path.read_bytes()
    (w, h, maxval), off = _read_header(data, b"P5")
    if maxval != 65535:
        raise ValueError("label images must be 16-bit (maxval 65535)")
    ids = np.frombuffer(data, dtype=">u2", count=h * w, offset=off)
    ids = ids.reshape(h, w).astype(np.uint16)
    if not with_classes:
        return ids
    sidecar_path = path.with_suffix(path.suffix + ".json")
    id_to_class = {}
    if sidecar_path.exists():
        id_to_class = {int(k): int(v)
                       for k, v in json.loads(sidecar_path.read_text()).items()}
    return ids, id_to_class
