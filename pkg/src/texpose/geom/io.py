"""Mesh and image file I/O: ASCII OBJ subset, PNG, PFM."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image


def save_obj(path, vertices: np.ndarray, triangles: np.ndarray) -> None:
    lines = []
    for v in vertices:
        lines.append(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}")
    for f in triangles:
        lines.append(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_obj(path):
    """Parse v/f records; faces may carry /vt/vn suffixes and are fan-triangulated."""
    verts, tris = [], []
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
            for k in range(1, len(idx) - 1):
                tris.append([idx[0], idx[k], idx[k + 1]])
    return np.asarray(verts, dtype=np.float64), np.asarray(tris, dtype=np.int64)


def save_png(path, image: np.ndarray) -> None:
    """Save HxW (grey) or HxWx3 float [0,1] or uint8 image."""
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        arr = (np.clip(arr, 0.0, 1.0) * 255.0).round().astype(np.uint8)
    Image.fromarray(arr).save(Path(path), format="PNG")


def load_png(path) -> np.ndarray:
    arr = np.asarray(Image.open(Path(path)))
    return arr.astype(np.float64) / 255.0


def save_pfm(path, depth: np.ndarray) -> None:
    """Greyscale PFM, little-endian float32, bottom row first per the format."""
    d = np.asarray(depth, dtype=np.float32)
    if d.ndim != 2:
        raise ValueError("PFM export expects an HxW depth map")
    with open(path, "wb") as fh:
        fh.write(b"Pf\n")
        fh.write(f"{d.shape[1]} {d.shape[0]}\n".encode())
        fh.write(b"-1.0\n")
        fh.write(np.flipud(d).astype("<f4").tobytes())


def load_pfm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    header, rest = data.split(b"\n", 1)
    if header != b"Pf":
        raise ValueError("only greyscale Pf files are supported")
    dims, rest = rest.split(b"\n", 1)
    scale_line, rest = rest.split(b"\n", 1)
    w, h = (int(x) for x in dims.split())
    scale = float(scale_line)
    dtype = "<f4" if scale < 0 else ">f4"
    img = np.frombuffer(rest, dtype=dtype, count=w * h).reshape(h, w)
    return np.flipud(img).astype(np.float64)
