"""Dependency-free binary PPM (P6) rendering of signature graphs."""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .sggraph import SignatureGraph

RED = (255, 0, 0)
GREEN = (0, 255, 0)


def to_gray(map2d: np.ndarray) -> np.ndarray:
    """Min-max scale a map to uint8 (a constant map renders black)."""
    m = np.asarray(map2d, dtype=np.float64)
    lo, hi = m.min(), m.max()
    if hi <= lo:
        return np.zeros(m.shape, dtype=np.uint8)
    return np.rint((m - lo) / (hi - lo) * 255).astype(np.uint8)


def _line(y0, x0, y1, x1):
    """Integer Bresenham points from (y0, x0) to (y1, x1) inclusive."""
    dy, dx = abs(y1 - y0), abs(x1 - x0)
    sy, sx = (1 if y1 >= y0 else -1), (1 if x1 >= x0 else -1)
    err = dx - dy
    pts = []
    while True:
        pts.append((y0, x0))
        if (y0, x0) == (y1, x1):
            return pts
        e2 = 2 * err
        if e2 > -dy:
            err -= dy
            x0 += sx
        if e2 < dx:
            err += dx
            y0 += sy


def render_graph(map2d: np.ndarray, graph: SignatureGraph, scale: int = 8) -> np.ndarray:
    """(H*scale, W*scale, 3) uint8 image: gray map, green edges, red 3x3 nodes."""
    gray = np.kron(to_gray(map2d), np.ones((scale, scale), dtype=np.uint8))
    img = np.repeat(gray[:, :, None], 3, axis=2)
    h, w = img.shape[:2]
    centers = [(y * scale + scale // 2, x * scale + scale // 2) for _, _, y, x in graph.nodes]
    for i, j in graph.edges:
        for y, x in _line(*centers[i], *centers[j]):
            if 0 <= y < h and 0 <= x < w:
                img[y, x] = GREEN
    for cy, cx in centers:
        img[max(cy - 1, 0) : min(cy + 2, h), max(cx - 1, 0) : min(cx + 2, w)] = RED
    return img


def ppm_bytes(rgb: np.ndarray) -> bytes:
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.dtype != np.uint8:
        raise ValueError("rgb must be a (H, W, 3) uint8 array")
    h, w = rgb.shape[:2]
    return f"P6\n{w} {h}\n255\n".encode("ascii") + rgb.tobytes()


def write_ppm(path, rgb: np.ndarray) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    tmp.write_bytes(ppm_bytes(rgb))
    os.replace(tmp, path)
