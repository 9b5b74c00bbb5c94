"""Signature-graph construction from feature maps.

A map is tiled into equal non-overlapping ``patch x patch`` cells (zero
padded at the bottom/right). Each cell contributes one node, placed on the
cell's maximum (or minimum), whose attribute is the cell-local row through
that extremum. Nodes are then chained along grid rows (horizontal mode) or
grid columns (vertical mode).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from . import kernels
from .errors import ConfigError, FormatError, ShapeError

MAXIMA, MINIMA = "maxima", "minima"
HORIZONTAL, VERTICAL = "horizontal", "vertical"

_EXTREMUM_ALIASES = {"max": MAXIMA, "maxima": MAXIMA, "min": MINIMA, "minima": MINIMA}
_MODE_ALIASES = {"h": HORIZONTAL, "horizontal": HORIZONTAL, "v": VERTICAL, "vertical": VERTICAL}


def normalize_extremum(name: str) -> str:
    try:
        return _EXTREMUM_ALIASES[name]
    except KeyError:
        raise ConfigError(f"extremum must be max|min, got {name!r}") from None


def normalize_mode(name: str) -> str:
    try:
        return _MODE_ALIASES[name]
    except KeyError:
        raise ConfigError(f"mode must be horizontal|vertical, got {name!r}") from None


@dataclass(frozen=True)
class PatchGrid:
    patch_size: int
    grid_rows: int
    grid_cols: int
    pad_bottom: int
    pad_right: int
    map_height: int
    map_width: int

    @property
    def node_count(self) -> int:
        return self.grid_rows * self.grid_cols

    @property
    def padded_shape(self) -> tuple[int, int]:
        return self.grid_rows * self.patch_size, self.grid_cols * self.patch_size


def partition(map_height: int, map_width: int, patch_size: int) -> PatchGrid:
    if patch_size < 2:
        raise ConfigError(f"patch_size must be >= 2, got {patch_size}")
    if map_height < 1 or map_width < 1:
        raise ShapeError(f"empty map {map_height}x{map_width}")
    rows = math.ceil(map_height / patch_size)
    cols = math.ceil(map_width / patch_size)
    return PatchGrid(
        patch_size, rows, cols,
        rows * patch_size - map_height, cols * patch_size - map_width,
        map_height, map_width,
    )


def pad_maps(maps: np.ndarray, grid: PatchGrid) -> np.ndarray:
    """Zero-pad (B, H, W) maps to the grid's padded size."""
    return np.pad(maps, ((0, 0), (0, grid.pad_bottom), (0, grid.pad_right)))


def select_nodes_batch(maps: np.ndarray, grid: PatchGrid, extremum: str = MAXIMA):
    """Vectorised node selection for (B, H, W) maps.

    Returns ``(ys, xs, attributes)``: absolute (padded-frame) node coordinates
    of shape (B, n) and attribute rows of shape (B, n, patch). Nodes are in
    row-major grid order.
    """
    extremum = normalize_extremum(extremum)
    if maps.ndim != 3 or maps.shape[1:] != (grid.map_height, grid.map_width):
        raise ShapeError(f"maps {maps.shape} do not match grid {grid.map_height}x{grid.map_width}")
    p = grid.patch_size
    padded = pad_maps(maps, grid)
    ly, lx = kernels.patch_extrema(padded, p, extremum == MINIMA, grid.map_height, grid.map_width)
    b = maps.shape[0]
    n = grid.node_count
    base_y = (np.arange(grid.grid_rows) * p)[:, None]
    base_x = (np.arange(grid.grid_cols) * p)[None, :]
    ys = (ly + base_y).reshape(b, n)
    xs = (lx + base_x).reshape(b, n)
    col0 = np.broadcast_to(base_x, (grid.grid_rows, grid.grid_cols)).reshape(n)
    cols = col0[None, :, None] + np.arange(p)[None, None, :]
    attrs = padded[np.arange(b)[:, None, None], ys[:, :, None], cols]
    return ys, xs, attrs


def select_nodes(map2d: np.ndarray, grid: PatchGrid, extremum: str = MAXIMA):
    """Nodes ``(grid_row, grid_col, y, x)`` and (n, patch) attributes for one map."""
    ys, xs, attrs = select_nodes_batch(np.asarray(map2d)[None], grid, extremum)
    nodes = [
        (i // grid.grid_cols, i % grid.grid_cols, int(y), int(x))
        for i, (y, x) in enumerate(zip(ys[0], xs[0]))
    ]
    return nodes, attrs[0]


def connect(grid: PatchGrid, mode: str = HORIZONTAL, link_chains: bool = False) -> list[tuple[int, int]]:
    """Undirected edges ``(i, j)``, ``i < j``, between row-major node ids.

    Horizontal mode links each grid row into an independent chain, vertical
    mode each grid column. ``link_chains`` joins consecutive chain ends in a
    boustrophedon so the whole graph is a single path.
    """
    mode = normalize_mode(mode)
    rows, cols = grid.grid_rows, grid.grid_cols

    def nid(r, c):
        return r * cols + c

    edges = []
    if mode == HORIZONTAL:
        for r in range(rows):
            edges += [(nid(r, c), nid(r, c + 1)) for c in range(cols - 1)]
        if link_chains:
            for r in range(rows - 1):
                c = cols - 1 if r % 2 == 0 else 0
                edges.append((nid(r, c), nid(r + 1, c)))
    else:
        for c in range(cols):
            edges += [(nid(r, c), nid(r + 1, c)) for r in range(rows - 1)]
        if link_chains:
            for c in range(cols - 1):
                r = rows - 1 if c % 2 == 0 else 0
                edges.append((nid(r, c), nid(r, c + 1)))
    return sorted(edges)


def aggregate_channels(fmap: np.ndarray, how: Union[str, int] = "mean") -> np.ndarray:
    """Collapse the trailing channel axis: ``mean`` (default), ``max`` or a channel index."""
    if isinstance(how, (int, np.integer)):
        if not 0 <= how < fmap.shape[-1]:
            raise ConfigError(f"channel {how} out of range for {fmap.shape[-1]} channels")
        return fmap[..., how]
    if how == "mean":
        c = fmap.shape[-1]
        if c == 1:
            return fmap[..., 0]
        return (fmap.sum(axis=-1, dtype=np.float64) / c).astype(fmap.dtype)
    if how == "max":
        return fmap.max(axis=-1)
    raise ConfigError(f"unknown channel aggregation {how!r}")


def aggregate_channels_backward(grad: np.ndarray, fmap: np.ndarray, how: Union[str, int] = "mean"):
    """Gradient of :func:`aggregate_channels` w.r.t. ``fmap``."""
    c = fmap.shape[-1]
    out = np.zeros_like(fmap)
    if isinstance(how, (int, np.integer)):
        out[..., how] = grad
    elif how == "mean":
        out[...] = (grad / c)[..., None]
    elif how == "max":
        idx = fmap.argmax(axis=-1)
        np.put_along_axis(out, idx[..., None], grad[..., None], axis=-1)
    else:
        raise ConfigError(f"unknown channel aggregation {how!r}")
    return out


def parse_aggregate(text: str) -> Union[str, int]:
    """``mean`` | ``max`` | ``channel:K``."""
    if text in ("mean", "max"):
        return text
    if text.startswith("channel:"):
        return int(text.split(":", 1)[1])
    raise ConfigError(f"aggregate must be mean|max|channel:K, got {text!r}")


@dataclass(frozen=True, eq=False)
class SignatureGraph:
    nodes: tuple
    attributes: np.ndarray
    edges: tuple
    mode: str
    extremum: str
    grid: PatchGrid

    @property
    def node_count(self) -> int:
        return len(self.nodes)

    def _key(self):
        return (self.nodes, self.edges, self.mode, self.extremum, self.grid,
                self.attributes.dtype.str, self.attributes.tobytes())

    def __eq__(self, other):
        if not isinstance(other, SignatureGraph):
            return NotImplemented
        return self._key() == other._key()

    def __hash__(self):
        return hash(self._key())


def build_signature_graph(
    fmap: np.ndarray,
    patch_size: int,
    extremum: str = MAXIMA,
    mode: str = HORIZONTAL,
    aggregate: Union[str, int] = "mean",
    link_chains: bool = False,
) -> SignatureGraph:
    """Build the graph for one (H, W) or (H, W, C) map."""
    fmap = np.asarray(fmap)
    if fmap.ndim == 3:
        fmap = aggregate_channels(fmap, aggregate)
    elif fmap.ndim != 2:
        raise ShapeError(f"expected (H, W) or (H, W, C) map, got {fmap.shape}")
    grid = partition(fmap.shape[0], fmap.shape[1], patch_size)
    nodes, attrs = select_nodes(fmap, grid, extremum)
    attrs.flags.writeable = False
    edges = connect(grid, mode, link_chains)
    return SignatureGraph(tuple(nodes), attrs, tuple(edges), normalize_mode(mode),
                          normalize_extremum(extremum), grid)


def dump_graph(graph: SignatureGraph) -> str:
    """Text dump: header, ``node <id> <grid_r> <grid_c> <y> <x>`` and ``edge <id1> <id2>`` lines."""
    lines = [f"mode={graph.mode[0]} extremum={graph.extremum[:3]} patch={graph.grid.patch_size}"]
    lines += [f"node {i} {r} {c} {y} {x}" for i, (r, c, y, x) in enumerate(graph.nodes)]
    lines += [f"edge {i} {j}" for i, j in graph.edges]
    return "\n".join(lines) + "\n"


def parse_graph_dump(text: str) -> dict:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("mode="):
        raise FormatError("graph dump must start with a 'mode=' header")
    header = dict(tok.split("=", 1) for tok in lines[0].split())
    nodes, edges = [], []
    for ln in lines[1:]:
        kind, *vals = ln.split()
        if kind == "node":
            nodes.append(tuple(int(v) for v in vals[1:]))
        elif kind == "edge":
            edges.append((int(vals[0]), int(vals[1])))
        else:
            raise FormatError(f"unknown graph dump line {ln!r}")
    return {
        "mode": normalize_mode(header["mode"]),
        "extremum": normalize_extremum(header["extremum"]),
        "patch": int(header["patch"]),
        "nodes": nodes,
        "edges": edges,
    }
