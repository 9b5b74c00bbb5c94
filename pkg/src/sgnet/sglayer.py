"""Batched signature-graph layer used inside the network.

For a batch of (B, H, W, C) activations it aggregates channels, picks one
node per patch, and scales each node's attribute row by the matching
ascending eigenvalue of the grid graph's normalised Laplacian.

Backward treats node positions and eigenvalues as constants: each attribute
element sends its gradient (times its eigenvalue) back to the single map
cell it was read from, much like max-pool routing.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Union

import numpy as np

from .sggraph import (
    PatchGrid,
    aggregate_channels,
    aggregate_channels_backward,
    normalize_extremum,
    normalize_mode,
    partition,
    select_nodes_batch,
)
from .spectral import grid_spectrum

ZERO_EIG_TOL = 1e-10


class TapCache(NamedTuple):
    act: np.ndarray
    ys: np.ndarray
    attrs: np.ndarray
    scaled: np.ndarray


@dataclass
class SignatureTap:
    block: int  # 1-based index of the conv block whose activation is tapped
    map_height: int
    map_width: int
    channels: int
    patch_size: int
    extremum: str = "maxima"
    mode: str = "horizontal"
    aggregate: Union[str, int] = "mean"
    link_chains: bool = False
    eig_offset: float = 0.0

    def __post_init__(self):
        self.extremum = normalize_extremum(self.extremum)
        self.mode = normalize_mode(self.mode)
        self.grid: PatchGrid = partition(self.map_height, self.map_width, self.patch_size)
        lam = np.array(grid_spectrum(self.grid, self.mode, self.link_chains).eigenvalues)
        lam[np.abs(lam) < ZERO_EIG_TOL] = 0.0
        self.eigenvalues = lam + self.eig_offset

    @property
    def node_count(self) -> int:
        return self.grid.node_count

    @property
    def width(self) -> int:
        return self.grid.node_count * self.patch_size

    def forward(self, act):
        """Returns ``(scaled (B, n, P), raw attributes (B, n, P), cache)``."""
        agg = aggregate_channels(act, self.aggregate)
        ys, _, attrs = select_nodes_batch(agg, self.grid, self.extremum)
        scaled = attrs * self.eigenvalues.astype(act.dtype)[None, :, None]
        return scaled, attrs, TapCache(act, ys, attrs, scaled)

    def backward(self, grad_scaled, grad_raw, cache: TapCache):
        """Gradient w.r.t. the tapped activation; either input grad may be None."""
        b = cache.act.shape[0]
        g = np.zeros(cache.attrs.shape, dtype=cache.act.dtype)
        if grad_scaled is not None:
            g += grad_scaled * self.eigenvalues.astype(g.dtype)[None, :, None]
        if grad_raw is not None:
            g += grad_raw
        p = self.patch_size
        hp, wp = self.grid.padded_shape
        gpad = np.zeros((b, hp, wp), dtype=g.dtype)
        n = self.node_count
        col0 = (np.arange(n) % self.grid.grid_cols) * p
        cols = col0[None, :, None] + np.arange(p)[None, None, :]
        # every attribute element comes from a distinct cell
        gpad[np.arange(b)[:, None, None], cache.ys[:, :, None], cols] = g
        gmap = gpad[:, : self.map_height, : self.map_width]
        return aggregate_channels_backward(gmap, cache.act, self.aggregate)

    def patch_means(self, act):
        """Per-node channel means over the valid cells of each patch: (B, n, C)."""
        b, h, w, c = act.shape
        p = self.patch_size
        hp, wp = self.grid.padded_shape
        padded = np.pad(act, ((0, 0), (0, hp - h), (0, wp - w), (0, 0)))
        sums = padded.reshape(b, self.grid.grid_rows, p, self.grid.grid_cols, p, c).sum(
            axis=(2, 4), dtype=np.float64
        )
        counts = self._valid_counts()
        return (sums / counts[None, :, :, None]).reshape(b, -1, c).astype(act.dtype)

    def patch_means_backward(self, grad, act_shape):
        b, h, w, c = act_shape
        p = self.patch_size
        gr, gc = self.grid.grid_rows, self.grid.grid_cols
        per_cell = grad.reshape(b, gr, gc, c) / self._valid_counts()[None, :, :, None]
        full = np.broadcast_to(per_cell[:, :, None, :, None, :], (b, gr, p, gc, p, c))
        full = full.reshape(b, gr * p, gc * p, c)[:, :h, :w, :]
        return np.ascontiguousarray(full, dtype=grad.dtype)

    def _valid_counts(self):
        p = self.patch_size
        rows = np.minimum(p, self.map_height - np.arange(self.grid.grid_rows) * p)
        cols = np.minimum(p, self.map_width - np.arange(self.grid.grid_cols) * p)
        return np.outer(rows, cols).astype(np.float64)
