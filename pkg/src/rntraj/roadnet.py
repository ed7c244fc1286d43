"""Grid road network built from historical trajectories.

The scene's bounding box is cut into ``gr x gr`` cells. Cells that any
trajectory point ever visits become nodes; each node carries the centroid of
its points and a per-step pedestrian count. Directed edges record
origin-destination transitions between consecutive steps.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import TrajectoryScene
from .io import FormatError

ROADNET_KIND = "roadnet"


class DegenerateExtentError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    gr: int
    bounds: tuple[float, float, float, float]  # min_x, max_x, min_y, max_y

    def __post_init__(self):
        if self.gr < 1:
            raise ValueError(f"gr must be >= 1, got {self.gr}")
        min_x, max_x, min_y, max_y = self.bounds
        if not (max_x > min_x and max_y > min_y):
            raise DegenerateExtentError(f"grid extent must be positive on both axes, got bounds {self.bounds}")

    @property
    def origin(self) -> tuple[float, float]:
        return self.bounds[0], self.bounds[2]

    @property
    def cell_size(self) -> tuple[float, float]:
        min_x, max_x, min_y, max_y = self.bounds
        return (max_x - min_x) / self.gr, (max_y - min_y) / self.gr

    @property
    def n_cells(self) -> int:
        return self.gr * self.gr

    def edges_x(self) -> np.ndarray:
        e = self.bounds[0] + self.cell_size[0] * np.arange(self.gr + 1)
        e[-1] = self.bounds[1]
        return e

    def edges_y(self) -> np.ndarray:
        e = self.bounds[2] + self.cell_size[1] * np.arange(self.gr + 1)
        e[-1] = self.bounds[3]
        return e

    def cell_rect(self, cell: int) -> tuple[float, float, float, float]:
        iy, ix = divmod(int(cell), self.gr)
        ex, ey = self.edges_x(), self.edges_y()
        return float(ex[ix]), float(ex[ix + 1]), float(ey[iy]), float(ey[iy + 1])

    def in_bounds(self, xy: np.ndarray) -> np.ndarray:
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        min_x, max_x, min_y, max_y = self.bounds
        return (xy[:, 0] >= min_x) & (xy[:, 0] <= max_x) & (xy[:, 1] >= min_y) & (xy[:, 1] <= max_y)

    def cell_index(self, xy: np.ndarray) -> np.ndarray:
        """Flat cell id ``iy * gr + ix`` per point, -1 when out of bounds.

        Cells are half-open except the last row/column, which include the max edge.
        """
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        ix = np.clip(np.searchsorted(self.edges_x(), xy[:, 0], side="right") - 1, 0, self.gr - 1)
        iy = np.clip(np.searchsorted(self.edges_y(), xy[:, 1], side="right") - 1, 0, self.gr - 1)
        return np.where(self.in_bounds(xy), iy * self.gr + ix, -1)


def build_grid(scene: TrajectoryScene, gr: int = 6) -> GridSpec:
    return GridSpec(int(gr), scene.bounds)


def phi_mask(scene: TrajectoryScene, grid: GridSpec) -> np.ndarray:
    """Boolean per cell: visited by at least one in-bounds trajectory point."""
    cells = grid.cell_index(scene.xy)
    mask = np.zeros(grid.n_cells, dtype=bool)
    mask[cells[cells >= 0]] = True
    return mask


def _node_lookup(grid: GridSpec, mask: np.ndarray) -> np.ndarray:
    lookup = np.full(grid.n_cells, -1, dtype=np.int64)
    lookup[np.flatnonzero(mask)] = np.arange(int(mask.sum()))
    return lookup


def _point_nodes(scene: TrajectoryScene, grid: GridSpec, mask: np.ndarray) -> np.ndarray:
    cells = grid.cell_index(scene.xy)
    lookup = _node_lookup(grid, mask)
    return np.where(cells >= 0, lookup[np.maximum(cells, 0)], -1)


def occupancy_series(scene: TrajectoryScene, grid: GridSpec, mask: np.ndarray) -> np.ndarray:
    nodes = _point_nodes(scene, grid, mask)
    occ = np.zeros((scene.n_steps, int(mask.sum())), dtype=np.int64)
    keep = nodes >= 0
    np.add.at(occ, (scene.steps[keep], nodes[keep]), 1)
    return occ


def node_centers(scene: TrajectoryScene, grid: GridSpec, mask: np.ndarray) -> np.ndarray:
    """Centroid of the points in each active cell, shape (n_active, 2)."""
    nodes = _point_nodes(scene, grid, mask)
    n = int(mask.sum())
    keep = nodes >= 0
    sums = np.zeros((n, 2))
    counts = np.zeros(n)
    np.add.at(sums, nodes[keep], scene.xy[keep])
    np.add.at(counts, nodes[keep], 1.0)
    if np.any(counts == 0):
        raise ValueError("mask marks a cell active that holds no points")
    centers = sums / counts[:, None]
    # rounding in the mean can leave a centroid a hair outside its cell
    active = np.flatnonzero(mask)
    for v, cell in enumerate(active):
        x0, x1, y0, y1 = grid.cell_rect(cell)
        centers[v] = np.clip(centers[v], [x0, y0], [x1, y1])
    return centers


def od_edges(scene: TrajectoryScene, grid: GridSpec, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Directed transitions between consecutive steps, max-normalized, plus unit self-loops.

    Returns ``(edges (E, 2) node indices, weights (E,))`` sorted by (src, dst).
    """
    nodes = _point_nodes(scene, grid, mask)
    n = int(mask.sum())
    counts = np.zeros((n, n))
    order = np.lexsort((scene.steps, scene.ped_ids))
    p, s, v = scene.ped_ids[order], scene.steps[order], nodes[order]
    step_pair = (p[1:] == p[:-1]) & (s[1:] == s[:-1] + 1) & (v[1:] >= 0) & (v[:-1] >= 0)
    src, dst = v[:-1][step_pair], v[1:][step_pair]
    moved = src != dst
    np.add.at(counts, (src[moved], dst[moved]), 1.0)
    peak = counts.max() if counts.size else 0.0
    weights = counts / peak if peak > 0 else counts
    np.fill_diagonal(weights, 1.0)
    src_i, dst_i = np.nonzero(weights)
    return np.stack([src_i, dst_i], axis=1).astype(np.int64), weights[src_i, dst_i]


@dataclass
class RoadNetworkGraph:
    scene_id: str
    grid: GridSpec
    active_cells: np.ndarray  # (n_active,) flat cell ids, ascending
    node_centers: np.ndarray  # (n_active, 2)
    occupancy: np.ndarray  # (T, n_active) int
    edges: np.ndarray  # (E, 2) node indices
    edge_weights: np.ndarray  # (E,)
    fit_steps: int | None = None  # leading steps the structure was built from; None means all

    @property
    def n_active(self) -> int:
        return len(self.active_cells)

    @property
    def n_steps(self) -> int:
        return self.occupancy.shape[0]

    @property
    def node_active(self) -> np.ndarray:
        mask = np.zeros(self.grid.n_cells, dtype=bool)
        mask[self.active_cells] = True
        return mask

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n_active, self.n_active))
        a[self.edges[:, 0], self.edges[:, 1]] = self.edge_weights
        return a

    def to_document(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "grid": {"gr": self.grid.gr, "bounds": [float(b) for b in self.grid.bounds]},
            "active_cells": [int(c) for c in self.active_cells],
            "node_centers": [[float(x), float(y)] for x, y in self.node_centers],
            "edges": [[int(a), int(b)] for a, b in self.edges],
            "edge_weights": [float(w) for w in self.edge_weights],
            "occupancy": [[int(c) for c in row] for row in self.occupancy],
            "fit_steps": self.fit_steps,
        }

    @classmethod
    def from_document(cls, doc: dict) -> "RoadNetworkGraph":
        try:
            grid = GridSpec(int(doc["grid"]["gr"]), tuple(float(b) for b in doc["grid"]["bounds"]))
            active = np.array(doc["active_cells"], dtype=np.int64)
            n = len(active)
            centers = np.array(doc["node_centers"], dtype=np.float64).reshape(n, 2)
            occ = np.array(doc["occupancy"], dtype=np.int64).reshape(-1, n)
            edges = np.array(doc["edges"], dtype=np.int64).reshape(-1, 2)
            weights = np.array(doc["edge_weights"], dtype=np.float64)
            scene_id = str(doc["scene_id"])
            fit_steps = None if doc.get("fit_steps") is None else int(doc["fit_steps"])
        except (KeyError, TypeError, ValueError) as err:
            raise FormatError(f"roadnet document: {err}") from None
        if len(weights) != len(edges) or (len(edges) and (edges.min() < 0 or edges.max() >= n)):
            raise FormatError("roadnet document: edge list inconsistent with active nodes")
        return cls(scene_id, grid, active, centers, occ, edges, weights, fit_steps)


def build_roadnet(scene: TrajectoryScene, gr: int = 6, fit_steps: int | None = None) -> RoadNetworkGraph:
    """Road network of ``scene``.

    With ``fit_steps`` the grid, active cells, centers and edges come from the
    first ``fit_steps`` steps only (the training period); occupancy still
    covers every step, counting only points that land on active cells.
    """
    fit = scene if fit_steps is None else scene.head(fit_steps)
    grid = build_grid(fit, gr)
    mask = phi_mask(fit, grid)
    edges, weights = od_edges(fit, grid, mask)
    return RoadNetworkGraph(
        scene_id=scene.scene_id,
        grid=grid,
        active_cells=np.flatnonzero(mask),
        node_centers=node_centers(fit, grid, mask),
        occupancy=occupancy_series(scene, grid, mask),
        edges=edges,
        edge_weights=weights,
        fit_steps=None if fit_steps is None else int(fit_steps),
    )


def normalized_adjacency(adjacency: np.ndarray, hops: int = 1) -> np.ndarray:
    """D^-1/2 A D^-1/2 with D the weighted out-degree, raised to ``hops``."""
    deg = adjacency.sum(axis=1)
    if np.any(deg <= 0):
        raise ValueError("every node needs positive weighted degree (add self-loops)")
    inv = 1.0 / np.sqrt(deg)
    a_hat = inv[:, None] * adjacency * inv[None, :]
    return np.linalg.matrix_power(a_hat, hops) if hops > 1 else a_hat


def occupancy_windows(occupancy: np.ndarray, input_steps: int, horizons: list[int]) -> list[tuple[int, np.ndarray, list[np.ndarray]]]:
    """Sliding (start, input (T', n), [target (h, n) per horizon]) samples."""
    span = input_steps + max(horizons)
    out = []
    for s in range(0, occupancy.shape[0] - span + 1):
        x = occupancy[s:s + input_steps].astype(np.float64)
        ys = [occupancy[s + input_steps:s + input_steps + h].astype(np.float64) for h in horizons]
        out.append((s, x, ys))
    return out
