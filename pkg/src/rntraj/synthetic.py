"""Synthetic scenes for tests and desk-scale experiments."""
from __future__ import annotations

import numpy as np

from .dataset import TrajectoryScene, scene_from_records
from .rng import SeededRNG


def linear_motion_scene(n_peds: int = 3, n_steps: int = 21, seed: int = 0, speed: float = 0.4,
                        frame_stride: int = 10) -> TrajectoryScene:
    """Pedestrians walking straight lines at constant velocity, all present throughout."""
    rng = SeededRNG(seed)
    frames, peds, xy = [], [], []
    for p in range(n_peds):
        start = rng.uniform(2, 0.0, 8.0)
        heading = rng.uniform(None, 0.0, 2 * np.pi)
        v = speed * np.array([np.cos(heading), np.sin(heading)])
        for t in range(n_steps):
            frames.append(t * frame_stride)
            peds.append(p + 1)
            xy.append(start + v * t)
    return scene_from_records("linear", frames, peds, xy)


def corridor_scene(n_steps: int = 400, seed: int = 0, spawn_prob: float = 0.25, frame_stride: int = 10,
                   scene_id: str = "corridor", noise: float = 0.03) -> TrajectoryScene:
    """Crowd flowing between entrances and exits of a 16 m x 12 m plaza.

    Pedestrians enter at one of four gates, head for a gate on another side
    with a route-dependent preference, slow down when the plaza is crowded
    and leave on arrival. Routes and speeds vary, so the plaza's occupancy
    pattern carries information about where walkers are heading.
    """
    rng = SeededRNG(seed)
    gates = np.array([[0.0, 6.0], [16.0, 6.0], [8.0, 0.0], [8.0, 12.0]])
    route_pref = np.array([[0.0, 0.7, 0.15, 0.15],
                           [0.7, 0.0, 0.15, 0.15],
                           [0.2, 0.2, 0.0, 0.6],
                           [0.2, 0.2, 0.6, 0.0]])
    frames, peds, xy = [], [], []
    active: dict[int, dict] = {}
    next_id = 1
    for t in range(n_steps):
        if rng.uniform() < spawn_prob or not active:
            src = int(rng.uniform() * 4) % 4
            dst = int(np.searchsorted(np.cumsum(route_pref[src]), rng.uniform()))
            dst = min(dst, 3)
            jitter = rng.uniform(2, -1.0, 1.0)
            active[next_id] = {"pos": gates[src] + jitter, "goal": gates[dst] + rng.uniform(2, -1.0, 1.0),
                               "speed": 0.35 + 0.15 * rng.uniform(), "bend": rng.uniform(None, -0.3, 0.3)}
            next_id += 1
        crowd = len(active)
        for pid in sorted(active):
            state = active[pid]
            frames.append(t * frame_stride)
            peds.append(pid)
            xy.append(state["pos"].copy())
            to_goal = state["goal"] - state["pos"]
            dist = np.linalg.norm(to_goal)
            direction = to_goal / max(dist, 1e-9)
            c, s = np.cos(state["bend"] * min(dist / 8.0, 1.0)), np.sin(state["bend"] * min(dist / 8.0, 1.0))
            direction = np.array([c * direction[0] - s * direction[1], s * direction[0] + c * direction[1]])
            speed = state["speed"] / (1.0 + 0.05 * crowd)
            state["pos"] = state["pos"] + speed * direction + noise * rng.normal(2)
            state["pos"] = np.clip(state["pos"], [-1.0, -1.0], [17.0, 13.0])
            if dist < 0.6:
                del active[pid]
    return scene_from_records(scene_id, frames, peds, xy)


def periodic_occupancy(n_steps: int, n_nodes: int, period: int = 4, seed: int = 0) -> np.ndarray:
    """Integer counts repeating with the given period, distinct per node."""
    rng = SeededRNG(seed)
    base = np.floor(rng.uniform((period, n_nodes), 0.0, 4.0)).astype(np.int64)
    return np.stack([base[t % period] for t in range(n_steps)])


def toy_network(occupancy: np.ndarray, gr: int = 2, scene_id: str = "toy"):
    """Road network over a unit square with every cell active and a ring of OD edges."""
    from .roadnet import GridSpec, RoadNetworkGraph

    occupancy = np.asarray(occupancy, dtype=np.int64)
    n = gr * gr
    if occupancy.shape[1] != n:
        raise ValueError(f"occupancy has {occupancy.shape[1]} nodes, grid has {n}")
    grid = GridSpec(gr, (0.0, 1.0, 0.0, 1.0))
    centers = np.array([[(ix + 0.5) / gr, (iy + 0.5) / gr] for iy in range(gr) for ix in range(gr)])
    src = np.arange(n)
    ring = [(i, (i + 1) % n) for i in src if (i + 1) % n != i]
    edges = sorted({(i, i) for i in src} | set(ring))
    weights = np.ones(len(edges))
    return RoadNetworkGraph(scene_id, grid, np.arange(n), centers, occupancy, np.array(edges, dtype=np.int64), weights)
