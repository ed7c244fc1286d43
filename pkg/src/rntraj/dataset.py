"""ETH/UCY-style trajectory files, scenes, and observation/prediction windows."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import reduce
from pathlib import Path

import numpy as np

COLUMN_ORDERS = ("frame_ped_x_y", "frame_ped_y_x")


class TrajectoryParseError(ValueError):
    pass


class EmptySceneError(ValueError):
    pass


@dataclass
class TrajectoryScene:
    """All annotated positions of one scene.

    ``steps`` are the raw frame numbers remapped to 0..T-1 in order; the raw
    numbers are kept in ``raw_frames`` so the scene can be written back.
    """

    scene_id: str
    steps: np.ndarray  # (R,) int
    ped_ids: np.ndarray  # (R,) int
    xy: np.ndarray  # (R, 2) float, meters
    raw_frames: np.ndarray  # (R,) int
    frame_stride: int = 1

    @property
    def n_steps(self) -> int:
        return int(self.steps.max()) + 1 if len(self.steps) else 0

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        return (float(self.xy[:, 0].min()), float(self.xy[:, 0].max()),
                float(self.xy[:, 1].min()), float(self.xy[:, 1].max()))

    @property
    def records(self) -> list[tuple[int, int, float, float]]:
        return [(int(s), int(p), float(x), float(y))
                for s, p, (x, y) in zip(self.steps, self.ped_ids, self.xy)]

    def head(self, n_steps: int) -> "TrajectoryScene":
        """The records of the first ``n_steps`` steps."""
        keep = self.steps < n_steps
        if not keep.any():
            raise EmptySceneError(f"{self.scene_id}: no records in the first {n_steps} steps")
        return replace(self, steps=self.steps[keep], ped_ids=self.ped_ids[keep], xy=self.xy[keep],
                       raw_frames=self.raw_frames[keep])

    def pedestrians(self) -> np.ndarray:
        return np.unique(self.ped_ids)

    def dense(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(ped ids, presence (T, P) bool, positions (T, P, 2) with NaN where absent)."""
        peds, col = np.unique(self.ped_ids, return_inverse=True)
        presence = np.zeros((self.n_steps, len(peds)), dtype=bool)
        pos = np.full((self.n_steps, len(peds), 2), np.nan)
        presence[self.steps, col] = True
        pos[self.steps, col] = self.xy
        return peds, presence, pos


def scene_from_records(scene_id: str, raw_frames, ped_ids, xy, source: str = "<records>") -> TrajectoryScene:
    raw_frames = np.asarray(raw_frames, dtype=np.int64)
    ped_ids = np.asarray(ped_ids, dtype=np.int64)
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    if len(raw_frames) == 0:
        raise EmptySceneError(f"{source}: no records")
    order = np.lexsort((ped_ids, raw_frames))
    raw_frames, ped_ids, xy = raw_frames[order], ped_ids[order], xy[order]
    dup = (np.diff(raw_frames) == 0) & (np.diff(ped_ids) == 0)
    if dup.any():
        i = int(np.argmax(dup))
        raise TrajectoryParseError(
            f"{source}: duplicate record for frame {raw_frames[i]} pedestrian {ped_ids[i]}")
    uniq, steps = np.unique(raw_frames, return_inverse=True)
    stride = reduce(math.gcd, (int(d) for d in np.diff(uniq)), 0) or 1
    return TrajectoryScene(scene_id, steps.astype(np.int64), ped_ids, xy, raw_frames, stride)


def parse_trajectory_text(text: str, column_order: str = "frame_ped_x_y",
                          scene_id: str = "scene", source: str = "<text>") -> TrajectoryScene:
    if column_order not in COLUMN_ORDERS:
        raise ValueError(f"column_order must be one of {COLUMN_ORDERS}, got {column_order!r}")
    frames, peds, xy = [], [], []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        fields = stripped.split()
        if len(fields) != 4:
            raise TrajectoryParseError(f"{source}:{lineno}: expected 4 fields, got {len(fields)}")
        try:
            frame = float(fields[0])
            ped = float(fields[1])
            a, b = float(fields[2]), float(fields[3])
        except ValueError:
            raise TrajectoryParseError(f"{source}:{lineno}: non-numeric field in {stripped!r}") from None
        if frame != int(frame) or ped != int(ped):
            raise TrajectoryParseError(f"{source}:{lineno}: frame and pedestrian id must be integers")
        if not (math.isfinite(a) and math.isfinite(b)):
            raise TrajectoryParseError(f"{source}:{lineno}: non-finite coordinate")
        frames.append(int(frame))
        peds.append(int(ped))
        xy.append((a, b) if column_order == "frame_ped_x_y" else (b, a))
    return scene_from_records(scene_id, frames, peds, xy, source=source)


def parse_trajectory_file(path, column_order: str = "frame_ped_x_y") -> TrajectoryScene:
    path = Path(path)
    return parse_trajectory_text(path.read_text(encoding="utf-8"), column_order,
                                 scene_id=path.stem, source=str(path))


def format_scene(scene: TrajectoryScene) -> str:
    """Tab-separated frame_ped_x_y text; floats use repr so reparsing is exact."""
    lines = [f"{int(f)}\t{int(p)}\t{float(x)!r}\t{float(y)!r}"
             for f, p, (x, y) in zip(scene.raw_frames, scene.ped_ids, scene.xy)]
    return "\n".join(lines) + "\n"


@dataclass
class SequenceWindow:
    scene_id: str
    start_frame: int  # step index of the first observed step
    ped_ids: np.ndarray  # (N,)
    observed: np.ndarray  # (T_obs, N, 2)
    target: np.ndarray  # (T_pred, N, 2)
    observed_rel: np.ndarray = field(default=None)  # (T_obs, N, 2)

    def __post_init__(self):
        if self.observed_rel is None:
            self.observed_rel = relative_displacements(self.observed)

    @property
    def n_peds(self) -> int:
        return len(self.ped_ids)

    @property
    def t_obs(self) -> int:
        return self.observed.shape[0]

    @property
    def t_pred(self) -> int:
        return self.target.shape[0]

    @property
    def last_observed(self) -> np.ndarray:
        return self.observed[-1]

    @property
    def target_rel(self) -> np.ndarray:
        """Per-step future displacements, the first taken from the last observed position."""
        full = np.concatenate([self.observed[-1:], self.target], axis=0)
        return np.diff(full, axis=0)

    @property
    def end_frame(self) -> int:
        return self.start_frame + self.t_obs + self.t_pred - 1


def relative_displacements(positions: np.ndarray) -> np.ndarray:
    rel = np.zeros_like(positions)
    rel[1:] = positions[1:] - positions[:-1]
    return rel


def to_relative(window: SequenceWindow) -> SequenceWindow:
    return replace(window, observed_rel=relative_displacements(window.observed))


def make_windows(scene: TrajectoryScene, t_obs: int = 8, t_pred: int = 12, stride: int = 1) -> list[SequenceWindow]:
    if t_obs < 1 or t_pred < 1 or stride < 1:
        raise ValueError("t_obs, t_pred and stride must be >= 1")
    length = t_obs + t_pred
    peds, presence, pos = scene.dense()
    windows = []
    for start in range(0, scene.n_steps - length + 1, stride):
        full = presence[start:start + length].all(axis=0)
        if not full.any():
            continue
        cols = np.flatnonzero(full)
        seq = pos[start:start + length][:, cols]
        windows.append(SequenceWindow(scene.scene_id, start, peds[cols].copy(),
                                      seq[:t_obs].copy(), seq[t_obs:].copy()))
    return windows


def split_windows(windows: list[SequenceWindow], eval_fraction: float) -> tuple[list[SequenceWindow], list[SequenceWindow]]:
    """Tail block goes to eval; train keeps only windows ending before it starts."""
    if not 0.0 < eval_fraction < 1.0:
        raise ValueError(f"eval_fraction must lie in (0, 1), got {eval_fraction}")
    n = len(windows)
    if n < 2:
        return list(windows), []
    n_eval = min(max(int(math.floor(n * eval_fraction)), 1), n - 1)
    ordered = sorted(windows, key=lambda w: w.start_frame)
    eval_part = ordered[n - n_eval:]
    boundary = eval_part[0].start_frame
    train_part = [w for w in ordered[:n - n_eval] if w.end_frame < boundary]
    return train_part, eval_part


def eval_start_step(scene: TrajectoryScene, eval_fraction: float, t_obs: int = 8, t_pred: int = 12,
                    stride: int = 1) -> int:
    """First step of the scene's held-out block; training windows end before it."""
    _, held_out = split_windows(make_windows(scene, t_obs, t_pred, stride), eval_fraction)
    if not held_out:
        raise ValueError(f"{scene.scene_id}: too few windows to hold any out")
    return int(held_out[0].start_frame)


def split_train_eval(scenes: list[TrajectoryScene], eval_fraction: float, t_obs: int = 8,
                     t_pred: int = 12, stride: int = 1) -> tuple[list[SequenceWindow], list[SequenceWindow]]:
    train, evaluation = [], []
    for scene in sorted(scenes, key=lambda s: s.scene_id):
        tr, ev = split_windows(make_windows(scene, t_obs, t_pred, stride), eval_fraction)
        train.extend(tr)
        evaluation.extend(ev)
    if not train or not evaluation:
        raise ValueError(f"split leaves an empty side: {len(train)} train, {len(evaluation)} eval windows")
    return train, evaluation
