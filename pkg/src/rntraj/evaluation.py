"""ADE/FDE, segmented ADE, and the averaged multi-run sampling protocol."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .dataset import SequenceWindow
from .global_model import RNTransformer
from .local_model import GaussianTrajectoryParams, LocalModel, sample_trajectory
from .rng import SeededRNG
from .training import window_context


def _check(pred: np.ndarray, truth: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim != 3 or pred.shape[-1] != 2:
        raise ValueError(f"pred {pred.shape} and truth {truth.shape} must both be (T, N, 2)")
    if pred.shape[1] < 1 or pred.shape[0] < 1:
        raise ValueError("need at least one step and one pedestrian")
    return pred, truth


def _dist(diff: np.ndarray) -> np.ndarray:
    # hypot keeps tiny offsets from squaring to zero
    return np.hypot(diff[..., 0], diff[..., 1])


def ade(pred, truth) -> float:
    """Mean Euclidean error over all steps and pedestrians."""
    pred, truth = _check(pred, truth)
    return float(np.mean(_dist(pred - truth)))


def fde(pred, truth) -> float:
    """Mean Euclidean error at the final step."""
    pred, truth = _check(pred, truth)
    return float(np.mean(_dist(pred[-1] - truth[-1])))


def segmented_ade(pred, truth, segments: int = 3) -> list[float]:
    pred, truth = _check(pred, truth)
    if segments < 1 or pred.shape[0] % segments:
        raise ValueError(f"{pred.shape[0]} steps do not split into {segments} equal segments")
    err = _dist(pred - truth)
    size = pred.shape[0] // segments
    return [float(np.mean(err[i * size:(i + 1) * size])) for i in range(segments)]


@dataclass
class EvalResult:
    ade: float
    fde: float
    segmented_ade: list[float]
    runs: int
    per_run: list[dict] = field(default_factory=list)

    def to_document(self) -> dict:
        std = {k: float(np.std([r[k] for r in self.per_run])) for k in ("ade", "fde")}
        return {"ade": self.ade, "fde": self.fde, "segmented_ade": self.segmented_ade, "runs": self.runs,
                "std": std, "per_run": self.per_run}


@dataclass
class ModelBundle:
    """Local model plus the optional frozen crowd model whose trip latent it consumes."""

    local: LocalModel
    rn: RNTransformer | None = None

    def predict_params(self, window: SequenceWindow) -> GaussianTrajectoryParams:
        ctx = window_context(window, self.rn)
        with T.no_grad():
            return self.local.forward(window, trip_latent=ctx.trip_latent)


def evaluate_predictions(predictions: list[np.ndarray], windows: list[SequenceWindow], segments: int = 3) -> dict:
    """Window-level metrics averaged uniformly over windows."""
    ades = [ade(p, w.target) for p, w in zip(predictions, windows)]
    fdes = [fde(p, w.target) for p, w in zip(predictions, windows)]
    segs = np.mean([segmented_ade(p, w.target, segments) for p, w in zip(predictions, windows)], axis=0)
    return {"ade": float(np.mean(ades)), "fde": float(np.mean(fdes)), "segmented_ade": [float(s) for s in segs]}


def evaluate_model(bundle: ModelBundle, windows: list[SequenceWindow], runs: int = 5, seed: int = 0,
                   segments: int = 3) -> EvalResult:
    """One sampled trajectory per window per run; metrics are the mean over runs."""
    if not windows:
        raise ValueError("evaluate_model: empty evaluation set")
    if runs < 1:
        raise ValueError("runs must be >= 1")
    params = [bundle.predict_params(w) for w in windows]
    master = SeededRNG(seed)
    per_run = []
    for r in range(runs):
        rng = master.child(r)
        preds = [sample_trajectory(p, rng, w.last_observed) for p, w in zip(params, windows)]
        per_run.append({"run": r, **evaluate_predictions(preds, windows, segments)})
    return EvalResult(
        ade=float(np.mean([r["ade"] for r in per_run])),
        fde=float(np.mean([r["fde"] for r in per_run])),
        segmented_ade=[float(x) for x in np.mean([r["segmented_ade"] for r in per_run], axis=0)],
        runs=runs,
        per_run=per_run,
    )
