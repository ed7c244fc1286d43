"""Two-phase training: pretrain the crowd model, freeze it, train the local model."""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .checkpoint import make_checkpoint, optimizer_from_dict, params_from_list
from .dataset import SequenceWindow
from .global_model import RNConfig, RNTransformer
from .io import FormatError, header
from .layers import l1_l2
from .local_model import LocalConfig, LocalModel, gaussian_nll, mean_trajectory
from .optim import OptimizerState, step
from .rng import SeededRNG
from .roadnet import RoadNetworkGraph, occupancy_windows
from .tensor import Tensor

REPORT_KIND = "train-report"


@dataclass
class TrainConfig:
    rn_epochs: int = 50
    local_epochs: int = 250
    rn_lr: float = 1e-2
    rn_weight_decay: float = 1e-3
    local_optimizer: str = "sgd"
    local_lr: float = 1e-2
    local_weight_decay: float = 0.0
    lambda_huber: float = 1.0
    lambda_local: float = 1.0
    lambda_l1: float = 1e-5
    lambda_l2: float = 1e-4
    huber_delta: float = 1.0
    seed: int = 0
    batch_size: int = 1
    shuffle: bool = True

    def __post_init__(self):
        if self.local_optimizer not in ("sgd", "adagrad"):
            raise ValueError(f"local_optimizer must be sgd or adagrad, got {self.local_optimizer!r}")
        if self.rn_lr < 0 or self.local_lr < 0 or self.rn_weight_decay < 0 or self.local_weight_decay < 0:
            raise ValueError("learning rates and weight decay must be nonnegative")
        if min(self.lambda_huber, self.lambda_local, self.lambda_l1, self.lambda_l2) < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.huber_delta <= 0 or self.batch_size < 1 or self.rn_epochs < 0 or self.local_epochs < 0:
            raise ValueError("huber_delta, batch_size must be positive and epoch counts nonnegative")


@dataclass
class TrainReport:
    kind: str
    records: list[dict] = field(default_factory=list)
    wall_time: float = 0.0
    checkpoint_paths: list[str] = field(default_factory=list)

    def losses(self, key: str) -> list[float]:
        return [r[key] for r in self.records]

    def to_jsonl(self, timestamps: bool = False) -> str:
        lines = [header(REPORT_KIND)]
        for r in self.records:
            rec = {"kind": self.kind, **r}
            if not timestamps:
                rec.pop("timestamp", None)
            lines.append(json.dumps(rec, allow_nan=False))
        return "\n".join(lines) + "\n"


def _batches(n: int, batch_size: int, rng: SeededRNG | None) -> list[np.ndarray]:
    order = rng.permutation(n) if rng is not None else np.arange(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


# ---------------------------------------------------------------- global model

def rn_samples(network: RoadNetworkGraph, rn_config: RNConfig) -> list[tuple[int, np.ndarray, list[np.ndarray]]]:
    """Occupancy samples whose targets stay inside the network's fitting period."""
    occ = network.occupancy if network.fit_steps is None else network.occupancy[:network.fit_steps]
    return occupancy_windows(occ, rn_config.input_steps, rn_config.horizons)


def _rn_epoch_loss(model: RNTransformer, samples, delta: float) -> float:
    with T.no_grad():
        return float(np.mean([model.window_loss(x, ys, delta).item() for _, x, ys in samples]))


def pretrain_rn(network: RoadNetworkGraph, config: TrainConfig, rn_config: RNConfig | None = None,
                samples=None) -> tuple[RNTransformer, TrainReport]:
    """SGD on the multi-horizon Huber loss; the returned model holds the best epoch's weights.

    Epoch 0 is the untrained model; each later record is measured after that epoch's updates.
    """
    rn_config = rn_config or RNConfig()
    samples = rn_samples(network, rn_config) if samples is None else samples
    if not samples:
        raise ValueError(f"occupancy series of {network.n_steps} steps is too short for "
                         f"{rn_config.input_steps} inputs and horizon {max(rn_config.horizons)}")
    model = RNTransformer(rn_config, network, seed=config.seed)
    params = model.params.tensors()
    opt = OptimizerState("sgd", config.rn_lr, config.rn_weight_decay)
    report = TrainReport("global")
    start = time.perf_counter()
    best = _rn_epoch_loss(model, samples, config.huber_delta)
    best_params = model.params.snapshot()
    report.records.append({"epoch": 0, "huber": best, "timestamp": time.time()})
    shuffler = SeededRNG(config.seed).child(1)
    for epoch in range(1, config.rn_epochs + 1):
        rng = shuffler.child(epoch) if config.shuffle else None
        for batch in _batches(len(samples), config.batch_size, rng):
            model.params.zero_grad()
            loss = None
            for i in batch:
                _, x, ys = samples[i]
                term = model.window_loss(x, ys, config.huber_delta)
                loss = term if loss is None else T.add(loss, term)
            loss = T.scalar_mul(loss, config.lambda_huber / len(batch))
            T.backward(loss)
            step(params, opt)
        value = _rn_epoch_loss(model, samples, config.huber_delta)
        if not np.isfinite(value):
            raise T.NumericError(f"pretrain_rn: non-finite loss at epoch {epoch}")
        report.records.append({"epoch": epoch, "huber": value, "timestamp": time.time()})
        if value < best:
            best, best_params = value, model.params.snapshot()
    model.params.load(best_params)
    report.wall_time = time.perf_counter() - start
    return model, report


def rn_checkpoint(model: RNTransformer, report: TrainReport | None = None) -> dict:
    extra = {"network": model.network.to_document()}
    if report is not None:
        extra["best_huber"] = min(report.losses("huber"))
    return make_checkpoint("global_model", model.config.to_dict(), model.params, extra)


def rn_from_checkpoint(doc: dict) -> RNTransformer:
    if doc.get("section") != "global_model":
        raise FormatError(f"not a global_model checkpoint: {doc.get('section')!r}")
    try:
        network = RoadNetworkGraph.from_document(doc["extra"]["network"])
        model = RNTransformer(RNConfig(**doc["config"]), network)
        model.params.load(params_from_list(doc["parameters"]))
    except (KeyError, TypeError, ValueError) as err:
        raise FormatError(f"global_model checkpoint: {err}") from None
    return model


def freeze(checkpoint: dict | RNTransformer) -> RNTransformer:
    """Frozen crowd model: forward values flow, parameters never receive gradients."""
    model = checkpoint if isinstance(checkpoint, RNTransformer) else rn_from_checkpoint(checkpoint)
    return model.freeze()


# ---------------------------------------------------------------- local model

@dataclass
class WindowContext:
    """Per-window constants under a frozen crowd model."""

    trip_latent: np.ndarray | None
    huber: float


def window_context(window: SequenceWindow, rn: RNTransformer | None, delta: float = 1.0) -> WindowContext:
    """Trip latent from the occupancy history ending at the window's last observed step."""
    if rn is None:
        return WindowContext(None, 0.0)
    if rn.network.scene_id != window.scene_id:
        raise ValueError(f"window from scene {window.scene_id!r} but road network is {rn.network.scene_id!r}")
    end = window.start_frame + window.t_obs - 1
    with T.no_grad():
        hist = rn.history_window(end)
        out = rn.forward(hist)
        targets = rn.future_targets(end)
        huber = rn.window_loss(hist, targets, delta).item() if targets is not None else 0.0
    return WindowContext(out.trip_latent.data.copy(), huber)


def composite_loss(local_nll, huber, params: list[Tensor], config: TrainConfig) -> tuple[Tensor, dict]:
    """lambda_huber*huber + lambda_local*nll + lambda_l1*sum|w| + lambda_l2*sum w^2, with components."""
    nll_t = local_nll if isinstance(local_nll, Tensor) else Tensor(local_nll)
    huber_t = huber if isinstance(huber, Tensor) else Tensor(huber)
    l1, l2 = l1_l2(params)
    objective = T.add(T.add(T.scalar_mul(nll_t, config.lambda_local), T.scalar_mul(l1, config.lambda_l1)),
                      T.scalar_mul(l2, config.lambda_l2))
    total = T.add(objective, T.scalar_mul(huber_t, config.lambda_huber))
    parts = {"nll": nll_t.item(), "huber": huber_t.item(), "l1": l1.item(), "l2": l2.item(),
             "local_objective": objective.item(), "composite": total.item()}
    return total, parts


def _window_ade(params, window: SequenceWindow) -> float:
    pred = mean_trajectory(params, window.last_observed)
    return float(np.mean(np.hypot(*np.moveaxis(pred - window.target, -1, 0))))


@dataclass
class LocalRun:
    model: LocalModel
    optimizer: OptimizerState
    report: TrainReport
    epochs_done: int
    fused: bool


def train_local(windows: list[SequenceWindow], frozen_rn: RNTransformer | None, config: TrainConfig,
                local_config: LocalConfig | None = None, resume: LocalRun | None = None,
                epochs: int | None = None) -> LocalRun:
    """Train the local model window-batch by window-batch.

    Record 0 is a pass with the initial weights; record ``e`` averages the
    pre-update losses seen during epoch ``e``. ``resume`` continues a previous
    run (same windows and config) for ``epochs`` more epochs.
    """
    if not windows:
        raise ValueError("train_local: no training windows")
    if frozen_rn is not None and not frozen_rn.frozen:
        raise ValueError("train_local: the crowd model must be frozen first")
    if resume is None:
        cfg = local_config or LocalConfig(trip_segment=frozen_rn.config.latent_dim if frozen_rn else 16)
        model = LocalModel(cfg, seed=config.seed)
        opt = OptimizerState(config.local_optimizer, config.local_lr, config.local_weight_decay)
        report = TrainReport("local")
        done = 0
    else:
        model, opt, report, done = resume.model, resume.optimizer, resume.report, resume.epochs_done
        if resume.fused != (frozen_rn is not None):
            raise ValueError("cannot resume a fused run without the crowd model or vice versa")
    n_epochs = config.local_epochs if epochs is None else epochs
    contexts = [window_context(w, frozen_rn, config.huber_delta) for w in windows]
    params = model.trainable()
    start = time.perf_counter()

    def batch_loss(batch):
        nll = None
        hub = 0.0
        ades = []
        for i in batch:
            w, ctx = windows[i], contexts[i]
            gp = model.forward(w, trip_latent=ctx.trip_latent)
            term = gaussian_nll(gp, w.target_rel)
            nll = term if nll is None else T.add(nll, term)
            hub += ctx.huber
            ades.append(_window_ade(gp, w))
        nll = T.scalar_mul(nll, 1.0 / len(batch))
        total, parts = composite_loss(nll, hub / len(batch), params, config)
        parts["ade"] = float(np.mean(ades))
        return total, parts

    def record(epoch, parts_list):
        rec = {"epoch": epoch}
        for key in ("composite", "local_objective", "nll", "huber", "l1", "l2", "ade"):
            rec[key] = float(np.mean([p[key] for p in parts_list]))
        rec["timestamp"] = time.time()
        if not np.isfinite(rec["composite"]):
            raise T.NumericError(f"train_local: non-finite loss at epoch {epoch}")
        report.records.append(rec)

    if done == 0:
        with T.no_grad():
            record(0, [batch_loss(b)[1] for b in _batches(len(windows), config.batch_size, None)])
    shuffler = SeededRNG(config.seed).child(2)
    for epoch in range(done + 1, done + n_epochs + 1):
        rng = shuffler.child(epoch) if config.shuffle else None
        parts_list = []
        for batch in _batches(len(windows), config.batch_size, rng):
            model.params.zero_grad()
            total, parts = batch_loss(batch)
            T.backward(total)
            step(params, opt)
            parts_list.append(parts)
        record(epoch, parts_list)
    report.wall_time += time.perf_counter() - start
    return LocalRun(model, opt, report, done + n_epochs, frozen_rn is not None)


def local_checkpoint(run: LocalRun, config: TrainConfig) -> dict:
    extra = {"fused": run.fused, "train_config": asdict(config)}
    return make_checkpoint("local_model", run.model.config.to_dict(), run.model.params, extra,
                           optimizer=run.optimizer, epoch=run.epochs_done)


def local_from_checkpoint(doc: dict) -> tuple[LocalModel, dict]:
    if doc.get("section") != "local_model":
        raise FormatError(f"not a local_model checkpoint: {doc.get('section')!r}")
    try:
        model = LocalModel(LocalConfig.from_dict(doc["config"]))
        model.params.load(params_from_list(doc["parameters"]))
    except (KeyError, TypeError, ValueError) as err:
        raise FormatError(f"local_model checkpoint: {err}") from None
    return model, doc.get("extra", {})


def resume_from_checkpoint(doc: dict, report: TrainReport | None = None) -> LocalRun:
    model, extra = local_from_checkpoint(doc)
    opt = optimizer_from_dict(doc["optimizer"])
    return LocalRun(model, opt, report or TrainReport("local"), int(doc["epoch"]), bool(extra.get("fused")))
