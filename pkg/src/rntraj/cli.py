"""Command-line front end.

    rntraj <command> [--config FILE] [--set key=value ...]

Commands: build-roadnet, pretrain-rn, train [--with-rn], eval, predict,
export-heatmap. Settings come from the built-in defaults, then the config
file, then ``--set`` flags, later sources winning. Outputs land in
``out_dir`` under fixed names unless a path key overrides them; every file
starts with a ``# rntraj/<kind> v1`` header and is written atomically.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import CHECKPOINT_KIND, load_checkpoint
from .dataset import eval_start_step, make_windows, parse_trajectory_file, split_train_eval
from .evaluation import ModelBundle, evaluate_model
from .global_model import RNConfig
from .io import atomic_outputs, dumps_document, header, read_document
from .local_model import LocalConfig, mean_trajectory, sample_trajectory
from .rng import SeededRNG
from .roadnet import ROADNET_KIND, RoadNetworkGraph, build_roadnet
from .training import (TrainConfig, freeze, local_checkpoint, local_from_checkpoint, pretrain_rn,
                       rn_checkpoint, rn_from_checkpoint, train_local)

EVAL_KIND = "eval-result"
PREDICT_KIND = "predictions"
HEATMAP_KIND = "heatmap"


class CLIError(Exception):
    pass


# key -> one-line description; every RunConfig field must appear here
CONFIG_DOC = {
    "data": "trajectory text file (frame ped x y per line)",
    "column_order": "frame_ped_x_y or frame_ped_y_x",
    "out_dir": "directory for outputs with default names",
    "roadnet": "road-network file (default out_dir/roadnet.json)",
    "rn_checkpoint": "crowd-model checkpoint (default out_dir/rn_checkpoint.json)",
    "local_checkpoint": "local-model checkpoint (default out_dir/local_checkpoint.json)",
    "gr": "grid cells per axis",
    "roadnet_scope": "steps the network structure is built from: train (before the held-out block) or all",
    "horizons": "comma-separated forecast horizons of the crowd model",
    "input_steps": "occupancy steps fed to the crowd model",
    "hidden_dim": "crowd-model hidden width",
    "latent_dim": "per-horizon latent width",
    "gcn_hops": "power of the normalized adjacency",
    "t_obs": "observed steps per window",
    "t_pred": "predicted steps per window",
    "window_stride": "step between window starts",
    "eval_fraction": "tail share of windows held out for evaluation",
    "eval_split": "windows used by eval/predict: eval or all",
    "hidden_channels": "local-model channel width",
    "alpha_init": "initial fusion scale",
    "neighbor_cutoff": "social-graph distance cutoff (inf for none)",
    "rn_epochs": "crowd-model pretraining epochs",
    "local_epochs": "local-model training epochs",
    "rn_lr": "crowd-model SGD learning rate",
    "rn_weight_decay": "crowd-model SGD weight decay",
    "local_optimizer": "sgd or adagrad",
    "local_lr": "local-model learning rate",
    "local_weight_decay": "local-model weight decay",
    "lambda_huber": "weight of the crowd-model Huber term",
    "lambda_local": "weight of the trajectory NLL",
    "lambda_l1": "weight of the L1 penalty",
    "lambda_l2": "weight of the L2 penalty",
    "huber_delta": "Huber threshold",
    "batch_size": "windows per optimizer step",
    "shuffle": "shuffle windows each epoch (true/false)",
    "seed": "master seed for init, shuffling and sampling",
    "eval_runs": "sampling runs averaged by eval",
    "predict_samples": "sampled trajectories per window written by predict",
    "heatmap_step": "last observed step for export-heatmap (-1: latest possible)",
    "heatmap_horizons": "comma-separated subset of horizons to export (empty: all)",
}


@dataclass
class RunConfig:
    data: str = ""
    column_order: str = "frame_ped_x_y"
    out_dir: str = "runs"
    roadnet: str = ""
    rn_checkpoint: str = ""
    local_checkpoint: str = ""
    gr: int = 6
    roadnet_scope: str = "train"
    horizons: list[int] = field(default_factory=lambda: [1, 4, 8])
    input_steps: int = 8
    hidden_dim: int = 32
    latent_dim: int = 16
    gcn_hops: int = 1
    t_obs: int = 8
    t_pred: int = 12
    window_stride: int = 1
    eval_fraction: float = 0.2
    eval_split: str = "eval"
    hidden_channels: int = 16
    alpha_init: float = 0.1
    neighbor_cutoff: float = math.inf
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
    batch_size: int = 1
    shuffle: bool = True
    seed: int = 0
    eval_runs: int = 5
    predict_samples: int = 1
    heatmap_step: int = -1
    heatmap_horizons: list[int] = field(default_factory=list)

    def path(self, key: str, default_name: str) -> Path:
        value = getattr(self, key)
        return Path(value) if value else Path(self.out_dir) / default_name

    def train_config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in asdict(self).items() if k in names})

    def rn_config(self) -> RNConfig:
        return RNConfig(list(self.horizons), self.input_steps, self.hidden_dim, self.gcn_hops, self.latent_dim)

    def local_config(self, trip_segment: int) -> LocalConfig:
        return LocalConfig(t_obs=self.t_obs, t_pred=self.t_pred, hidden_channels=self.hidden_channels,
                           trip_segment=trip_segment, alpha_init=self.alpha_init,
                           neighbor_cutoff=self.neighbor_cutoff)


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.replace(" ", "").split(",") if x]


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _coerce(key: str, text: str):
    default = getattr(RunConfig(), key)
    if isinstance(default, bool):
        return _bool(text)
    if isinstance(default, list):
        return _int_list(text)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text.strip()


def apply_settings(config: RunConfig, pairs: list[tuple[str, str, str]]) -> RunConfig:
    """Apply ``(key, value, where)`` triples; unknown keys and bad values raise CLIError."""
    valid = {f.name for f in fields(RunConfig)}
    for key, value, where in pairs:
        if key not in valid:
            raise CLIError(f"{where}: unknown config key {key!r}")
        try:
            setattr(config, key, _coerce(key, value))
        except ValueError as err:
            raise CLIError(f"{where}: bad value for {key}: {err}") from None
    return config


def parse_config_text(text: str, source: str = "<config>") -> list[tuple[str, str, str]]:
    pairs = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise CLIError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        pairs.append((key.strip(), value.strip(), f"{source}:{lineno}"))
    return pairs


def load_run_config(config_path: str | None, overrides: list[str]) -> RunConfig:
    config = RunConfig()
    if config_path:
        path = Path(config_path)
        if not path.is_file():
            raise CLIError(f"config file not found: {path}")
        apply_settings(config, parse_config_text(path.read_text(encoding="utf-8"), str(path)))
    pairs = []
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise CLIError(f"--set expects key=value, got {item!r}")
        pairs.append((key.strip(), value.strip(), "--set"))
    return apply_settings(config, pairs)


def _require_file(path: Path, what: str) -> Path:
    if not path.is_file():
        raise CLIError(f"{what} not found: {path}")
    return path


def _load_scene(config: RunConfig):
    if not config.data:
        raise CLIError("no input data: set data = <trajectory file>")
    return parse_trajectory_file(_require_file(Path(config.data), "trajectory file"), config.column_order)


def _load_rn(config: RunConfig):
    path = _require_file(config.path("rn_checkpoint", "rn_checkpoint.json"), "crowd-model checkpoint")
    return rn_from_checkpoint(load_checkpoint(path, "global_model"))


def _windows(config: RunConfig, split: str):
    scene = _load_scene(config)
    if split == "all":
        windows = make_windows(scene, config.t_obs, config.t_pred, config.window_stride)
        if not windows:
            raise CLIError(f"{config.data}: no complete {config.t_obs + config.t_pred}-step windows")
        return windows
    if split not in ("train", "eval"):
        raise CLIError(f"eval_split must be eval or all, got {split!r}")
    train, held_out = split_train_eval([scene], config.eval_fraction, config.t_obs, config.t_pred,
                                       config.window_stride)
    return train if split == "train" else held_out


def _fmt(x: float) -> str:
    return f"{x:.6f}"


# ---------------------------------------------------------------- commands

def cmd_build_roadnet(config: RunConfig) -> int:
    scene = _load_scene(config)
    if config.roadnet_scope == "train":
        fit = eval_start_step(scene, config.eval_fraction, config.t_obs, config.t_pred, config.window_stride)
    elif config.roadnet_scope == "all":
        fit = None
    else:
        raise CLIError(f"roadnet_scope must be train or all, got {config.roadnet_scope!r}")
    network = build_roadnet(scene, config.gr, fit)
    out = config.path("roadnet", "roadnet.json")
    with atomic_outputs() as w:
        w.write_text(out, dumps_document(ROADNET_KIND, network.to_document()))
    fitted = network.n_steps if fit is None else fit
    print(f"road network {network.scene_id}: {network.n_active} active nodes, {len(network.edges)} edges, "
          f"{network.n_steps} steps ({fitted} used for structure) -> {out}")
    return 0


def cmd_pretrain_rn(config: RunConfig) -> int:
    path = _require_file(config.path("roadnet", "roadnet.json"), "road-network file")
    network = RoadNetworkGraph.from_document(read_document(path, ROADNET_KIND))
    model, report = pretrain_rn(network, config.train_config(), config.rn_config())
    ckpt = config.path("rn_checkpoint", "rn_checkpoint.json")
    report_path = Path(config.out_dir) / "rn_report.jsonl"
    with atomic_outputs() as w:
        w.write_text(ckpt, dumps_document(CHECKPOINT_KIND, rn_checkpoint(model, report)))
        w.write_text(report_path, report.to_jsonl())
    losses = report.losses("huber")
    print(f"final huber {_fmt(losses[-1])} (best {_fmt(min(losses))}) after {config.rn_epochs} epochs -> {ckpt}")
    return 0


def cmd_train(config: RunConfig, with_rn: bool = False) -> int:
    rn = freeze(_load_rn(config)) if with_rn else None
    windows = _windows(config, "train")
    segment = rn.config.latent_dim if rn is not None else config.latent_dim
    run = train_local(windows, rn, config.train_config(), config.local_config(segment))
    ckpt = config.path("local_checkpoint", "local_checkpoint.json")
    report_path = Path(config.out_dir) / "local_report.jsonl"
    with atomic_outputs() as w:
        w.write_text(ckpt, dumps_document(CHECKPOINT_KIND, local_checkpoint(run, config.train_config())))
        w.write_text(report_path, run.report.to_jsonl())
    first, last = run.report.records[0], run.report.records[-1]
    print(f"{'fused' if with_rn else 'baseline'} model, {len(windows)} windows: epoch 0 loss "
          f"{_fmt(first['composite'])}, epoch {last['epoch']} loss {_fmt(last['composite'])}, "
          f"train ADE {_fmt(last['ade'])} -> {ckpt}")
    return 0


def _bundle(config: RunConfig) -> ModelBundle:
    path = _require_file(config.path("local_checkpoint", "local_checkpoint.json"), "local-model checkpoint")
    local, extra = local_from_checkpoint(load_checkpoint(path, "local_model"))
    rn = freeze(_load_rn(config)) if extra.get("fused") else None
    return ModelBundle(local, rn)


def cmd_eval(config: RunConfig) -> int:
    bundle = _bundle(config)
    windows = _windows(config, config.eval_split)
    if not windows:
        raise CLIError("empty evaluation set")
    result = evaluate_model(bundle, windows, runs=config.eval_runs, seed=config.seed)
    out = Path(config.out_dir) / "eval.json"
    doc = {"windows": len(windows), "fused": bundle.rn is not None, **result.to_document()}
    with atomic_outputs() as w:
        w.write_text(out, dumps_document(EVAL_KIND, doc))
    seg = ", ".join(_fmt(s) for s in result.segmented_ade)
    print(f"ADE {_fmt(result.ade)}  FDE {_fmt(result.fde)}  segmented ADE [{seg}]  "
          f"({len(windows)} windows, {result.runs} runs)")
    return 0


def cmd_predict(config: RunConfig) -> int:
    bundle = _bundle(config)
    windows = _windows(config, config.eval_split)
    if not windows:
        raise CLIError("no windows to predict")
    master = SeededRNG(config.seed)
    items = []
    for i, win in enumerate(windows):
        params = bundle.predict_params(win)
        rng = master.child(i)
        samples = [sample_trajectory(params, rng, win.last_observed) for _ in range(config.predict_samples)]
        items.append({
            "scene_id": win.scene_id,
            "start_frame": int(win.start_frame),
            "ped_ids": [int(p) for p in win.ped_ids],
            "observed": win.observed.tolist(),
            "target": win.target.tolist(),
            "mean": mean_trajectory(params, win.last_observed).tolist(),
            "samples": [s.tolist() for s in samples],
        })
    out = Path(config.out_dir) / "predictions.json"
    with atomic_outputs() as w:
        w.write_text(out, dumps_document(PREDICT_KIND, {"seed": config.seed, "windows": items}))
    print(f"{len(items)} windows, {config.predict_samples} samples each -> {out}")
    return 0


def heatmap_grid(network: RoadNetworkGraph, values: np.ndarray) -> list[list[float | None]]:
    """gr x gr rows (row = y index from the minimum edge); None for inactive cells."""
    gr = network.grid.gr
    grid: list[list[float | None]] = [[None] * gr for _ in range(gr)]
    for v, cell in enumerate(network.active_cells):
        iy, ix = divmod(int(cell), gr)
        grid[iy][ix] = float(values[v])
    return grid


def heatmap_csv(grid: list[list[float | None]], horizon: int, step: int) -> str:
    lines = [header(HEATMAP_KIND), f"# horizon {horizon}, forecast for step {step + horizon}"]
    lines += [",".join("" if x is None else repr(x) for x in row) for row in grid]
    return "\n".join(lines) + "\n"


def cmd_export_heatmap(config: RunConfig) -> int:
    rn = freeze(_load_rn(config))
    net_path = config.roadnet and _require_file(Path(config.roadnet), "road-network file")
    network = RoadNetworkGraph.from_document(read_document(net_path, ROADNET_KIND)) if net_path else rn.network
    if network.active_cells.tolist() != rn.network.active_cells.tolist() or network.grid != rn.network.grid:
        raise CLIError("road-network file does not match the crowd-model checkpoint")
    horizons = config.heatmap_horizons or rn.config.horizons
    missing = [h for h in horizons if h not in rn.config.horizons]
    if missing:
        raise CLIError(f"horizons {missing} are not heads of the crowd model {rn.config.horizons}")
    step = network.n_steps - 1 if config.heatmap_step < 0 else config.heatmap_step
    if step >= network.n_steps:
        raise CLIError(f"heatmap_step {step} beyond the network's {network.n_steps} steps")
    rn.network = network
    with T.no_grad():
        out = rn.forward(rn.history_window(step))
    by_h = dict(zip(rn.config.horizons, out.predictions))
    paths = []
    with atomic_outputs() as w:
        for h in horizons:
            path = Path(config.out_dir) / f"heatmap_h{h}.csv"
            w.write_text(path, heatmap_csv(heatmap_grid(network, by_h[h].data[-1]), h, step))
            paths.append(str(path))
    print(f"{len(paths)} heatmaps ({network.grid.gr}x{network.grid.gr}) from step {step}: {', '.join(paths)}")
    return 0


COMMANDS = {
    "build-roadnet": cmd_build_roadnet,
    "pretrain-rn": cmd_pretrain_rn,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "export-heatmap": cmd_export_heatmap,
}


def build_parser() -> argparse.ArgumentParser:
    keys = "\n".join(f"  {k:<20} {v}" for k, v in CONFIG_DOC.items())
    parser = argparse.ArgumentParser(
        prog="rntraj", description="Crowd-aware pedestrian trajectory prediction.",
        epilog="config keys (defaults < config file < --set):\n" + keys,
        formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value settings file")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        if name == "train":
            p.add_argument("--with-rn", action="store_true", help="fuse the frozen crowd model")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_run_config(args.config, args.overrides)
        if args.command == "train":
            return cmd_train(config, with_rn=args.with_rn)
        return COMMANDS[args.command](config)
    except (CLIError, OSError, ValueError, ArithmeticError, KeyError, json.JSONDecodeError) as err:
        # FormatError, parse errors, degenerate grids and NumericError all land here
        print(f"rntraj {args.command}: error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
