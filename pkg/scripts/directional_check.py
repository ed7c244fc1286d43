"""Fused vs baseline on a held-out tail of one scene, over several seeds.

The road network and the crowd model see only the steps before the first
held-out window; the crowd model is pretrained once, then frozen. For each seed a baseline and a fused
local model start from the same weights and see the same window order.

    python3 scripts/directional_check.py [--data tests/data/plaza.txt] [--seeds 5] ...
"""
from __future__ import annotations

import argparse
import json
import time
from pathlib import Path

from rntraj.dataset import parse_trajectory_file, split_train_eval
from rntraj.evaluation import ModelBundle, evaluate_model
from rntraj.global_model import RNConfig
from rntraj.local_model import LocalConfig
from rntraj.roadnet import build_roadnet
from rntraj.training import TrainConfig, freeze, pretrain_rn, rn_samples, train_local

DEFAULT_DATA = Path(__file__).resolve().parents[1] / "tests/data/plaza.txt"


def run(data=DEFAULT_DATA, seeds=5, rn_epochs=20, local_epochs=30, stride=3, hidden_dim=16,
        eval_fraction=0.25, runs=5, local_lr=0.02, optimizer="adagrad", gr=6, verbose=True) -> dict:
    scene = parse_trajectory_file(data)
    train, held_out = split_train_eval([scene], eval_fraction, stride=stride)
    boundary = min(w.start_frame for w in held_out)
    # structure and pretraining targets come from the steps before the held-out block
    network = build_roadnet(scene, gr, fit_steps=boundary)
    rn_cfg = RNConfig(hidden_dim=hidden_dim)
    samples = rn_samples(network, rn_cfg)
    t0 = time.perf_counter()
    rn, rn_report = pretrain_rn(network, TrainConfig(rn_epochs=rn_epochs), rn_cfg, samples=samples)
    rn = freeze(rn)
    if verbose:
        h = rn_report.losses("huber")
        print(f"crowd model: {len(samples)} samples, huber {h[0]:.4f} -> {min(h):.4f} "
              f"({time.perf_counter() - t0:.1f}s)")
    rows = []
    for seed in range(seeds):
        cfg = TrainConfig(local_epochs=local_epochs, local_lr=local_lr, local_optimizer=optimizer, seed=seed)
        lcfg = LocalConfig(trip_segment=rn_cfg.latent_dim)
        base = train_local(train, None, cfg, lcfg)
        fused = train_local(train, rn, cfg, lcfg)
        r_base = evaluate_model(ModelBundle(base.model), held_out, runs=runs, seed=seed)
        r_fused = evaluate_model(ModelBundle(fused.model, rn), held_out, runs=runs, seed=seed)
        row = {"seed": seed, "baseline_ade": r_base.ade, "fused_ade": r_fused.ade,
               "baseline_fde": r_base.fde, "fused_fde": r_fused.fde,
               "alpha": float(fused.model.params["alpha"].data[0])}
        rows.append(row)
        if verbose:
            print(f"seed {seed}: baseline ADE {r_base.ade:.4f} FDE {r_base.fde:.4f} | "
                  f"fused ADE {r_fused.ade:.4f} FDE {r_fused.fde:.4f} | alpha {row['alpha']:.4f}")
    wins = sum(r["fused_ade"] <= r["baseline_ade"] for r in rows)
    summary = {"train_windows": len(train), "eval_windows": len(held_out), "fused_wins": wins,
               "seeds": seeds, "rows": rows}
    if verbose:
        print(f"fused <= baseline in {wins} of {seeds} seeds")
    return summary


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--data", default=str(DEFAULT_DATA))
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--rn-epochs", type=int, default=20)
    ap.add_argument("--local-epochs", type=int, default=30)
    ap.add_argument("--stride", type=int, default=3)
    ap.add_argument("--local-lr", type=float, default=0.02)
    ap.add_argument("--optimizer", default="adagrad")
    ap.add_argument("--json", help="write the summary here")
    args = ap.parse_args()
    summary = run(args.data, args.seeds, args.rn_epochs, args.local_epochs, args.stride,
                  local_lr=args.local_lr, optimizer=args.optimizer)
    if args.json:
        Path(args.json).write_text(json.dumps(summary, indent=1) + "\n")


if __name__ == "__main__":
    main()
