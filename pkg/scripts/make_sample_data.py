"""Write the plaza crowd scene in the ETH/UCY text layout (frame, ped, x, y; tab-separated).

    python3 scripts/make_sample_data.py [out_path] [--steps N] [--seed S]
"""
import argparse
from pathlib import Path

from rntraj.synthetic import corridor_scene


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out", nargs="?", default=str(Path(__file__).resolve().parents[1] / "tests/data/plaza.txt"))
    ap.add_argument("--steps", type=int, default=240)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    scene = corridor_scene(n_steps=args.steps, seed=args.seed)
    # two decimals and float frame/ped fields, as in the public annotation files
    lines = [f"{float(f):.1f}\t{float(p):.1f}\t{x:.2f}\t{y:.2f}"
             for f, p, (x, y) in zip(scene.raw_frames, scene.ped_ids, scene.xy)]
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"{len(lines)} rows, {len(set(scene.ped_ids.tolist()))} pedestrians, {scene.n_steps} steps -> {args.out}")


if __name__ == "__main__":
    main()
