"""Shared fixtures-by-function: gradient cases, tiny models, oracles."""
from __future__ import annotations

import math

import numpy as np

from rntraj import tensor as T
from rntraj.dataset import SequenceWindow, scene_from_records
from rntraj.global_model import RNConfig, RNTransformer
from rntraj.local_model import LocalConfig, LocalModel
from rntraj.synthetic import periodic_occupancy, toy_network
from rntraj.tensor import Tensor

KINK_MARGIN = 1e-3


def _weighted(y: Tensor, seed: int = 99) -> Tensor:
    # a fixed random cotangent makes every output entry matter
    w = np.random.default_rng(seed).uniform(-1.0, 1.0, y.shape)
    return T.sum_(T.mul(y, Tensor(w)))


def _split(shapes):
    return lambda x: T.unflatten(x, shapes)


# name -> (input shapes, function of the pieces, kinks to avoid, domain fix)
OP_CASES = {
    "matmul": ([(3, 2), (2, 4)], lambda a, b: T.matmul(a, b), (), None),
    "add": ([(3, 4), (4,)], lambda a, b: T.add(a, b), (), None),
    "sub": ([(3, 4), (4,)], lambda a, b: T.sub(a, b), (), None),
    "mul_elementwise": ([(3, 4), (3, 4)], lambda a, b: T.mul(a, b), (), None),
    "div": ([(3, 4), (3, 4)], lambda a, b: T.div(a, b), (), "denominator"),
    "scalar_mul": ([(3, 4)], lambda a: T.scalar_mul(a, -1.7), (), None),
    "relu": ([(3, 4)], T.relu, (0.0,), None),
    "sigmoid": ([(3, 4)], T.sigmoid, (), None),
    "tanh": ([(3, 4)], T.tanh, (), None),
    "exp": ([(3, 4)], T.exp, (), None),
    "log": ([(3, 4)], T.log, (), "positive"),
    "abs": ([(3, 4)], T.abs_, (0.0,), None),
    "square": ([(3, 4)], T.square, (), None),
    "clip": ([(3, 4)], lambda a: T.clip(a, -1.0, 1.0), (-1.0, 1.0), None),
    "sum": ([(3, 4)], lambda a: T.sum_(a, axis=0), (), None),
    "mean": ([(3, 4)], lambda a: T.mean(a, axis=1, keepdims=True), (), None),
    "concat": ([(3, 2), (3, 5)], lambda a, b: T.concat([a, b], axis=-1), (), None),
    "reshape": ([(3, 4)], lambda a: T.reshape(a, (2, 6)), (), None),
    "transpose": ([(2, 3, 4)], lambda a: T.transpose(a, (2, 0, 1)), (), None),
    "slice": ([(3, 4)], lambda a: a[1:, ::2], (), None),
    "softmax_lastdim": ([(3, 4)], T.softmax_lastdim, (), None),
}


def sample_point(name: str, rng: np.random.Generator) -> np.ndarray:
    """A point in [-2, 2] valid for the op and at least KINK_MARGIN from its kinks."""
    shapes, _, kinks, domain = OP_CASES[name]
    sizes = [int(np.prod(s)) for s in shapes]
    x = rng.uniform(-2.0, 2.0, sum(sizes))
    if domain == "positive":
        x = np.abs(x)
        bad = x < 0.1
        while bad.any():
            x[bad] = rng.uniform(0.1, 2.0, bad.sum())
            bad = x < 0.1
    elif domain == "denominator":
        den = x[sizes[0]:]
        bad = np.abs(den) < 0.2
        while bad.any():
            den[bad] = rng.uniform(-2.0, 2.0, bad.sum())
            bad = np.abs(den) < 0.2
    for k in kinks:
        bad = np.abs(x - k) < KINK_MARGIN
        while bad.any():
            x[bad] = rng.uniform(-2.0, 2.0, bad.sum())
            bad = np.abs(x - k) < KINK_MARGIN
    return x


def op_objective(name: str):
    shapes, fn, _, _ = OP_CASES[name]
    return lambda x: _weighted(fn(*T.unflatten(x, shapes)))


def op_gradient_errors(name: str, n_points: int = 20, seed: int = 0) -> list[float]:
    rng = np.random.default_rng(seed)
    f = op_objective(name)
    return [T.finite_difference_check(f, sample_point(name, rng)) for _ in range(n_points)]


def model_objective(params, loss_fn):
    """Loss as a function of all parameters flattened into one vector."""
    names = list(params)
    shapes = [params[n].shape for n in names]

    def f(x):
        pieces = dict(zip(names, T.unflatten(x, shapes)))
        with params.substituted(pieces):
            return loss_fn()

    x0 = np.concatenate([params[n].data.ravel() for n in names])
    return f, x0


# tiny models

def tiny_rn(seed: int = 0, n_steps: int = 24, hidden: int = 4, latent: int = 3) -> RNTransformer:
    net = toy_network(periodic_occupancy(n_steps, 4, period=4, seed=seed))
    return RNTransformer(RNConfig(hidden_dim=hidden, latent_dim=latent), net, seed=seed)


def tiny_local(seed: int = 0, segment: int = 3, hidden: int = 4, alpha: float = 0.1) -> LocalModel:
    return LocalModel(LocalConfig(hidden_channels=hidden, fusion_dim=3, adapter_dim=4, trip_segment=segment,
                                  alpha_init=alpha), seed=seed)


def random_window(n_peds: int = 3, seed: int = 0, scene_id: str = "toy", start: int = 0) -> SequenceWindow:
    rng = np.random.default_rng(seed)
    steps = np.cumsum(rng.normal(0.0, 0.3, (20, n_peds, 2)), axis=0) + rng.uniform(0, 5, (1, n_peds, 2))
    return SequenceWindow(scene_id, start, np.arange(1, n_peds + 1), steps[:8].copy(), steps[8:].copy())


def random_scene(rng: np.random.Generator, scene_id: str = "rand", max_peds: int = 6, max_steps: int = 40):
    """Pedestrians with random entry/exit steps and random positions."""
    frames, peds, xy = [], [], []
    n_peds = int(rng.integers(1, max_peds + 1))
    n_steps = int(rng.integers(2, max_steps + 1))
    for p in range(n_peds):
        a = int(rng.integers(0, n_steps))
        b = int(rng.integers(a, n_steps))
        for t in range(a, b + 1):
            frames.append(10 * t)
            peds.append(p)
            xy.append(rng.uniform(-5.0, 5.0, 2))
    # two anchors make the extent positive on both axes
    frames += [0, 0]
    peds += [n_peds, n_peds + 1]
    xy += [[-6.0, -6.0], [6.0, 6.0]]
    return scene_from_records(scene_id, frames, peds, xy)


# oracles

def ade_oracle(pred, truth) -> float:
    total, count = 0.0, 0
    for t in range(len(pred)):
        for i in range(len(pred[t])):
            dx = pred[t][i][0] - truth[t][i][0]
            dy = pred[t][i][1] - truth[t][i][1]
            total += math.sqrt(dx * dx + dy * dy)
            count += 1
    return total / count


def fde_oracle(pred, truth) -> float:
    last = len(pred) - 1
    errs = [math.hypot(pred[last][i][0] - truth[last][i][0], pred[last][i][1] - truth[last][i][1])
            for i in range(len(pred[last]))]
    return sum(errs) / len(errs)


def cell_oracle(x: float, y: float, bounds, gr: int) -> int:
    """Direct comparison against cell edges, scanning every cell."""
    min_x, max_x, min_y, max_y = bounds
    if not (min_x <= x <= max_x and min_y <= y <= max_y):
        return -1
    w, h = (max_x - min_x) / gr, (max_y - min_y) / gr
    for iy in range(gr):
        y0 = min_y + iy * h
        y1 = max_y if iy == gr - 1 else min_y + (iy + 1) * h
        if not (y0 <= y and (y < y1 or (iy == gr - 1 and y <= y1))):
            continue
        for ix in range(gr):
            x0 = min_x + ix * w
            x1 = max_x if ix == gr - 1 else min_x + (ix + 1) * w
            if x0 <= x and (x < x1 or (ix == gr - 1 and x <= x1)):
                return iy * gr + ix
    raise AssertionError(f"point ({x}, {y}) inside bounds but in no cell")


def window_count_oracle(scene, length: int, stride: int = 1) -> int:
    present = {}
    for s, p in zip(scene.steps.tolist(), scene.ped_ids.tolist()):
        present.setdefault(p, set()).add(s)
    count = 0
    for start in range(0, scene.n_steps - length + 1, stride):
        need = set(range(start, start + length))
        if any(need <= steps for steps in present.values()):
            count += 1
    return count


def offset_local_model(offset=(3.0, 4.0), hidden: int = 4) -> LocalModel:
    """Near-deterministic model: continues each walker's last step, shifted by ``offset``.

    Only the first predicted frame carries the offset, so every predicted point
    sits exactly ``offset`` away from a constant-velocity continuation.
    """
    model = tiny_local(hidden=hidden)
    for t in model.params.tensors():
        t.data[...] = 0.0
    p = model.params
    p["extrap.bias"].data[0] = 1.0
    p["out.weight"].data[0, 0], p["out.weight"].data[0, 1] = offset
    p["out.bias"].data[2:4] = -40.0
    p["skip.weight"].data[-1, :] = 1.0
    return model


# command-line pipeline at toy scale

PLAZA = __import__("pathlib").Path(__file__).parent / "data" / "plaza.txt"
SMALL_SETTINGS = ["gr=4", "hidden_dim=4", "latent_dim=3", "rn_epochs=2", "local_epochs=2",
                  "window_stride=10", "hidden_channels=4", "eval_runs=2", "predict_samples=2"]


def run_cli(*argv) -> int:
    from rntraj.cli import main
    return main([str(a) for a in argv])


def run_pipeline(out_dir, data=PLAZA, extra=()) -> dict:
    """Every command once, fused; returns {file name: bytes} of the outputs."""
    import pathlib

    sets = [f"data={data}", f"out_dir={out_dir}", *SMALL_SETTINGS, *extra]
    flags = [a for s in sets for a in ("--set", s)]
    for cmd in (["build-roadnet"], ["pretrain-rn"], ["train", "--with-rn"], ["eval"], ["predict"],
                ["export-heatmap"]):
        code = run_cli(*cmd, *flags)
        if code != 0:
            raise AssertionError(f"{cmd} exited {code}")
    return {p.name: p.read_bytes() for p in sorted(pathlib.Path(out_dir).iterdir())}
