"""Checkpoint documents shared by the global and local models.

A checkpoint echoes the model config, lists every parameter with its name,
shape and flat values, and optionally carries optimizer state so training
can resume bit-for-bit.
"""
from __future__ import annotations

import numpy as np

from .io import FormatError, read_document, write_document
from .layers import ParamSet
from .optim import OptimizerState

CHECKPOINT_KIND = "checkpoint"


def params_to_list(params: ParamSet | dict[str, np.ndarray]) -> list[dict]:
    items = params.items() if isinstance(params, dict) else ((n, t.data) for n, t in params.items())
    return [{"name": n, "shape": list(np.shape(v)), "values": [float(x) for x in np.ravel(v)]}
            for n, v in items]


def params_from_list(entries: list[dict]) -> dict[str, np.ndarray]:
    out = {}
    for e in entries:
        try:
            values = np.array(e["values"], dtype=np.float64)
            out[e["name"]] = values.reshape(e["shape"])
        except (KeyError, ValueError) as err:
            raise FormatError(f"bad parameter entry: {err}") from None
    return out


def optimizer_to_dict(state: OptimizerState) -> dict:
    return {
        "kind": state.kind,
        "learning_rate": state.learning_rate,
        "weight_decay": state.weight_decay,
        "epsilon": state.epsilon,
        "steps": state.steps,
        "accumulators": params_to_list(state.accumulators),
    }


def optimizer_from_dict(d: dict) -> OptimizerState:
    return OptimizerState(d["kind"], float(d["learning_rate"]), float(d["weight_decay"]),
                          float(d["epsilon"]), params_from_list(d["accumulators"]), int(d["steps"]))


def make_checkpoint(section: str, config: dict, params, extra: dict | None = None,
                    optimizer: OptimizerState | None = None, epoch: int | None = None) -> dict:
    doc = {"section": section, "config": config, "epoch": epoch, "extra": extra or {},
           "parameters": params_to_list(params)}
    if optimizer is not None:
        doc["optimizer"] = optimizer_to_dict(optimizer)
    return doc


def save_checkpoint(path, doc: dict) -> None:
    write_document(path, CHECKPOINT_KIND, doc)


def load_checkpoint(path, section: str | None = None) -> dict:
    doc = read_document(path, CHECKPOINT_KIND)
    if section is not None and doc.get("section") != section:
        raise FormatError(f"{path}: expected a {section} checkpoint, found {doc.get('section')!r}")
    return doc
