"""Road-network crowd model.

Per input step, node features (count, center x, center y) pass through one
graph convolution; the node-mean embedding drives a GRU. Each horizon head
turns the final hidden state into a latent vector and per-node count
forecasts. The horizon latents attend to one another in a small
feed-forward transformer block whose flattened output is the trip latent.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .layers import ParamSet, add_linear, linear, uniform_init
from .rng import SeededRNG
from .roadnet import RoadNetworkGraph, normalized_adjacency
from .tensor import Tensor

IN_CHANNELS = 3  # occupancy count, center x, center y


@dataclass
class RNConfig:
    horizons: list[int] = field(default_factory=lambda: [1, 4, 8])
    input_steps: int = 8
    hidden_dim: int = 32
    gcn_hops: int = 1
    latent_dim: int = 16

    def __post_init__(self):
        self.horizons = [int(h) for h in self.horizons]
        if not self.horizons or any(h < 1 for h in self.horizons):
            raise ValueError(f"horizons must be positive, got {self.horizons}")
        if any(b <= a for a, b in zip(self.horizons, self.horizons[1:])):
            raise ValueError(f"horizons must be strictly increasing, got {self.horizons}")
        for name in ("input_steps", "hidden_dim", "gcn_hops", "latent_dim"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def trip_dim(self) -> int:
        return len(self.horizons) * self.latent_dim

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RNForwardOutput:
    predictions: list[Tensor]  # one (h, n_active) per horizon
    trip_latent: Tensor  # (len(horizons) * latent_dim,)
    latents: list[Tensor] = field(default_factory=list)


def gcn_layer(h: Tensor, a_hat: np.ndarray | Tensor, w_self: Tensor, w_inner: Tensor, w_outer: Tensor,
              activation=T.relu) -> Tensor:
    """act(h W_self + act(A_hat h W_inner) W_outer) for features of shape (..., n, d)."""
    if h.shape[-1] != w_self.shape[0] or h.shape[-1] != w_inner.shape[0]:
        raise T.ShapeError(f"gcn_layer: features {h.shape} vs weights {w_self.shape}, {w_inner.shape}")
    a_hat = a_hat if isinstance(a_hat, Tensor) else Tensor(a_hat)
    neighbour = activation(T.matmul(a_hat, T.matmul(h, w_inner)))
    return activation(T.add(T.matmul(h, w_self), T.matmul(neighbour, w_outer)))


def gru_cell(x: Tensor, h: Tensor, params: ParamSet, prefix: str = "gru") -> Tensor:
    if x.shape[:-1] != h.shape[:-1]:
        raise T.ShapeError(f"gru_cell: input {x.shape} vs hidden {h.shape}")
    xh = T.concat([x, h], axis=-1)
    r = T.sigmoid(linear(params, f"{prefix}.reset", xh))
    z = T.sigmoid(linear(params, f"{prefix}.update", xh))
    cand = T.tanh(linear(params, f"{prefix}.cand", T.concat([x, T.mul(r, h)], axis=-1)))
    return T.add(T.mul(T.sub(1.0, z), h), T.mul(z, cand))


def add_gru(params: ParamSet, rng: SeededRNG, n_in: int, n_hidden: int, prefix: str = "gru") -> None:
    for gate in ("reset", "update", "cand"):
        add_linear(params, rng, f"{prefix}.{gate}", n_in + n_hidden, n_hidden)


def huber_loss(pred: Tensor, target, delta: float = 1.0, reduction: str = "mean") -> Tensor:
    """Elementwise Huber, 0.5 r^2 inside |r| <= delta and delta (|r| - delta/2) outside, then mean or sum."""
    target = target if isinstance(target, Tensor) else Tensor(target)
    if pred.shape != target.shape:
        raise T.ShapeError(f"huber_loss: shapes {pred.shape} and {target.shape}")
    if delta <= 0:
        raise ValueError("delta must be positive")
    r = T.abs_(T.sub(pred, target))
    inner = T.clip(r, hi=delta)
    outer = T.sub(r, inner)
    per = T.add(T.scalar_mul(T.square(inner), 0.5), T.scalar_mul(outer, delta))
    if reduction == "sum":
        return T.sum_(per)
    if reduction != "mean":
        raise ValueError(f"reduction must be mean or sum, got {reduction!r}")
    return T.mean(per)


class RNTransformer:
    def __init__(self, config: RNConfig, network: RoadNetworkGraph, seed: int = 0):
        self.config = config
        self.network = network
        self.n_active = network.n_active
        self.a_hat = Tensor(normalized_adjacency(network.adjacency(), config.gcn_hops))
        self.params = self._init_params(SeededRNG(seed))

    def _init_params(self, rng: SeededRNG) -> ParamSet:
        c, p = self.config, ParamSet()
        hid, lat, n = c.hidden_dim, c.latent_dim, self.n_active
        p.add("gcn.self", uniform_init(rng, (IN_CHANNELS, hid), IN_CHANNELS))
        p.add("gcn.inner", uniform_init(rng, (IN_CHANNELS, hid), IN_CHANNELS))
        p.add("gcn.outer", uniform_init(rng, (hid, hid), hid))
        add_gru(p, rng, hid, hid)
        for h in c.horizons:
            add_linear(p, rng, f"head{h}.latent", hid, lat)
            add_linear(p, rng, f"head{h}.pred", lat, h * n)
        for name in ("q", "k", "v"):
            p.add(f"attn.{name}", uniform_init(rng, (lat, hid), lat))
        p.add("attn.out", uniform_init(rng, (hid, lat), hid))
        add_linear(p, rng, "ffn.in", lat, hid)
        add_linear(p, rng, "ffn.out", hid, lat)
        add_linear(p, rng, "trip", c.trip_dim, c.trip_dim)
        return p

    def node_features(self, occupancy_window: np.ndarray) -> Tensor:
        occ = np.asarray(occupancy_window, dtype=np.float64)
        if occ.shape != (self.config.input_steps, self.n_active):
            raise T.ShapeError(f"occupancy window {occ.shape}, expected "
                               f"({self.config.input_steps}, {self.n_active})")
        centers = np.broadcast_to(self.network.node_centers, occ.shape + (2,))
        return Tensor(np.concatenate([occ[..., None], centers], axis=-1))

    def encode(self, occupancy_window: np.ndarray) -> Tensor:
        """Final GRU state (1, hidden_dim) after the spatial encoder at each step."""
        p = self.params
        x = self.node_features(occupancy_window)
        spatial = gcn_layer(x, self.a_hat, p["gcn.self"], p["gcn.inner"], p["gcn.outer"])
        pooled = T.mean(spatial, axis=1)  # (T', hidden)
        h = Tensor(np.zeros((1, self.config.hidden_dim)))
        for t in range(self.config.input_steps):
            h = gru_cell(pooled[t:t + 1], h, p)
        return h

    def head(self, h: int, state: Tensor) -> tuple[Tensor, Tensor]:
        latent = T.relu(linear(self.params, f"head{h}.latent", state))
        pred = T.reshape(linear(self.params, f"head{h}.pred", latent), (h, self.n_active))
        return latent, pred

    def mix(self, latents: list[Tensor]) -> Tensor:
        """Single-head self-attention over horizon latents, feed-forward map, latent layer."""
        p = self.params
        seg = T.concat(latents, axis=0)  # (H, latent)
        q, k, v = (T.matmul(seg, p[f"attn.{n}"]) for n in ("q", "k", "v"))
        scores = T.scalar_mul(T.matmul(q, T.transpose(k)), 1.0 / np.sqrt(self.config.hidden_dim))
        attended = T.matmul(T.softmax_lastdim(scores), v)
        seg = T.add(seg, T.matmul(attended, p["attn.out"]))
        seg = T.add(seg, linear(p, "ffn.out", T.relu(linear(p, "ffn.in", seg))))
        flat = T.reshape(seg, (1, self.config.trip_dim))
        return T.reshape(linear(p, "trip", flat), (self.config.trip_dim,))

    def forward(self, occupancy_window: np.ndarray) -> RNForwardOutput:
        state = self.encode(occupancy_window)
        latents, preds = [], []
        for h in self.config.horizons:
            latent, pred = self.head(h, state)
            latents.append(latent)
            preds.append(pred)
        return RNForwardOutput(preds, self.mix(latents), latents)

    def window_loss(self, occupancy_window: np.ndarray, targets: list[np.ndarray], delta: float = 1.0) -> Tensor:
        """Huber summed over every head, predicted step and node for one window."""
        out = self.forward(occupancy_window)
        total = None
        for pred, target in zip(out.predictions, targets):
            term = huber_loss(pred, target, delta, reduction="sum")
            total = term if total is None else T.add(total, term)
        return total

    def freeze(self) -> "RNTransformer":
        self.params.freeze()
        return self

    @property
    def frozen(self) -> bool:
        return self.params.frozen

    def history_window(self, end_step: int) -> np.ndarray:
        """Occupancy for the ``input_steps`` steps ending at ``end_step`` (inclusive), zero-padded at the start."""
        n_in = self.config.input_steps
        start = end_step - n_in + 1
        occ = self.network.occupancy
        if end_step >= occ.shape[0]:
            raise IndexError(f"step {end_step} beyond the network's {occ.shape[0]} steps")
        out = np.zeros((n_in, self.n_active))
        lo = max(start, 0)
        out[lo - start:] = occ[lo:end_step + 1]
        return out

    def future_targets(self, end_step: int) -> list[np.ndarray] | None:
        """Counts for each horizon after ``end_step``; None when the series is too short."""
        occ = self.network.occupancy
        if end_step + max(self.config.horizons) >= occ.shape[0]:
            return None
        return [occ[end_step + 1:end_step + 1 + h].astype(np.float64) for h in self.config.horizons]


def rn_forward(occupancy_window: np.ndarray, model: RNTransformer) -> RNForwardOutput:
    return model.forward(occupancy_window)
