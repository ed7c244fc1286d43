"""Socially-aware local trajectory model with an optional trip-latent adapter.

Observed displacements are mixed across pedestrians by a per-step graph
convolution over the inverse-distance social graph, then pushed through a
residual temporal stack that extrapolates 8 observed steps to 12 predicted
ones. Output channels are (mu_x, mu_y, log sigma_x, log sigma_y, pre-tanh rho);
a learned time map also carries the observed displacements straight onto the
predicted means.

When a trip latent is supplied, the adapter (one convolution over the horizon
segments, then linear layers, ReLU between) maps it to a feature vector that
is scaled by a learnable ``alpha`` and joined channel-wise to every
pedestrian's spatial features before the temporal stack. The join is
implemented as a separate weight block added to the first temporal
convolution, which is algebraically the same as concatenating channels and
keeps the baseline path bitwise untouched when ``alpha`` is zero.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .dataset import SequenceWindow
from .layers import ParamSet, add_linear, conv_same, linear, shift_stack, uniform_init
from .rng import SeededRNG
from .tensor import Tensor

LOG_2PI = math.log(2.0 * math.pi)
NLL_CEILING = -math.log(1e-300)
OUT_CHANNELS = 5
RHO_BOUND = 1.0 - 1e-6  # tanh saturates to exactly 1.0 in float64


@dataclass
class LocalConfig:
    t_obs: int = 8
    t_pred: int = 12
    hidden_channels: int = 16
    kernel_size: int = 3
    fusion_dim: int = 8
    adapter_dim: int = 16
    trip_segment: int = 16  # latent_dim of the global model
    alpha_init: float = 0.1
    neighbor_cutoff: float = math.inf

    def __post_init__(self):
        for name in ("t_obs", "t_pred", "hidden_channels", "fusion_dim", "adapter_dim", "trip_segment"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["neighbor_cutoff"] = "inf" if math.isinf(self.neighbor_cutoff) else self.neighbor_cutoff
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LocalConfig":
        d = dict(d)
        d["neighbor_cutoff"] = float(d.get("neighbor_cutoff", "inf"))
        return cls(**d)


@dataclass
class SocialGraph:
    kernel: np.ndarray  # (T, N, N) inverse distances, zero diagonal
    normalized: np.ndarray  # (T, N, N) D^-1/2 (K + I) D^-1/2


def social_kernel(positions: np.ndarray, cutoff: float = math.inf) -> np.ndarray:
    """1/||p_i - p_j|| per step; zero on the diagonal, for coincident pairs and beyond ``cutoff``."""
    pos = np.asarray(positions, dtype=np.float64)
    diff = pos[:, :, None, :] - pos[:, None, :, :]
    dist = np.sqrt((diff ** 2).sum(-1))
    with np.errstate(divide="ignore"):
        k = np.where(dist > 0, 1.0 / dist, 0.0)
    k[dist > cutoff] = 0.0
    idx = np.arange(pos.shape[1])
    k[:, idx, idx] = 0.0
    return k


def build_social_graph(positions: np.ndarray, cutoff: float = math.inf) -> SocialGraph:
    pos = np.asarray(positions, dtype=np.float64)
    if pos.ndim != 3 or pos.shape[-1] != 2 or pos.shape[1] < 1:
        raise T.ShapeError(f"positions must be (T, N>=1, 2), got {pos.shape}")
    k = social_kernel(pos, cutoff)
    a = k + np.eye(pos.shape[1])[None]
    inv = 1.0 / np.sqrt(a.sum(axis=-1))
    return SocialGraph(k, inv[..., :, None] * a * inv[..., None, :])


@dataclass
class GaussianTrajectoryParams:
    mu: Tensor  # (T_pred, N, 2) displacement means
    log_sigma: Tensor  # (T_pred, N, 2)
    rho: Tensor  # (T_pred, N)

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.log_sigma.data)

    @classmethod
    def from_values(cls, mu, sigma, rho, requires_grad: bool = False) -> "GaussianTrajectoryParams":
        sigma = np.asarray(sigma, dtype=np.float64)
        rho = np.asarray(rho, dtype=np.float64)
        if np.any(sigma <= 0) or np.any(np.abs(rho) >= 1):
            raise ValueError("need sigma > 0 and |rho| < 1")
        return cls(Tensor(mu, requires_grad), Tensor(np.log(sigma), requires_grad), Tensor(rho, requires_grad))

    def detach(self) -> "GaussianTrajectoryParams":
        return GaussianTrajectoryParams(self.mu.detach(), self.log_sigma.detach(), self.rho.detach())


def gaussian_nll(params: GaussianTrajectoryParams, target_rel) -> Tensor:
    """Mean negative log density of the target displacements; per point capped at -log(1e-300)."""
    target = target_rel if isinstance(target_rel, Tensor) else Tensor(target_rel)
    if target.shape != params.mu.shape:
        raise T.ShapeError(f"gaussian_nll: target {target.shape} vs mu {params.mu.shape}")
    z = T.mul(T.sub(target, params.mu), T.exp(T.scalar_mul(params.log_sigma, -1.0)))
    zx, zy = z[..., 0], z[..., 1]
    rho = params.rho
    one_m = T.sub(1.0, T.square(rho))
    quad = T.sub(T.add(T.square(zx), T.square(zy)), T.scalar_mul(T.mul(rho, T.mul(zx, zy)), 2.0))
    log_norm = T.add(T.sum_(params.log_sigma, axis=-1), T.scalar_mul(T.log(one_m), 0.5))
    per_point = T.add(T.add(log_norm, T.div(quad, T.scalar_mul(one_m, 2.0))), LOG_2PI)
    return T.mean(T.clip(per_point, hi=NLL_CEILING))


def sample_displacements(params: GaussianTrajectoryParams, rng: SeededRNG) -> np.ndarray:
    mu = params.mu.data
    sigma = params.sigma
    rho = params.rho.data
    z1 = rng.normal(rho.shape)
    z2 = rng.normal(rho.shape)
    dx = mu[..., 0] + sigma[..., 0] * z1
    dy = mu[..., 1] + sigma[..., 1] * (rho * z1 + np.sqrt(1.0 - rho * rho) * z2)
    return np.stack([dx, dy], axis=-1)


def sample_trajectory(params: GaussianTrajectoryParams, rng: SeededRNG, last_observed: np.ndarray) -> np.ndarray:
    """One absolute-coordinate draw (T_pred, N, 2), Cholesky-factored per step."""
    return np.asarray(last_observed)[None] + np.cumsum(sample_displacements(params, rng), axis=0)


def mean_trajectory(params: GaussianTrajectoryParams, last_observed: np.ndarray) -> np.ndarray:
    return np.asarray(last_observed)[None] + np.cumsum(params.mu.data, axis=0)


class LocalModel:
    def __init__(self, config: LocalConfig | None = None, seed: int = 0):
        self.config = config or LocalConfig()
        self.params = self._init_params(SeededRNG(seed))

    def _init_params(self, rng: SeededRNG) -> ParamSet:
        c, p = self.config, ParamSet()
        hid, k = c.hidden_channels, c.kernel_size
        add_linear(p, rng, "spatial", 2, hid)
        add_linear(p, rng, "tconv1", k * hid, hid)
        add_linear(p, rng, "extrap", c.t_obs, c.t_pred)
        add_linear(p, rng, "tconv2", k * hid, hid)
        add_linear(p, rng, "out", hid, OUT_CHANNELS)
        p.add("skip.weight", uniform_init(rng, (c.t_obs, c.t_pred), c.t_obs))
        # adapter parameters exist for every model so baseline and fused runs share initial weights
        add_linear(p, rng, "adapter.conv", k * c.trip_segment, c.adapter_dim)
        add_linear(p, rng, "adapter.fc1", c.adapter_dim, c.adapter_dim)
        add_linear(p, rng, "adapter.fc2", c.adapter_dim, c.fusion_dim)
        p.add("fuse.weight", uniform_init(rng, (k * c.fusion_dim, hid), k * (hid + c.fusion_dim)))
        p.add("alpha", np.array([c.alpha_init]))
        return p

    def adapter(self, trip_latent: Tensor) -> Tensor:
        """Trip latent (H * segment,) -> scaled fusion feature (1, fusion_dim)."""
        c, p = self.config, self.params
        trip = trip_latent if isinstance(trip_latent, Tensor) else Tensor(trip_latent)
        if trip.size % c.trip_segment:
            raise T.ShapeError(f"trip latent of length {trip.size} is not a multiple of {c.trip_segment}")
        seg = T.reshape(trip, (trip.size // c.trip_segment, c.trip_segment))
        h = T.relu(conv_same(p, "adapter.conv", seg, c.kernel_size))
        h = T.mean(h, axis=0, keepdims=True)
        h = T.relu(linear(p, "adapter.fc1", h))
        return T.mul(linear(p, "adapter.fc2", h), p["alpha"])

    def forward(self, window: SequenceWindow, graph: SocialGraph | None = None,
                trip_latent=None) -> GaussianTrajectoryParams:
        c, p = self.config, self.params
        if window.t_obs != c.t_obs:
            raise T.ShapeError(f"window has {window.t_obs} observed steps, model expects {c.t_obs}")
        if graph is None:
            graph = build_social_graph(window.observed, c.neighbor_cutoff)
        n = window.n_peds
        if graph.normalized.shape != (c.t_obs, n, n):
            raise T.ShapeError(f"social graph {graph.normalized.shape} does not match {n} pedestrians")
        v = Tensor(window.observed_rel)
        spatial = T.relu(T.add(T.matmul(Tensor(graph.normalized), T.matmul(v, p["spatial.weight"])),
                               p["spatial.bias"]))
        pre = conv_same(p, "tconv1", spatial, c.kernel_size)
        if trip_latent is not None:
            feat = self.adapter(trip_latent)  # (1, F)
            fused = T.mul(Tensor(np.ones((c.t_obs, n, 1))), feat)
            pre = T.add(pre, T.matmul(shift_stack(fused, c.kernel_size), p["fuse.weight"]))
        x1 = T.add(T.relu(pre), spatial)  # (T_obs, N, C)
        # extrapolate along time: (N, C, T_obs) @ (T_obs, T_pred)
        y = T.transpose(linear(p, "extrap", T.transpose(x1, (1, 2, 0))), (2, 0, 1))
        y2 = T.add(T.relu(conv_same(p, "tconv2", y, c.kernel_size)), y)
        raw = linear(p, "out", y2)  # (T_pred, N, 5)
        # input-to-output residual: observed displacements mapped onto the predicted frames
        skip = T.transpose(T.matmul(T.transpose(v, (1, 2, 0)), p["skip.weight"]), (2, 0, 1))
        mu = T.add(raw[..., 0:2], skip)
        return GaussianTrajectoryParams(mu, raw[..., 2:4], T.scalar_mul(T.tanh(raw[..., 4]), RHO_BOUND))

    def trainable(self) -> list[Tensor]:
        return [t for t in self.params.tensors() if t.requires_grad]


def local_forward(window: SequenceWindow, graph: SocialGraph | None, trip_latent, model: LocalModel) -> GaussianTrajectoryParams:
    return model.forward(window, graph, trip_latent)
