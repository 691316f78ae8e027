"""Trainable building blocks: GRU layers, dense layers, beam heads and the
learnable BS codebook, plus the proposed scheme's parameter container."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import ComplexPair, Tensor
from .codebook import conventional_codebook
from .config import SystemConfig
from .errors import ConfigError, ContractError, DegenerateInputError, DimensionError

ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "tanh": ad.tanh,
    "relu": ad.relu,
    "linear": lambda x: x,
}


@dataclass
class GruLayerParams:
    w_z: Tensor
    w_r: Tensor
    w_h: Tensor
    u_z: Tensor
    u_r: Tensor
    u_h: Tensor
    b_z: Tensor
    b_r: Tensor
    b_h: Tensor

    @property
    def hidden_size(self) -> int:
        return self.w_z.shape[0]

    @property
    def input_size(self) -> int:
        return self.w_z.shape[1]

    def named(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        for key in ("w_z", "w_r", "w_h", "u_z", "u_r", "u_h", "b_z", "b_r", "b_h"):
            yield f"{prefix}.{key}", getattr(self, key)


@dataclass
class DenseParams:
    weight: Tensor  # (out, in)
    bias: Tensor  # (out,)
    activation: str = "linear"

    def __post_init__(self):
        if self.weight.shape[0] != self.bias.shape[0]:
            raise DimensionError(f"dense: weight rows {self.weight.shape[0]} != bias length {self.bias.shape[0]}")
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"dense: unknown activation {self.activation!r}")

    def named(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        yield f"{prefix}.weight", self.weight
        yield f"{prefix}.bias", self.bias


def _uniform(rng, shape, fan_in, name, trainable=True):
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, shape), requires_grad=trainable, name=name)


def init_gru_layer(input_size: int, hidden: int, rng: np.random.Generator) -> GruLayerParams:
    ws = {k: _uniform(rng, (hidden, input_size), input_size, k) for k in ("w_z", "w_r", "w_h")}
    us = {k: _uniform(rng, (hidden, hidden), hidden, k) for k in ("u_z", "u_r", "u_h")}
    bs = {k: _uniform(rng, (hidden,), hidden, k) for k in ("b_z", "b_r", "b_h")}
    return GruLayerParams(**ws, **us, **bs)


def init_dense(n_in: int, n_out: int, activation: str, rng: np.random.Generator) -> DenseParams:
    return DenseParams(_uniform(rng, (n_out, n_in), n_in, "weight"),
                       _uniform(rng, (n_out,), n_in, "bias"), activation)


def _linear(x: Tensor, w: Tensor) -> Tensor:
    return ad.matmul(x, w.T) if x.ndim >= 2 else ad.matmul(x.reshape(1, -1), w.T).reshape(-1)


def gru_step(x: Tensor, h: Tensor, p: GruLayerParams) -> Tensor:
    """One GRU update for a single vector or a (batch, features) stack."""
    if x.shape[-1] != p.input_size or h.shape[-1] != p.hidden_size:
        raise DimensionError(
            f"gru_step: input {x.shape} / hidden {h.shape} vs params in={p.input_size} hidden={p.hidden_size}")
    z = ad.sigmoid(_linear(x, p.w_z) + _linear(h, p.u_z) + p.b_z)
    r = ad.sigmoid(_linear(x, p.w_r) + _linear(h, p.u_r) + p.b_r)
    cand = ad.tanh(_linear(x, p.w_h) + _linear(r * h, p.u_h) + p.b_h)
    return (1.0 - z) * h + z * cand


def dense_forward(x: Tensor, p: DenseParams) -> Tensor:
    if x.shape[-1] != p.weight.shape[1]:
        raise DimensionError(f"dense_forward: input {x.shape} vs weight {p.weight.shape}")
    return ACTIVATIONS[p.activation](_linear(x, p.weight) + p.bias)


def dense_stack(x: Tensor, layers: list[DenseParams]) -> Tensor:
    for layer in layers:
        x = dense_forward(x, layer)
    return x


def unit_norm_beam(raw: Tensor) -> ComplexPair:
    """Split ``(..., 2N)`` reals into N complex entries and scale to unit norm."""
    if raw.shape[-1] % 2:
        raise DimensionError(f"unit_norm_beam: need an even trailing dim, got {raw.shape}")
    norm_vals = np.sqrt(np.sum(raw.values ** 2, axis=-1))
    if np.any(norm_vals <= 1e-12):
        raise DegenerateInputError("unit_norm_beam: raw vector is (near) zero")
    unit = raw / ad.l2_norm(raw, axis=-1, keepdims=True)
    n = raw.shape[-1] // 2
    return ComplexPair(unit[..., :n], unit[..., n:])


def beam_to_raw(beam: np.ndarray) -> np.ndarray:
    beam = np.asarray(beam)
    return np.concatenate([beam.real, beam.imag], axis=-1)


@dataclass
class LearnableCodebook:
    raw: Tensor  # (2 n_tx, n_cb), column k = beam k
    n_cb: int
    n_tx: int

    @classmethod
    def from_beams(cls, beams: np.ndarray, trainable: bool) -> "LearnableCodebook":
        m, n = beams.shape
        raw = beam_to_raw(beams).T.copy()
        return cls(Tensor(raw, requires_grad=trainable, name="codebook"), m, n)

    @property
    def trainable(self) -> bool:
        return self.raw.requires_grad

    def beams(self) -> ComplexPair:
        """All beams as a (n_cb, n_tx) complex pair."""
        return unit_norm_beam(self.raw.T)


def codebook_row(cb: LearnableCodebook, k: int) -> ComplexPair:
    if not 0 <= k < cb.n_cb:
        raise IndexError(f"codebook_row: index {k} outside [0, {cb.n_cb})")
    return unit_norm_beam(cb.raw[:, k])


@dataclass
class UEController:
    """N1: two GRU layers feeding a beam head."""
    layers: list[GruLayerParams]
    beam_head: DenseParams

    def named(self, prefix: str) -> Iterator[tuple[str, Tensor]]:
        for i, layer in enumerate(self.layers):
            yield from layer.named(f"{prefix}.gru{i}")
        yield from self.beam_head.named(f"{prefix}.beam_head")


@dataclass
class ModelParams:
    theta1: UEController
    theta2: DenseParams
    theta3: list[DenseParams]  # empty under C1
    theta4: LearnableCodebook  # frozen conventional codebook under C1/C2
    variant: str
    hidden: int = 0

    def named_tensors(self) -> dict[str, Tensor]:
        out = dict(self.theta1.named("theta1"))
        out.update(self.theta2.named("theta2"))
        for i, layer in enumerate(self.theta3):
            out.update(layer.named(f"theta3.dense{i}"))
        if self.theta4.trainable:
            out["theta4.codebook"] = self.theta4.raw
        return out

    def trainable(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.named_tensors().items() if v.requires_grad}


def ue_input_size(cfg: SystemConfig) -> int:
    return 2 + cfg.n_cb + 2 * cfg.n_rx


def _gru_count(n_in, h):
    return 3 * (n_in * h + h * h + h)


def _dense_count(n_in, n_out):
    return n_in * n_out + n_out


def proposed_param_count(cfg: SystemConfig, hidden: int, variant: str | None = None) -> int:
    variant = variant or cfg.variant
    h = hidden
    n = _gru_count(ue_input_size(cfg), h) + _gru_count(h, h)
    n += _dense_count(h, 2 * cfg.n_rx)
    n += _dense_count(h, cfg.n_cb if variant == "C1" else cfg.n_fb)
    if variant != "C1":
        n += _dense_count(cfg.n_fb, h) + _dense_count(h, h) + _dense_count(h, 2 * cfg.n_tx)
    if variant == "C3":
        n += 2 * cfg.n_tx * cfg.n_cb
    return n


def solve_width(count: Callable[[int], int], budget: int, tol: float = 0.1) -> int:
    """Width whose parameter count is closest to ``budget`` (within ``tol``)."""
    if count(1) > budget * (1 + tol):
        raise ConfigError(f"param_budget {budget} is below the minimum architecture ({count(1)} params)")
    lo, hi = 1, 1
    while count(hi) < budget:
        hi *= 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if count(mid) < budget:
            lo = mid
        else:
            hi = mid
    best = min((lo, hi), key=lambda h: abs(count(h) - budget))
    return best


def init_params(cfg: SystemConfig, rng: np.random.Generator) -> ModelParams:
    """Fresh proposed-scheme parameters sized to ``cfg.param_budget``."""
    h = cfg.hidden_size or solve_width(lambda w: proposed_param_count(cfg, w), cfg.param_budget)
    layers = [init_gru_layer(ue_input_size(cfg), h, rng), init_gru_layer(h, h, rng)]
    beam_head = init_dense(h, 2 * cfg.n_rx, "linear", rng)
    fb_out = cfg.n_cb if cfg.variant == "C1" else cfg.n_fb
    fb_head = init_dense(h, fb_out, "linear", rng)
    theta3 = []
    if cfg.variant != "C1":
        theta3 = [init_dense(cfg.n_fb, h, "tanh", rng), init_dense(h, h, "tanh", rng),
                  init_dense(h, 2 * cfg.n_tx, "linear", rng)]
    conv = conventional_codebook(cfg.n_cb, cfg.n_tx).beams
    theta4 = LearnableCodebook.from_beams(conv, trainable=cfg.variant == "C3")
    return ModelParams(UEController(layers, beam_head), fb_head, theta3, theta4, cfg.variant, h)


def count_params(p) -> int:
    """Trainable scalar count of a parameter container or a single layer."""
    tensors = p.trainable().values() if hasattr(p, "trainable") else [t for _, t in p.named("")]
    return int(sum(t.values.size for t in tensors if t.requires_grad))
