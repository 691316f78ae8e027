"""Unrolled joint beam-alignment episode: BS codebook sweep, adaptive UE
sensing, feedback and final beams on both sides.

All functions operate on a batch of independent episodes at once; tensors
carry a leading batch axis of size B.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import ComplexPair, Tensor
from .channel import Channel, draw_noise, propagate
from .codebook import ConventionalCodebook, conventional_codebook
from .config import SystemConfig
from .errors import ContractError, ProtocolOrderError
from .nn import LearnableCodebook, ModelParams, dense_forward, dense_stack, gru_step, unit_norm_beam


@dataclass
class UEState:
    hidden: list[Tensor]
    w_prev: ComplexPair | None
    y_prev: ComplexPair | None
    x_prev: np.ndarray  # -1 before the first observation
    t: int = 0
    # an observation (y, x) has been stored but not yet fed to the GRU
    pending: bool = False
    absorbed: Tensor | None = None

    @property
    def batch(self) -> int:
        return self.x_prev.shape[0]


@dataclass
class FeedbackMessage:
    vector: Tensor | None = None  # (B, n_fb) for C2/C3
    index: np.ndarray | None = None  # (B,) for C1
    logits: Tensor | None = None


@dataclass
class StepRecord:
    t: int
    f: ComplexPair
    x: np.ndarray
    w: ComplexPair
    y: ComplexPair


@dataclass
class EpisodeTrace:
    start: np.ndarray
    steps: list[StepRecord]
    feedback: FeedbackMessage
    w_final: ComplexPair
    f_final: ComplexPair
    h: np.ndarray  # (B, n_rx, n_tx)

    @property
    def x_sequence(self) -> np.ndarray:
        return np.stack([s.x for s in self.steps], axis=1)


def channel_stack(h) -> np.ndarray:
    if isinstance(h, Channel):
        return h.h[None]
    if isinstance(h, (list, tuple)):
        return np.stack([c.h if isinstance(c, Channel) else c for c in h])
    h = np.asarray(h, dtype=np.complex128)
    return h[None] if h.ndim == 2 else h


# ----------------------------------------------------------------------
# BS side

def codebook_beams(cb) -> ComplexPair:
    """Every codebook beam as an (n_cb, n_tx) pair (differentiable when learnable)."""
    if isinstance(cb, LearnableCodebook):
        return cb.beams()
    if isinstance(cb, ConventionalCodebook):
        return ComplexPair.from_numpy(cb.beams)
    if isinstance(cb, ComplexPair):
        return cb
    return ComplexPair.from_numpy(np.asarray(cb))


def bs_sweep_beam(cb, t: int, i, beams: ComplexPair | None = None):
    """Sweep beam at step ``t`` for start index ``i`` (scalar or per-episode array)."""
    beams = codebook_beams(cb) if beams is None else beams
    n_cb = beams.shape[0]
    i_arr = np.asarray(i)
    if t < 0 or np.any(i_arr < 0) or np.any(i_arr >= n_cb):
        raise ContractError(f"bs_sweep_beam: need t >= 0 and 0 <= i < {n_cb}")
    x = (t + i_arr) % n_cb
    if x.ndim == 0:
        return beams[int(x)], int(x)
    return ComplexPair(ad.take(beams.re, x), ad.take(beams.im, x)), x


def bs_final_beam(m: FeedbackMessage, p: ModelParams, cfg: SystemConfig) -> ComplexPair:
    if p.variant == "C1":
        if m.index is None:
            raise ContractError("bs_final_beam: C1 needs an index feedback message")
        conv = conventional_codebook(cfg.n_cb, cfg.n_tx).beams
        return ComplexPair.from_numpy(conv[np.asarray(m.index)])
    if m.vector is None:
        raise ContractError(f"bs_final_beam: {p.variant} needs a vector feedback message")
    return unit_norm_beam(dense_stack(m.vector, p.theta3))


# ----------------------------------------------------------------------
# UE side

def init_ue_state(p: ModelParams, batch: int) -> UEState:
    hidden = [Tensor(np.zeros((batch, layer.hidden_size))) for layer in p.theta1.layers]
    return UEState(hidden, None, None, np.full(batch, -1, dtype=np.int64))


def encode_observation(s: UEState, cfg: SystemConfig, sigma_n: float) -> Tensor:
    """Controller input: scaled (Re y, Im y), one-hot beam index, (Re w, Im w)."""
    b = s.batch
    onehot = np.zeros((b, cfg.n_cb))
    seen = s.x_prev >= 0
    onehot[np.nonzero(seen)[0], s.x_prev[seen]] = 1.0
    if s.y_prev is None:
        y_part = Tensor(np.zeros((b, 2)))
    else:
        scale = 1.0 / np.sqrt(1.0 + sigma_n ** 2)
        y_part = ad.concatenate([s.y_prev.re.reshape(b, 1), s.y_prev.im.reshape(b, 1)]) * scale
    if s.w_prev is None:
        w_part = Tensor(np.zeros((b, 2 * cfg.n_rx)))
    else:
        w_part = ad.concatenate([s.w_prev.re, s.w_prev.im])
    return ad.concatenate([y_part, Tensor(onehot), w_part])


def _advance(s: UEState, p: ModelParams, cfg: SystemConfig, sigma_n: float) -> list[Tensor]:
    x = encode_observation(s, cfg, sigma_n)
    hidden = []
    for layer, h in zip(p.theta1.layers, s.hidden):
        x = gru_step(x, h, layer)
        hidden.append(x)
    return hidden


def _beam_head(p: ModelParams, top: Tensor) -> ComplexPair:
    return unit_norm_beam(dense_forward(top, p.theta1.beam_head))


def ue_controller_step(s: UEState, p: ModelParams, cfg: SystemConfig,
                       sigma_n: float) -> tuple[UEState, ComplexPair]:
    """Consume the last observation, advance both GRU layers, emit ``w_t``."""
    if s.t >= cfg.t_steps:
        raise ProtocolOrderError(f"ue_controller_step: all {cfg.t_steps} sensing steps already taken")
    if s.t > 0 and not s.pending:
        raise ProtocolOrderError("ue_controller_step: previous measurement not observed yet")
    hidden = _advance(s, p, cfg, sigma_n)
    w = _beam_head(p, hidden[-1])
    return replace(s, hidden=hidden, w_prev=w, t=s.t + 1, pending=False), w


def observe(s: UEState, y: ComplexPair, x: np.ndarray) -> UEState:
    return replace(s, y_prev=y, x_prev=np.asarray(x, dtype=np.int64), pending=True)


def _require_sensing_done(s: UEState, cfg: SystemConfig, who: str):
    if s.t != cfg.t_steps or not s.pending:
        raise ProtocolOrderError(f"{who}: sensing incomplete (step {s.t} of {cfg.t_steps})")


def _absorbed(s: UEState, p: ModelParams, cfg: SystemConfig, sigma_n: float) -> Tensor:
    if s.absorbed is None:
        s.absorbed = _advance(s, p, cfg, sigma_n)[-1]
    return s.absorbed


def ue_feedback(s: UEState, p: ModelParams, cfg: SystemConfig, sigma_n: float) -> FeedbackMessage:
    _require_sensing_done(s, cfg, "ue_feedback")
    # literal index set y_{<T-1}: the state that emitted w_{T-1}
    top = s.hidden[-1] if cfg.feedback_literal else _absorbed(s, p, cfg, sigma_n)
    out = dense_forward(top, p.theta2)
    if p.variant == "C1":
        return FeedbackMessage(index=np.argmax(out.values, axis=-1), logits=out)
    return FeedbackMessage(vector=out)


def ue_final_beam(s: UEState, p: ModelParams, cfg: SystemConfig, sigma_n: float) -> ComplexPair:
    _require_sensing_done(s, cfg, "ue_final_beam")
    return _beam_head(p, _absorbed(s, p, cfg, sigma_n))


# ----------------------------------------------------------------------

def draw_start(cfg: SystemConfig, batch: int, rng: np.random.Generator) -> np.ndarray:
    if cfg.fixed_start:
        return np.zeros(batch, dtype=np.int64)
    return rng.integers(0, cfg.n_cb, size=batch)


def run_episode(h, p: ModelParams, cfg: SystemConfig, rng: np.random.Generator,
                sigma_n: float | None = None, start=None,
                y_override: dict[int, np.ndarray] | None = None,
                noise_rng: np.random.Generator | None = None) -> EpisodeTrace:
    """Unroll one episode per channel in ``h`` (a Channel or a stack of matrices).

    ``start`` fixes the sweep start index; otherwise it is drawn from ``rng``
    (or 0 when ``cfg.fixed_start``).  Noise comes from ``noise_rng`` if given,
    else from ``rng``.  ``y_override`` replaces recorded symbols by step, for
    probing causality.
    """
    hs = channel_stack(h)
    b = hs.shape[0]
    sigma_n = cfg.sigma_train if sigma_n is None else sigma_n
    noise_rng = rng if noise_rng is None else noise_rng
    if start is None:
        start = draw_start(cfg, b, rng)
    start = np.broadcast_to(np.asarray(start, dtype=np.int64), (b,)).copy()

    beams = codebook_beams(p.theta4)
    s = init_ue_state(p, b)
    steps = []
    for t in range(cfg.t_steps):
        f_t, x_t = bs_sweep_beam(None, t, start, beams=beams)
        s, w_t = ue_controller_step(s, p, cfg, sigma_n)
        noise = draw_noise((b, cfg.n_rx), sigma_n, noise_rng) if sigma_n > 0 else None
        y_t = propagate(hs, w_t, f_t, sigma_n, noise_rng, noise=noise)
        if y_override and t in y_override:
            y_t = ComplexPair.from_numpy(np.broadcast_to(y_override[t], (b,)))
        steps.append(StepRecord(t, f_t, x_t, w_t, y_t))
        s = observe(s, y_t, x_t)
    fb = ue_feedback(s, p, cfg, sigma_n)
    f_final = bs_final_beam(fb, p, cfg)
    w_final = ue_final_beam(s, p, cfg, sigma_n)
    return EpisodeTrace(start, steps, fb, w_final, f_final, hs)
