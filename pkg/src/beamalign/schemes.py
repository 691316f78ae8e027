"""Uniform entry points over the trainable schemes (proposed, DNN_NOA, RNN_A)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ComplexPair, Tensor
from .baselines import init_noa_params, init_pingpong_params, run_dnn_noa_episode, run_rnn_a_episode
from .codebook import conventional_codebook
from .config import SystemConfig
from .nn import init_params
from .protocol import draw_start, run_episode


@dataclass
class FinalBeams:
    w: ComplexPair
    f: ComplexPair
    aux_loss: Tensor | None = None
    trace: object = None


def init_scheme(cfg: SystemConfig, rng: np.random.Generator):
    if cfg.scheme == "proposed":
        return init_params(cfg, rng)
    if cfg.scheme == "dnn_noa":
        return init_noa_params(cfg, rng)
    return init_pingpong_params(cfg, rng)


def optimal_bs_index(h, cb) -> np.ndarray:
    """argmax_k ||H f_k|| per channel; lowest index wins ties."""
    beams = cb.beams if hasattr(cb, "beams") else np.asarray(cb)
    hs = np.asarray(h.h if hasattr(h, "h") else h)
    hf = np.einsum("...ij,kj->...ki", hs, beams)
    power = np.sum(np.abs(hf) ** 2, axis=-1)
    return np.argmax(power, axis=-1)


def c1_aux_loss(logits: Tensor, label) -> Tensor:
    """Mean cross-entropy -log softmax(logits)[label] over the batch."""
    label = np.asarray(label)
    logp = ad.log_softmax(logits, axis=-1)
    if logits.ndim == 1:
        return -logp[int(label)]
    onehot = np.zeros(logits.shape)
    onehot[np.arange(logits.shape[0]), label] = 1.0
    return -(logp * onehot).sum(axis=-1).mean()


def forward_scheme(params, hs: np.ndarray, cfg: SystemConfig, sigma_n: float,
                   rng: np.random.Generator, start_rng: np.random.Generator | None = None) -> FinalBeams:
    """Run one batch of episodes and return the final beam pair (plus C1 aux loss)."""
    if cfg.scheme == "proposed":
        start = draw_start(cfg, hs.shape[0], start_rng if start_rng is not None else rng)
        trace = run_episode(hs, params, cfg, rng, sigma_n=sigma_n, start=start)
        aux = None
        if cfg.variant == "C1":
            label = optimal_bs_index(hs, conventional_codebook(cfg.n_cb, cfg.n_tx))
            aux = c1_aux_loss(trace.feedback.logits, label)
        return FinalBeams(trace.w_final, trace.f_final, aux, trace)
    if cfg.scheme == "dnn_noa":
        trace = run_dnn_noa_episode(hs, params, cfg, rng, sigma_n=sigma_n)
    else:
        trace = run_rnn_a_episode(hs, params, cfg, rng, sigma_n=sigma_n)
    return FinalBeams(trace.w_final, trace.f_final, None, trace)
