"""Reference schemes: exhaustive codebook search, the MRT/MRC bound and
simplified learned joint-alignment baselines (non-adaptive DNN and
adaptive ping-pong RNN)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ComplexPair, Tensor
from .channel import Channel, draw_noise
from .codebook import ConventionalCodebook, conventional_codebook
from .config import SystemConfig
from .errors import ContractError, DegenerateInputError
from .nn import (DenseParams, GruLayerParams, dense_forward, dense_stack, gru_step, init_dense,
                 init_gru_layer, solve_width, unit_norm_beam, _dense_count, _gru_count)
from .protocol import channel_stack

__all__ = [
    "conventional_codebook", "ConventionalCodebook", "exhaustive_split", "exhaustive_search",
    "exhaustive_search_batch", "mrt_mrc", "NoaParams", "init_noa_params", "run_dnn_noa_episode",
    "PingPongParams", "init_pingpong_params", "run_rnn_a_episode",
]


def exhaustive_split(t_steps: int, n_cb: int) -> tuple[int, int]:
    """(M_TX, M_RX) with M_TX * M_RX = T.

    M_TX = n_cb when it divides T, otherwise the most balanced factor pair
    with M_TX >= M_RX.
    """
    if t_steps % n_cb == 0:
        return n_cb, t_steps // n_cb
    m_rx = max(d for d in range(1, int(np.sqrt(t_steps)) + 1) if t_steps % d == 0)
    return t_steps // m_rx, m_rx


def exhaustive_search(h, cb_tx: ConventionalCodebook, cb_rx: ConventionalCodebook,
                      sigma_n: float, rng: np.random.Generator):
    """Measure every (f_j, w_k) pair once and keep the strongest |y|^2.

    Returns ``(f, w, measured_pairs)`` with ``measured_pairs`` a list of
    ``(j, k, y)`` in measurement order.
    """
    if cb_tx.m < 1 or cb_rx.m < 1:
        raise ContractError("exhaustive_search: empty codebook")
    hm = h.h if isinstance(h, Channel) else np.asarray(h)
    f_idx, w_idx, y = _measure_pairs(hm[None], cb_tx.beams, cb_rx.beams, sigma_n, rng)
    pairs = [(int(j), int(k), complex(v)) for j, k, v in zip(f_idx, w_idx, y[0])]
    best = int(np.argmax(np.abs(y[0]) ** 2))
    return cb_tx.beams[f_idx[best]], cb_rx.beams[w_idx[best]], pairs


def _measure_pairs(hs, f_beams, w_beams, sigma_n, rng):
    m_tx, m_rx = f_beams.shape[0], w_beams.shape[0]
    f_idx = np.repeat(np.arange(m_tx), m_rx)
    w_idx = np.tile(np.arange(m_rx), m_tx)
    # y[b, p] = w_p^H H_b f_p (+ w_p^H n)
    hf = np.einsum("bij,pj->bpi", hs, f_beams[f_idx])
    y = np.einsum("pi,bpi->bp", np.conj(w_beams[w_idx]), hf)
    if sigma_n > 0:
        noise = draw_noise((hs.shape[0], len(f_idx), hs.shape[1]), sigma_n, rng)
        y = y + np.einsum("pi,bpi->bp", np.conj(w_beams[w_idx]), noise)
    return f_idx, w_idx, y


def exhaustive_search_batch(hs, cb_tx, cb_rx, sigma_n, rng):
    """Vectorised exhaustive search over a (B, n_rx, n_tx) stack -> (f, w) arrays."""
    hs = channel_stack(hs)
    f_idx, w_idx, y = _measure_pairs(hs, cb_tx.beams, cb_rx.beams, sigma_n, rng)
    best = np.argmax(np.abs(y) ** 2, axis=1)
    return cb_tx.beams[f_idx[best]], cb_rx.beams[w_idx[best]]


def mrt_mrc(h, tol: float = 1e-12, max_iter: int = 200_000):
    """Dominant singular pair of H by power iteration on H^H H.

    Returns ``(f, w)`` with ``|w^H H f|^2 = sigma_max(H)^2``.
    """
    hm = h.h if isinstance(h, Channel) else np.asarray(h, dtype=np.complex128)
    if not np.any(hm):
        raise DegenerateInputError("mrt_mrc: zero channel")
    gram = hm.conj().T @ hm
    # deterministic start: the column of H^H H with the largest norm
    f = gram[:, np.argmax(np.linalg.norm(gram, axis=0))]
    f = f / np.linalg.norm(f)
    lam = 0.0
    for _ in range(max_iter):
        g = gram @ f
        lam_new = float(np.real(np.vdot(f, g)))
        f_new = g / np.linalg.norm(g)
        # remove the arbitrary phase before comparing iterates
        phase = np.vdot(f_new, f)
        f_new = f_new * (phase / abs(phase)) if abs(phase) > 0 else f_new
        done = np.linalg.norm(f_new - f) <= tol and abs(lam_new - lam) <= tol * lam_new
        f, lam = f_new, lam_new
        if done:
            break
    hf = hm @ f
    w = hf / np.linalg.norm(hf)
    return f, w


# ----------------------------------------------------------------------
# DNN_NOA: fixed learned probing pairs, measurement feedback, two final-beam nets

@dataclass
class NoaParams:
    probe_tx: Tensor  # (2 n_tx, T)
    probe_rx: Tensor  # (2 n_rx, T)
    ue_net: list[DenseParams]
    bs_net: list[DenseParams]
    hidden: int = 0

    def named_tensors(self) -> dict[str, Tensor]:
        out = {"probe_tx": self.probe_tx, "probe_rx": self.probe_rx}
        for side, net in (("ue_net", self.ue_net), ("bs_net", self.bs_net)):
            for i, layer in enumerate(net):
                out.update(layer.named(f"{side}.dense{i}"))
        return out

    def trainable(self) -> dict[str, Tensor]:
        return self.named_tensors()


def noa_param_count(cfg: SystemConfig, h: int) -> int:
    t = cfg.t_steps
    n = 2 * cfg.n_tx * t + 2 * cfg.n_rx * t
    for n_out in (2 * cfg.n_rx, 2 * cfg.n_tx):
        n += _dense_count(2 * t, h) + _dense_count(h, h) + _dense_count(h, n_out)
    return n


def init_noa_params(cfg: SystemConfig, rng: np.random.Generator) -> NoaParams:
    h = cfg.hidden_size or solve_width(lambda w: noa_param_count(cfg, w), cfg.param_budget)
    t = cfg.t_steps
    probe_tx = Tensor(rng.standard_normal((2 * cfg.n_tx, t)), requires_grad=True, name="probe_tx")
    probe_rx = Tensor(rng.standard_normal((2 * cfg.n_rx, t)), requires_grad=True, name="probe_rx")

    def net(n_out):
        return [init_dense(2 * t, h, "tanh", rng), init_dense(h, h, "tanh", rng),
                init_dense(h, n_out, "linear", rng)]

    return NoaParams(probe_tx, probe_rx, net(2 * cfg.n_rx), net(2 * cfg.n_tx), h)


@dataclass
class BaselineTrace:
    w_final: ComplexPair
    f_final: ComplexPair
    bs_beams: list[ComplexPair]
    ue_beams: list[ComplexPair]
    measurements: list[ComplexPair]
    feedback: Tensor | None
    transmitters: list[str]


def _bcast(beam: ComplexPair, b: int) -> ComplexPair:
    n = beam.shape[-1]
    ones = Tensor(np.ones((b, 1)))
    return ComplexPair(ones * beam.re.reshape(1, n), ones * beam.im.reshape(1, n))


def run_dnn_noa_episode(h, p: NoaParams, cfg: SystemConfig, rng: np.random.Generator,
                        sigma_n: float | None = None) -> BaselineTrace:
    hs = channel_stack(h)
    b = hs.shape[0]
    sigma_n = cfg.sigma_train if sigma_n is None else sigma_n
    tx = unit_norm_beam(p.probe_tx.T)  # (T, n_tx)
    rx = unit_norm_beam(p.probe_rx.T)  # (T, n_rx)
    hpair = ComplexPair.from_numpy(hs)
    ys, bs_beams, ue_beams = [], [], []
    for t in range(cfg.t_steps):
        f_t, w_t = _bcast(tx[t], b), _bcast(rx[t], b)
        y = ad.complex_inner(w_t, ad.complex_matvec(hpair, f_t))
        if sigma_n > 0:
            y = y + ad.complex_inner(w_t, ComplexPair.from_numpy(draw_noise((b, cfg.n_rx), sigma_n, rng)))
        ys.append(y)
        bs_beams.append(tx[t])
        ue_beams.append(rx[t])
    scale = 1.0 / np.sqrt(1.0 + sigma_n ** 2)
    meas = ad.concatenate([y.re.reshape(b, 1) for y in ys] + [y.im.reshape(b, 1) for y in ys]) * scale
    w_final = unit_norm_beam(dense_stack(meas, p.ue_net))
    f_final = unit_norm_beam(dense_stack(meas, p.bs_net))
    return BaselineTrace(w_final, f_final, bs_beams, ue_beams, ys, meas, ["bs"] * cfg.t_steps)


# ----------------------------------------------------------------------
# RNN_A: ping-pong adaptive alignment with alternating TX/RX roles

@dataclass
class SideController:
    layers: list[GruLayerParams]
    beam_head: DenseParams

    def named(self, prefix):
        for i, layer in enumerate(self.layers):
            yield from layer.named(f"{prefix}.gru{i}")
        yield from self.beam_head.named(f"{prefix}.beam_head")


@dataclass
class PingPongParams:
    bs: SideController
    ue: SideController
    hidden: int = 0

    def named_tensors(self) -> dict[str, Tensor]:
        out = dict(self.bs.named("bs"))
        out.update(self.ue.named("ue"))
        return out

    def trainable(self) -> dict[str, Tensor]:
        return self.named_tensors()


def pingpong_param_count(cfg: SystemConfig, h: int) -> int:
    n = 0
    for ant in (cfg.n_tx, cfg.n_rx):
        n += _gru_count(2 + 2 * ant, h) + _gru_count(h, h) + _dense_count(h, 2 * ant)
    return n


def init_pingpong_params(cfg: SystemConfig, rng: np.random.Generator) -> PingPongParams:
    h = cfg.hidden_size or solve_width(lambda w: pingpong_param_count(cfg, w), cfg.param_budget)

    def side(ant):
        return SideController([init_gru_layer(2 + 2 * ant, h, rng), init_gru_layer(h, h, rng)],
                              init_dense(h, 2 * ant, "linear", rng))

    return PingPongParams(side(cfg.n_tx), side(cfg.n_rx), h)


def _side_beam(c: SideController, hidden: list[Tensor]) -> ComplexPair:
    return unit_norm_beam(dense_forward(hidden[-1], c.beam_head))


def _side_update(c: SideController, hidden, y: ComplexPair, beam: ComplexPair, scale, b):
    x = ad.concatenate([y.re.reshape(b, 1) * scale, y.im.reshape(b, 1) * scale, beam.re, beam.im])
    out = []
    for layer, hh in zip(c.layers, hidden):
        x = gru_step(x, hh, layer)
        out.append(x)
    return out


def run_rnn_a_episode(h, p: PingPongParams, cfg: SystemConfig, rng: np.random.Generator,
                      sigma_n: float | None = None) -> BaselineTrace:
    """T channel uses alternating downlink (even t) and uplink over H^T (odd t).

    The UE transmits with conj(w) and the BS combines with conj(f), so both
    directions observe ``w^H H f`` plus their own receiver noise.  Only the
    receiving side updates its controller.  No explicit feedback.
    """
    hs = channel_stack(h)
    b = hs.shape[0]
    sigma_n = cfg.sigma_train if sigma_n is None else sigma_n
    scale = 1.0 / np.sqrt(1.0 + sigma_n ** 2)
    h_dl = ComplexPair.from_numpy(hs)
    h_ul = ComplexPair.from_numpy(np.swapaxes(hs, -1, -2))
    hb = [Tensor(np.zeros((b, layer.hidden_size))) for layer in p.bs.layers]
    hu = [Tensor(np.zeros((b, layer.hidden_size))) for layer in p.ue.layers]
    ys, bs_beams, ue_beams, who = [], [], [], []
    for t in range(cfg.t_steps):
        f = _side_beam(p.bs, hb)
        w = _side_beam(p.ue, hu)
        if t % 2 == 0:
            y = ad.complex_inner(w, ad.complex_matvec(h_dl, f))
            if sigma_n > 0:
                y = y + ad.complex_inner(w, ComplexPair.from_numpy(draw_noise((b, cfg.n_rx), sigma_n, rng)))
            hu = _side_update(p.ue, hu, y, w, scale, b)
            who.append("bs")
        else:
            y = ad.complex_dot(f, ad.complex_matvec(h_ul, w.conj()))
            if sigma_n > 0:
                y = y + ad.complex_dot(f, ComplexPair.from_numpy(draw_noise((b, cfg.n_tx), sigma_n, rng)))
            hb = _side_update(p.bs, hb, y, f, scale, b)
            who.append("ue")
        bs_beams.append(f)
        ue_beams.append(w)
        ys.append(y)
    return BaselineTrace(_side_beam(p.ue, hu), _side_beam(p.bs, hb), bs_beams, ue_beams, ys, None, who)
