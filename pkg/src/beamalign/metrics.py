"""Link metrics (beamforming gain, receive SNR, satisfaction probability),
beampattern sampling and Monte-Carlo evaluation of every scheme."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .baselines import exhaustive_search_batch, exhaustive_split, mrt_mrc
from .channel import Channel, array_response, sample_channel_batch
from .codebook import conventional_codebook
from .config import SystemConfig, derive_rng, snr_db_to_sigma
from .errors import ContractError
from .schemes import forward_scheme

NORM_TOL = 1e-6
EVAL_SCHEMES = ("proposed", "dnn_noa", "rnn_a", "exhaustive", "mrt_mrc")


def _h(h):
    return h.h if isinstance(h, Channel) else np.asarray(h)


def _check_norm(name, v):
    n = np.linalg.norm(v, axis=-1)
    if np.any(np.abs(n - 1.0) > NORM_TOL):
        raise ContractError(f"{name} is not unit-norm")


def beamforming_gain(h, w, f) -> np.ndarray | float:
    """|w^H H f|^2 for single beams or (B, n) stacks against (B, n_rx, n_tx)."""
    w, f = np.asarray(w), np.asarray(f)
    _check_norm("w", w)
    _check_norm("f", f)
    g = np.abs(np.einsum("...i,...ij,...j->...", np.conj(w), _h(h), f)) ** 2
    return float(g) if g.ndim == 0 else g


def gain_db(gains, mode: str = "linear_mean") -> float:
    """Aggregate gains in dB: 10log10(mean(g)) or mean(10log10(g))."""
    gains = np.asarray(gains, dtype=float)
    if mode == "mean_db":
        return float(np.mean(10 * np.log10(gains)))
    return float(10 * np.log10(np.mean(gains)))


def receive_snr(h, w, f, sigma_n: float):
    """Post-combining SNR in dB using the expected noise power sigma_n^2 ||w||^2."""
    g = np.asarray(beamforming_gain(h, w, f))
    if sigma_n == 0:
        return np.inf if g.ndim == 0 else np.full(g.shape, np.inf)
    with np.errstate(divide="ignore"):
        snr = 10 * np.log10(g / sigma_n ** 2)
    return float(snr) if snr.ndim == 0 else snr


def satisfaction_probability(snr_db, threshold_db: float) -> tuple[float, float]:
    """Fraction of records strictly above ``threshold_db`` and its 95% half-width."""
    snr_db = np.asarray(snr_db, dtype=float).ravel()
    if snr_db.size == 0:
        raise ContractError("satisfaction_probability: no records")
    p = float(np.mean(snr_db > threshold_db))
    return p, float(1.96 * np.sqrt(p * (1 - p) / snr_db.size))


def beampattern(v, resolution: int = 181) -> tuple[np.ndarray, np.ndarray]:
    """|v^H a(phi)|^2 on a uniform grid over [-pi/2, pi/2]."""
    if resolution < 2:
        raise ContractError("beampattern: resolution must be >= 2")
    v = np.asarray(v)
    _check_norm("v", v)
    phi = np.linspace(-np.pi / 2, np.pi / 2, resolution)
    a = array_response(phi, v.shape[-1])
    return phi, np.abs(a @ np.conj(v)) ** 2


@dataclass
class MetricsReport:
    scheme: str
    test_snr_db: float
    threshold_db: float
    gain: np.ndarray
    snr_rx_db: np.ndarray
    gain_db_mode: str = "linear_mean"
    config: dict = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return self.gain.size

    @property
    def gain_db(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return 10 * np.log10(self.gain)

    @property
    def satisfied(self) -> np.ndarray:
        return self.snr_rx_db > self.threshold_db

    @property
    def mean_gain_db(self) -> float:
        return gain_db(self.gain, self.gain_db_mode)

    @property
    def p_sat(self) -> float:
        return satisfaction_probability(self.snr_rx_db, self.threshold_db)[0]

    @property
    def p_sat_halfwidth(self) -> float:
        return satisfaction_probability(self.snr_rx_db, self.threshold_db)[1]


def eval_channels(cfg: SystemConfig, n_samples: int) -> np.ndarray:
    """The evaluation channel set; identical for every scheme and SNR."""
    return sample_channel_batch(n_samples, cfg.n_paths, cfg.n_rx, cfg.n_tx,
                                derive_rng(cfg.seed, "eval", "channel"))


def final_beams(scheme: str, params, hs: np.ndarray, cfg: SystemConfig, sigma_n: float,
                rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Final (w, f) arrays of ``scheme`` on a channel stack."""
    if scheme == "mrt_mrc":
        pairs = [mrt_mrc(h) for h in hs]
        return np.array([p[1] for p in pairs]), np.array([p[0] for p in pairs])
    if scheme == "exhaustive":
        m_tx, m_rx = exhaustive_split(cfg.t_steps, cfg.n_cb)
        f, w = exhaustive_search_batch(hs, conventional_codebook(m_tx, cfg.n_tx),
                                       conventional_codebook(m_rx, cfg.n_rx), sigma_n, rng)
        return w, f
    if params is None:
        raise ContractError(f"scheme {scheme!r} needs trained parameters")
    with ad.no_grad():
        out = forward_scheme(params, hs, cfg.replace(scheme=scheme), sigma_n, rng)
    return out.w.numpy(), out.f.numpy()


def evaluate(scheme: str, params, cfg: SystemConfig, n_samples: int | None = None,
             test_snr_db: float = 5.0, rng: np.random.Generator | None = None,
             channels: np.ndarray | None = None) -> MetricsReport:
    """Monte-Carlo final-beam metrics of ``scheme`` at per-antenna SNR ``test_snr_db``."""
    if scheme not in EVAL_SCHEMES:
        raise ContractError(f"unknown scheme {scheme!r}")
    n_samples = cfg.eval.eval_samples if n_samples is None else n_samples
    if n_samples < 1:
        raise ContractError("evaluate: n_samples must be >= 1")
    hs = eval_channels(cfg, n_samples) if channels is None else channels
    sigma = snr_db_to_sigma(test_snr_db)
    rng = derive_rng(cfg.seed, "eval", "noise", scheme, repr(float(test_snr_db))) if rng is None else rng
    gains = []
    for lo in range(0, hs.shape[0], cfg.eval.eval_batch):
        chunk = hs[lo:lo + cfg.eval.eval_batch]
        w, f = final_beams(scheme, params, chunk, cfg, sigma, rng)
        gains.append(beamforming_gain(chunk, w, f))
    gain = np.concatenate(gains)
    with np.errstate(divide="ignore"):
        snr = 10 * np.log10(gain / sigma ** 2)
    return MetricsReport(scheme, float(test_snr_db), cfg.eval.threshold_db, gain, snr,
                         cfg.eval.gain_db_mode, cfg.to_flat())
