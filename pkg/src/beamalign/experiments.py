"""Experiment drivers behind the command line: evaluation tables, the
gain sweeps (over test SNR and over T) and per-step beampattern dumps, all written as CSV."""
from __future__ import annotations

import csv
import io
import logging
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .channel import sample_channel_batch
from .checkpoint import Checkpoint, atomic_write_bytes, params_from_checkpoint
from .config import SystemConfig, derive_rng
from .errors import ConfigError
from .metrics import EVAL_SCHEMES, beampattern, evaluate, eval_channels
from .schemes import forward_scheme
from .training import train

log = logging.getLogger(__name__)

RESULTS_COLUMNS = ("scheme", "test_snr_db", "mean_gain_db", "p_sat", "p_sat_halfwidth", "n_samples", "seed")
SWEEP_COLUMNS = ("scheme_or_variant", "x_value", "mean_gain_db", "p_sat", "seed")
BEAMPATTERN_COLUMNS = ("side", "t", "phi", "gain")
SWEEP_KINDS = ("fig4", "fig5", "fig6")
# per-antenna SNR used for training and testing in the T sweeps
SWEEP_SNR_DB = 5.0


def _num(x) -> str:
    return repr(float(x))


def csv_bytes(columns, rows) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    w.writerows(rows)
    return buf.getvalue().encode("utf-8")


def write_csv(path, columns, rows) -> None:
    atomic_write_bytes(path, csv_bytes(columns, rows))


# ----------------------------------------------------------------------

def results_rows(scheme: str, params, cfg: SystemConfig, snrs=None) -> list[list]:
    """One results row per test SNR; every row shares the evaluation channel set."""
    snrs = cfg.eval.test_snr_db if snrs is None else snrs
    hs = eval_channels(cfg, cfg.eval.eval_samples)
    rows = []
    for snr in snrs:
        rep = evaluate(scheme, params, cfg, test_snr_db=snr, channels=hs)
        rows.append([scheme, _num(snr), _num(rep.mean_gain_db), _num(rep.p_sat),
                     _num(rep.p_sat_halfwidth), rep.n_samples, cfg.seed])
    return rows


def eval_setup(scheme: str | None, ckpt: Checkpoint | None, cfg: SystemConfig):
    """Resolve (scheme, params, cfg) for an evaluation request."""
    if ckpt is None:
        scheme = scheme or "mrt_mrc"
        if scheme not in ("exhaustive", "mrt_mrc"):
            raise ConfigError(f"scheme {scheme!r} needs --checkpoint")
        return scheme, None, cfg
    scheme = scheme or ckpt.scheme
    if scheme not in EVAL_SCHEMES:
        raise ConfigError(f"unknown scheme {scheme!r}")
    if scheme in ("exhaustive", "mrt_mrc"):
        return scheme, None, cfg
    params, _ = params_from_checkpoint(ckpt, cfg.replace(scheme=scheme))
    return scheme, params, cfg


# ----------------------------------------------------------------------

def _train_eval(cfg: SystemConfig, out_dir: Path, snrs) -> dict[float, object]:
    result = train(cfg, out_dir)
    hs = eval_channels(cfg, cfg.eval.eval_samples)
    return {snr: evaluate(cfg.scheme, result.params, cfg, test_snr_db=snr, channels=hs) for snr in snrs}


def _sweep_row(label, x, rep, seed):
    return [label, _num(x), _num(rep.mean_gain_db), _num(rep.p_sat), seed]


def sweep_fig4(cfg: SystemConfig, out_dir: Path) -> list[list]:
    """Each variant trained once, evaluated over the test SNR list."""
    rows = []
    for variant in ("C1", "C2", "C3"):
        vcfg = cfg.replace(scheme="proposed", variant=variant)
        reps = _train_eval(vcfg, out_dir / variant, vcfg.eval.test_snr_db)
        rows += [_sweep_row(variant, snr, rep, cfg.seed) for snr, rep in reps.items()]
    return rows


def sweep_fig5(cfg: SystemConfig, out_dir: Path) -> list[list]:
    """C2 and C3 retrained for each T, tested at 5 dB."""
    rows = []
    for variant in ("C2", "C3"):
        for t in cfg.sweep_t_values:
            vcfg = cfg.replace(scheme="proposed", variant=variant, t_steps=t)
            rep = _train_eval(vcfg, out_dir / f"{variant}_T{t}", [SWEEP_SNR_DB])[SWEEP_SNR_DB]
            rows.append(_sweep_row(variant, t, rep, cfg.seed))
    return rows


def sweep_fig6(cfg: SystemConfig, out_dir: Path) -> list[list]:
    """Proposed (fixed start), learned baselines and exhaustive search across T at 5 dB."""
    rows = []
    base = cfg.replace(train_snr_db=SWEEP_SNR_DB, fixed_start=True)
    for t in cfg.sweep_t_values:
        for scheme, variant in (("proposed", "C3"), ("dnn_noa", cfg.variant), ("rnn_a", cfg.variant)):
            scfg = base.replace(scheme=scheme, variant=variant, t_steps=t)
            rep = _train_eval(scfg, out_dir / f"{scheme}_T{t}", [SWEEP_SNR_DB])[SWEEP_SNR_DB]
            rows.append(_sweep_row(scheme, t, rep, cfg.seed))
        tcfg = base.replace(t_steps=t)
        for scheme in ("exhaustive", "mrt_mrc"):
            rep = evaluate(scheme, None, tcfg, test_snr_db=SWEEP_SNR_DB)
            rows.append(_sweep_row(scheme, t, rep, cfg.seed))
    return rows


SWEEPS = {"fig4": sweep_fig4, "fig5": sweep_fig5, "fig6": sweep_fig6}


def run_sweep(kind: str, cfg: SystemConfig, out_dir) -> Path:
    if kind not in SWEEPS:
        raise ConfigError(f"unknown sweep {kind!r}; expected one of {SWEEP_KINDS}")
    out_dir = Path(out_dir)
    rows = SWEEPS[kind](cfg, out_dir)
    path = out_dir / f"{kind}.csv"
    write_csv(path, SWEEP_COLUMNS, rows)
    return path


# ----------------------------------------------------------------------

def episode_beams(ckpt: Checkpoint, channel_seed: int):
    """Run one episode on a seeded channel; returns (bs_beams, ue_beams), T+1 each.

    The last entry per side is the final beam.
    """
    cfg = ckpt.config
    params, _ = params_from_checkpoint(ckpt)
    h = sample_channel_batch(1, cfg.n_paths, cfg.n_rx, cfg.n_tx,
                             derive_rng(channel_seed, "beampattern", "channel"))
    with ad.no_grad():
        out = forward_scheme(params, h, cfg, cfg.sigma_train,
                             derive_rng(channel_seed, "beampattern", "noise"),
                             derive_rng(channel_seed, "beampattern", "start"))
    tr = out.trace
    if cfg.scheme == "proposed":
        bs = [s.f for s in tr.steps]
        ue = [s.w for s in tr.steps]
    else:
        bs, ue = tr.bs_beams, tr.ue_beams
    bs = [np.reshape(b.numpy(), (-1, cfg.n_tx))[0] for b in bs] + [out.f.numpy()[0]]
    ue = [np.reshape(u.numpy(), (-1, cfg.n_rx))[0] for u in ue] + [out.w.numpy()[0]]
    return bs, ue


def beampattern_rows(ckpt: Checkpoint, channel_seed: int, resolution: int = 181) -> list[list]:
    bs, ue = episode_beams(ckpt, channel_seed)
    rows = []
    for side, beams in (("bs", bs), ("ue", ue)):
        for t, v in enumerate(beams):
            phi, gain = beampattern(v, resolution)
            rows += [[side, t, _num(a), _num(g)] for a, g in zip(phi, gain)]
    return rows


def inspect_summary(ckpt: Checkpoint) -> dict:
    return {
        "scheme": ckpt.scheme,
        "variant": ckpt.variant,
        "version": ckpt.version,
        "iteration": ckpt.iteration,
        "optimizer_step": ckpt.optimizer_step,
        "tensors": {k: list(v.shape) for k, v in ckpt.tensors.items()},
        "parameter_count": int(sum(v.size for k, v in ckpt.tensors.items() if not k.startswith("opt."))),
        "config": ckpt.config.to_flat(),
        "metadata": ckpt.metadata,
    }

