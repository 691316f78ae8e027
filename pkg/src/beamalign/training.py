"""End-to-end training: normalized final-gain objective, batched BPTT and an
adaptive-moment ascent optimizer."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import ComplexPair, Tensor
from .channel import sample_channel_batch
from .config import SystemConfig, derive_rng
from .errors import DegenerateInputError, TrainingDivergenceError
from .schemes import c1_aux_loss, forward_scheme, init_scheme, optimal_bs_index  # noqa: F401

log = logging.getLogger(__name__)

TRAIN_LOG_COLUMNS = ("iteration", "mean_objective", "mean_gain_db", "grad_norm", "elapsed_s")


def final_gain(w: ComplexPair, f: ComplexPair, hs: np.ndarray) -> Tensor:
    """Per-episode beamforming gain |w^H H f|^2 as a (B,) tensor."""
    hf = ad.complex_matvec(ComplexPair.from_numpy(hs), f)
    return ad.complex_inner(w, hf).abs2()


def objective_terms(w: ComplexPair, f: ComplexPair, hs: np.ndarray, norm_power: int = 1) -> Tensor:
    hs = np.asarray(hs)
    if hs.ndim == 2:
        hs = hs[None]
    norms = np.linalg.norm(hs, axis=(-2, -1))
    if np.any(norms == 0):
        raise DegenerateInputError("objective: zero channel")
    if w.re.ndim == 1:
        w = ComplexPair(w.re.reshape(1, -1), w.im.reshape(1, -1))
        f = ComplexPair(f.re.reshape(1, -1), f.im.reshape(1, -1))
    return final_gain(w, f, hs) / norms ** norm_power


def objective(trace, h=None, norm_power: int = 1) -> Tensor:
    """Batch mean of |w_T^H H f_T|^2 / ||H||_F^norm_power (first power by default)."""
    hs = trace.h if h is None else (h.h if hasattr(h, "h") else h)
    return objective_terms(trace.w_final, trace.f_final, hs, norm_power).mean()


# ----------------------------------------------------------------------

@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_update(params: dict[str, Tensor], grads: dict[str, np.ndarray], opt: OptimizerState,
                lr: float, betas=(0.9, 0.999), eps: float = 1e-8) -> tuple[dict[str, Tensor], OptimizerState]:
    """One bias-corrected adaptive-moment step *ascending* along ``grads``.

    Parameter tensors get fresh value arrays; the old arrays are left untouched.
    """
    b1, b2 = betas
    step = opt.step + 1
    m_new, v_new = {}, {}
    c1 = 1.0 - b1 ** step
    c2 = 1.0 - b2 ** step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.values)
        m = b1 * opt.m.get(name, np.zeros_like(g)) + (1.0 - b1) * g
        v = b2 * opt.v.get(name, np.zeros_like(g)) + (1.0 - b2) * g * g
        m_new[name], v_new[name] = m, v
        p.values = p.values + lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, OptimizerState(m_new, v_new, step)


@dataclass
class StepStats:
    iteration: int
    mean_objective: float
    mean_gain_db: float
    grad_norm: float


def batch_loss(params, cfg: SystemConfig, iteration: int, hs: np.ndarray | None = None):
    """Loss (negated objective plus C1 aux term) on the iteration's batch."""
    tr = cfg.train
    if hs is None:
        hs = sample_channel_batch(tr.batch_size, cfg.n_paths, cfg.n_rx, cfg.n_tx,
                                  derive_rng(cfg.seed, "train", "channel", iteration))
    out = forward_scheme(params, hs, cfg, cfg.sigma_train,
                         derive_rng(cfg.seed, "train", "noise", iteration),
                         derive_rng(cfg.seed, "train", "start", iteration))
    terms = objective_terms(out.w, out.f, hs, tr.norm_power)
    obj = terms.mean()
    loss = -obj
    if out.aux_loss is not None:
        loss = loss + tr.aux_weight * out.aux_loss
    gain = final_gain(out.w, out.f, hs).values
    return loss, obj, gain


def train_step(params, opt: OptimizerState, cfg: SystemConfig, iteration: int,
               lr: float | None = None):
    """One batched BPTT ascent step; channels/noise come from iteration-indexed streams."""
    tr = cfg.train
    lr = tr.learning_rate if lr is None else lr
    trainable = params.trainable()
    for t in trainable.values():
        t.zero_grad()
    try:
        loss, obj, gain = batch_loss(params, cfg, iteration)
        if not np.isfinite(loss.values):
            raise FloatingPointError("non-finite loss")
        ad.backward(loss)
    except FloatingPointError as exc:
        raise TrainingDivergenceError(f"iteration {iteration}: {exc}") from exc
    grads = {}
    for name, t in trainable.items():
        if t.grad is not None:
            if not np.all(np.isfinite(t.grad)):
                raise TrainingDivergenceError(f"iteration {iteration}: non-finite gradient in {name}")
            grads[name] = -t.grad  # ascent direction
    gnorm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if gnorm > tr.grad_clip:
        grads = {k: g * (tr.grad_clip / gnorm) for k, g in grads.items()}
    if lr != 0:
        _, opt = adam_update(trainable, grads, opt, lr, (tr.beta1, tr.beta2), tr.adam_eps)
    stats = StepStats(iteration, float(obj.values), float(10 * np.log10(np.mean(gain))), gnorm)
    return params, opt, stats


@dataclass
class TrainResult:
    params: object
    opt: OptimizerState
    history: list[StepStats]
    iteration: int


def init_training(cfg: SystemConfig):
    return init_scheme(cfg, derive_rng(cfg.seed, "init")), OptimizerState()


def train(cfg: SystemConfig, out_dir=None, resume=None, iterations: int | None = None) -> TrainResult:
    """Run ``train_step`` up to ``cfg.train.iterations`` (or ``iterations``).

    With ``out_dir`` set, writes ``train_log.csv`` (one row per log interval),
    periodic ``checkpoint_XXXXXX.bin`` files and the final ``checkpoint.bin``.
    ``resume`` is a :class:`~beamalign.checkpoint.Checkpoint` to continue from.
    """
    from .checkpoint import checkpoint_from_params, params_from_checkpoint, save_checkpoint

    tr = cfg.train
    stop = tr.iterations if iterations is None else iterations
    if resume is not None:
        params, opt = params_from_checkpoint(resume, cfg)
        opt = opt or OptimizerState()
        start = resume.iteration
    else:
        params, opt = init_training(cfg)
        start = 0
    out = Path(out_dir) if out_dir is not None else None
    writer = fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_path = out / "train_log.csv"
        fresh = start == 0 or not log_path.exists()
        fh = open(log_path, "w" if fresh else "a", newline="", encoding="utf-8")
        writer = csv.writer(fh, lineterminator="\n")
        if fresh:
            writer.writerow(TRAIN_LOG_COLUMNS)
    history = []
    t0 = time.perf_counter()
    try:
        for it in range(start, stop):
            params, opt, stats = train_step(params, opt, cfg, it)
            history.append(stats)
            if it % tr.log_interval == 0:
                log.info("iter %d objective %.4f gain %.2f dB |g| %.3f", it, stats.mean_objective,
                         stats.mean_gain_db, stats.grad_norm)
                if writer is not None:
                    writer.writerow([it, repr(stats.mean_objective), repr(stats.mean_gain_db),
                                     repr(stats.grad_norm), f"{time.perf_counter() - t0:.3f}"])
                    fh.flush()
            if out is not None and tr.checkpoint_interval and (it + 1) % tr.checkpoint_interval == 0:
                save_checkpoint(checkpoint_from_params(params, cfg, it + 1, opt),
                                out / f"checkpoint_{it + 1:06d}.bin")
    finally:
        if fh is not None:
            fh.close()
    final_iter = max(stop, start)
    if out is not None:
        save_checkpoint(checkpoint_from_params(params, cfg, final_iter, opt), out / "checkpoint.bin")
    return TrainResult(params, opt, history, final_iter)
