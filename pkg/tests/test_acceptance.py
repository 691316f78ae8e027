"""Acceptance gate: one test per criterion, each recording a PASS/FAIL line.

The desk-scale training criteria (5, 6, 7, 10) share trained models through
``desk``; a full run trains 15 models and takes roughly 35 minutes on one core.
"""
import csv
import time
import zlib

import numpy as np
import pytest

from beamalign import autodiff as ad
from beamalign.baselines import exhaustive_search, mrt_mrc
from beamalign.channel import sample_channel, sample_channel_batch
from beamalign.checkpoint import checkpoint_from_params, decode_checkpoint, encode_checkpoint, save_checkpoint
from beamalign.cli import main
from beamalign.codebook import conventional_codebook
from beamalign.config import derive_rng
from beamalign.errors import ChecksumError
from beamalign.metrics import beamforming_gain, gain_db, receive_snr, satisfaction_probability
from beamalign.nn import init_params
from beamalign.schemes import init_scheme

import desk
from oracles import (brute_force_pair, check_episode_invariants, episode_grad_error, op_case_error, random_unit,
                     sigma_max_sq)

VARIANTS = ("C1", "C2", "C3")


def run(*argv):
    return main([str(a) for a in argv])


def test_criterion_1_autodiff_matches_finite_differences(criterion):
    t0 = time.perf_counter()
    worst_op = {}
    for kind in ad.OP_KINDS:
        rng = np.random.default_rng(zlib.crc32(kind.encode()))
        worst_op[kind] = max(op_case_error(kind, rng) for _ in range(20))
    worst_episode = 0.0
    for k in range(20):
        variant = VARIANTS[k % 3]
        cfg = desk.desk_config(variant, seed=k, t_steps=4)
        rng = derive_rng(k, "acceptance", "episode-grad")
        params = init_scheme(cfg, derive_rng(k, "init"))
        hs = sample_channel_batch(2, cfg.n_paths, cfg.n_rx, cfg.n_tx, rng)
        worst_episode = max(worst_episode, episode_grad_error(cfg, params, hs, rng, coords_per_tensor=2))
    elapsed = time.perf_counter() - t0
    op_max = max(worst_op.values())
    ok = op_max < 1e-4 and worst_episode < 1e-4 and elapsed < 60
    assert criterion(1, ok, f"op kinds max rel err {op_max:.2e}, episode graph (T=4) max rel err "
                            f"{worst_episode:.2e}, {elapsed:.0f}s"), worst_op


def test_criterion_2_mrt_mrc_matches_svd(criterion):
    rng = np.random.default_rng(20)
    worst_gap, dominated = 0.0, True
    for c in range(100):
        ch = sample_channel(1 + c % 3, 8, 16, rng)
        f, w = mrt_mrc(ch)
        g = beamforming_gain(ch, w, f)
        worst_gap = max(worst_gap, abs(g - sigma_max_sq(ch.h)))
        probes = beamforming_gain(np.broadcast_to(ch.h, (1000, 8, 16)), random_unit(rng, 8, 1000),
                                  random_unit(rng, 16, 1000))
        dominated &= bool(np.all(probes <= g + 1e-9))
    ok = worst_gap <= 1e-9 and dominated
    assert criterion(2, ok, f"max |gain - sigma_max^2| {worst_gap:.1e}, dominates random pairs: {dominated}")


def test_criterion_3_exhaustive_equals_brute_force(criterion):
    rng = np.random.default_rng(30)
    mismatches = 0
    for m_tx, m_rx in [(4, 2), (4, 4), (8, 2)]:
        cb_tx, cb_rx = conventional_codebook(m_tx, 16), conventional_codebook(m_rx, 8)
        for _ in range(100):
            ch = sample_channel(int(rng.integers(1, 4)), 8, 16, rng)
            f, w, _ = exhaustive_search(ch, cb_tx, cb_rx, 0.0, rng)
            (j, k), _ = brute_force_pair(ch.h, cb_tx.beams, cb_rx.beams)
            mismatches += not (np.array_equal(f, cb_tx.beams[j]) and np.array_equal(w, cb_rx.beams[k]))
    assert criterion(3, mismatches == 0, f"{mismatches} mismatches over 300 channels")


def test_criterion_4_protocol_invariants(criterion):
    episodes, failures = 0, []
    for k in range(20):
        variant = VARIANTS[k % 3]
        cfg = desk.desk_config(variant, seed=k, t_steps=(2, 4, 8, 11)[k % 4])
        params = init_params(cfg, derive_rng(k, "init"))
        rng = derive_rng(k, "acceptance", "invariants")
        hs = sample_channel_batch(50, 1 + k % 3, cfg.n_rx, cfg.n_tx, rng)
        try:
            check_episode_invariants(cfg, params, hs, rng)
        except AssertionError as exc:
            failures.append((variant, k, exc))
        episodes += len(hs)
    ok = episodes >= 1000 and not failures
    assert criterion(4, ok, f"{episodes} episodes, {len(failures)} failing batches"), failures


def test_criterion_5_c3_beats_exhaustive(criterion):
    margins = [desk.desk_gain_db("proposed", "C3", s) - desk.desk_gain_db("exhaustive", "C3", s)
               for s in desk.SEEDS]
    med = float(np.median(margins))
    assert criterion(5, med >= 3.0, f"median C3 - exhaustive margin {med:.2f} dB "
                                    f"(per seed {', '.join(f'{m:.2f}' for m in margins)})")


def test_criterion_6_variant_ordering(criterion):
    med = {v: float(np.median([desk.desk_gain_db("proposed", v, s) for s in desk.SEEDS])) for v in VARIANTS}
    ok = med["C1"] <= med["C2"] + 0.5 and med["C2"] <= med["C3"] + 0.5
    assert criterion(6, ok, "median gains " + ", ".join(f"{v} {g:.2f} dB" for v, g in med.items()))


def test_criterion_7_gain_non_decreasing_in_t(criterion):
    ts = (2, 4, 8)
    med = [float(np.median([desk.desk_gain_db("proposed", "C3", s, t) for s in desk.SEEDS])) for t in ts]
    seconds = sum(desk.TRAIN_SECONDS[("C3", s, t)] for s in desk.SEEDS for t in ts)
    ok = all(b >= a - 0.5 for a, b in zip(med, med[1:])) and seconds < 20 * 60
    assert criterion(7, ok, "median C3 gains " + ", ".join(f"T={t} {g:.2f} dB" for t, g in zip(ts, med))
                     + f", {seconds / 60:.1f} min training")


def test_criterion_8_metric_fixtures(criterion):
    snr = np.array([3.0, 7.0])
    checks = {
        "p_sat(-inf)": satisfaction_probability(snr, -np.inf)[0] == 1.0,
        "p_sat(+inf)": satisfaction_probability(snr, np.inf)[0] == 0.0,
        "dB aggregate": abs(round(gain_db([1.0, 100.0]), 1) - 17.0) < 1e-9
        and abs(gain_db([1.0, 100.0]) - 10 * np.log10(50.5)) < 1e-9,
    }
    rng = np.random.default_rng(80)
    h = sample_channel(2, 8, 16, rng)
    w, f = random_unit(rng, 8), random_unit(rng, 16)
    checks["3.0103 dB per halving"] = all(
        abs(receive_snr(h, w, f, np.sqrt(s2 / 2)) - receive_snr(h, w, f, np.sqrt(s2)) - 3.0103) < 1e-4
        and abs(receive_snr(h, w, f, np.sqrt(s2 / 2)) - receive_snr(h, w, f, np.sqrt(s2))
                - 10 * np.log10(2)) < 1e-9
        for s2 in (1e-3, 0.5, 1.0, 40.0))
    failed = [k for k, v in checks.items() if not v]
    assert criterion(8, not failed, f"{len(checks) - len(failed)}/{len(checks)} fixtures exact"), failed


def _rows_without_elapsed(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return [r[:-1] for r in csv.reader(fh)]


def test_criterion_9_determinism_and_persistence(tmp_path, criterion, capsys):
    cfg_path = tmp_path / "tiny.cfg"
    cfg_path.write_text(desk.TINY_CFG)
    same = {}
    for tag in ("a", "b"):
        d = tmp_path / tag
        assert run("train", "--config", cfg_path, "--out-dir", d / "run") == 0
        ckpt = d / "run" / "checkpoint.bin"
        assert run("eval", "--checkpoint", ckpt, "--out", d / "results.csv") == 0
        assert run("eval", "--scheme", "exhaustive", "--config", cfg_path, "--out", d / "exh.csv") == 0
        assert run("sweep", "fig4", "--config", cfg_path, "--set", "iterations=2", "--out-dir", d / "sweep") == 0
        assert run("beampattern", "--checkpoint", ckpt, "--channel-seed", 7, "--out", d / "bp.csv") == 0
        capsys.readouterr()
        assert run("inspect-checkpoint", ckpt) == 0
        (d / "inspect.json").write_text(capsys.readouterr().out)
    for rel in ("run/checkpoint.bin", "results.csv", "exh.csv", "sweep/fig4.csv", "bp.csv", "inspect.json"):
        same[rel] = (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
    same["train_log (minus elapsed)"] = (_rows_without_elapsed(tmp_path / "a/run/train_log.csv")
                                         == _rows_without_elapsed(tmp_path / "b/run/train_log.csv"))

    blob = (tmp_path / "a/run/checkpoint.bin").read_bytes()
    round_trip = encode_checkpoint(decode_checkpoint(blob)) == blob
    corrupt = bytearray(blob)
    corrupt[len(blob) // 2] ^= 0x10
    try:
        decode_checkpoint(bytes(corrupt))
        rejected = False
    except ChecksumError:
        rejected = True
    (tmp_path / "corrupt.bin").write_bytes(bytes(corrupt))
    rejected &= run("eval", "--checkpoint", tmp_path / "corrupt.bin", "--out", tmp_path / "x.csv") == 3

    differing = [k for k, v in same.items() if not v]
    ok = not differing and round_trip and rejected
    assert criterion(9, ok, f"{len(same) - len(differing)}/{len(same)} outputs byte-identical, round trip "
                            f"exact: {round_trip}, corrupted file rejected: {rejected}"), differing


def test_criterion_10_bs_beampatterns_repeat(tmp_path, criterion):
    result, cfg = desk.desk_model("C3", desk.SEEDS[0], 8)
    ckpt = tmp_path / "c3.bin"
    save_checkpoint(checkpoint_from_params(result.params, cfg, result.iteration, result.opt), ckpt)
    worst = 0.0
    for seed in range(5):
        out = tmp_path / f"bp{seed}.csv"
        assert run("beampattern", "--checkpoint", ckpt, "--channel-seed", seed, "--out", out) == 0
        gain = {}
        with open(out, newline="", encoding="utf-8") as fh:
            for side, t, _, g in list(csv.reader(fh))[1:]:
                gain.setdefault((side, int(t)), []).append(float(g))
        for t in range(cfg.t_steps - cfg.n_cb):
            worst = max(worst, float(np.max(np.abs(np.subtract(gain[("bs", t)], gain[("bs", t + cfg.n_cb)])))))
    assert criterion(10, worst <= 1e-10, f"max |BS pattern(t) - BS pattern(t+N_CB)| {worst:.1e} "
                                         f"on the trained desk C3 checkpoint")
