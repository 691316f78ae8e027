import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from beamalign.channel import (PathParams, array_response, assemble_channel, draw_noise, propagate,
                               sample_channel, sample_channel_batch, sample_paths)
from beamalign.errors import ContractError

from oracles import random_unit

angles = st.floats(-np.pi / 2, np.pi / 2)


def test_array_response_examples():
    np.testing.assert_allclose(array_response(np.pi / 2, 4), np.ones(4), atol=1e-15)
    np.testing.assert_allclose(array_response(0.0, 4), [1, -1, 1, -1], atol=1e-15)
    assert np.linalg.norm(array_response(0.37, 16)) == pytest.approx(4.0, abs=1e-14)
    with pytest.raises(ContractError):
        array_response(0.1, 0)


@given(angles, st.integers(1, 40))
def test_array_response_unit_modulus(phi, n):
    a = array_response(phi, n)
    assert a[0] == 1 + 0j
    np.testing.assert_allclose(np.abs(a), 1.0, atol=1e-13)


def test_sample_paths_statistics():
    rng = np.random.default_rng(7)
    paths = sample_paths(100_000, rng)
    alpha = np.array([p.alpha for p in paths])
    assert np.mean(np.abs(alpha) ** 2) == pytest.approx(1.0, abs=0.02)
    for key in ("phi_rx", "phi_tx"):
        phi = np.sort([getattr(p, key) for p in paths])
        cdf = (phi + np.pi / 2) / np.pi
        n = phi.size
        ks = max(np.max(np.arange(1, n + 1) / n - cdf), np.max(cdf - np.arange(n) / n))
        assert ks < 0.01
        assert phi.min() >= -np.pi / 2 and phi.max() <= np.pi / 2


def test_sample_paths_determinism_and_errors():
    assert sample_paths(3, np.random.default_rng(42)) == sample_paths(3, np.random.default_rng(42))
    with pytest.raises(ContractError):
        sample_paths(0, np.random.default_rng(0))


def test_single_path_channel():
    ch = assemble_channel([PathParams(1 + 0j, 0.3, -0.8)], 16, 32)
    assert ch.h.shape == (16, 32)
    assert ch.frob_norm == pytest.approx(np.sqrt(512), abs=1e-10)
    s = np.linalg.svd(ch.h, compute_uv=False)
    assert s[1] < 1e-10 * s[0]


def test_three_path_shape_and_rank():
    ch = sample_channel(3, 16, 32, np.random.default_rng(1))
    assert ch.h.shape == (16, 32)
    assert np.linalg.matrix_rank(ch.h, tol=1e-9) <= 3
    assert ch.frob_norm == pytest.approx(np.linalg.norm(ch.h), abs=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4))
def test_reconstruction_from_paths(seed, l):
    ch = sample_channel(l, 6, 5, np.random.default_rng(seed))
    # explicit double loop as an independent re-expansion
    h = np.zeros((6, 5), complex)
    for p in ch.paths:
        for i in range(6):
            for j in range(5):
                h[i, j] += p.alpha * np.exp(1j * np.pi * (i * np.cos(p.phi_rx) - j * np.cos(p.phi_tx)))
    np.testing.assert_allclose(ch.h, h, atol=1e-10)


def test_batch_sampler_matches_shapes():
    hs = sample_channel_batch(5, 2, 8, 16, np.random.default_rng(0))
    assert hs.shape == (5, 8, 16)
    assert all(np.linalg.matrix_rank(h, tol=1e-9) <= 2 for h in hs)


def test_propagate_matched_steering():
    alpha = 0.6 - 0.3j
    p = PathParams(alpha, 0.4, -1.1)
    ch = assemble_channel([p], 8, 16)
    w = array_response(p.phi_rx, 8) / np.sqrt(8)
    f = array_response(p.phi_tx, 16) / np.sqrt(16)
    y = propagate(ch, w, f, 0.0, np.random.default_rng(0)).numpy()
    assert abs(y) == pytest.approx(abs(alpha) * np.sqrt(128), rel=1e-12)


def test_propagate_upper_bound_single_path():
    rng = np.random.default_rng(3)
    ch = sample_channel(1, 8, 16, rng)
    bound = abs(ch.paths[0].alpha) * np.sqrt(128)
    for _ in range(100):
        y = propagate(ch, random_unit(rng, 8), random_unit(rng, 16), 0.0, rng).numpy()
        assert abs(y) <= bound + 1e-10


def test_propagate_zero_channel_and_noise_variance():
    rng = np.random.default_rng(4)
    h = np.zeros((8, 16))
    w, f = random_unit(rng, 8), random_unit(rng, 16)
    assert propagate(h, w, f, 0.0, rng).numpy() == 0
    wb = np.broadcast_to(w, (100_000, 8))
    fb = np.broadcast_to(f, (100_000, 16))
    y = propagate(np.zeros((100_000, 8, 16)), wb, fb, 1.0, rng).numpy()
    assert np.mean(np.abs(y) ** 2) == pytest.approx(1.0, abs=0.02)


def test_propagate_rejects_non_unit_beams():
    rng = np.random.default_rng(5)
    with pytest.raises(ContractError):
        propagate(np.ones((4, 4)), 2 * random_unit(rng, 4), random_unit(rng, 4), 0.0, rng)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0, 2 * np.pi), st.floats(0, 2 * np.pi))
def test_gain_is_phase_invariant(seed, a, b):
    rng = np.random.default_rng(seed)
    ch = sample_channel(2, 4, 6, rng)
    w, f = random_unit(rng, 4), random_unit(rng, 6)
    y0 = propagate(ch, w, f, 0.0, rng).numpy()
    y1 = propagate(ch, w * np.exp(1j * a), f * np.exp(1j * b), 0.0, rng).numpy()
    assert abs(abs(y0) - abs(y1)) < 1e-10


def test_draw_noise_is_circular():
    z = draw_noise(200_000, 0.5, np.random.default_rng(6))
    assert np.var(z.real) == pytest.approx(0.125, rel=0.02)
    assert np.var(z.imag) == pytest.approx(0.125, rel=0.02)
