import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from beamalign import autodiff as ad
from beamalign.autodiff import Tensor
from beamalign.codebook import conventional_codebook
from beamalign.config import SystemConfig, derive_rng
from beamalign.errors import ConfigError, DegenerateInputError, DimensionError
from beamalign.nn import (DenseParams, GruLayerParams, LearnableCodebook, codebook_row, count_params,
                          dense_forward, gru_step, init_dense, init_gru_layer, init_params,
                          proposed_param_count, unit_norm_beam)

DESK = SystemConfig(n_tx=16, n_rx=8, n_cb=4, t_steps=8, n_paths=1, param_budget=50_000)


def zero_gru(n_in, h):
    z = lambda *s: Tensor(np.zeros(s))  # noqa: E731
    return GruLayerParams(z(h, n_in), z(h, n_in), z(h, n_in), z(h, h), z(h, h), z(h, h), z(h), z(h), z(h))


def test_gru_zero_params():
    p = zero_gru(3, 4)
    x = Tensor(np.array([1.0, -2.0, 0.5]))
    assert np.array_equal(gru_step(x, Tensor(np.zeros(4)), p).values, np.zeros(4))
    v = np.array([0.2, -1.0, 3.0, 0.0])
    np.testing.assert_allclose(gru_step(x, Tensor(v), p).values, 0.5 * v)


def test_gru_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    p = init_gru_layer(3, 4, rng)
    x, h = Tensor(rng.standard_normal(3)), Tensor(rng.standard_normal(4))
    for name, leaf in p.named("gru"):
        key = name.split(".")[-1]

        def f(t, key=key):
            q = GruLayerParams(**{k: (t if k == key else getattr(p, k)) for k in
                                  ("w_z", "w_r", "w_h", "u_z", "u_r", "u_h", "b_z", "b_r", "b_h")})
            return ad.square(gru_step(x, h, q)).sum()

        assert ad.finite_diff_check(f, Tensor(leaf.values)) < 1e-4, name


def test_gru_size_mismatch():
    p = init_gru_layer(3, 4, np.random.default_rng(0))
    with pytest.raises(DimensionError):
        gru_step(Tensor(np.zeros(2)), Tensor(np.zeros(4)), p)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 10))
def test_gru_hidden_is_bounded(seed, scale):
    rng = np.random.default_rng(seed)
    p = init_gru_layer(3, 5, rng)
    h = rng.standard_normal(5) * scale
    out = gru_step(Tensor(rng.standard_normal(3) * scale), Tensor(h), p).values
    assert np.max(np.abs(out)) <= max(np.max(np.abs(h)), 1.0) + 1e-12


def test_dense_examples():
    x = Tensor(np.array([1.0, -2.0, 3.0]))
    ident = DenseParams(Tensor(np.eye(3)), Tensor(np.zeros(3)), "linear")
    np.testing.assert_array_equal(dense_forward(x, ident).values, x.values)
    const = DenseParams(Tensor(np.zeros((2, 3))), Tensor(np.array([0.5, -4.0])), "linear")
    np.testing.assert_array_equal(dense_forward(x, const).values, [0.5, -4.0])
    with pytest.raises(DimensionError):
        dense_forward(Tensor(np.ones(4)), ident)


def test_dense_tanh_gradient():
    rng = np.random.default_rng(1)
    p = init_dense(4, 3, "tanh", rng)
    x = rng.standard_normal(4)
    f_w = lambda w: dense_forward(Tensor(x), DenseParams(w, p.bias, "tanh")).sum()  # noqa: E731
    f_x = lambda t: ad.square(dense_forward(t, p)).sum()  # noqa: E731
    assert ad.finite_diff_check(f_w, Tensor(p.weight.values)) < 1e-4
    assert ad.finite_diff_check(f_x, Tensor(x)) < 1e-4


def test_unit_norm_beam_examples():
    raw = np.zeros(8)
    raw[0] = 1.0
    beam = unit_norm_beam(Tensor(raw)).numpy()
    np.testing.assert_array_equal(beam, [1, 0, 0, 0])
    with pytest.raises(DegenerateInputError):
        unit_norm_beam(Tensor(np.zeros(8)))
    rng = np.random.default_rng(2)
    assert np.linalg.norm(unit_norm_beam(Tensor(rng.standard_normal(32))).numpy()) == pytest.approx(1, abs=1e-10)


@given(arrays(np.float64, 12, elements=st.floats(-10, 10)).filter(lambda r: np.linalg.norm(r) > 1e-3),
       st.floats(1e-3, 1e3))
def test_unit_norm_beam_scale_invariant(raw, c):
    a = unit_norm_beam(Tensor(raw)).numpy()
    b = unit_norm_beam(Tensor(raw * c)).numpy()
    np.testing.assert_allclose(a, b, atol=1e-12)
    assert np.linalg.norm(a) == pytest.approx(1.0, abs=1e-10)


def test_codebook_row_passthrough_and_range():
    conv = conventional_codebook(4, 16)
    cb = LearnableCodebook.from_beams(conv.beams, trainable=False)
    for k in range(4):
        row = codebook_row(cb, k).numpy()
        np.testing.assert_allclose(row, conv.beams[k], atol=1e-10)
        assert np.linalg.norm(row) == pytest.approx(1.0, abs=1e-10)
    with pytest.raises(IndexError):
        codebook_row(cb, 4)


def test_c3_codebook_moves_after_one_step():
    from beamalign.training import OptimizerState, train_step
    cfg = DESK.replace(batch_size=8, variant="C3")
    p = init_params(cfg, derive_rng(0, "init"))
    before = codebook_row(p.theta4, 1).numpy()
    train_step(p, OptimizerState(), cfg, 0)
    assert np.linalg.norm(codebook_row(p.theta4, 1).numpy() - before) > 0


def test_budget_solving():
    full = count_params(init_params(SystemConfig(), np.random.default_rng(0)))
    assert 450_000 <= full <= 550_000
    for v in ("C1", "C2", "C3"):
        desk = count_params(init_params(DESK.replace(variant=v), np.random.default_rng(0)))
        assert 45_000 <= desk <= 55_000
    with pytest.raises(ConfigError):
        init_params(DESK.replace(param_budget=100), np.random.default_rng(0))


def test_init_is_deterministic():
    a = init_params(DESK, derive_rng(3, "init")).named_tensors()
    b = init_params(DESK, derive_rng(3, "init")).named_tensors()
    assert a.keys() == b.keys()
    assert all(np.array_equal(a[k].values, b[k].values) for k in a)


def test_count_params_examples():
    assert count_params(init_dense(4, 3, "linear", np.random.default_rng(0))) == 15
    rng = np.random.default_rng(0)
    c2 = count_params(init_params(DESK.replace(variant="C2", hidden_size=20), rng))
    c3 = count_params(init_params(DESK.replace(variant="C3", hidden_size=20), rng))
    assert c3 - c2 == 2 * DESK.n_tx * DESK.n_cb
    c1 = init_params(DESK.replace(variant="C1", hidden_size=20), rng)
    assert c1.theta3 == [] and not any(k.startswith("theta3") for k in c1.trainable())
    assert count_params(c1) == proposed_param_count(DESK, 20, "C1")


def test_variant_trainability():
    rng = np.random.default_rng(0)
    for v, trainable in (("C1", False), ("C2", False), ("C3", True)):
        p = init_params(DESK.replace(variant=v, hidden_size=8), rng)
        assert p.theta4.trainable is trainable
        assert ("theta4.codebook" in p.trainable()) is trainable
