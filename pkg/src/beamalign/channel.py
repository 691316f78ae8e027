"""Geometric mmWave channel, ULA array response and the analog pilot link."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ComplexPair, complex_inner, complex_matvec
from .errors import ContractError

# unit-norm tolerance enforced on beams entering the link
BEAM_NORM_TOL = 1e-4


@dataclass(frozen=True)
class PathParams:
    alpha: complex
    phi_rx: float
    phi_tx: float


@dataclass
class Channel:
    h: np.ndarray
    paths: list[PathParams]
    frob_norm: float = field(init=False)

    def __post_init__(self):
        self.frob_norm = float(np.linalg.norm(self.h))

    @property
    def n_rx(self) -> int:
        return self.h.shape[0]

    @property
    def n_tx(self) -> int:
        return self.h.shape[1]


def array_response(phi, n: int) -> np.ndarray:
    """ULA response with half-wavelength spacing, entry k = exp(j*pi*k*cos(phi)).

    ``phi`` may be an array; the antenna axis is appended last.
    """
    if n < 1:
        raise ContractError(f"array_response: antenna count must be >= 1, got {n}")
    phi = np.asarray(phi, dtype=np.float64)
    k = np.arange(n)
    return np.exp(1j * np.pi * np.multiply.outer(np.cos(phi), k))


def sample_paths(l: int, rng: np.random.Generator) -> list[PathParams]:
    if l < 1:
        raise ContractError(f"sample_paths: path count must be >= 1, got {l}")
    alpha, phi_rx, phi_tx = _draw_path_arrays(l, rng)
    return [PathParams(complex(a), float(r), float(t)) for a, r, t in zip(alpha, phi_rx, phi_tx)]


def _draw_path_arrays(shape, rng):
    alpha = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
    phi_rx = rng.uniform(-np.pi / 2, np.pi / 2, shape)
    phi_tx = rng.uniform(-np.pi / 2, np.pi / 2, shape)
    return alpha, phi_rx, phi_tx


def _outer_sum(alpha, phi_rx, phi_tx, n_rx, n_tx):
    # sum_l alpha_l * a_rx(phi_rx_l) a_tx(phi_tx_l)^H
    a_rx = array_response(phi_rx, n_rx)
    a_tx = np.conj(array_response(phi_tx, n_tx))
    return np.einsum("...l,...li,...lj->...ij", alpha, a_rx, a_tx)


def assemble_channel(paths: list[PathParams], n_rx: int, n_tx: int) -> Channel:
    if not paths:
        raise ContractError("assemble_channel: empty path list")
    alpha = np.array([p.alpha for p in paths], dtype=np.complex128)
    phi_rx = np.array([p.phi_rx for p in paths])
    phi_tx = np.array([p.phi_tx for p in paths])
    return Channel(_outer_sum(alpha, phi_rx, phi_tx, n_rx, n_tx), list(paths))


def sample_channel(l: int, n_rx: int, n_tx: int, rng: np.random.Generator) -> Channel:
    return assemble_channel(sample_paths(l, rng), n_rx, n_tx)


def sample_channel_batch(batch: int, l: int, n_rx: int, n_tx: int,
                         rng: np.random.Generator) -> np.ndarray:
    """Stack of ``batch`` independent channel matrices, shape (batch, n_rx, n_tx)."""
    if l < 1:
        raise ContractError(f"sample_channel_batch: path count must be >= 1, got {l}")
    alpha, phi_rx, phi_tx = _draw_path_arrays((batch, l), rng)
    return _outer_sum(alpha, phi_rx, phi_tx, n_rx, n_tx)


def draw_noise(shape, sigma_n: float, rng: np.random.Generator) -> np.ndarray:
    """Circularly-symmetric complex Gaussian samples with variance sigma_n**2."""
    return sigma_n * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def _as_pair(v) -> ComplexPair:
    return v if isinstance(v, ComplexPair) else ComplexPair.from_numpy(v)


def _check_unit(name, v: ComplexPair):
    norms = np.sqrt(np.sum(v.re.values ** 2 + v.im.values ** 2, axis=-1))
    if np.any(np.abs(norms - 1.0) > BEAM_NORM_TOL):
        raise ContractError(f"propagate: {name} is not unit-norm (norm {np.max(np.abs(norms - 1.0)) + 1:.6g})")


def propagate(h, w, f, sigma_n: float, rng: np.random.Generator,
              noise: np.ndarray | None = None) -> ComplexPair:
    """Received pilot ``y = w^H H f + w^H n`` with fresh noise ``n ~ CN(0, sigma_n^2 I)``.

    ``h`` is a :class:`Channel`, an (n_rx, n_tx) array or a (batch, n_rx, n_tx)
    stack; ``w``/``f`` are ComplexPairs (or complex arrays) with matching batch
    axes.  ``noise`` overrides the draw (same shape as ``w``).
    """
    if sigma_n < 0:
        raise ContractError("propagate: sigma_n must be >= 0")
    hm = h.h if isinstance(h, Channel) else np.asarray(h)
    w, f = _as_pair(w), _as_pair(f)
    _check_unit("w", w)
    _check_unit("f", f)
    hf = complex_matvec(ComplexPair.from_numpy(hm), f)
    y = complex_inner(w, hf)
    if noise is None:
        noise = draw_noise(w.shape, sigma_n, rng) if sigma_n > 0 else None
    if noise is not None:
        y = y + complex_inner(w, ComplexPair.from_numpy(noise))
    return y
