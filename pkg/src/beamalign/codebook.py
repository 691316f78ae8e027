"""Conventional equal-beam-width codebooks by least-squares sector synthesis."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigError

SYNTH_GRID = 512


@dataclass(frozen=True)
class ConventionalCodebook:
    beams: np.ndarray  # (m, n) complex, unit-norm rows

    @property
    def m(self) -> int:
        return self.beams.shape[0]

    @property
    def n(self) -> int:
        return self.beams.shape[1]


def sector_edges(m: int) -> np.ndarray:
    """Edges of ``m`` equal sectors of |phi| in [0, pi/2].

    The array response depends on phi only through cos(phi), so phi and -phi
    are indistinguishable and the codebook partitions the folded range.
    """
    return np.linspace(0.0, np.pi / 2, m + 1)


def sector_of(phi, m: int) -> np.ndarray:
    k = np.floor(np.abs(np.asarray(phi)) / (np.pi / 2) * m).astype(int)
    return np.clip(k, 0, m - 1)


@lru_cache(maxsize=64)
def _synthesize(m: int, n: int) -> np.ndarray:
    # fit on a uniform grid of u = cos(phi) over one full period [-1, 1); the
    # steering vectors are orthogonal there, so the normal equations are well
    # conditioned (a grid in phi only reaches u >= 0 and is near-singular)
    u = np.linspace(-1.0, 1.0, SYNTH_GRID, endpoint=False)
    a = np.exp(1j * np.pi * np.multiply.outer(u, np.arange(n)))  # (G, n)
    # flat-top target with the linear phase of an array centred at (n-1)/2
    centre = np.exp(1j * np.pi * (n - 1) / 2 * u)
    edges = np.cos(sector_edges(m))  # decreasing in k
    beams = np.empty((m, n), dtype=np.complex128)
    for k in range(m):
        inside = (u <= edges[k]) & (u >= edges[k + 1])
        target = np.where(inside, 1.0, 0.0) * centre
        # pattern v^H a = a^T conj(v): solve for conj(v)
        x, *_ = np.linalg.lstsq(a, target, rcond=None)
        v = np.conj(x)
        beams[k] = v / np.linalg.norm(v)
    beams.setflags(write=False)
    return beams


def conventional_codebook(m: int, n: int) -> ConventionalCodebook:
    """``m`` beams over ``n`` antennas, beam k covering folded sector k."""
    if m < 1:
        raise ConfigError(f"conventional_codebook: size must be >= 1, got {m}")
    if n < 1:
        raise ConfigError(f"conventional_codebook: antenna count must be >= 1, got {n}")
    return ConventionalCodebook(_synthesize(m, n))
