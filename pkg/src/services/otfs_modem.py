"""
OTFS lattice transforms between the delay-Doppler and time domains.

Vectors follow the column-major convention x = vec(X) with X of shape M x N,
so entry (m, n) sits at index m + n*M. Multi-antenna receive vectors stack
antenna blocks of length MN. The Kronecker operators (F_N^H (x) I_M) and
(I_Nr (x) F_N (x) I_M) are applied as batched N-point FFTs, never as dense
matrices. All DFTs are unitary.
"""

from typing import Optional, Union

import numpy as np

from src.config import FrameConfig
from src.models.schemas import DdGrid, TdFrame
from src.utils.errors import DimensionError

QPSK_SCALE = 1.0 / np.sqrt(2.0)

SeedLike = Union[int, np.random.SeedSequence, np.random.Generator, None]


def vec(X: np.ndarray) -> np.ndarray:
    """Column-major vectorization."""
    return np.asarray(X).reshape(-1, order="F")


def unvec(x: np.ndarray, M: int, N: int) -> np.ndarray:
    """Inverse of ``vec`` for an M x N grid."""
    return np.asarray(x).reshape((M, N), order="F")


def modulate_vectors(x: np.ndarray, M: int, N: int) -> np.ndarray:
    """
    Apply (F_N^H (x) I_M) to a vector of length MN or to each column of an (MN, B) array.

    Raises:
        DimensionError: If the leading dimension is not MN
    """
    x = np.asarray(x, dtype=complex)
    if x.shape[0] != M * N:
        raise DimensionError(f"expected {M * N} DD samples, got {x.shape[0]}")
    # index m + n*M -> [n, m, batch]
    blocks = x.reshape(N, M, -1)
    return np.fft.ifft(blocks, axis=0, norm="ortho").reshape(x.shape)


def demodulate_vectors(r: np.ndarray, M: int, N: int, n_antennas: int) -> np.ndarray:
    """
    Apply (I_A (x) F_N (x) I_M) to a stacked receive vector or to each column of it.

    Raises:
        DimensionError: If the leading dimension is not A*MN
    """
    r = np.asarray(r, dtype=complex)
    expected = n_antennas * M * N
    if r.shape[0] != expected:
        raise DimensionError(f"expected {expected} receive samples, got {r.shape[0]}")
    blocks = r.reshape(n_antennas, N, M, -1)
    return np.fft.fft(blocks, axis=1, norm="ortho").reshape(r.shape)


def otfs_modulate(grid: DdGrid) -> TdFrame:
    """
    OTFS-modulate a delay-Doppler grid: s = vec(X F_N^H) = (F_N^H (x) I_M) x.

    Args:
        grid: M x N delay-Doppler symbols

    Returns:
        Single-antenna time-domain frame
    """
    M, N = grid.X.shape
    return TdFrame(s=modulate_vectors(grid.x, M, N), M=M, N=N)


def otfs_demodulate(r_ad: np.ndarray, cfg: FrameConfig, n_antennas: Optional[int] = None) -> np.ndarray:
    """
    Transform a stacked time-domain receive vector to the DD domain.

    Args:
        r_ad: Receive vector of length MN * n_antennas (antenna-major blocks)
        cfg: Frame configuration
        n_antennas: Number of stacked antennas (defaults to N_r)

    Returns:
        y_ad = (I (x) F_N (x) I_M) r_ad
    """
    return demodulate_vectors(r_ad, cfg.M, cfg.N, cfg.N_r if n_antennas is None else n_antennas)


def qpsk_symbols(bits: np.ndarray) -> np.ndarray:
    """Gray-map bit pairs (b0 -> I, b1 -> Q) to unit-energy QPSK symbols."""
    bits = np.asarray(bits, dtype=int).reshape(-1, 2)
    return ((1 - 2 * bits[:, 0]) + 1j * (1 - 2 * bits[:, 1])) * QPSK_SCALE


def qpsk_demap(symbols: np.ndarray) -> np.ndarray:
    """Hard quadrant decision back to bit pairs, shape (len(symbols), 2)."""
    symbols = np.asarray(symbols).reshape(-1)
    return np.stack([symbols.real < 0, symbols.imag < 0], axis=1).astype(int)


def random_qpsk(rng: np.random.Generator, count: int) -> tuple:
    """Draw ``count`` random QPSK symbols; returns (symbols, bits)."""
    bits = rng.integers(0, 2, size=(count, 2))
    return qpsk_symbols(bits), bits


def generate_pilot_grid(cfg: FrameConfig, seed: SeedLike) -> DdGrid:
    """
    Random QPSK positioning pilot, deterministic for a given seed.

    Args:
        cfg: Frame configuration (grid size)
        seed: Integer seed, SeedSequence or Generator

    Returns:
        M x N unit-energy QPSK grid
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    symbols, _ = random_qpsk(rng, cfg.MN)
    return DdGrid.from_vector(symbols, cfg.M, cfg.N)
