"""
Downlink communication with ZF precoding built from uplink estimates.

The BS precodes QPSK data with W = gamma * G_hat^H (G_hat G_hat^H)^-1, the
signal crosses the true downlink channel G_D = G_U^T and the single-antenna
user detects with LMMSE, by default knowing the effective channel G_D W.
"""

from typing import Literal, Optional, Tuple

import numpy as np
from scipy import linalg
from scipy.special import erfc

from src.config import FrameConfig
from src.models.schemas import LinkResult, PathSet, Precoder
from src.services.channel_service import build_channel, effective_dd_channel
from src.services.otfs_modem import qpsk_demap, random_qpsk
from src.utils.errors import DimensionError
from src.utils.logger import setup_logger

logger = setup_logger(__name__)

RIDGE_SCALE = 1e-8

DownlinkSnrReference = Literal["symbol", "uplink"]
DetectorCsi = Literal["true", "estimated"]


def build_precoder(G_hat_D: np.ndarray) -> Precoder:
    """
    Frobenius-normalized zero-forcing precoder.

    Args:
        G_hat_D: Estimated downlink DD channel, MN x (MN * N_t)

    Returns:
        Precoder with ||W||_F^2 = MN; ``regularized`` is set when G_hat_D is
        rank deficient and a ridge term was added to the Gram matrix

    Raises:
        ValueError: If the channel is identically zero
    """
    G = np.asarray(G_hat_D, dtype=complex)
    if G.ndim != 2 or G.shape[0] > G.shape[1]:
        raise DimensionError(f"downlink channel must be wide (rows <= columns), got shape {G.shape}")
    MN = G.shape[0]
    gram = G @ G.conj().T
    trace = float(np.real(np.trace(gram)))
    if trace <= 0:
        raise ValueError("estimated downlink channel is identically zero")

    regularized = np.linalg.matrix_rank(gram, hermitian=True) < MN
    if regularized:
        ridge = RIDGE_SCALE * trace / MN
        logger.warning(f"Rank-deficient downlink channel, regularizing ZF solve with ridge={ridge:.3e}")
        gram = gram + ridge * np.eye(MN)

    W0 = G.conj().T @ linalg.solve(gram, np.eye(MN), assume_a="her")
    gamma = float(np.sqrt(MN) / np.linalg.norm(W0, "fro"))
    return Precoder(W=gamma * W0, gamma=gamma, regularized=bool(regularized))


def downlink_transmit(
    W: np.ndarray,
    G_D_true: np.ndarray,
    x_data: np.ndarray,
    sigma2: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """
    Received DD samples y = G_D W x + n with n ~ CN(0, sigma2 I).

    ``x_data`` may hold one frame (MN,) or several frames as columns (MN, F).
    The user is full resolution, so no ADC model applies here.
    """
    x_data = np.asarray(x_data, dtype=complex)
    G_eff = np.asarray(G_D_true) @ np.asarray(W)
    if G_eff.shape[1] != x_data.shape[0]:
        raise DimensionError(f"data has {x_data.shape[0]} symbols, channel expects {G_eff.shape[1]}")
    noise = np.sqrt(sigma2 / 2.0) * (
        rng.standard_normal(x_data.shape) + 1j * rng.standard_normal(x_data.shape)
    )
    return G_eff @ x_data + noise


def lmmse_detect(y: np.ndarray, G_eff: np.ndarray, sigma2: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    LMMSE equalization x_hat = (G^H G + sigma2 I)^-1 G^H y and hard QPSK decisions.

    Returns:
        Tuple of (x_hat with the shape of y, bits of shape (symbols, 2))
    """
    if sigma2 < 0:
        raise ValueError(f"noise variance must be non-negative (got {sigma2})")
    G = np.asarray(G_eff, dtype=complex)
    normal = G.conj().T @ G + sigma2 * np.eye(G.shape[1])
    x_hat = linalg.solve(normal, G.conj().T @ np.asarray(y, dtype=complex), assume_a="her")
    bits = qpsk_demap(x_hat.reshape(-1, order="F"))
    return x_hat, bits


def qpsk_awgn_ber(snr_linear: float) -> float:
    """Gray-coded QPSK bit error rate Q(sqrt(snr)) for unit-energy symbols over AWGN."""
    return float(0.5 * erfc(np.sqrt(snr_linear / 2.0)))


def count_errors(
    sent_bits: np.ndarray,
    detected_bits: np.ndarray,
    snr_db: Optional[float] = None,
    bits: Optional[int] = None,
) -> LinkResult:
    """Compare sent and detected bit pairs."""
    sent = np.asarray(sent_bits).reshape(-1, 2)
    detected = np.asarray(detected_bits).reshape(-1, 2)
    if sent.shape != detected.shape:
        raise DimensionError(f"bit arrays differ in shape: {sent.shape} vs {detected.shape}")
    wrong = sent != detected
    bit_errors = int(wrong.sum())
    return LinkResult(
        ber=bit_errors / sent.size if sent.size else 0.0,
        bits_sent=int(sent.size),
        bit_errors=bit_errors,
        symbols_sent=int(sent.shape[0]),
        symbol_errors=int(np.any(wrong, axis=1).sum()),
        snr_db=snr_db,
        bits=bits,
    )


def downlink_channel(paths: PathSet, cfg: FrameConfig) -> np.ndarray:
    """Downlink DD channel G_D = G_U(N_t)^T for a path set (true or estimated)."""
    return effective_dd_channel(build_channel(paths, cfg, n_antennas=cfg.N_t), cfg, "downlink")


def downlink_noise_variance(
    snr_db: Optional[float],
    gamma: float,
    reference: DownlinkSnrReference = "symbol",
    uplink_sigma2: Optional[float] = None,
) -> float:
    """
    Noise variance at the user for one SNR point.

    Args:
        snr_db: SNR point in dB
        gamma: Precoder normalization (the per-symbol amplitude after ZF)
        reference: ``symbol`` reads the SNR as gamma^2 / sigma2 per detected
            symbol; ``uplink`` reuses the uplink noise variance
        uplink_sigma2: Uplink noise variance, required for ``uplink``

    Raises:
        ValueError: On a missing input or an unknown reference
    """
    if reference == "symbol":
        if snr_db is None:
            raise ValueError("the symbol SNR reference needs an SNR point")
        return float(gamma ** 2 * 10.0 ** (-snr_db / 10.0))
    if reference == "uplink":
        if uplink_sigma2 is None:
            raise ValueError("the uplink SNR reference needs the uplink noise variance")
        return float(uplink_sigma2)
    raise ValueError(f"unknown downlink SNR reference {reference!r}")


def precoder_mismatch(G_eff: np.ndarray, gamma: float) -> float:
    """Interference-to-signal ratio ||G_D W - gamma I||_F^2 / (MN gamma^2) left by the precoder."""
    G_eff = np.asarray(G_eff, dtype=complex)
    MN = G_eff.shape[0]
    residual = G_eff - gamma * np.eye(MN)
    return float(np.sum(np.abs(residual) ** 2) / (MN * gamma ** 2))


class DownlinkService:
    """Precodes from estimated parameters and measures BER over the true channel.

    Args:
        cfg: Frame configuration
        snr_reference: How an SNR point maps to the user's noise variance
        detector_csi: ``true`` detects with G_D W; ``estimated`` with G_hat_D W,
            which leaves the precoder mismatch as interference
    """

    def __init__(
        self,
        cfg: FrameConfig,
        snr_reference: DownlinkSnrReference = "uplink",
        detector_csi: DetectorCsi = "true",
    ):
        if detector_csi not in ("true", "estimated"):
            raise ValueError(f"unknown detector CSI {detector_csi!r}")
        self.cfg = cfg
        self.snr_reference = snr_reference
        self.detector_csi = detector_csi

    def run(
        self,
        true_paths: PathSet,
        estimated_paths: PathSet,
        sigma2: Optional[float],
        rng: np.random.Generator,
        frames: int = 8,
        snr_db: Optional[float] = None,
    ) -> Tuple[LinkResult, Precoder]:
        """
        Send ``frames`` independent QPSK frames through one precoder.

        Args:
            true_paths: Realized channel
            estimated_paths: Uplink estimates used for the precoder
            sigma2: Uplink noise variance, used as is under the ``uplink`` reference
            rng: Per-trial random generator
            frames: Number of data frames
            snr_db: SNR point; sets the noise under the ``symbol`` reference

        Returns:
            Tuple of (link result, precoder)
        """
        G_D = downlink_channel(true_paths, self.cfg)
        G_hat_D = downlink_channel(estimated_paths, self.cfg)
        precoder = build_precoder(G_hat_D)
        noise = downlink_noise_variance(snr_db, precoder.gamma, self.snr_reference, sigma2)

        G_eff = G_D @ precoder.W
        assumed = G_eff if self.detector_csi == "true" else G_hat_D @ precoder.W

        symbols, sent = random_qpsk(rng, self.cfg.MN * frames)
        x_data = symbols.reshape((self.cfg.MN, frames), order="F")
        y = downlink_transmit(precoder.W, G_D, x_data, noise, rng)
        _, detected = lmmse_detect(y, assumed, noise)

        result = count_errors(sent, detected, snr_db=snr_db, bits=self.cfg.b).model_copy(update={
            "noise_variance": noise,
            "mismatch": precoder_mismatch(G_eff, precoder.gamma),
        })
        logger.debug(
            f"Downlink: frames={frames}, gamma={precoder.gamma:.4f}, sigma2={noise:.3e}, "
            f"mismatch={result.mismatch:.3e}, errors={result.bit_errors}/{result.bits_sent}"
        )
        return result, precoder
