"""
Low-resolution ADC model (additive quantization noise model).

r_ad = alpha * H s + alpha * w + w_ad with w ~ CN(0, sigma^2 I) and
w_ad ~ CN(0, alpha * beta * diag(E[r r^H])). No actual quantizer is applied;
the bounds use the same Gaussian likelihood.
"""

from typing import Dict, Literal, Optional

import numpy as np

from src.config import FrameConfig
from src.models.schemas import AdcModel, PathSet, QuantizedObservation
from src.utils.logger import setup_logger

logger = setup_logger(__name__)

# Distortion factor beta for b <= 5 bits.
BETA_TABLE: Dict[int, float] = {
    1: 0.3634,
    2: 0.1175,
    3: 0.03454,
    4: 0.009497,
    5: 0.002499,
}

SnrConvention = Literal["receive", "transmit"]


def beta_for_bits(bits: Optional[int]) -> float:
    """Distortion factor beta. ``None`` means infinite resolution."""
    if bits is None:
        return 0.0
    if bits <= 0:
        raise ValueError(f"ADC bits must be >= 1 or infinite (got {bits})")
    if bits in BETA_TABLE:
        return BETA_TABLE[bits]
    return np.sqrt(3.0) * np.pi / 2.0 * 2.0 ** (-2 * bits)


def alpha_for_bits(bits: Optional[int]) -> float:
    """Scaling gain alpha = 1 - beta."""
    return 1.0 - beta_for_bits(bits)


def adc_model(bits: Optional[int]) -> AdcModel:
    beta = beta_for_bits(bits)
    return AdcModel(bits=bits, alpha=1.0 - beta, beta=beta)


def noise_variance(snr_db: float, paths: PathSet, convention: SnrConvention = "receive") -> float:
    """
    Channel-noise variance for an SNR point.

    ``receive``: sigma^2 = 10^(-SNR/10) * sum |h_p|^2 (per-antenna receive SNR with
    unit-energy pilots). ``transmit``: sigma^2 = 10^(-SNR/10).
    """
    scale = 10.0 ** (-snr_db / 10.0)
    if convention == "receive":
        return scale * paths.power
    if convention == "transmit":
        return scale
    raise ValueError(f"unknown SNR convention {convention!r}")


def _signal_power(paths: PathSet, symbol_energy: float) -> float:
    # unit-modulus steering: identical on every antenna
    return paths.power * symbol_energy


def effective_sigma(
    paths: PathSet,
    cfg: FrameConfig,
    sigma2: float,
    bits: Optional[int],
    symbol_energy: float = 1.0,
) -> np.ndarray:
    """
    Diagonal of the effective noise covariance Sigma = alpha^2 sigma^2 I + C_ad.

    Returns:
        Length MN*N_r vector holding alpha^2 sigma^2 + alpha beta (sum|h|^2 E|s|^2 + sigma^2)
    """
    model = adc_model(bits)
    c_ad = model.alpha * model.beta * (_signal_power(paths, symbol_energy) + sigma2)
    value = model.alpha ** 2 * sigma2 + c_ad
    return np.full(cfg.MN * cfg.N_r, value)


def _complex_gaussian(rng: np.random.Generator, size: int, variance) -> np.ndarray:
    return np.sqrt(np.asarray(variance) / 2.0) * (
        rng.standard_normal(size) + 1j * rng.standard_normal(size)
    )


def quantize(
    r: np.ndarray,
    paths: PathSet,
    cfg: FrameConfig,
    sigma2: float,
    rng: np.random.Generator,
    symbol_energy: float = 1.0,
) -> QuantizedObservation:
    """
    Add channel noise and pass the result through the AQNM ADC in one step.

    Args:
        r: Noiseless receive vector H s (length MN*N_r)
        paths: Realized paths (conditioning the quantization-noise power)
        cfg: Frame configuration; ``cfg.b`` selects the resolution
        sigma2: Channel-noise variance per complex sample
        rng: Per-trial random generator

    Returns:
        Quantized observation with its noise statistics
    """
    r = np.asarray(r, dtype=complex)
    model = adc_model(cfg.b)
    size = r.shape[0]

    c_ad = model.alpha * model.beta * (_signal_power(paths, symbol_energy) + sigma2)
    C_ad_diag = np.full(size, c_ad)
    Sigma_diag = np.full(size, model.alpha ** 2 * sigma2 + c_ad)

    channel_noise = _complex_gaussian(rng, size, sigma2)
    # always draw so the RNG stream does not depend on the resolution
    distortion = _complex_gaussian(rng, size, C_ad_diag)
    r_ad = model.alpha * (r + channel_noise) + distortion

    logger.debug(
        f"Quantized frame: bits={cfg.b}, alpha={model.alpha:.6f}, sigma2={sigma2:.3e}, c_ad={c_ad:.3e}"
    )
    return QuantizedObservation(
        r_ad=r_ad,
        sigma2=float(sigma2),
        alpha=model.alpha,
        beta=model.beta,
        C_ad_diag=C_ad_diag,
        Sigma_diag=Sigma_diag,
    )
