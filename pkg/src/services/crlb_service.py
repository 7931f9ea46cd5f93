"""
Cramer-Rao bounds for the channel parameters and the user position.

The complex gains are split into real and imaginary parts, giving 4P real
parameters ordered group-major (Re h, Im h, theta, nu). With a parameter-free
effective noise covariance the Fisher information is
J = 2 Re{ mu^H Sigma^-1 mu } where the columns of mu are alpha * dH/dI_i * s.
"""

from typing import Literal, Optional, Tuple

import numpy as np

from src.config import FrameConfig, Geometry
from src.models.schemas import FimResult, PathSet
from src.services.adc_service import alpha_for_bits
from src.services.channel_service import shift_and_phase, steering_derivative, steering_vector
from src.services.position_service import aoa_jacobian
from src.utils.errors import DimensionError
from src.utils.logger import setup_logger

logger = setup_logger(__name__)

PARAMETER_GROUPS = ("gain_re", "gain_im", "angle", "doppler")
DerivativeTag = Literal["gain", "angle", "doppler"]


def parameter_index(group: str, p: int, P: int) -> int:
    """Position of real parameter (group, path p) in the FIM."""
    return PARAMETER_GROUPS.index(group) * P + p


class PathDerivative:
    """Factored action of dH/dI_p on a transmit vector: weights (x) (Pi^l [D] Delta^nu)."""

    def __init__(self, weights: np.ndarray, delay: int, doppler: float, doppler_derivative: bool):
        self.weights = weights
        self.delay = delay
        self.doppler = doppler
        self.doppler_derivative = doppler_derivative

    def apply(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=complex)
        moved = shift_and_phase(s, self.delay, self.doppler, self.doppler_derivative)
        return np.kron(self.weights, moved) if s.ndim == 1 else (
            self.weights.reshape(-1, 1, 1) * moved[np.newaxis]
        ).reshape((-1,) + s.shape[1:])

    __call__ = apply


def channel_derivatives(
    paths: PathSet,
    cfg: FrameConfig,
    p: int,
    which: DerivativeTag,
    n_antennas: Optional[int] = None,
) -> PathDerivative:
    """
    Derivative of H with respect to one parameter of path p.

    gain:    a(theta_p) (x) Pi^l Delta^nu
    angle:   h_p [d_r * a(theta_p)] (x) Pi^l Delta^nu
    doppler: h_p a(theta_p) (x) Pi^l D Delta^nu

    Raises:
        ValueError: On an unknown parameter tag or path index
    """
    if not 0 <= p < paths.P:
        raise ValueError(f"path index {p} outside [0, {paths.P})")
    A = cfg.N_r if n_antennas is None else n_antennas
    theta = float(paths.aoas[p])
    delay = int(paths.delays[p])
    doppler = float(paths.doppler[p])
    h = complex(paths.gains[p])

    if which == "gain":
        return PathDerivative(steering_vector(theta, A), delay, doppler, False)
    if which == "angle":
        return PathDerivative(h * steering_derivative(theta, A), delay, doppler, False)
    if which == "doppler":
        return PathDerivative(h * steering_vector(theta, A), delay, doppler, True)
    raise ValueError(f"unknown parameter tag {which!r}; expected gain, angle or doppler")


def mean_derivatives(paths: PathSet, cfg: FrameConfig, s: np.ndarray, alpha: float) -> np.ndarray:
    """
    Columns alpha * dH/dI_i * s for the 4P real parameters, shape (MN*N_r, 4P).
    """
    s = np.asarray(s, dtype=complex)
    if s.shape != (cfg.MN,):
        raise DimensionError(f"expected a pilot of {cfg.MN} samples, got shape {s.shape}")
    P = paths.P
    mu = np.empty((cfg.MN * cfg.N_r, 4 * P), dtype=complex)
    for p in range(P):
        gain = channel_derivatives(paths, cfg, p, "gain").apply(s)
        mu[:, parameter_index("gain_re", p, P)] = alpha * gain
        mu[:, parameter_index("gain_im", p, P)] = 1j * alpha * gain
        mu[:, parameter_index("angle", p, P)] = alpha * channel_derivatives(paths, cfg, p, "angle").apply(s)
        mu[:, parameter_index("doppler", p, P)] = alpha * channel_derivatives(paths, cfg, p, "doppler").apply(s)
    return mu


def fisher_matrix(
    paths: PathSet,
    cfg: FrameConfig,
    s: np.ndarray,
    Sigma_diag: np.ndarray,
    alpha: Optional[float] = None,
) -> np.ndarray:
    """
    Fisher information J = 2 Re{(alpha dH s)^H Sigma^-1 (alpha dH s)} over 4P real parameters.

    Args:
        paths: True path set
        cfg: Frame configuration (``cfg.b`` sets alpha when not given)
        s: Modulated pilot (time domain, length MN)
        Sigma_diag: Effective noise covariance diagonal (length MN*N_r)
        alpha: ADC scaling gain override

    Returns:
        Symmetric 4P x 4P real matrix

    Raises:
        ValueError: If Sigma has non-positive entries
    """
    Sigma_diag = np.asarray(Sigma_diag, dtype=float)
    if np.any(Sigma_diag <= 0):
        raise ValueError("singular Sigma: effective noise covariance must be positive definite")
    if alpha is None:
        alpha = alpha_for_bits(cfg.b)
    mu = mean_derivatives(paths, cfg, s, alpha)
    J = 2.0 * np.real(mu.conj().T @ (mu / Sigma_diag[:, np.newaxis]))
    return 0.5 * (J + J.T)


def invert_fim(J: np.ndarray) -> Tuple[np.ndarray, bool]:
    """
    Diagonal of J^-1. Parameters whose information row is zero get an infinite
    bound and the remaining block is inverted on its own.

    Returns:
        Tuple of (bounds, unbounded flag)
    """
    diag = np.diag(J)
    scale = np.max(np.abs(diag)) if diag.size else 0.0
    active = np.abs(diag) > 1e-14 * max(scale, 1e-300)
    bounds = np.full(J.shape[0], np.inf)
    if np.any(active):
        block = J[np.ix_(active, active)]
        try:
            inverse = np.linalg.inv(block)
        except np.linalg.LinAlgError:
            logger.warning("FIM block is singular, falling back to the pseudo-inverse")
            inverse = np.linalg.pinv(block, hermitian=True)
        bounds[active] = np.maximum(np.real(np.diag(inverse)), 0.0)
    return bounds, bool(not np.all(active))


def position_crlb(fim: FimResult, geom: Geometry) -> float:
    """
    Tangential position bound from the marginal LoS-AoA information.

    The position FIM g^T J(theta0) g is rank one with ||g|| = 1/d, so the bound
    along the direction excited by AoA error is [J^-1]_theta0 / ||g||^2 = d^2 [J^-1]_theta0.

    Raises:
        GeometryError: If the AoA Jacobian is singular for this geometry
    """
    g = aoa_jacobian(geom)
    var_theta = float(fim.crlb_angle[0])
    if not np.isfinite(var_theta):
        return float("inf")
    return var_theta / float(g @ g)


def position_crlb_matrix(fim: FimResult, geom: Geometry) -> np.ndarray:
    """Pseudo-inverse of the rank-one 2x2 position FIM; its trace equals ``position_crlb``."""
    g = aoa_jacobian(geom)
    var_theta = float(fim.crlb_angle[0])
    if not np.isfinite(var_theta):
        return np.full((2, 2), np.inf)
    norm_sq = float(g @ g)
    return np.outer(g, g) * var_theta / norm_sq ** 2


def compute_bounds(
    paths: PathSet,
    cfg: FrameConfig,
    s: np.ndarray,
    Sigma_diag: np.ndarray,
    geom: Optional[Geometry] = None,
) -> FimResult:
    """
    FIM, per-parameter CRLBs and (when a geometry is given) the position CRLB.

    Gain bounds are CRLB(Re h_p) + CRLB(Im h_p).
    """
    P = paths.P
    J = fisher_matrix(paths, cfg, s, Sigma_diag)
    crlb, unbounded = invert_fim(J)

    gain = crlb[0:P] + crlb[P:2 * P]
    angle = crlb[2 * P:3 * P]
    doppler = crlb[3 * P:4 * P]

    result = FimResult(
        J=J,
        crlb=crlb,
        crlb_gain=gain,
        crlb_angle=angle,
        crlb_doppler=doppler,
        unbounded=unbounded,
    )
    if geom is None:
        return result

    if unbounded:
        logger.warning(f"FIM has zero-information parameters: bounds={crlb.tolist()}")
    return result.model_copy(update={
        "crlb_position": position_crlb(result, geom),
        "crlb_position_matrix": position_crlb_matrix(result, geom),
    })
