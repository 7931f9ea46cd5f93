"""
User position geometry: LoS delay/AoA from the user position and back.
"""

from typing import Tuple

import numpy as np

from src.config import FrameConfig, Geometry
from src.utils.errors import GeometryError
from src.utils.logger import setup_logger

logger = setup_logger(__name__)

# Reference direction z of the AoA Jacobian.
REFERENCE_AXIS = np.array([0.0, 1.0])


def derive_los(geom: Geometry) -> Tuple[float, float]:
    """
    Derive the true LoS delay and AoA from the user position.

    Args:
        geom: User/BS geometry (BS at the origin)

    Returns:
        Tuple of (tau0 in seconds, theta0 in radians)

    Raises:
        GeometryError: If the user sits on the BS
    """
    d = geom.distance
    if d <= 0:
        raise GeometryError("user position has zero norm; LoS delay and AoA are undefined")
    x, y = geom.user_position
    return d / geom.c, float(np.arctan2(y, x))


def forward_position(tau0: float, theta0: float, c: float) -> np.ndarray:
    """Map LoS delay and AoA to a position: c * tau0 * [cos theta0, sin theta0]."""
    return c * tau0 * np.array([np.cos(theta0), np.sin(theta0)])


def los_delay(cfg: FrameConfig, l0: int = 1) -> float:
    """Delay of the LoS tap on the delay grid, l0 / (M * delta_f)."""
    return l0 * cfg.T_s


def snap_to_delay_grid(geom: Geometry, cfg: FrameConfig, l0: int = 1) -> Geometry:
    """
    Move the user radially so its range matches the integer LoS delay tap.

    The estimator treats the LoS delay as a known grid value, so the scenario
    geometry has to agree with it. The AoA is kept.

    Args:
        geom: Nominal geometry
        cfg: Frame configuration providing the delay grid
        l0: Integer LoS delay tap

    Returns:
        Geometry with ||u|| = c * l0 / (M * delta_f)
    """
    _, theta0 = derive_los(geom)
    range_m = geom.c * los_delay(cfg, l0)
    snapped = forward_position(los_delay(cfg, l0), theta0, geom.c)
    shift = abs(range_m - geom.distance)
    if shift > 0:
        logger.warning(
            f"User range snapped to delay grid: nominal={geom.distance:.3f} m, "
            f"grid={range_m:.3f} m, shift={shift:.3f} m, l0={l0}"
        )
    return geom.model_copy(update={"user_position": (float(snapped[0]), float(snapped[1]))})


def aoa_jacobian(geom: Geometry) -> np.ndarray:
    """
    Gradient of the LoS AoA with respect to the user position.

    Uses z^T (I - eta eta^T) / (d * sqrt(1 - (eta^T z)^2)) with eta = u/d and
    z = [0, 1]^T.

    Raises:
        GeometryError: When the user lies on the reference axis (denominator vanishes)
    """
    d = geom.distance
    if d <= 0:
        raise GeometryError("user position has zero norm; AoA Jacobian is undefined")
    eta = geom.u / d
    cos_ref = float(eta @ REFERENCE_AXIS)
    denom_sq = 1.0 - cos_ref ** 2
    if denom_sq <= 1e-15:
        raise GeometryError(
            "singular geometry: user direction is aligned with the Jacobian reference axis"
        )
    projector = np.eye(2) - np.outer(eta, eta)
    return (REFERENCE_AXIS @ projector) / (d * np.sqrt(denom_sq))


def position_fix(theta0_hat: float, tau0: float, geom: Geometry) -> np.ndarray:
    """
    Position estimate from the estimated LoS AoA and the known LoS delay.

    Args:
        theta0_hat: Estimated LoS AoA (radians)
        tau0: Known LoS delay (seconds)
        geom: Geometry supplying the propagation speed

    Returns:
        Estimated position u_hat (meters)
    """
    return forward_position(tau0, theta0_hat, geom.c)
