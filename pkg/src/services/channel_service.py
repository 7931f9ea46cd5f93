"""
Delay-Doppler-angular channel synthesis.

The time-domain channel H = sum_p h_p [a(theta_p) (x) (Pi^l_p Delta^nu_p)] is
kept in factored form: every path acts on the transmit samples as a Doppler
phase ramp followed by a cyclic shift, then fans out over the array through
its steering vector.
"""

from typing import Literal, Optional

import numpy as np

from src.config import FrameConfig, Geometry
from src.models.schemas import PathSet
from src.services.otfs_modem import demodulate_vectors, modulate_vectors
from src.services.position_service import derive_los
from src.utils.errors import ConfigError, DimensionError
from src.utils.logger import setup_logger

logger = setup_logger(__name__)

MAX_AOA_DRAWS = 1000


def steering_vector(theta: float, n_elements: int) -> np.ndarray:
    """Half-wavelength ULA response [1, e^{j pi sin theta}, ..., e^{j pi (n-1) sin theta}]."""
    return np.exp(1j * np.pi * np.arange(n_elements) * np.sin(theta))


def steering_matrix(thetas: np.ndarray, n_elements: int) -> np.ndarray:
    """Steering vectors as columns, shape (n_elements, len(thetas))."""
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    return np.exp(1j * np.pi * np.outer(np.arange(n_elements), np.sin(thetas)))


def steering_derivative(theta: float, n_elements: int) -> np.ndarray:
    """d a(theta) / d theta = d_r * a(theta) with d_r = j pi cos(theta) [0, ..., n-1]."""
    d_r = 1j * np.pi * np.cos(theta) * np.arange(n_elements)
    return d_r * steering_vector(theta, n_elements)


def power_delay_profile(delays: np.ndarray, mu: float) -> np.ndarray:
    """Normalized exponential PDP xi_p = exp(-mu l_p) / sum exp(-mu l_p)."""
    weights = np.exp(-mu * np.asarray(delays, dtype=float))
    return weights / weights.sum()


def shift_and_phase(
    s: np.ndarray,
    delay: int,
    doppler: float,
    doppler_derivative: bool = False,
) -> np.ndarray:
    """
    Compute Pi^l Delta^nu s (or Pi^l D Delta^nu s) along the first axis.

    Delta^nu = diag(exp(j 2 pi nu q / MN)) with fractional nu allowed and
    D = diag(j 2 pi q / MN).
    """
    MN = s.shape[0]
    q = np.arange(MN)
    ramp = np.exp(2j * np.pi * doppler * q / MN)
    if doppler_derivative:
        ramp = ramp * (2j * np.pi * q / MN)
    if s.ndim > 1:
        ramp = ramp.reshape((MN,) + (1,) * (s.ndim - 1))
    return np.roll(ramp * s, delay, axis=0)


def sample_paths(cfg: FrameConfig, geom: Geometry, rng: np.random.Generator) -> PathSet:
    """
    Draw one channel realization.

    Delays are l_p = p + 1; gains are CN(0, xi_p) under the exponential PDP;
    Doppler follows Jakes (k_max cos U); path 0 takes the geometric LoS AoA and
    NLoS AoAs are uniform in the configured sector, kept a guard band away from
    every AoA already placed.

    Args:
        cfg: Validated frame configuration
        geom: Geometry giving the LoS AoA
        rng: Per-trial random generator

    Returns:
        Path set with P paths
    """
    P = cfg.P
    delays = np.arange(1, P + 1)
    xi = power_delay_profile(delays, cfg.pdp_mu)

    gains = np.sqrt(xi / 2) * (rng.standard_normal(P) + 1j * rng.standard_normal(P))
    doppler = cfg.k_max * np.cos(rng.uniform(0.0, 2 * np.pi, size=P))

    _, theta0 = derive_los(geom)
    sector = np.deg2rad(cfg.nlos_sector_deg)
    guard = np.deg2rad(cfg.aoa_guard_deg)
    aoas = [theta0]
    for p in range(1, P):
        for _ in range(MAX_AOA_DRAWS):
            candidate = rng.uniform(-sector, sector)
            if all(abs(candidate - a) >= guard for a in aoas):
                aoas.append(candidate)
                break
        else:
            raise ConfigError([
                f"cannot place {P - 1} NLoS AoAs in +/-{cfg.nlos_sector_deg} deg "
                f"with a {cfg.aoa_guard_deg} deg guard"
            ])

    paths = PathSet.from_doppler(gains, delays, doppler, aoas, pdp=xi)
    logger.debug(
        f"Sampled paths: doppler={np.round(paths.doppler, 4).tolist()}, "
        f"aoas_deg={np.round(np.rad2deg(paths.aoas), 2).tolist()}, power={paths.power:.4f}"
    )
    return paths


class ChannelOperator:
    """Linear map r = H s from MN transmit samples to A*MN stacked antenna samples."""

    def __init__(self, paths: PathSet, cfg: FrameConfig, n_antennas: Optional[int] = None):
        self.paths = paths
        self.M = cfg.M
        self.N = cfg.N
        self.MN = cfg.MN
        self.n_antennas = cfg.N_r if n_antennas is None else n_antennas
        self._steering = [steering_vector(theta, self.n_antennas) for theta in paths.aoas]

    @property
    def shape(self) -> tuple:
        return (self.n_antennas * self.MN, self.MN)

    def _check(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=complex)
        if s.shape[0] != self.MN:
            raise DimensionError(f"expected {self.MN} transmit samples, got {s.shape[0]}")
        return s

    def path_action(self, p: int, s: np.ndarray) -> np.ndarray:
        """Pi^l_p Delta^nu_p s for path p (single antenna, no gain)."""
        return shift_and_phase(self._check(s), int(self.paths.delays[p]), float(self.paths.doppler[p]))

    def apply(self, s: np.ndarray) -> np.ndarray:
        """
        Apply H to a transmit vector or to each column of an (MN, B) array.

        Returns:
            Stacked receive samples, antenna-major, leading dimension A*MN
        """
        s = self._check(s)
        out = np.zeros((self.n_antennas,) + s.shape, dtype=complex)
        for p in range(self.paths.P):
            moved = self.path_action(p, s)
            weights = self.paths.gains[p] * self._steering[p]
            out += weights.reshape((-1,) + (1,) * s.ndim) * moved[np.newaxis]
        return out.reshape((self.n_antennas * self.MN,) + s.shape[1:])

    __call__ = apply


def build_channel(paths: PathSet, cfg: FrameConfig, n_antennas: Optional[int] = None) -> ChannelOperator:
    """
    Build the factored time-domain channel operator.

    Args:
        paths: Path set
        cfg: Frame configuration
        n_antennas: Array size (N_r for the uplink, N_t for the downlink)

    Raises:
        ConfigError: If a delay tap does not fit the frame
    """
    bad = [int(l) for l in paths.delays if l < 0 or l >= cfg.MN]
    if bad:
        raise ConfigError([f"delay out of range: taps {bad} outside [0, {cfg.MN})"])
    return ChannelOperator(paths, cfg, n_antennas)


def effective_dd_channel(
    H: ChannelOperator,
    cfg: FrameConfig,
    direction: Literal["uplink", "downlink"] = "uplink",
) -> np.ndarray:
    """
    Dense delay-Doppler effective channel.

    Uplink: G_U = (I_A (x) F_N (x) I_M) H (F_N^H (x) I_M), shape (A*MN, MN),
    built column by column from unit DD impulses. Downlink: G_U^T (TDD reciprocity).
    """
    if direction not in ("uplink", "downlink"):
        raise ValueError(f"direction must be 'uplink' or 'downlink', got {direction!r}")
    impulses = modulate_vectors(np.eye(cfg.MN, dtype=complex), cfg.M, cfg.N)
    G_U = demodulate_vectors(H.apply(impulses), cfg.M, cfg.N, H.n_antennas)
    return G_U if direction == "uplink" else G_U.T
