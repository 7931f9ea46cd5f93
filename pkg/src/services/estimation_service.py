"""
Uplink parameter estimation: spatial-smoothing MUSIC for the AoAs, then
per-path Doppler and gain by iterative interference cancellation.

Each path (delay l_p = p + 1, known) picks the unused AoA candidate and
integer Doppler tap that maximize the energy-normalized correlation with the
residual, refines the fractional Doppler by golden-section search, estimates
its gain in closed form and is subtracted from the residual. Optional cyclic
passes then re-estimate each path with the others cancelled.
"""

from typing import List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg
from scipy.signal import find_peaks

from src.config import EstimatorSettings, FrameConfig, Geometry
from src.models.schemas import (
    DdGrid,
    MusicSpectrum,
    PathEstimate,
    PathSet,
    QuantizedObservation,
    SmoothedCovariance,
    UplinkResult,
)
from src.services.channel_service import shift_and_phase, steering_matrix, steering_vector
from src.services.otfs_modem import demodulate_vectors, modulate_vectors, otfs_demodulate
from src.services.position_service import los_delay, position_fix
from src.utils.errors import DimensionError, EstimationError
from src.utils.logger import setup_logger
from src.utils.search import golden_section_max

logger = setup_logger(__name__)

SmoothingDirection = Literal["forward", "forward-backward"]

PEAK_PROMINENCE = 1e-6
ALTERNATIONS = 2


def smoothed_covariance(
    Y: np.ndarray,
    L: int,
    direction: SmoothingDirection = "forward",
) -> SmoothedCovariance:
    """
    Spatially smoothed covariance over the K = N_r - L + 1 overlapping subarrays.

    Args:
        Y: N_r x S antenna-by-snapshot matrix
        L: Subarray length
        direction: ``forward`` smoothing, or ``forward-backward`` which also averages
            the conjugate-reversed subarrays

    Returns:
        R_ss = (1/K) sum_k Y_k Y_k^H / S, Hermitian

    Raises:
        ValueError: If L is outside [1, N_r]
        EstimationError: If there are fewer snapshots than L
    """
    Y = np.asarray(Y, dtype=complex)
    if Y.ndim != 2:
        raise DimensionError(f"expected an antenna-by-snapshot matrix, got shape {Y.shape}")
    n_antennas, snapshots = Y.shape
    if not 1 <= L <= n_antennas:
        raise ValueError(f"subarray length L={L} must lie in [1, {n_antennas}]")
    if snapshots < L:
        raise EstimationError(f"insufficient snapshots: {snapshots} < L={L}")

    K = n_antennas - L + 1
    R = np.zeros((L, L), dtype=complex)
    for k in range(K):
        Y_k = Y[k:k + L]
        R += Y_k @ Y_k.conj().T
    R /= K * snapshots

    if direction == "forward-backward":
        J = np.eye(L)[::-1]
        R = 0.5 * (R + J @ R.conj() @ J)
    elif direction != "forward":
        raise ValueError(f"unknown smoothing direction {direction!r}")

    return SmoothedCovariance(R_ss=0.5 * (R + R.conj().T), K=K, snapshots=snapshots)


def angle_grid(step_deg: float) -> np.ndarray:
    """Scan angles over [-pi/2, pi/2] (radians) at ``step_deg`` spacing."""
    count = int(round(180.0 / step_deg)) + 1
    return np.linspace(-np.pi / 2, np.pi / 2, count)


def _noise_projection(E_n: np.ndarray, theta: float) -> float:
    projection = E_n.conj().T @ steering_vector(theta, E_n.shape[0])
    return float(np.sum(np.abs(projection) ** 2))


def _refine_peak(E_n: np.ndarray, grid: np.ndarray, i: int, tolerance: float) -> float:
    # Q(theta) maximized continuously between the neighbouring scan angles
    if i == 0 or i == len(grid) - 1:
        return float(grid[i])
    theta, value = golden_section_max(
        lambda t: -_noise_projection(E_n, t), (grid[i - 1], grid[i + 1]), tolerance
    )
    if value < -_noise_projection(E_n, grid[i]):
        return float(grid[i])
    return float(theta)


def music_aoa(
    R_ss: Union[SmoothedCovariance, np.ndarray],
    P: int,
    grid_step_deg: float = 0.1,
    tolerance_deg: float = 1e-5,
) -> MusicSpectrum:
    """
    MUSIC pseudo-spectrum Q(theta) = 1 / ||E_n^H a(theta)||^2 and its P strongest peaks.

    Grid peaks are refined by golden-section search on the continuous
    pseudo-spectrum. Local maxima whose prominence is below ``PEAK_PROMINENCE``
    times the spectrum maximum are ripple, not sources.

    Args:
        R_ss: Smoothed L x L covariance
        P: Number of sources
        grid_step_deg: Scan resolution in degrees
        tolerance_deg: Final bracket width of the peak refinement in degrees

    Returns:
        Spectrum with the top peaks sorted by descending value; flags
        ``insufficient_peaks`` when fewer than P peaks exist

    Raises:
        ValueError: If P < 1 or P >= L
    """
    R = R_ss.R_ss if isinstance(R_ss, SmoothedCovariance) else np.asarray(R_ss, dtype=complex)
    L = R.shape[0]
    if P < 1:
        raise ValueError(f"at least one source is required (P={P})")
    if P >= L:
        raise ValueError(f"MUSIC needs P < L (P={P}, L={L})")

    # ascending eigenvalues: the first L - P span the noise subspace
    _, vectors = linalg.eigh(R)
    E_n = vectors[:, :L - P]

    grid = angle_grid(grid_step_deg)
    projection = E_n.conj().T @ steering_matrix(grid, L)
    denominator = np.sum(np.abs(projection) ** 2, axis=0)
    q = 1.0 / np.maximum(denominator, np.finfo(float).tiny)

    indices, _ = find_peaks(q, prominence=PEAK_PROMINENCE * q.max())
    indices = indices[np.argsort(q[indices])[::-1]][:P]
    tolerance = np.deg2rad(tolerance_deg)
    peaks = np.array([_refine_peak(E_n, grid, i, tolerance) for i in indices], dtype=float)

    insufficient = len(indices) < P
    if insufficient:
        logger.warning(f"MUSIC found {len(indices)} peaks, expected {P}")

    return MusicSpectrum(
        grid=grid,
        q=q,
        peaks=peaks,
        peak_values=q[indices],
        insufficient_peaks=insufficient,
    )


def doppler_grid(N: int) -> np.ndarray:
    """Integer Doppler taps {-N/2, ..., N/2 - 1}."""
    return np.arange(-(N // 2), N - N // 2)


def _dd_atom(s: np.ndarray, delay: int, doppler: float, cfg: FrameConfig) -> np.ndarray:
    """Single-antenna DD response (F_N (x) I_M) Pi^l Delta^nu s."""
    return demodulate_vectors(shift_and_phase(s, delay, doppler), cfg.M, cfg.N, 1)


def _pilot_vector(x: Union[DdGrid, np.ndarray], cfg: FrameConfig) -> np.ndarray:
    x = x.x if isinstance(x, DdGrid) else np.asarray(x, dtype=complex).reshape(-1)
    if x.shape[0] != cfg.MN:
        raise DimensionError(f"pilot has {x.shape[0]} symbols, expected {cfg.MN}")
    return x


def estimate_paths(
    y_ad: np.ndarray,
    x: Union[DdGrid, np.ndarray],
    aoa_candidates: Sequence[float],
    cfg: FrameConfig,
    alpha: float,
    settings: Optional[EstimatorSettings] = None,
) -> List[PathEstimate]:
    """
    Iterative Doppler/gain estimation with interference cancellation.

    Args:
        y_ad: DD-domain quantized observation, length MN * N_r
        x: Known DD pilot
        aoa_candidates: AoA pool (radians), each used at most once
        cfg: Frame configuration (P paths with delays 1..P)
        alpha: ADC scaling gain
        settings: Golden-section tolerance and optional joint gain refit

    Returns:
        One estimate per path, in delay order (path 0 is the LoS path)

    Raises:
        EstimationError: On an empty candidate list or when candidates run out
    """
    settings = settings or EstimatorSettings()
    candidates = np.asarray(list(aoa_candidates), dtype=float)
    if candidates.size == 0:
        raise EstimationError("empty AoA candidate list")
    if alpha <= 0:
        raise ValueError(f"ADC scaling gain must be positive (got {alpha})")
    y_r = np.asarray(y_ad, dtype=complex).copy()
    if y_r.shape != (cfg.MN * cfg.N_r,):
        raise DimensionError(f"observation has shape {y_r.shape}, expected ({cfg.MN * cfg.N_r},)")

    s = modulate_vectors(_pilot_vector(x, cfg), cfg.M, cfg.N)
    taps = doppler_grid(cfg.N)
    steering = steering_matrix(candidates, cfg.N_r)
    unused = np.ones(candidates.size, dtype=bool)

    estimates: List[PathEstimate] = []
    atoms: List[np.ndarray] = []
    for p in range(cfg.P):
        if not unused.any():
            raise EstimationError(f"all AoA candidates consumed after {p} of {cfg.P} paths")
        delay = p + 1
        Y_r = y_r.reshape(cfg.N_r, cfg.MN)

        V = np.stack([_dd_atom(s, delay, k, cfg) for k in taps], axis=1)
        corr = steering.conj().T @ (Y_r @ V.conj())
        energy = cfg.N_r * np.sum(np.abs(V) ** 2, axis=0)
        metric = np.abs(corr) ** 2 / energy[np.newaxis, :]
        metric[~unused] = -np.inf

        i_theta, i_k = np.unravel_index(np.argmax(metric), metric.shape)
        k_hat = int(taps[i_k])
        a = steering[:, i_theta]

        def doppler_metric(nu: float) -> float:
            v = _dd_atom(s, delay, nu, cfg)
            c = a.conj() @ (Y_r @ v.conj())
            return float(np.abs(c) ** 2 / (cfg.N_r * np.sum(np.abs(v) ** 2)))

        nu_hat, best = golden_section_max(doppler_metric, (k_hat - 0.5, k_hat + 0.5), settings.golden_tol)
        integer_value = float(metric[i_theta, i_k])
        if best < integer_value:
            nu_hat, best = float(k_hat), integer_value

        atom = np.kron(a, _dd_atom(s, delay, nu_hat, cfg))
        h_hat = complex(atom.conj() @ y_r / (alpha * np.vdot(atom, atom).real))
        y_r = y_r - alpha * h_hat * atom
        unused[i_theta] = False
        atoms.append(atom)

        estimates.append(PathEstimate(
            delay=delay,
            theta_hat=float(candidates[i_theta]),
            k_hat=k_hat,
            kappa_hat=float(np.clip(nu_hat - k_hat, -0.5, 0.5)),
            h_hat=h_hat,
            metric=best,
            residual_energy=float(np.vdot(y_r, y_r).real),
        ))
        logger.debug(
            f"Path {p}: theta={np.rad2deg(candidates[i_theta]):.3f} deg, nu={nu_hat:.4f}, "
            f"|h|={abs(h_hat):.4f}, residual={estimates[-1].residual_energy:.4e}"
        )

    if settings.joint_refit:
        estimates = refit_gains(estimates, atoms, np.asarray(y_ad, dtype=complex), alpha)
    return estimates


def refit_gains(
    estimates: List[PathEstimate],
    atoms: List[np.ndarray],
    y_ad: np.ndarray,
    alpha: float,
) -> List[PathEstimate]:
    """Jointly re-estimate all gains by least squares over the selected atoms."""
    G = alpha * np.stack(atoms, axis=1)
    gains, *_ = linalg.lstsq(G, y_ad)
    return [est.model_copy(update={"h_hat": complex(h)}) for est, h in zip(estimates, gains)]


def _path_atom(s: np.ndarray, delay: int, theta: float, nu: float, cfg: FrameConfig) -> np.ndarray:
    return np.kron(steering_vector(theta, cfg.N_r), _dd_atom(s, delay, nu, cfg))


def _refine_single_path(
    Y_r: np.ndarray,
    s: np.ndarray,
    delay: int,
    start: Tuple[float, float],
    cfg: FrameConfig,
    settings: EstimatorSettings,
    grid: np.ndarray,
    grid_steering: np.ndarray,
) -> Tuple[float, float, float]:
    """Best (theta, nu, metric) of one path against a residual holding only that path."""
    taps = doppler_grid(cfg.N)
    step = grid[1] - grid[0]
    angle_tol = np.deg2rad(settings.angle_tol_deg)

    def metric_at(theta: float, nu: float) -> float:
        v = _dd_atom(s, delay, nu, cfg)
        c = steering_vector(theta, cfg.N_r).conj() @ (Y_r @ v.conj())
        return float(np.abs(c) ** 2 / (cfg.N_r * np.sum(np.abs(v) ** 2)))

    V = np.stack([_dd_atom(s, delay, k, cfg) for k in taps], axis=1)
    energy = cfg.N_r * np.sum(np.abs(V) ** 2, axis=0)
    scan = np.abs(grid_steering.conj().T @ (Y_r @ V.conj())) ** 2 / energy[np.newaxis, :]
    i_theta, i_k = np.unravel_index(np.argmax(scan), scan.shape)
    theta, k = float(grid[i_theta]), int(taps[i_k])
    nu, best = float(k), float(scan[i_theta, i_k])

    for _ in range(ALTERNATIONS):
        nu_new, value = golden_section_max(lambda n: metric_at(theta, n), (k - 0.5, k + 0.5), settings.golden_tol)
        if value > best:
            nu, best = nu_new, value
        v = _dd_atom(s, delay, nu, cfg)
        z = Y_r @ v.conj()
        v_energy = cfg.N_r * float(np.sum(np.abs(v) ** 2))
        interval = (max(theta - step, -np.pi / 2), min(theta + step, np.pi / 2))
        theta_new, value = golden_section_max(
            lambda t: float(np.abs(steering_vector(t, cfg.N_r).conj() @ z) ** 2 / v_energy),
            interval,
            angle_tol,
        )
        if value > best:
            theta, best = theta_new, value

    start_value = metric_at(*start)
    if start_value > best:
        return start[0], start[1], start_value
    return theta, nu, best


def prefix_residuals(y: np.ndarray, atoms: List[np.ndarray]) -> np.ndarray:
    """
    ||y||^2 and the residual energy after projecting y onto the first 1..P atoms.

    The subspaces are nested, so the sequence never increases.
    """
    y = np.asarray(y, dtype=complex)
    Q, _ = linalg.qr(np.stack(atoms, axis=1), mode="economic")
    captured = np.cumsum(np.abs(Q.conj().T @ y) ** 2)
    total = float(np.vdot(y, y).real)
    return np.concatenate([[total], np.maximum(total - captured, 0.0)])


def refine_paths(
    y_ad: np.ndarray,
    x: Union[DdGrid, np.ndarray],
    estimates: List[PathEstimate],
    cfg: FrameConfig,
    alpha: float,
    settings: Optional[EstimatorSettings] = None,
) -> List[PathEstimate]:
    """
    Cyclic re-estimation of every path with all other paths cancelled.

    Each pass visits the paths in delay order. A path's residual keeps only
    its own contribution; the full angle grid and the integer Doppler taps at
    its delay are rescanned, then Doppler and AoA are refined by alternating
    golden-section searches. A path keeps its previous parameters when they
    still fit better. Gains are refit jointly by least squares after every pass.

    Args:
        y_ad: DD-domain quantized observation, length MN * N_r
        x: Known DD pilot
        estimates: Starting point, one estimate per path in delay order
        cfg: Frame configuration
        alpha: ADC scaling gain
        settings: Pass count, grid step and search tolerances

    Returns:
        Refined estimates; ``residual_energy`` holds the nested least-squares residuals
    """
    settings = settings or EstimatorSettings()
    y = np.asarray(y_ad, dtype=complex)
    if y.shape != (cfg.MN * cfg.N_r,):
        raise DimensionError(f"observation has shape {y.shape}, expected ({cfg.MN * cfg.N_r},)")
    if not estimates:
        raise EstimationError("no path estimates to refine")

    s = modulate_vectors(_pilot_vector(x, cfg), cfg.M, cfg.N)
    grid = angle_grid(settings.angle_step_deg)
    grid_steering = steering_matrix(grid, cfg.N_r)

    thetas = [e.theta_hat for e in estimates]
    nus = [e.doppler_hat for e in estimates]
    delays = [e.delay for e in estimates]
    gains = np.array([e.h_hat for e in estimates], dtype=complex)
    atoms = [_path_atom(s, d, t, n, cfg) for d, t, n in zip(delays, thetas, nus)]
    metrics = [e.metric for e in estimates]

    for n_pass in range(settings.refine_passes):
        for p in range(len(estimates)):
            others = sum(
                (alpha * gains[q] * atoms[q] for q in range(len(atoms)) if q != p),
                np.zeros_like(y),
            )
            Y_r = (y - others).reshape(cfg.N_r, cfg.MN)
            thetas[p], nus[p], metrics[p] = _refine_single_path(
                Y_r, s, delays[p], (thetas[p], nus[p]), cfg, settings, grid, grid_steering
            )
            atoms[p] = _path_atom(s, delays[p], thetas[p], nus[p], cfg)
            gains[p] = atoms[p].conj() @ Y_r.reshape(-1) / (alpha * np.vdot(atoms[p], atoms[p]).real)

        solution, *_ = linalg.lstsq(alpha * np.stack(atoms, axis=1), y)
        gains = np.asarray(solution, dtype=complex)
        logger.debug(
            f"Refinement pass {n_pass}: theta={np.rad2deg(thetas).round(4).tolist()} deg, "
            f"nu={np.round(nus, 4).tolist()}"
        )

    residuals = prefix_residuals(y, atoms)
    refined: List[PathEstimate] = []
    for p, est in enumerate(estimates):
        k_hat = int(np.round(nus[p]))
        refined.append(est.model_copy(update={
            "theta_hat": float(thetas[p]),
            "k_hat": k_hat,
            "kappa_hat": float(np.clip(nus[p] - k_hat, -0.5, 0.5)),
            "h_hat": complex(gains[p]),
            "metric": float(metrics[p]),
            "residual_energy": float(residuals[p + 1]),
        }))
    return refined


def to_path_set(estimates: List[PathEstimate]) -> PathSet:
    """Estimated parameters as a path set (used to build the estimated downlink channel)."""
    return PathSet(
        gains=np.array([e.h_hat for e in estimates], dtype=complex),
        delays=np.array([e.delay for e in estimates], dtype=int),
        doppler_int=np.array([e.k_hat for e in estimates], dtype=int),
        doppler_frac=np.array([e.kappa_hat for e in estimates], dtype=float),
        aoas=np.array([e.theta_hat for e in estimates], dtype=float),
    )


def candidate_pool(spectrum: MusicSpectrum, P: int, min_separation_deg: float = 1.0) -> np.ndarray:
    """
    MUSIC peaks, topped up with the strongest remaining scan angles when fewer
    than P peaks were resolved.
    """
    pool = list(spectrum.peaks)
    if len(pool) >= P:
        return np.asarray(pool)
    separation = np.deg2rad(min_separation_deg)
    for i in np.argsort(spectrum.q)[::-1]:
        theta = float(spectrum.grid[i])
        if all(abs(theta - t) >= separation for t in pool):
            pool.append(theta)
        if len(pool) == P:
            break
    return np.asarray(pool)


class UplinkEstimator:
    """Runs SS-MUSIC, iterative path estimation and the position fix on one frame."""

    def __init__(self, cfg: FrameConfig, geom: Geometry, settings: Optional[EstimatorSettings] = None):
        self.cfg = cfg
        self.geom = geom
        self.settings = settings or EstimatorSettings()

    def aoa_spectrum(self, r_ad: np.ndarray) -> MusicSpectrum:
        """SS-MUSIC on the MN time samples of each antenna."""
        Y = np.asarray(r_ad).reshape(self.cfg.N_r, self.cfg.MN)
        covariance = smoothed_covariance(Y, self.cfg.L)
        return music_aoa(covariance, self.cfg.P, self.settings.angle_step_deg, self.settings.angle_tol_deg)

    def estimate(self, observation: QuantizedObservation, pilot: DdGrid) -> UplinkResult:
        """
        Estimate every path and the user position from one quantized frame.

        Args:
            observation: Quantized time-domain receive vector
            pilot: Known DD pilot grid

        Returns:
            MUSIC spectrum, path estimates (refined when ``refine_passes`` > 0) and position
        """
        spectrum = self.aoa_spectrum(observation.r_ad)
        y_ad = otfs_demodulate(observation.r_ad, self.cfg)
        candidates = candidate_pool(spectrum, self.cfg.P)
        paths = estimate_paths(y_ad, pilot, candidates, self.cfg, observation.alpha, self.settings)
        if self.settings.refine_passes:
            paths = refine_paths(y_ad, pilot, paths, self.cfg, observation.alpha, self.settings)

        residual = [float(np.vdot(y_ad, y_ad).real)] + [p.residual_energy for p in paths]
        position = position_fix(paths[0].theta_hat, los_delay(self.cfg), self.geom)
        return UplinkResult(
            spectrum=spectrum,
            paths=paths,
            position=position,
            residual_energy=np.array(residual),
        )
