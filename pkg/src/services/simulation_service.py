"""
Monte-Carlo simulation service: one trial runs the full uplink/downlink
pipeline, a sweep runs trials over the SNR x ADC-resolution grid and writes
the aggregated long-format CSV.
"""

import csv
import os
from datetime import datetime, timezone
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from src import __version__
from src.config import (
    EstimatorSettings,
    FrameConfig,
    Geometry,
    ScenarioConfig,
    get_config,
    require_valid,
    validate,
)
from src.models.schemas import (
    CrlbReport,
    ResultRow,
    StageDump,
    TrialMetrics,
    ValidationReport,
    format_bits,
)
from src.services.adc_service import effective_sigma, noise_variance, quantize
from src.services.channel_service import build_channel, sample_paths
from src.services.crlb_service import compute_bounds
from src.services.downlink_service import DownlinkService
from src.services.estimation_service import UplinkEstimator, smoothed_covariance, to_path_set
from src.services.otfs_modem import generate_pilot_grid, otfs_demodulate, otfs_modulate
from src.services.position_service import derive_los, snap_to_delay_grid
from src.utils.errors import ConfigError, TrialError
from src.utils.logger import setup_logger
from src.utils.pool_manager import TrialPoolManager, get_pool_manager

logger = setup_logger(__name__)

CSV_HEADER = ["snr_db", "bits", "metric", "value", "trials", "seed"]
PRECODER_NORMALIZATION = "frobenius"


def trial_rng(seed: int, trial_index: int) -> np.random.Generator:
    """Random stream of one trial; identical for every (SNR, bits) cell."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(trial_index,)))


def run_trial(
    cfg: FrameConfig,
    geom: Geometry,
    snr_db: float,
    bits: Optional[int],
    seed: int,
    trial_index: int = 0,
    settings: Optional[EstimatorSettings] = None,
    snr_convention: str = "receive",
    downlink_frames: int = 8,
    dump: Optional[List[StageDump]] = None,
    downlink_snr: str = "symbol",
    detector_csi: str = "true",
) -> TrialMetrics:
    """
    Run one trial of the full pipeline.

    sample paths -> modulate pilot -> channel -> quantize -> SS-MUSIC ->
    path estimation -> position fix -> CRLB -> precoder from estimates -> BER

    Args:
        cfg: Validated frame configuration
        geom: Geometry already snapped to the delay grid
        snr_db: SNR point
        bits: ADC resolution (None for infinite)
        seed: Master seed
        trial_index: Trial number, selects the random stream
        settings: Estimator tunables
        snr_convention: ``receive`` or ``transmit``
        downlink_frames: QPSK data frames per trial
        dump: When given, every pipeline stage tensor is appended to it
        downlink_snr: ``symbol`` (per-symbol SNR after precoding) or ``uplink``
        detector_csi: Effective channel the user detects with, ``true`` or ``estimated``

    Returns:
        Squared errors, bounds and BER of this trial

    Raises:
        TrialError: Any failure, with snr/bits/seed/trial/stage context
    """
    cfg = cfg.with_bits(bits)
    settings = settings or EstimatorSettings()
    context = {"snr_db": snr_db, "bits": format_bits(bits), "seed": seed, "trial": trial_index}
    stage = "sample_paths"

    def record(name: str, array):
        if dump is not None:
            dump.append(StageDump.from_array(name, array))

    try:
        rng = trial_rng(seed, trial_index)
        paths = sample_paths(cfg, geom, rng)
        record("paths_true", np.stack([paths.gains, paths.doppler, paths.aoas]))

        stage = "modulate"
        pilot = generate_pilot_grid(cfg, rng)
        s = otfs_modulate(pilot).s
        record("pilot_dd", pilot.X)
        record("pilot_td", s)

        stage = "channel"
        r = build_channel(paths, cfg).apply(s)
        record("rx_clean", r)

        stage = "quantize"
        sigma2 = noise_variance(snr_db, paths, snr_convention)
        observation = quantize(r, paths, cfg, sigma2, rng)
        record("rx_quantized", observation.r_ad)

        stage = "estimate"
        uplink = UplinkEstimator(cfg, geom, settings).estimate(observation, pilot)
        if dump is not None:
            record("rx_dd", otfs_demodulate(observation.r_ad, cfg))
            record("R_ss", smoothed_covariance(observation.r_ad.reshape(cfg.N_r, cfg.MN), cfg.L).R_ss)
            record("music_spectrum", uplink.spectrum.q)
            record("music_peaks", uplink.spectrum.peaks)
            record("paths_estimated", np.array([[e.h_hat, e.doppler_hat, e.theta_hat] for e in uplink.paths]).T)
            record("residual_energy", uplink.residual_energy)
            record("position_estimate", uplink.position)

        stage = "crlb"
        bounds = compute_bounds(paths, cfg, s, observation.Sigma_diag, geom)
        record("fim", bounds.J)

        stage = "downlink"
        estimated = to_path_set(uplink.paths)
        link, precoder = DownlinkService(cfg, downlink_snr, detector_csi).run(
            paths, estimated, sigma2, rng, frames=downlink_frames, snr_db=snr_db
        )
    except TrialError:
        raise
    except Exception as e:
        context["stage"] = stage
        logger.error(f"Trial {trial_index} failed at {stage}: {e}", exc_info=True)
        raise TrialError(str(e), context) from e

    h_hat = np.array([e.h_hat for e in uplink.paths])
    nu_hat = np.array([e.doppler_hat for e in uplink.paths])
    _, theta0 = derive_los(geom)

    return TrialMetrics(
        trial_index=trial_index,
        seed=seed,
        snr_db=snr_db,
        bits=bits,
        position_se=float(np.sum((uplink.position - geom.u) ** 2)),
        doppler_se=float(np.mean((nu_hat - paths.doppler) ** 2)),
        gain_se=float(np.mean(np.abs(h_hat - paths.gains) ** 2)),
        crlb_position=float(bounds.crlb_position),
        crlb_doppler=float(np.mean(bounds.crlb_doppler)),
        crlb_gain=float(np.mean(bounds.crlb_gain)),
        ber=link.ber,
        bit_errors=link.bit_errors,
        bits_sent=link.bits_sent,
        los_aoa_error_deg=float(np.rad2deg(uplink.theta0_hat - theta0)),
        precoder_mismatch=float(link.mismatch),
        insufficient_peaks=uplink.spectrum.insufficient_peaks,
        precoder_regularized=precoder.regularized,
    )


def _trial_task(
    cfg: FrameConfig,
    geom: Geometry,
    settings: EstimatorSettings,
    snr_db: float,
    bits: Optional[int],
    seed: int,
    trial_index: int,
    snr_convention: str,
    downlink_frames: int,
    downlink_snr: str,
    detector_csi: str,
) -> TrialMetrics:
    return run_trial(
        cfg, geom, snr_db, bits, seed,
        trial_index=trial_index,
        settings=settings,
        snr_convention=snr_convention,
        downlink_frames=downlink_frames,
        downlink_snr=downlink_snr,
        detector_csi=detector_csi,
    )


def aggregate(metrics: List[TrialMetrics], names: Iterable[str]) -> Dict[str, float]:
    """
    Linear-domain aggregation of one cell: MSE and CRLB are trial means, BER pools all bits.
    """
    result: Dict[str, float] = {}
    for name in names:
        if name == "ber":
            sent = sum(m.bits_sent for m in metrics)
            result[name] = sum(m.bit_errors for m in metrics) / sent if sent else 0.0
        else:
            result[name] = float(np.mean([m.metric(name) for m in metrics]))
    return result


def sweep_metadata(scenario: ScenarioConfig, created: Optional[str] = None) -> Dict[str, str]:
    """Metadata block written ahead of the CSV header."""
    return {
        "version": __version__,
        "created": created or datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "config_hash": scenario.config_hash(),
        "seed": str(scenario.frame.seed),
        "snr_convention": scenario.sweep.snr_convention,
        "precoder_normalization": PRECODER_NORMALIZATION,
        "downlink_snr_reference": scenario.sweep.downlink_snr,
        "detector_csi": scenario.sweep.detector_csi,
        "trials": str(scenario.sweep.trials),
    }


def write_csv(path: str, rows: List[ResultRow], metadata: Dict[str, str]):
    """Write ``# key: value`` metadata lines, the header and the rows."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        for key, value in metadata.items():
            f.write(f"# {key}: {value}\n")
        writer = csv.writer(f)
        writer.writerow(CSV_HEADER)
        for row in rows:
            writer.writerow(row.as_csv_fields())
    logger.info(f"Wrote {len(rows)} rows to {path}")


def read_csv(path: str) -> Tuple[Dict[str, str], List[ResultRow]]:
    """Read a sweep CSV back into its metadata and rows."""
    metadata: Dict[str, str] = {}
    lines: List[str] = []
    with open(path, newline="", encoding="utf-8") as f:
        for line in f:
            if line.startswith("#"):
                key, _, value = line[1:].partition(":")
                metadata[key.strip()] = value.strip()
            else:
                lines.append(line)
    rows = [
        ResultRow(
            snr_db=float(r["snr_db"]),
            bits=None if r["bits"] == "inf" else int(r["bits"]),
            metric=r["metric"],
            value=float(r["value"]),
            trials=int(r["trials"]),
            seed=int(r["seed"]),
        )
        for r in csv.DictReader(lines)
    ]
    return metadata, rows


def _check_writable(path: str):
    directory = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(directory) or not os.access(directory, os.W_OK):
        raise OSError(f"unwritable output path: {path}")


def run_sweep(
    scenario: ScenarioConfig,
    out_path: Optional[str] = None,
    pool: Optional[TrialPoolManager] = None,
    progress: bool = True,
    dump_path: Optional[str] = None,
) -> List[ResultRow]:
    """
    Run every (bits, SNR) cell of the sweep and write the CSV.

    Args:
        scenario: Scenario with the frame, geometry, estimator and sweep settings
        out_path: CSV destination (defaults to ``scenario.sweep.output_path``; no file when unset)
        pool: Trial pool (the global one by default)
        progress: Show a progress bar
        dump_path: Optional JSON-lines file receiving every ``TrialMetrics``

    Returns:
        Rows ordered bits -> SNR -> metric

    Raises:
        ConfigError: On an invalid frame or an empty metric selection
        OSError: If the output path is not writable
        TrialError: If any trial fails
    """
    spec = scenario.sweep
    if not spec.metrics:
        raise ConfigError(["no metrics selected"])
    cfg = require_valid(scenario.frame)
    out_path = out_path or spec.output_path
    for path in (out_path, dump_path):
        if path:
            _check_writable(path)

    geom = snap_to_delay_grid(scenario.geometry, cfg)
    seed = cfg.seed
    cells = [(bits, snr) for bits in spec.bits_list for snr in spec.snr_points]
    tasks = [
        (
            cfg, geom, scenario.estimator, snr, bits, seed, t,
            spec.snr_convention, spec.downlink_frames, spec.downlink_snr, spec.detector_csi,
        )
        for bits, snr in cells
        for t in range(spec.trials)
    ]
    contexts = [
        {"snr_db": task[3], "bits": format_bits(task[4]), "seed": seed, "trial": task[6]}
        for task in tasks
    ]
    logger.info(
        f"Sweep started: cells={len(cells)}, trials={spec.trials}, seed={seed}, "
        f"convention={spec.snr_convention}"
    )

    pool = pool or get_pool_manager()
    results: List[TrialMetrics] = pool.run(_trial_task, tasks, contexts, description="sweep", progress=progress)

    rows: List[ResultRow] = []
    for i, (bits, snr) in enumerate(cells):
        cell = results[i * spec.trials:(i + 1) * spec.trials]
        values = aggregate(cell, spec.metrics)
        flagged = sum(m.insufficient_peaks for m in cell)
        if flagged:
            logger.warning(f"Cell snr={snr:g} bits={format_bits(bits)}: {flagged} trials with insufficient MUSIC peaks")
        logger.info(f"Cell done: snr={snr:g} dB, bits={format_bits(bits)}, {values}")
        rows.extend(
            ResultRow(snr_db=snr, bits=bits, metric=name, value=values[name], trials=spec.trials, seed=seed)
            for name in spec.metrics
        )

    if out_path:
        write_csv(out_path, rows, sweep_metadata(scenario))
    if dump_path:
        with open(dump_path, "w", encoding="utf-8") as f:
            for m in results:
                f.write(m.model_dump_json() + "\n")
        logger.info(f"Wrote {len(results)} trial records to {dump_path}")
    return rows


def run_crlb(
    scenario: ScenarioConfig,
    snr_db: float,
    bits: Optional[int],
    trials: int = 1,
) -> CrlbReport:
    """
    Average the bounds over ``trials`` channel draws without running the estimator.
    """
    cfg = require_valid(scenario.frame).with_bits(bits)
    geom = snap_to_delay_grid(scenario.geometry, cfg)
    reports = []
    for t in range(trials):
        rng = trial_rng(cfg.seed, t)
        paths = sample_paths(cfg, geom, rng)
        s = otfs_modulate(generate_pilot_grid(cfg, rng)).s
        sigma2 = noise_variance(snr_db, paths, scenario.sweep.snr_convention)
        Sigma = effective_sigma(paths, cfg, sigma2, bits)
        reports.append(compute_bounds(paths, cfg, s, Sigma, geom))

    return CrlbReport(
        snr_db=snr_db,
        bits=bits,
        trials=trials,
        crlb_gain=np.mean([r.crlb_gain for r in reports], axis=0).tolist(),
        crlb_angle=np.mean([r.crlb_angle for r in reports], axis=0).tolist(),
        crlb_doppler=np.mean([r.crlb_doppler for r in reports], axis=0).tolist(),
        crlb_position=float(np.mean([r.crlb_position for r in reports])),
        unbounded_draws=sum(r.unbounded for r in reports),
    )


class SimulationService:
    """Entry point used by the CLI: validation, sweeps, bounds and single trials."""

    def __init__(self, scenario: Optional[ScenarioConfig] = None):
        self.scenario = scenario or get_config()

    def validate(self) -> ValidationReport:
        return validate(self.scenario.frame)

    def sweep(self, out_path: Optional[str] = None, progress: bool = True, dump_path: Optional[str] = None) -> List[ResultRow]:
        return run_sweep(self.scenario, out_path=out_path, progress=progress, dump_path=dump_path)

    def crlb(self, snr_db: float, bits: Optional[int], trials: int = 1) -> CrlbReport:
        return run_crlb(self.scenario, snr_db, bits, trials)

    def single_trial(
        self,
        snr_db: float,
        bits: Optional[int],
        trial_index: int = 0,
        dump: Optional[List[StageDump]] = None,
    ) -> TrialMetrics:
        """Run one trial with the scenario's settings, optionally capturing stage tensors."""
        cfg = require_valid(self.scenario.frame)
        geom = snap_to_delay_grid(self.scenario.geometry, cfg)
        return run_trial(
            cfg, geom, snr_db, bits, cfg.seed,
            trial_index=trial_index,
            settings=self.scenario.estimator,
            snr_convention=self.scenario.sweep.snr_convention,
            downlink_frames=self.scenario.sweep.downlink_frames,
            dump=dump,
            downlink_snr=self.scenario.sweep.downlink_snr,
            detector_csi=self.scenario.sweep.detector_csi,
        )


# Global simulation service instance
_simulation_service: Optional[SimulationService] = None


def get_simulation_service(scenario: Optional[ScenarioConfig] = None) -> SimulationService:
    """Get the global simulation service, rebuilding it when a scenario is passed."""
    global _simulation_service
    if _simulation_service is None or scenario is not None:
        _simulation_service = SimulationService(scenario)
    return _simulation_service
