"""
Configuration management for the OTFS-IPAC simulator.

Scenario parameters come from a plain-text ``KEY=VALUE`` file parsed with
python-dotenv. Every scenario parameter has a key and unknown keys are
rejected. Library code never reads the global config; it takes a
``FrameConfig``/``Geometry`` argument.
"""

import hashlib
import json
import os
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
from dotenv import dotenv_values, find_dotenv, load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator
from scipy.constants import c as SPEED_OF_LIGHT

from src.models.schemas import SweepSpec, ValidationReport, parse_bits
from src.utils.errors import ConfigError
from src.utils.logger import setup_logger

logger = setup_logger(__name__)


class FrameConfig(BaseModel):
    """OTFS grid, carrier, antenna-array and ADC parameters (reference defaults)."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    M: int = 16
    N: int = 8
    delta_f: float = 15e3
    f_c: float = 4e9
    N_t: int = 16
    N_r: int = 16
    b: Optional[int] = 5
    L: int = 8
    P: int = 3
    seed: int = 2025
    max_speed_kmh: float = 300.0
    k_max_override: Optional[float] = None
    pdp_mu: float = 0.1
    nlos_sector_deg: float = 60.0
    aoa_guard_deg: float = 5.0

    @field_validator('b', mode='before')
    @classmethod
    def _parse_b(cls, v):
        return parse_bits(v)

    @property
    def MN(self) -> int:
        return self.M * self.N

    @property
    def K(self) -> int:
        """Number of overlapping subarrays used by spatial smoothing."""
        return self.N_r - self.L + 1

    @property
    def T(self) -> float:
        """OTFS symbol duration in seconds."""
        return 1.0 / self.delta_f

    @property
    def T_s(self) -> float:
        """Sample period, also the delay-grid resolution."""
        return 1.0 / (self.M * self.delta_f)

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.f_c

    @property
    def k_max(self) -> float:
        """Maximum normalized Doppler in Doppler bins of width 1/(NT)."""
        if self.k_max_override is not None:
            return self.k_max_override
        nu_max = (self.max_speed_kmh / 3.6) * self.f_c / SPEED_OF_LIGHT
        return nu_max * self.N * self.T

    def with_bits(self, bits: Optional[int]) -> "FrameConfig":
        return self.model_copy(update={"b": bits})


class Geometry(BaseModel):
    """User/BS layout in the 2-D plane. The BS sits at the origin."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    user_position: Tuple[float, float] = (883.0, 883.0)
    bs_position: Tuple[float, float] = (0.0, 0.0)
    c: float = SPEED_OF_LIGHT

    @field_validator('bs_position')
    @classmethod
    def validate_bs_position(cls, v):
        if tuple(v) != (0.0, 0.0):
            raise ValueError("the BS must be located at the origin")
        return v

    @property
    def u(self) -> np.ndarray:
        return np.asarray(self.user_position, dtype=float)

    @property
    def distance(self) -> float:
        return float(np.linalg.norm(self.u))


class EstimatorSettings(BaseModel):
    """Tunables of the uplink estimator."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    angle_step_deg: float = Field(default=0.1, gt=0, le=5)
    golden_tol: float = Field(default=1e-4, gt=0, lt=0.5)
    angle_tol_deg: float = Field(default=1e-5, gt=0, lt=0.1)
    joint_refit: bool = False
    refine_passes: int = Field(default=2, ge=0, le=10)


class ScenarioConfig(BaseModel):
    """Everything one config file describes."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    frame: FrameConfig = FrameConfig()
    geometry: Geometry = Geometry()
    estimator: EstimatorSettings = EstimatorSettings()
    sweep: SweepSpec = SweepSpec()

    def config_hash(self) -> str:
        """Stable digest of the canonical JSON form (output path excluded)."""
        payload = self.model_dump(mode="json")
        payload["sweep"].pop("output_path", None)
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def config_errors(cfg: FrameConfig) -> List[str]:
    """List every violated frame invariant, each message naming the invariant."""
    errors: List[str] = []
    if cfg.M < 1:
        errors.append(f"subcarrier count M must be >= 1 (got {cfg.M})")
    if cfg.N < 1:
        errors.append(f"time-slot count N must be >= 1 (got {cfg.N})")
    if cfg.N_r < 2:
        errors.append(f"receive array needs N_r >= 2 (got {cfg.N_r})")
    if cfg.N_t < 1:
        errors.append(f"transmit array needs N_t >= 1 (got {cfg.N_t})")
    if cfg.L < 1:
        errors.append(f"subarray length L must be >= 1 (got {cfg.L})")
    if cfg.L > cfg.N_r:
        errors.append(f"subarray longer than array (L={cfg.L} > N_r={cfg.N_r})")
    if cfg.P < 1:
        errors.append(f"path count P must be >= 1 (got {cfg.P})")
    elif cfg.P > min(cfg.L, cfg.K) or cfg.P >= cfg.L:
        errors.append(
            f"subspace identifiability requires P < L and P <= K "
            f"(P={cfg.P}, L={cfg.L}, K={cfg.K})"
        )
    if cfg.P >= cfg.M:
        errors.append(f"delay grid overflow (P={cfg.P} delays do not fit M={cfg.M})")
    if cfg.delta_f <= 0:
        errors.append(f"subcarrier spacing must be positive (got {cfg.delta_f})")
    if cfg.f_c <= 0:
        errors.append(f"carrier frequency must be positive (got {cfg.f_c})")
    if cfg.b is not None and cfg.b < 1:
        errors.append(f"ADC bits must be >= 1 or infinite (got {cfg.b})")
    if cfg.k_max < 0:
        errors.append(f"maximum Doppler must be non-negative (got {cfg.k_max})")
    if not 0 < cfg.nlos_sector_deg <= 90:
        errors.append(f"NLoS sector must lie in (0, 90] degrees (got {cfg.nlos_sector_deg})")
    if cfg.aoa_guard_deg < 0:
        errors.append(f"AoA guard must be non-negative (got {cfg.aoa_guard_deg})")
    return errors


def validate(cfg: FrameConfig) -> ValidationReport:
    """Check all frame invariants and record the derived subarray count K."""
    errors = config_errors(cfg)
    return ValidationReport(valid=not errors, errors=errors, K=cfg.K)


def require_valid(cfg: FrameConfig) -> FrameConfig:
    """Return ``cfg`` unchanged or raise ``ConfigError`` listing every violation."""
    errors = config_errors(cfg)
    if errors:
        raise ConfigError(errors)
    return cfg


def _parse_int(raw: str) -> int:
    return int(raw.strip())


def _parse_float(raw: str) -> float:
    return float(raw.strip())


def _parse_bool(raw: str) -> bool:
    text = raw.strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


def _parse_list(raw: str) -> List[Any]:
    text = raw.strip()
    if text.startswith("["):
        return list(json.loads(text))
    return [item.strip() for item in text.split(",") if item.strip()]


def _parse_float_list(raw: str) -> Tuple[float, ...]:
    return tuple(float(v) for v in _parse_list(raw))


def _parse_bits_list(raw: str) -> Tuple[Optional[int], ...]:
    return tuple(parse_bits(v) for v in _parse_list(raw))


def _parse_str_list(raw: str) -> Tuple[str, ...]:
    return tuple(str(v).strip() for v in _parse_list(raw))


def _parse_optional_float(raw: str) -> Optional[float]:
    text = raw.strip().lower()
    return None if text in ("", "none", "auto") else float(text)


# key -> (section, field, parser)
CONFIG_KEYS: Dict[str, Tuple[str, str, Callable[[str], Any]]] = {
    "M": ("frame", "M", _parse_int),
    "N": ("frame", "N", _parse_int),
    "DELTA_F": ("frame", "delta_f", _parse_float),
    "F_C": ("frame", "f_c", _parse_float),
    "N_T": ("frame", "N_t", _parse_int),
    "N_R": ("frame", "N_r", _parse_int),
    "P": ("frame", "P", _parse_int),
    "L": ("frame", "L", _parse_int),
    "BITS": ("frame", "b", parse_bits),
    "SNR_DB": ("sweep", "snr_points", _parse_float_list),
    "SEED": ("frame", "seed", _parse_int),
    "MAX_SPEED_KMH": ("frame", "max_speed_kmh", _parse_float),
    "K_MAX": ("frame", "k_max_override", _parse_optional_float),
    "PDP_MU": ("frame", "pdp_mu", _parse_float),
    "NLOS_SECTOR_DEG": ("frame", "nlos_sector_deg", _parse_float),
    "AOA_GUARD_DEG": ("frame", "aoa_guard_deg", _parse_float),
    "USER_X": ("geometry", "user_x", _parse_float),
    "USER_Y": ("geometry", "user_y", _parse_float),
    "ANGLE_STEP_DEG": ("estimator", "angle_step_deg", _parse_float),
    "GOLDEN_TOL": ("estimator", "golden_tol", _parse_float),
    "ANGLE_TOL_DEG": ("estimator", "angle_tol_deg", _parse_float),
    "JOINT_REFIT": ("estimator", "joint_refit", _parse_bool),
    "REFINE_PASSES": ("estimator", "refine_passes", _parse_int),
    "TRIALS": ("sweep", "trials", _parse_int),
    "BITS_LIST": ("sweep", "bits_list", _parse_bits_list),
    "METRICS": ("sweep", "metrics", _parse_str_list),
    "SNR_CONVENTION": ("sweep", "snr_convention", lambda raw: raw.strip().lower()),
    "DOWNLINK_FRAMES": ("sweep", "downlink_frames", _parse_int),
    "DOWNLINK_SNR": ("sweep", "downlink_snr", lambda raw: raw.strip().lower()),
    "DETECTOR_CSI": ("sweep", "detector_csi", lambda raw: raw.strip().lower()),
}


def parse_config_values(values: Dict[str, Optional[str]]) -> ScenarioConfig:
    """Build a ``ScenarioConfig`` from raw key/value strings.

    Args:
        values: Mapping of config keys (any case) to raw string values

    Returns:
        Scenario configuration with reference defaults for missing keys

    Raises:
        ConfigError: On unknown keys, unparsable values or field validation failures
    """
    errors: List[str] = []
    sections: Dict[str, Dict[str, Any]] = {"frame": {}, "geometry": {}, "estimator": {}, "sweep": {}}

    for key, raw in values.items():
        name = key.strip().upper()
        if name not in CONFIG_KEYS:
            errors.append(f"unknown key: {key}")
            continue
        section, field, parser = CONFIG_KEYS[name]
        try:
            sections[section][field] = parser(raw if raw is not None else "")
        except (TypeError, ValueError) as e:
            errors.append(f"invalid value for {name}: {e}")

    if errors:
        raise ConfigError(errors)

    geometry = sections["geometry"]
    user = Geometry().user_position
    geometry_kwargs = {
        "user_position": (geometry.get("user_x", user[0]), geometry.get("user_y", user[1]))
    }

    try:
        return ScenarioConfig(
            frame=FrameConfig(**sections["frame"]),
            geometry=Geometry(**geometry_kwargs),
            estimator=EstimatorSettings(**sections["estimator"]),
            sweep=SweepSpec(**sections["sweep"]),
        )
    except ValidationError as e:
        raise ConfigError([
            f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()
        ])


def load_config(path: Optional[str] = None) -> ScenarioConfig:
    """Load the scenario configuration.

    Args:
        path: Config file path; falls back to ``OTFS_IPAC_CONFIG``, then to reference defaults

    Returns:
        Parsed scenario configuration (frame invariants not yet checked, see ``validate``)
    """
    load_dotenv(find_dotenv(usecwd=True))

    path = path or os.getenv("OTFS_IPAC_CONFIG")
    if not path:
        logger.info("No config file given, using reference defaults")
        return ScenarioConfig()

    if not os.path.isfile(path):
        raise ConfigError([f"config file not found: {path}"])

    values = dotenv_values(path)
    scenario = parse_config_values(values)
    logger.info(f"Configuration loaded from {path}: {len(values)} keys, hash={scenario.config_hash()}")
    return scenario


def worker_count() -> int:
    """Worker processes for Monte-Carlo trials (``OTFS_IPAC_WORKERS`` or all cores)."""
    load_dotenv(find_dotenv(usecwd=True))
    raw = os.getenv("OTFS_IPAC_WORKERS")
    if raw:
        try:
            workers = int(raw)
        except ValueError:
            raise ConfigError([f"OTFS_IPAC_WORKERS must be an integer, got {raw!r}"])
        if workers < 1:
            raise ConfigError([f"OTFS_IPAC_WORKERS must be >= 1, got {workers}"])
        return workers
    return os.cpu_count() or 1


# Global config instance
_config: Optional[ScenarioConfig] = None


def get_config() -> ScenarioConfig:
    """Get the global configuration instance."""
    global _config
    if _config is None:
        _config = load_config()
    return _config
