"""
Pydantic models for simulator inputs, intermediate results and reports.
"""

import math
from typing import Any, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

INFINITE_BITS_LABELS = ("inf", "infinite", "none")

METRIC_NAMES = (
    "position_mse",
    "doppler_mse",
    "gain_mse",
    "crlb_position",
    "crlb_doppler",
    "crlb_gain",
    "ber",
    "precoder_mismatch",
)


def parse_bits(value: Any) -> Optional[int]:
    """Parse an ADC resolution. ``None`` stands for infinite resolution."""
    if value is None:
        return None
    if isinstance(value, str):
        text = value.strip().lower()
        if text in INFINITE_BITS_LABELS:
            return None
        value = text
    if isinstance(value, float) and math.isinf(value):
        return None
    try:
        return int(value)
    except (TypeError, ValueError):
        raise ValueError(f"ADC bits must be an integer or 'inf', got {value!r}")


def format_bits(bits: Optional[int]) -> str:
    """Render an ADC resolution for tables and CSV."""
    return "inf" if bits is None else str(bits)


class _ArrayModel(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)


class ValidationReport(BaseModel):
    """Outcome of checking a frame configuration."""
    valid: bool
    errors: List[str] = Field(default_factory=list)
    K: int = Field(..., description="Derived subarray count N_r - L + 1")


class PathSet(_ArrayModel):
    """The P propagation paths. Path 0 is the LoS path."""
    gains: np.ndarray        # complex h_p
    delays: np.ndarray       # integer delay taps l_p
    doppler_int: np.ndarray  # integer Doppler taps k_p
    doppler_frac: np.ndarray # fractional Doppler kappa_p
    aoas: np.ndarray         # radians
    pdp: Optional[np.ndarray] = None  # xi_p

    @model_validator(mode='after')
    def validate_shapes(self):
        size = len(self.gains)
        for name in ("delays", "doppler_int", "doppler_frac", "aoas"):
            if len(getattr(self, name)) != size:
                raise ValueError(f"{name} has {len(getattr(self, name))} entries, expected {size}")
        if len(set(int(l) for l in self.delays)) != size:
            raise ValueError("path delays must be distinct")
        if np.any(np.abs(self.doppler_frac) > 0.5 + 1e-12):
            raise ValueError("fractional Doppler must lie in [-1/2, 1/2]")
        return self

    @classmethod
    def from_doppler(
        cls,
        gains,
        delays,
        doppler,
        aoas,
        pdp=None,
    ) -> "PathSet":
        """Build a path set from total Doppler values, splitting off the integer tap."""
        doppler = np.atleast_1d(np.asarray(doppler, dtype=float))
        doppler_int = np.round(doppler).astype(int)
        return cls(
            gains=np.atleast_1d(np.asarray(gains, dtype=complex)),
            delays=np.atleast_1d(np.asarray(delays, dtype=int)),
            doppler_int=doppler_int,
            doppler_frac=doppler - doppler_int,
            aoas=np.atleast_1d(np.asarray(aoas, dtype=float)),
            pdp=None if pdp is None else np.asarray(pdp, dtype=float),
        )

    @property
    def P(self) -> int:
        return len(self.gains)

    @property
    def doppler(self) -> np.ndarray:
        """Total normalized Doppler k_p + kappa_p."""
        return self.doppler_int + self.doppler_frac

    @property
    def power(self) -> float:
        """Realized total path power sum |h_p|^2."""
        return float(np.sum(np.abs(self.gains) ** 2))


class AdcModel(BaseModel):
    """AQNM parameters for one ADC resolution."""
    model_config = ConfigDict(frozen=True)

    bits: Optional[int]
    alpha: float
    beta: float


class QuantizedObservation(_ArrayModel):
    """Post-ADC receive vector with its effective noise statistics."""
    r_ad: np.ndarray
    sigma2: float
    alpha: float
    beta: float
    C_ad_diag: np.ndarray
    Sigma_diag: np.ndarray


class SmoothedCovariance(_ArrayModel):
    """Forward spatially smoothed covariance."""
    R_ss: np.ndarray
    K: int
    snapshots: int


class MusicSpectrum(_ArrayModel):
    """MUSIC pseudo-spectrum and its strongest peaks."""
    grid: np.ndarray
    q: np.ndarray
    peaks: np.ndarray        # radians, sorted by descending pseudo-spectrum value
    peak_values: np.ndarray
    insufficient_peaks: bool = False


class PathEstimate(_ArrayModel):
    """Estimated parameters of one path."""
    delay: int
    theta_hat: float
    k_hat: int
    kappa_hat: float
    h_hat: complex
    metric: float
    residual_energy: float

    @property
    def doppler_hat(self) -> float:
        return self.k_hat + self.kappa_hat


class UplinkResult(_ArrayModel):
    """Everything the uplink phase estimates from one quantized frame."""
    spectrum: MusicSpectrum
    paths: List[PathEstimate]
    position: np.ndarray
    residual_energy: np.ndarray  # ||y_r||^2 before and after each cancellation step

    @property
    def theta0_hat(self) -> float:
        return self.paths[0].theta_hat


class FimResult(_ArrayModel):
    """Fisher information over the real parameters and the bounds derived from it.

    Real parameters are ordered group-major: index g * P + p for the groups
    (Re h, Im h, theta, nu).
    """
    J: np.ndarray
    crlb: np.ndarray
    crlb_gain: np.ndarray
    crlb_angle: np.ndarray
    crlb_doppler: np.ndarray
    crlb_position: Optional[float] = None
    crlb_position_matrix: Optional[np.ndarray] = None
    unbounded: bool = False


class Precoder(_ArrayModel):
    """Normalized ZF precoder."""
    W: np.ndarray
    gamma: float
    regularized: bool = False


class LinkResult(BaseModel):
    """Downlink detection outcome."""
    ber: float = Field(..., ge=0, le=1)
    bits_sent: int
    bit_errors: int
    symbols_sent: int
    symbol_errors: int
    snr_db: Optional[float] = None
    bits: Optional[int] = None
    noise_variance: Optional[float] = None
    mismatch: Optional[float] = Field(default=None, description="||G_D W - gamma I||_F^2 / (MN gamma^2)")


class TrialMetrics(BaseModel):
    """Per-trial squared errors, bounds and BER."""
    trial_index: int
    seed: int
    snr_db: float
    bits: Optional[int]
    position_se: float
    doppler_se: float
    gain_se: float
    crlb_position: float
    crlb_doppler: float
    crlb_gain: float
    ber: float
    bit_errors: int
    bits_sent: int
    los_aoa_error_deg: float
    precoder_mismatch: float = 0.0
    insufficient_peaks: bool = False
    precoder_regularized: bool = False

    def metric(self, name: str) -> float:
        """Value feeding the aggregate ``name`` (one of ``METRIC_NAMES``)."""
        lookup = {
            "position_mse": self.position_se,
            "doppler_mse": self.doppler_se,
            "gain_mse": self.gain_se,
            "crlb_position": self.crlb_position,
            "crlb_doppler": self.crlb_doppler,
            "crlb_gain": self.crlb_gain,
            "ber": self.ber,
            "precoder_mismatch": self.precoder_mismatch,
        }
        return lookup[name]


class CrlbReport(BaseModel):
    """Bounds averaged over channel draws, without running the estimator."""
    snr_db: float
    bits: Optional[int]
    trials: int
    crlb_gain: List[float]
    crlb_angle: List[float]
    crlb_doppler: List[float]
    crlb_position: float
    unbounded_draws: int = 0


class SweepSpec(BaseModel):
    """The experiment grid of a Monte-Carlo sweep."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    snr_points: Tuple[float, ...] = (0.0, 10.0, 20.0, 30.0, 40.0, 50.0)
    bits_list: Tuple[Optional[int], ...] = (3, 4, 5, None)
    trials: int = Field(default=500, ge=1)
    metrics: Tuple[str, ...] = METRIC_NAMES
    output_path: Optional[str] = None
    snr_convention: Literal["receive", "transmit"] = "receive"
    downlink_frames: int = Field(default=8, ge=1)
    downlink_snr: Literal["symbol", "uplink"] = "symbol"
    detector_csi: Literal["true", "estimated"] = "true"

    @field_validator('snr_points')
    @classmethod
    def validate_snr_points(cls, v):
        if not v:
            raise ValueError("SNR list must not be empty")
        return v

    @field_validator('bits_list', mode='before')
    @classmethod
    def validate_bits_list(cls, v):
        bits = tuple(parse_bits(b) for b in v)
        if not bits:
            raise ValueError("bits list must not be empty")
        for b in bits:
            if b is not None and b < 1:
                raise ValueError(f"ADC bits must be >= 1 or infinite (got {b})")
        return bits

    @field_validator('metrics')
    @classmethod
    def validate_metrics(cls, v):
        unknown = [m for m in v if m not in METRIC_NAMES]
        if unknown:
            raise ValueError(f"unknown metrics {unknown}; allowed: {list(METRIC_NAMES)}")
        return v


class ResultRow(BaseModel):
    """One long-format CSV row."""
    snr_db: float
    bits: Optional[int]
    metric: str
    value: float
    trials: int
    seed: int

    @model_validator(mode='after')
    def validate_value(self):
        if self.value < 0:
            raise ValueError(f"{self.metric} must be non-negative (got {self.value})")
        if self.metric == "ber" and self.value > 1:
            raise ValueError(f"ber must lie in [0, 1] (got {self.value})")
        return self

    def as_csv_fields(self) -> List[str]:
        return [
            f"{self.snr_db:g}",
            format_bits(self.bits),
            self.metric,
            repr(float(self.value)),
            str(self.trials),
            str(self.seed),
        ]


class StageDump(BaseModel):
    """One pipeline stage tensor, flattened for JSON-lines debugging output."""
    stage: str
    shape: List[int]
    real: List[float]
    imag: List[float]

    @classmethod
    def from_array(cls, stage: str, array) -> "StageDump":
        arr = np.asarray(array)
        flat = arr.reshape(-1)
        return cls(
            stage=stage,
            shape=list(arr.shape),
            real=np.real(flat).astype(float).tolist(),
            imag=np.imag(flat).astype(float).tolist(),
        )


class DdGrid(_ArrayModel):
    """M x N delay-Doppler symbol grid."""
    X: np.ndarray

    @property
    def x(self) -> np.ndarray:
        """Column-major vectorization vec(X)."""
        return self.X.reshape(-1, order="F")

    @classmethod
    def from_vector(cls, x, M: int, N: int) -> "DdGrid":
        return cls(X=np.asarray(x, dtype=complex).reshape((M, N), order="F"))


class TdFrame(_ArrayModel):
    """Single-antenna time-domain transmit frame s = vec(S)."""
    s: np.ndarray
    M: int
    N: int

    @property
    def S(self) -> np.ndarray:
        return self.s.reshape((self.M, self.N), order="F")
