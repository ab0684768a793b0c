"""
Joint spectral amplitude and intensity of the down-converted pair.

The amplitude is the product of a Gaussian pump envelope α(ω_s + ω_i) and the
phase-matching function Φ = sinc(Δk′·L/2). Only the intensity |α·Φ|² is kept;
the physical normalization constant is replaced by a grid normalization mode.

Frequencies are angular (rad/s) and related to vacuum wavelengths by
ω = 2πc/λ everywhere.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.constants import c as SPEED_OF_LIGHT

from .dispersion import FloatOrArray, scaled_length
from .errors import ArgumentError
from .phasematch import CrystalSpec, SolverSettings, phase_mismatch, solve_phasematch

logger = logging.getLogger(__name__)

FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))


def to_omega(wavelength: ArrayLike) -> FloatOrArray:
    """ω = 2πc/λ"""
    result = 2.0 * math.pi * SPEED_OF_LIGHT / np.asarray(wavelength, dtype=float)
    return float(result) if np.ndim(result) == 0 else result


def to_wavelength(omega: ArrayLike) -> FloatOrArray:
    """λ = 2πc/ω"""
    return to_omega(omega)


class BandwidthConvention(str, Enum):
    """What the quoted pump FWHM refers to"""

    AMPLITUDE = "amplitude"
    INTENSITY = "intensity"


class Normalization(str, Enum):
    PEAK_ONE = "peak_one"
    SUM_ONE = "sum_one"
    RAW_COUNTS = "raw_counts"


class Axis(str, Enum):
    SIGNAL = "signal"
    IDLER = "idler"


@dataclass(frozen=True)
class PumpSpec:
    """Pulsed pump laser.

    ``fwhm_bandwidth`` is a wavelength FWHM; it is converted to angular
    frequency at the central wavelength. With the ``intensity`` convention it
    is read as the FWHM of |α|², so the amplitude envelope is √2 wider.
    """

    central_wavelength: float
    fwhm_bandwidth: float
    repetition_rate: float = 80e6
    transmitted_power: float = 0.0
    bandwidth_convention: BandwidthConvention = BandwidthConvention.AMPLITUDE

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "bandwidth_convention", BandwidthConvention(self.bandwidth_convention)
        )
        for name in (
            "central_wavelength",
            "fwhm_bandwidth",
            "repetition_rate",
            "transmitted_power",
        ):
            if not math.isfinite(getattr(self, name)):
                raise ArgumentError(f"Non-finite pump {name}")
        if self.central_wavelength <= 0:
            raise ArgumentError("Pump central wavelength must be positive")
        if self.fwhm_bandwidth < 0:
            raise ArgumentError("Pump bandwidth must not be negative")
        if self.repetition_rate < 0 or self.transmitted_power < 0:
            raise ArgumentError("Repetition rate and transmitted power must not be negative")

    @property
    def omega(self) -> float:
        return float(to_omega(self.central_wavelength))

    @property
    def fwhm_omega(self) -> float:
        """FWHM of the amplitude envelope α in rad/s"""
        quoted = 2.0 * math.pi * SPEED_OF_LIGHT * self.fwhm_bandwidth / self.central_wavelength**2
        if self.bandwidth_convention is BandwidthConvention.INTENSITY:
            return quoted * math.sqrt(2.0)
        return quoted

    @property
    def sigma(self) -> float:
        return self.fwhm_omega / FWHM_PER_SIGMA


@dataclass(frozen=True)
class Spectrum:
    """One-dimensional spectrum; ``error`` holds per-point standard errors if known"""

    wavelength: NDArray[np.float64]
    intensity: NDArray[np.float64]
    error: Optional[NDArray[np.float64]] = None

    def __post_init__(self) -> None:
        wavelength = np.asarray(self.wavelength, dtype=float)
        intensity = np.asarray(self.intensity, dtype=float)
        if wavelength.ndim != 1 or wavelength.shape != intensity.shape:
            raise ArgumentError("Spectrum needs matching one-dimensional wavelength and intensity")
        object.__setattr__(self, "wavelength", wavelength)
        object.__setattr__(self, "intensity", intensity)
        if self.error is not None:
            error = np.asarray(self.error, dtype=float)
            if error.shape != intensity.shape:
                raise ArgumentError("Spectrum error must match the intensity shape")
            object.__setattr__(self, "error", error)

    def __len__(self) -> int:
        return len(self.wavelength)


def _check_axis(name: str, axis: ArrayLike) -> NDArray[np.float64]:
    arr = np.array(axis, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ArgumentError(f"The {name} axis is empty")
    if arr.size < 2:
        raise ArgumentError(f"The {name} axis needs at least 2 points, got {arr.size}")
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise ArgumentError(f"The {name} axis must hold positive finite wavelengths")
    steps = np.diff(arr)
    if not (np.all(steps > 0) or np.all(steps < 0)):
        raise ArgumentError(f"The {name} axis must be strictly monotone")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class JsiGrid:
    """Joint spectral intensity sampled on (signal, idler) wavelength axes.

    ``intensity[i, j]`` belongs to ``signal_axis[i]`` and ``idler_axis[j]``.
    Arrays are read-only once the grid is built.
    """

    signal_axis: NDArray[np.float64]
    idler_axis: NDArray[np.float64]
    intensity: NDArray[np.float64]
    normalization: Normalization = Normalization.PEAK_ONE

    def __post_init__(self) -> None:
        object.__setattr__(self, "normalization", Normalization(self.normalization))
        object.__setattr__(self, "signal_axis", _check_axis("signal", self.signal_axis))
        object.__setattr__(self, "idler_axis", _check_axis("idler", self.idler_axis))
        intensity = np.array(self.intensity, dtype=float)
        expected = (len(self.signal_axis), len(self.idler_axis))
        if intensity.shape != expected:
            raise ArgumentError(
                f"Intensity shape {intensity.shape} does not match the axes {expected}"
            )
        if not np.all(np.isfinite(intensity)) or np.any(intensity < 0):
            raise ArgumentError("JSI intensities must be finite and non-negative")
        intensity.setflags(write=False)
        object.__setattr__(self, "intensity", intensity)

    @property
    def shape(self) -> Tuple[int, int]:
        return (len(self.signal_axis), len(self.idler_axis))

    def peak(self) -> Tuple[float, float]:
        """(λ_s, λ_i) of the brightest cell"""
        i, j = np.unravel_index(int(np.argmax(self.intensity)), self.intensity.shape)
        return float(self.signal_axis[i]), float(self.idler_axis[j])

    def normalized(self, normalization: Normalization) -> "JsiGrid":
        return JsiGrid(
            self.signal_axis,
            self.idler_axis,
            normalize(self.intensity, normalization),
            normalization,
        )


def normalize(intensity: ArrayLike, normalization: Normalization) -> NDArray[np.float64]:
    values = np.asarray(intensity, dtype=float)
    normalization = Normalization(normalization)
    if normalization is Normalization.RAW_COUNTS:
        return values.copy()
    scale = values.max() if normalization is Normalization.PEAK_ONE else values.sum()
    if not scale > 0:
        raise ArgumentError(f"An all-zero grid cannot be normalized to {normalization.value}")
    return values / scale


def pump_envelope(pump: PumpSpec, omega_s: ArrayLike, omega_i: ArrayLike) -> FloatOrArray:
    """α = exp(−(ω_s + ω_i − ω_p)² / 2σ²)"""
    ws = np.asarray(omega_s, dtype=float)
    wi = np.asarray(omega_i, dtype=float)
    if np.any(ws <= 0) or np.any(wi <= 0):
        raise ArgumentError("Signal and idler frequencies must be positive")
    sigma = pump.sigma
    if not sigma > 0:
        raise ArgumentError("Pump bandwidth is zero; the envelope is undefined")
    alpha = np.exp(-((ws + wi - pump.omega) ** 2) / (2.0 * sigma**2))
    return float(alpha) if np.ndim(alpha) == 0 else alpha


def sinc_amplitude(delta_k: ArrayLike, length: float) -> FloatOrArray:
    """sinc(Δk′·L/2) with sinc(x) = sin(x)/x and sinc(0) = 1"""
    # numpy's sinc is the normalized sin(πx)/(πx)
    phi = np.sinc(np.asarray(delta_k, dtype=float) * length / (2.0 * math.pi))
    return float(phi) if np.ndim(phi) == 0 else phi


def phasematching_function(
    crystal: CrystalSpec,
    effective_length: float,
    omega_s: ArrayLike,
    omega_i: ArrayLike,
    temperature: float,
) -> FloatOrArray:
    """Φ(ω_s, ω_i) with the pump wavelength taken pointwise from ω_s + ω_i.

    ``effective_length`` is quoted at the reference temperature and contracts
    with the crystal's expansion model like the chip itself.
    """
    if not effective_length > 0:
        raise ArgumentError(f"Effective length must be positive, got {effective_length} m")
    ws = np.asarray(omega_s, dtype=float)
    wi = np.asarray(omega_i, dtype=float)
    if np.any(ws <= 0) or np.any(wi <= 0):
        raise ArgumentError("Signal and idler frequencies must be positive")
    length = scaled_length(crystal.expansion, effective_length, temperature)
    dk = phase_mismatch(
        crystal, to_wavelength(ws + wi), to_wavelength(ws), to_wavelength(wi), temperature
    )
    return sinc_amplitude(dk, length)


def simulate_jsi(
    crystal: CrystalSpec,
    pump: PumpSpec,
    effective_length: float,
    temperature: float,
    signal_axis: ArrayLike,
    idler_axis: ArrayLike,
    normalization: Normalization = Normalization.PEAK_ONE,
    include_pump: bool = True,
    include_phasematching: bool = True,
) -> JsiGrid:
    """|α·Φ|² on the outer grid of the two wavelength axes.

    Either factor can be switched off to look at the other in isolation.
    """
    signal = _check_axis("signal", signal_axis)
    idler = _check_axis("idler", idler_axis)
    ws = np.asarray(to_omega(signal))[:, np.newaxis]
    wi = np.asarray(to_omega(idler))[np.newaxis, :]

    amplitude = np.ones((len(signal), len(idler)))
    if include_pump:
        amplitude = amplitude * pump_envelope(pump, ws, wi)
    if include_phasematching:
        amplitude = amplitude * phasematching_function(
            crystal, effective_length, ws, wi, temperature
        )
    intensity = normalize(amplitude**2, normalization)
    logger.debug(
        f"JSI {len(signal)}x{len(idler)} at {temperature:g} K, "
        f"L={effective_length * 1e3:.4f} mm, {Normalization(normalization).value}"
    )
    return JsiGrid(signal, idler, intensity, normalization)


def marginal_spectrum(grid: JsiGrid, axis: Axis) -> Spectrum:
    """Sum of the JSI over the other axis, in the order of ``axis``"""
    axis = Axis(axis)
    if axis is Axis.SIGNAL:
        return Spectrum(np.array(grid.signal_axis), grid.intensity.sum(axis=1))
    return Spectrum(np.array(grid.idler_axis), grid.intensity.sum(axis=0))


def spectrum_fwhm(spectrum: Spectrum) -> float:
    """Full width at half maximum by linear interpolation between samples.

    Order-independent; a peak touching either end of the axis raises.
    """
    order = np.argsort(spectrum.wavelength)
    x = spectrum.wavelength[order]
    y = spectrum.intensity[order]
    k = int(np.argmax(y))
    half = y[k] / 2.0
    if not half > 0:
        raise ArgumentError("Spectrum has no positive peak")
    below = np.flatnonzero(y < half)
    left = below[below < k]
    right = below[below > k]
    if left.size == 0 or right.size == 0:
        raise ArgumentError("Half maximum not reached on both sides; widen the axis")
    a, b = left[-1], right[0]
    x_left = np.interp(half, [y[a], y[a + 1]], [x[a], x[a + 1]])
    x_right = np.interp(half, [y[b], y[b - 1]], [x[b], x[b - 1]])
    return float(x_right - x_left)


def jsi_orientation(grid: JsiGrid) -> float:
    """Principal-axis angle of the JSI in degrees, measured from the signal axis.

    Computed from intensity-weighted second moments; −45° is a fully
    anti-correlated ridge, 0° a signal-elongated blob.
    """
    weights = grid.intensity
    total = weights.sum()
    if not total > 0:
        raise ArgumentError("An all-zero grid has no orientation")
    s = np.asarray(grid.signal_axis)[:, np.newaxis]
    i = np.asarray(grid.idler_axis)[np.newaxis, :]
    mean_s = float((weights * s).sum() / total)
    mean_i = float((weights * i).sum() / total)
    var_s = float((weights * (s - mean_s) ** 2).sum() / total)
    var_i = float((weights * (i - mean_i) ** 2).sum() / total)
    cov = float((weights * (s - mean_s) * (i - mean_i)).sum() / total)
    return math.degrees(0.5 * math.atan2(2.0 * cov, var_s - var_i))


def default_axes(
    crystal: CrystalSpec,
    pump: PumpSpec,
    temperature: float,
    signal_span: float = 30e-9,
    step: float = 1e-9,
    settings: Optional[SolverSettings] = None,
    envelope_sigmas: float = 3.0,
) -> Tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Measurement-like axes around the phase-matched point.

    The signal axis covers ``signal_span`` at ``step`` centred on the solved
    signal wavelength; the idler axis, at the same step, covers every idler
    wavelength the pump envelope allows for that signal range.
    """
    if not (signal_span > 0 and step > 0):
        raise ArgumentError("Axis span and step must be positive")
    solution = solve_phasematch(crystal, pump.central_wavelength, temperature, settings)
    half = round(signal_span / step / 2.0)
    offsets = np.arange(-half, half + 1) * step
    signal = solution.signal_wavelength + offsets

    ws = np.asarray(to_omega(signal))
    reach = envelope_sigmas * pump.sigma
    wi_lo = pump.omega - reach - ws.max()
    wi_hi = pump.omega + reach - ws.min()
    if not wi_lo > 0:
        raise ArgumentError("Pump envelope reaches zero idler frequency; reduce the span")
    lam_lo, lam_hi = float(to_wavelength(wi_hi)), float(to_wavelength(wi_lo))
    lo_steps = math.ceil((solution.idler_wavelength - lam_lo) / step)
    hi_steps = math.ceil((lam_hi - solution.idler_wavelength) / step)
    idler = solution.idler_wavelength + np.arange(-lo_steps, hi_steps + 1) * step
    return signal, idler
