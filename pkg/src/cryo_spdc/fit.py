"""
Model fitting against measured spectra and joint spectral intensities.

- ``fit_gaussian``: Poisson-weighted least-squares Gaussian for marginals.
- ``convolve_instrument_response``: spectrometer response as a unit-area
  Gaussian kernel on a uniform axis.
- ``fit_effective_length``: single-parameter search for the interaction length
  whose simulated JSI best matches a measured grid.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np
from numpy.typing import NDArray
from scipy.ndimage import convolve1d
from scipy.optimize import curve_fit

from .dispersion import scaled_length
from .errors import ArgumentError, FitError, InsensitiveFitError
from .jsa import (
    FWHM_PER_SIGMA,
    JsiGrid,
    Normalization,
    PumpSpec,
    Spectrum,
    normalize,
    pump_envelope,
    sinc_amplitude,
    to_omega,
    to_wavelength,
)
from .phasematch import CrystalSpec, phase_mismatch

logger = logging.getLogger(__name__)

NM = 1e-9
# peak-normalized models closer than this are indistinguishable
FLAT_MODEL = 1e-8
UNIFORM_AXIS_RTOL = 1e-6
LENGTH_BOUND_RTOL = 1e-9


@dataclass(frozen=True)
class GaussianFitResult:
    center: float
    fwhm: float
    amplitude: float
    center_uncertainty: float
    fwhm_uncertainty: float
    residual_rms: float
    amplitude_uncertainty: float = 0.0


@dataclass(frozen=True)
class LengthFitResult:
    """Outcome of the effective-length search.

    ``grid_minimum`` is the best candidate on ``length_grid``;
    ``effective_length`` equals it unless parabolic refinement moved it.
    """

    effective_length: float
    length_grid: Tuple[float, ...]
    objective_values: Tuple[float, ...]
    bounds: Tuple[float, float]
    grid_minimum: float
    refined: bool
    at_bound: bool
    temperature: float
    objective: Dict[str, Any] = field(default_factory=dict)


def _gaussian(x: NDArray[np.float64], center: float, sigma: float, amplitude: float) -> NDArray:
    return amplitude * np.exp(-((x - center) ** 2) / (2.0 * sigma**2))


class _BestIterate:
    """Gaussian model that remembers the evaluated parameters with the lowest χ²"""

    def __init__(
        self,
        x: NDArray[np.float64],
        y: NDArray[np.float64],
        sigma_y: Optional[NDArray[np.float64]],
    ):
        self.x = x
        self.y = y
        self.sigma_y = sigma_y
        self.chi2 = math.inf
        self.params: Optional[Tuple[float, float, float]] = None

    def __call__(
        self, x: NDArray[np.float64], center: float, sigma: float, amplitude: float
    ) -> NDArray:
        model = _gaussian(x, center, sigma, amplitude)
        residual = self.y - model
        if self.sigma_y is not None:
            residual = residual / self.sigma_y
        chi2 = float(np.sum(residual**2))
        if math.isfinite(chi2) and chi2 < self.chi2:
            self.chi2 = chi2
            self.params = (float(center), float(sigma), float(amplitude))
        return model

    def report(self, peak: float) -> Optional[Dict[str, float]]:
        """Best parameters in metres, with the RMS residual relative to ``peak``"""
        if self.params is None:
            return None
        center, sigma, amplitude = self.params
        residual = (self.y - _gaussian(self.x, center, sigma, amplitude)) / peak
        return {
            "center": center * NM,
            "fwhm": FWHM_PER_SIGMA * abs(sigma) * NM,
            "amplitude": amplitude,
            "residual_rms": float(np.sqrt(np.mean(residual**2))),
        }


def fit_gaussian(spectrum: Spectrum, max_evaluations: int = 2000) -> GaussianFitResult:
    """Least-squares Gaussian with zero baseline.

    When the spectrum carries errors they are used as absolute standard
    deviations (Poisson errors of the counts, zeros replaced by 1); otherwise
    every point gets equal weight and the covariance is rescaled by the
    residuals.
    """
    if len(spectrum) < 5:
        raise ArgumentError(f"Gaussian fit needs at least 5 points, got {len(spectrum)}")
    y = spectrum.intensity
    if not np.all(np.isfinite(y)) or np.any(y < 0):
        raise ArgumentError("Spectrum intensities must be finite and non-negative")
    peak = float(y.max())
    if not peak > 0:
        raise FitError("Cannot fit a Gaussian to an all-zero spectrum", best=None)

    # nanometres keep the problem well conditioned
    x = spectrum.wavelength / NM
    weights = y / y.sum()
    center0 = float((weights * x).sum())
    sigma0 = math.sqrt(max(float((weights * (x - center0) ** 2).sum()), 1e-6))
    p0 = (center0, sigma0, peak)

    sigma_y: Optional[NDArray[np.float64]] = None
    if spectrum.error is not None:
        sigma_y = np.where(spectrum.error > 0, spectrum.error, 1.0)

    tracker = _BestIterate(x, y, sigma_y)
    try:
        popt, pcov = curve_fit(
            tracker,
            x,
            y,
            p0=p0,
            sigma=sigma_y,
            absolute_sigma=sigma_y is not None,
            maxfev=max_evaluations,
            ftol=1e-12,
            xtol=1e-12,
            gtol=1e-12,
        )
    except RuntimeError as e:
        raise FitError(f"Gaussian fit did not converge: {e}", best=tracker.report(peak)) from e

    center, sigma, amplitude = (float(v) for v in popt)
    sigma = abs(sigma)
    errors = np.sqrt(np.abs(np.diag(pcov)))
    if not (np.all(np.isfinite(popt)) and np.all(np.isfinite(errors))) or sigma == 0:
        raise FitError(
            "Gaussian fit is degenerate (singular covariance)", best=tracker.report(peak)
        )

    residual = (y - _gaussian(x, center, sigma, amplitude)) / peak
    result = GaussianFitResult(
        center=center * NM,
        fwhm=FWHM_PER_SIGMA * sigma * NM,
        amplitude=amplitude,
        center_uncertainty=float(errors[0]) * NM,
        fwhm_uncertainty=FWHM_PER_SIGMA * float(errors[1]) * NM,
        residual_rms=float(np.sqrt(np.mean(residual**2))),
        amplitude_uncertainty=float(errors[2]),
    )
    logger.debug(
        f"Gaussian fit: center {result.center / NM:.4f} nm, FWHM {result.fwhm / NM:.4f} nm"
    )
    return result


def _uniform_step(axis: NDArray[np.float64], name: str) -> float:
    steps = np.diff(np.asarray(axis, dtype=float))
    if steps.size == 0:
        raise ArgumentError(f"The {name} axis needs at least 2 points")
    step = float(steps.mean())
    if not np.allclose(steps, step, rtol=UNIFORM_AXIS_RTOL, atol=0.0):
        raise ArgumentError(
            f"The {name} axis is not uniformly sampled; resample it onto a uniform grid "
            f"before applying the instrument response"
        )
    return abs(step)


def instrument_kernel(response_fwhm: float, step: float) -> NDArray[np.float64]:
    """Unit-area Gaussian sampled at the axis step, truncated at ±6σ"""
    sigma = response_fwhm / FWHM_PER_SIGMA / step
    half = max(int(math.ceil(6.0 * sigma)), 1)
    offsets = np.arange(-half, half + 1, dtype=float)
    kernel = np.exp(-(offsets**2) / (2.0 * sigma**2))
    return kernel / kernel.sum()


def convolve_instrument_response(spectrum: Spectrum, response_fwhm: float) -> Spectrum:
    """Spectrum as seen through a Gaussian spectrometer response of the given FWHM"""
    if not (math.isfinite(response_fwhm) and response_fwhm >= 0):
        raise ArgumentError(f"Instrument response FWHM must be >= 0, got {response_fwhm}")
    step = _uniform_step(spectrum.wavelength, "wavelength")
    if response_fwhm == 0:
        return Spectrum(spectrum.wavelength.copy(), spectrum.intensity.copy(), spectrum.error)

    kernel = instrument_kernel(response_fwhm, step)
    intensity = convolve1d(spectrum.intensity, kernel, mode="constant", cval=0.0)
    error = None
    if spectrum.error is not None:
        error = np.sqrt(convolve1d(spectrum.error**2, kernel**2, mode="constant", cval=0.0))
    return Spectrum(spectrum.wavelength.copy(), np.clip(intensity, 0.0, None), error)


def convolve_grid(grid: JsiGrid, response_fwhm: float) -> JsiGrid:
    """Instrument response applied along both axes; normalization is restored afterwards"""
    if not (math.isfinite(response_fwhm) and response_fwhm >= 0):
        raise ArgumentError(f"Instrument response FWHM must be >= 0, got {response_fwhm}")
    if response_fwhm == 0:
        return grid
    intensity = np.asarray(grid.intensity)
    for axis, values, name in ((0, grid.signal_axis, "signal"), (1, grid.idler_axis, "idler")):
        kernel = instrument_kernel(response_fwhm, _uniform_step(values, name))
        intensity = convolve1d(intensity, kernel, axis=axis, mode="constant", cval=0.0)
    intensity = np.clip(intensity, 0.0, None)
    if grid.normalization is not Normalization.RAW_COUNTS:
        intensity = normalize(intensity, grid.normalization)
    return JsiGrid(grid.signal_axis, grid.idler_axis, intensity, grid.normalization)


class _JsiModel:
    """Pump envelope and phase mismatch on fixed axes; only the length varies"""

    def __init__(
        self, grid: JsiGrid, crystal: CrystalSpec, pump: PumpSpec, temperature: float
    ):
        self.grid = grid
        self.crystal = crystal
        self.temperature = temperature
        ws = np.asarray(to_omega(grid.signal_axis))[:, np.newaxis]
        wi = np.asarray(to_omega(grid.idler_axis))[np.newaxis, :]
        self.envelope = np.asarray(pump_envelope(pump, ws, wi))
        self.delta_k = np.asarray(
            phase_mismatch(
                crystal, to_wavelength(ws + wi), to_wavelength(ws), to_wavelength(wi), temperature
            )
        )

    def intensity(self, effective_length: float) -> NDArray[np.float64]:
        length = scaled_length(self.crystal.expansion, effective_length, self.temperature)
        amplitude = self.envelope * np.asarray(sinc_amplitude(self.delta_k, length))
        return normalize(amplitude**2, Normalization.PEAK_ONE)


def _objective(
    measured: NDArray[np.float64], simulated: NDArray[np.float64], background: bool
) -> float:
    if background:
        # measured ≈ scale·simulated + offset
        design = np.column_stack([simulated.ravel(), np.ones(simulated.size)])
        coeffs, *_ = np.linalg.lstsq(design, measured.ravel(), rcond=None)
        simulated = (design @ coeffs).reshape(simulated.shape)
    return float(np.sqrt(np.mean((measured - simulated) ** 2)))


def _parabolic_vertex(
    lengths: NDArray[np.float64], values: NDArray[np.float64], k: int
) -> Optional[float]:
    y0, y1, y2 = values[k - 1], values[k], values[k + 1]
    curvature = y0 - 2.0 * y1 + y2
    if not curvature > 0:
        return None
    step = lengths[k + 1] - lengths[k]
    vertex = lengths[k] + 0.5 * step * (y0 - y2) / curvature
    return float(np.clip(vertex, lengths[k - 1], lengths[k + 1]))


def fit_effective_length(
    measured: JsiGrid,
    crystal: CrystalSpec,
    pump: PumpSpec,
    temperature: float,
    length_bounds: Optional[Tuple[float, float]] = None,
    grid_points: int = 200,
    refine: bool = True,
    instrument_response: float = 0.0,
    fit_background: bool = False,
) -> LengthFitResult:
    """Effective length whose simulated JSI deviates least from ``measured``.

    Both grids are normalized to peak one and compared by the RMS of their
    cellwise difference. The search is exhaustive over ``grid_points``
    candidates; refinement fits a parabola to the mean-square objective
    around the best interior candidate. ``length_bounds`` default to
    (1 %, 100 %) of the chip length, and the upper bound may never exceed it.
    If the peak-normalized model does not change with the length over the
    bounds, ``InsensitiveFitError`` is raised.
    """
    lo, hi = length_bounds or (0.01 * crystal.length_ref, crystal.length_ref)
    if not (math.isfinite(lo) and math.isfinite(hi) and 0 < lo < hi):
        raise ArgumentError(f"Length bounds must satisfy 0 < lower < upper, got ({lo}, {hi})")
    if hi > crystal.length_ref * (1.0 + LENGTH_BOUND_RTOL):
        raise ArgumentError(
            f"Upper length bound {hi * 1e3:.4f} mm exceeds the chip length "
            f"{crystal.length_ref * 1e3:.4f} mm"
        )
    # 24.4e-3 and 24.4 * 1e-3 differ in the last bit
    hi = min(hi, crystal.length_ref)
    if grid_points < 3:
        raise ArgumentError(f"Length search needs at least 3 grid points, got {grid_points}")
    if not (math.isfinite(instrument_response) and instrument_response >= 0):
        raise ArgumentError("Instrument response FWHM must be >= 0")

    target = normalize(measured.intensity, Normalization.PEAK_ONE)
    model = _JsiModel(measured, crystal, pump, temperature)
    lengths = np.linspace(lo, hi, grid_points)
    reference: Optional[NDArray[np.float64]] = None
    model_spread = 0.0

    def evaluate(length: float) -> float:
        nonlocal reference, model_spread
        simulated = np.asarray(model.intensity(length))
        if instrument_response > 0:
            simulated = convolve_grid(
                JsiGrid(measured.signal_axis, measured.idler_axis, simulated),
                instrument_response,
            ).intensity
        if reference is None:
            reference = simulated
        model_spread = max(model_spread, float(np.max(np.abs(simulated - reference))))
        value = _objective(target, simulated, fit_background)
        logger.debug(f"L={length * 1e3:.5f} mm: objective {value:.6e}")
        return value

    values = np.array([evaluate(float(length)) for length in lengths])
    k = int(np.argmin(values))
    grid_minimum = float(lengths[k])
    metadata: Dict[str, Any] = {
        "norm": "rms",
        "normalization": Normalization.PEAK_ONE.value,
        "instrument_response_fwhm": instrument_response,
        "background": fit_background,
    }

    if model_spread <= FLAT_MODEL:
        raise InsensitiveFitError(
            f"Simulated JSI changes by less than {FLAT_MODEL:g} over "
            f"[{lo * 1e3:.4f}, {hi * 1e3:.4f}] mm; the measured grid does not constrain the length",
            best=grid_minimum,
        )

    at_bound = k in (0, grid_points - 1)
    effective_length = grid_minimum
    refined = False
    if at_bound:
        logger.warning(
            f"Effective-length minimum {grid_minimum * 1e3:.4f} mm sits on a search bound; "
            f"widen the bounds"
        )
    elif refine:
        vertex = _parabolic_vertex(lengths, values**2, k)
        if vertex is not None:
            effective_length = vertex
            refined = True

    logger.info(
        f"Effective length {effective_length * 1e3:.4f} mm at {temperature:g} K "
        f"(grid minimum {grid_minimum * 1e3:.4f} mm, objective {values[k]:.4e})"
    )
    return LengthFitResult(
        effective_length=effective_length,
        length_grid=tuple(float(v) for v in lengths),
        objective_values=tuple(float(v) for v in values),
        bounds=(float(lo), float(hi)),
        grid_minimum=grid_minimum,
        refined=refined,
        at_bound=at_bound,
        temperature=temperature,
        objective=metadata,
    )
