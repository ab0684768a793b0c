"""
Temperature-dependent effective refractive indices and thermal contraction.

A ``DispersionModel`` couples a bulk Sellmeier series (one of the named forms
in ``SELLMEIER_FORMS``) with an additive waveguide correction polynomial and a
low-temperature extrapolation policy. An ``ExpansionModel`` describes the
relative length change ε(T) of the crystal along the propagation direction.

Units
-----
Public functions take wavelengths in metres and temperatures in kelvin. The
Sellmeier series and the correction polynomial are evaluated in micrometres,
which is how the published coefficient sets are written; the conversion
happens here and nowhere else.
"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.polynomial import polynomial as npoly
from numpy.typing import ArrayLike, NDArray
from scipy.constants import zero_Celsius

from .errors import ArgumentError, DispersionDomainError

FloatOrArray = Union[float, NDArray[np.float64]]

TEMPERATURE_RANGE_K = (0.0, 400.0)
METRES_PER_MICRON = 1e-6


class Polarization(str, Enum):
    TE = "TE"
    TM = "TM"


class ExtrapolationPolicy(str, Enum):
    """How the bulk series is evaluated below its fitted temperature range"""

    ANALYTIC = "analytic"
    CLAMP = "clamp"


# Sellmeier forms: (coefficients, wavelength [um], temperature [K]) -> n
SellmeierForm = Callable[[Tuple[float, ...], NDArray[np.float64], NDArray[np.float64]], NDArray]


def _edwards_lawrence(
    c: Tuple[float, ...], lam: NDArray[np.float64], temp: NDArray[np.float64]
) -> NDArray[np.float64]:
    # c = (A1, A2, A3, A4, B1, B2, B3, T0_C, T_pole_C)
    a1, a2, a3, a4, b1, b2, b3, t0, t_pole = c
    t = temp - zero_Celsius
    f = (t - t0) * (t + t_pole)
    lam2 = lam * lam
    n2 = a1 + (a2 + b1 * f) / (lam2 - (a3 + b2 * f) ** 2) + b3 * f - a4 * lam2
    return np.sqrt(n2)


def _jundt(
    c: Tuple[float, ...], lam: NDArray[np.float64], temp: NDArray[np.float64]
) -> NDArray[np.float64]:
    # c = (a1, a2, a3, a4, a5, a6, b1, b2, b3, b4, T0_C, T_pole_C)
    a1, a2, a3, a4, a5, a6, b1, b2, b3, b4, t0, t_pole = c
    t = temp - zero_Celsius
    f = (t - t0) * (t + t_pole)
    lam2 = lam * lam
    n2 = (
        a1
        + b1 * f
        + (a2 + b2 * f) / (lam2 - (a3 + b3 * f) ** 2)
        + (a4 + b4 * f) / (lam2 - a5**2)
        - a6 * lam2
    )
    return np.sqrt(n2)


def _sellmeier(
    c: Tuple[float, ...], lam: NDArray[np.float64], temp: NDArray[np.float64]
) -> NDArray[np.float64]:
    # c = (A, B1, C1, B2, C2, ...) with C in um^2; temperature independent
    lam2 = lam * lam
    n2 = np.full(np.broadcast(lam, temp).shape, c[0], dtype=float)
    for b, cc in zip(c[1::2], c[2::2]):
        n2 = n2 + b * lam2 / (lam2 - cc)
    return np.sqrt(n2)


def _constant(
    c: Tuple[float, ...], lam: NDArray[np.float64], temp: NDArray[np.float64]
) -> NDArray[np.float64]:
    return np.full(np.broadcast(lam, temp).shape, c[0], dtype=float)


SELLMEIER_FORMS: Dict[str, SellmeierForm] = {
    "edwards_lawrence": _edwards_lawrence,
    "jundt": _jundt,
    "sellmeier": _sellmeier,
    "constant": _constant,
}

_COEFFICIENT_COUNTS: Dict[str, Optional[int]] = {
    "edwards_lawrence": 9,
    "jundt": 12,
    "sellmeier": None,
    "constant": 1,
}


def _check_coefficients(form: str, coefficients: Sequence[float]) -> None:
    if form not in SELLMEIER_FORMS:
        known = ", ".join(sorted(SELLMEIER_FORMS))
        raise ArgumentError(f"Unknown Sellmeier form '{form}' (known: {known})")
    expected = _COEFFICIENT_COUNTS[form]
    if expected is None:
        if len(coefficients) < 3 or len(coefficients) % 2 == 0:
            raise ArgumentError(
                f"Form '{form}' needs an odd number (>= 3) of coefficients, "
                f"got {len(coefficients)}"
            )
    elif len(coefficients) != expected:
        raise ArgumentError(
            f"Form '{form}' needs {expected} coefficients, got {len(coefficients)}"
        )


@dataclass(frozen=True)
class DispersionModel:
    """Effective index of one polarization mode.

    ``correction`` is the coefficient table c[i][j] of the additive waveguide
    correction  Δn = Σ c[i][j] · λ_um**i · T_K**j.
    """

    polarization: Polarization
    form: str
    coefficients: Tuple[float, ...]
    validity_window: Tuple[float, float]
    correction: Tuple[Tuple[float, ...], ...] = ((0.0,),)
    extrapolation: ExtrapolationPolicy = ExtrapolationPolicy.ANALYTIC
    extrapolation_t_min: float = 0.0
    name: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "polarization", Polarization(self.polarization))
        object.__setattr__(self, "extrapolation", ExtrapolationPolicy(self.extrapolation))
        object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))
        object.__setattr__(
            self, "correction", tuple(tuple(float(c) for c in row) for row in self.correction)
        )
        _check_coefficients(self.form, self.coefficients)
        lo, hi = self.validity_window
        if not (0 < lo < hi):
            raise ArgumentError(f"Invalid validity window [{lo}, {hi}] m")
        object.__setattr__(self, "validity_window", (float(lo), float(hi)))
        if len({len(row) for row in self.correction}) != 1:
            raise ArgumentError("Waveguide correction table rows must have equal length")

    @property
    def label(self) -> str:
        return self.name or f"{self.polarization.value} {self.form}"

    def effective_temperature(self, temperature: NDArray[np.float64]) -> NDArray[np.float64]:
        if self.extrapolation is ExtrapolationPolicy.CLAMP:
            return np.maximum(temperature, self.extrapolation_t_min)
        return temperature


def _as_float_array(name: str, value: ArrayLike) -> NDArray[np.float64]:
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ArgumentError(f"Non-finite {name}: {value!r}")
    return arr


def _check_temperature(temperature: NDArray[np.float64]) -> None:
    lo, hi = TEMPERATURE_RANGE_K
    if np.any(temperature < lo) or np.any(temperature > hi):
        raise ArgumentError(
            f"Temperature {np.min(temperature):g}..{np.max(temperature):g} K outside "
            f"the supported range [{lo:g}, {hi:g}] K"
        )


def _check_window(model: DispersionModel, wavelength: NDArray[np.float64]) -> None:
    lo, hi = model.validity_window
    outside = (wavelength < lo) | (wavelength > hi)
    if np.any(outside):
        bad = float(np.atleast_1d(wavelength)[np.atleast_1d(outside)][0])
        raise DispersionDomainError(
            f"Wavelength {bad * 1e9:.3f} nm outside the validity window "
            f"[{lo * 1e9:.1f}, {hi * 1e9:.1f}] nm of {model.label}",
            window=(lo, hi),
        )


def _correction(
    model: DispersionModel, lam_um: NDArray[np.float64], temp: NDArray[np.float64]
) -> NDArray[np.float64]:
    # polyval2d wants equal shapes
    x, y = np.broadcast_arrays(lam_um, temp)
    return np.asarray(npoly.polyval2d(x, y, np.asarray(model.correction)), dtype=float)


def _scalar_or_array(value: NDArray[np.float64], *inputs: ArrayLike) -> FloatOrArray:
    if all(np.ndim(x) == 0 for x in inputs):
        return float(value)
    return value


def bulk_sellmeier(
    model: DispersionModel, wavelength: ArrayLike, temperature: ArrayLike
) -> FloatOrArray:
    """Bulk series at the requested temperature, without correction or extrapolation policy"""
    lam = _as_float_array("wavelength", wavelength)
    temp = _as_float_array("temperature", temperature)
    n = SELLMEIER_FORMS[model.form](model.coefficients, lam / METRES_PER_MICRON, temp)
    return _scalar_or_array(np.asarray(n, dtype=float), wavelength, temperature)


def waveguide_correction(
    model: DispersionModel, wavelength: ArrayLike, temperature: ArrayLike
) -> FloatOrArray:
    lam = np.asarray(wavelength, dtype=float) / METRES_PER_MICRON
    temp = np.asarray(temperature, dtype=float)
    delta = _correction(model, lam, temp)
    return _scalar_or_array(np.asarray(delta, dtype=float), wavelength, temperature)


def refractive_index(
    model: DispersionModel, wavelength: ArrayLike, temperature: ArrayLike
) -> FloatOrArray:
    """Effective index n(λ, T) = bulk(λ, T_eff) + correction(λ, T).

    Accepts scalars or broadcastable arrays; scalars in, float out.
    """
    lam = _as_float_array("wavelength", wavelength)
    temp = _as_float_array("temperature", temperature)
    _check_temperature(temp)
    _check_window(model, lam)

    t_eff = model.effective_temperature(temp)
    lam_um = lam / METRES_PER_MICRON
    n = SELLMEIER_FORMS[model.form](model.coefficients, lam_um, t_eff)
    n = n + _correction(model, lam_um, temp)

    if not np.all(np.isfinite(n)) or np.any(n <= 1.0):
        lo, hi = model.validity_window
        raise DispersionDomainError(
            f"{model.label} gives a non-physical index inside "
            f"[{lo * 1e9:.1f}, {hi * 1e9:.1f}] nm; check the coefficient set",
            window=(lo, hi),
        )
    return _scalar_or_array(np.asarray(n, dtype=float), wavelength, temperature)


def group_index(
    model: DispersionModel, wavelength: ArrayLike, temperature: ArrayLike, step: float = 1e-10
) -> FloatOrArray:
    """n_g = n - λ dn/dλ by central difference"""
    lam = _as_float_array("wavelength", wavelength)
    n = np.asarray(refractive_index(model, lam, temperature))
    dn = np.asarray(refractive_index(model, lam + step, temperature)) - np.asarray(
        refractive_index(model, lam - step, temperature)
    )
    ng = n - lam * dn / (2.0 * step)
    return _scalar_or_array(np.asarray(ng, dtype=float), wavelength, temperature)


@dataclass(frozen=True)
class ExpansionSegment:
    """Polynomial piece of ε on [t_min, t_max]; coefficients are in powers of (T - T_ref)"""

    t_min: float
    t_max: float
    coefficients: Tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))
        if self.t_min >= self.t_max:
            raise ArgumentError(f"Empty expansion segment [{self.t_min}, {self.t_max}] K")


@dataclass(frozen=True)
class ExpansionModel:
    """Relative thermal expansion ε(T) with constant continuation below ``freeze_below``"""

    reference_temperature: float
    segments: Tuple[ExpansionSegment, ...]
    freeze_below: float = 60.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "segments", tuple(self.segments))
        if not self.segments:
            raise ArgumentError("Expansion model needs at least one segment")
        if self.reference_temperature < self.freeze_below:
            raise ArgumentError(
                f"Reference temperature {self.reference_temperature} K lies below the "
                f"freeze temperature {self.freeze_below} K"
            )

    @classmethod
    def zero(cls, reference_temperature: float = 295.0) -> "ExpansionModel":
        return cls(
            reference_temperature,
            (ExpansionSegment(*TEMPERATURE_RANGE_K, (0.0,)),),
            freeze_below=0.0,
        )

    @classmethod
    def linear(
        cls, alpha: float, reference_temperature: float = 295.0, freeze_below: float = 0.0
    ) -> "ExpansionModel":
        return cls(
            reference_temperature,
            (ExpansionSegment(*TEMPERATURE_RANGE_K, (0.0, alpha)),),
            freeze_below=freeze_below,
        )

    def _raw(self, temperature: float) -> float:
        for segment in self.segments:
            if segment.t_min <= temperature <= segment.t_max:
                dt = temperature - self.reference_temperature
                return float(npoly.polyval(dt, segment.coefficients))
        raise ArgumentError(f"Temperature {temperature} K is not covered by the expansion table")

    def strain(self, temperature: float) -> float:
        """ε(T); exactly zero at the reference temperature"""
        t = max(temperature, self.freeze_below)
        return self._raw(t) - self._raw(self.reference_temperature)


def scaled_length(model: ExpansionModel, reference_length: float, temperature: float) -> float:
    """Length at ``temperature`` of something that measures ``reference_length`` at T_ref"""
    if not (math.isfinite(reference_length) and math.isfinite(temperature)):
        raise ArgumentError("Non-finite length or temperature")
    if temperature < 0:
        raise ArgumentError(f"Temperature {temperature} K is below absolute zero")
    if reference_length <= 0:
        raise ArgumentError(f"Reference length must be positive, got {reference_length} m")
    return reference_length * (1.0 + model.strain(temperature))


@dataclass(frozen=True)
class Material:
    """Both polarization models and the expansion table of one waveguide material"""

    name: str
    te: DispersionModel
    tm: DispersionModel
    expansion: ExpansionModel
    provenance: str = ""

    def model(self, polarization: Polarization) -> DispersionModel:
        return self.te if Polarization(polarization) is Polarization.TE else self.tm
