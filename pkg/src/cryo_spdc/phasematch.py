"""
Quasi-phase-matching: mismatch, signal/idler solver, temperature sweeps and
poling-period design.

The phase mismatch follows

    Δk′ = 2π · [ n_p/λ_p − n_s/λ_s − n_i/λ_i + s/Λ(T) ]

with grating sign s = −1 by default and, for Type-II, pump and signal in the
TE mode and the idler in the TM mode. The idler wavelength is always
eliminated through energy conservation 1/λ_i = 1/λ_p − 1/λ_s, so every
returned solution conserves energy to rounding error.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.typing import ArrayLike
from scipy.optimize import brentq

from .dispersion import (
    DispersionModel,
    ExpansionModel,
    FloatOrArray,
    Material,
    Polarization,
    refractive_index,
    scaled_length,
)
from .errors import (
    ArgumentError,
    NoPhasematchError,
    NotPhasematchableError,
    SolverError,
    ToolkitError,
)

logger = logging.getLogger(__name__)

TYPE_II_MODES = (Polarization.TE, Polarization.TE, Polarization.TM)


@dataclass(frozen=True)
class CrystalSpec:
    """Poled waveguide: dispersion of both modes, expansion table and reference geometry.

    ``poling_period_ref`` may be left unset for design calculations.
    """

    te_model: DispersionModel
    tm_model: DispersionModel
    expansion: ExpansionModel
    length_ref: float
    poling_period_ref: Optional[float] = None
    modes: Tuple[Polarization, Polarization, Polarization] = TYPE_II_MODES
    grating_sign: int = -1
    name: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "modes", tuple(Polarization(m) for m in self.modes))
        if len(self.modes) != 3:
            raise ArgumentError("modes must list the pump, signal and idler polarizations")
        if not self.length_ref > 0:
            raise ArgumentError(f"Crystal length must be positive, got {self.length_ref} m")
        if self.poling_period_ref is not None and not self.poling_period_ref > 0:
            raise ArgumentError(
                f"Poling period must be positive, got {self.poling_period_ref} m"
            )
        if self.grating_sign not in (-1, 1):
            raise ArgumentError(f"grating_sign must be -1 or +1, got {self.grating_sign}")
        if self.te_model.polarization is not Polarization.TE:
            raise ArgumentError("te_model must describe the TE mode")
        if self.tm_model.polarization is not Polarization.TM:
            raise ArgumentError("tm_model must describe the TM mode")

    @classmethod
    def from_material(
        cls,
        material: Material,
        length_ref: float,
        poling_period_ref: Optional[float] = None,
        **kwargs: object,
    ) -> "CrystalSpec":
        return cls(
            material.te,
            material.tm,
            material.expansion,
            length_ref,
            poling_period_ref,
            **kwargs,  # type: ignore[arg-type]
        )

    def model(self, polarization: Polarization) -> DispersionModel:
        return self.te_model if polarization is Polarization.TE else self.tm_model

    def index(self, role: int, wavelength: ArrayLike, temperature: float) -> FloatOrArray:
        """Index of the pump (0), signal (1) or idler (2) mode"""
        return refractive_index(self.model(self.modes[role]), wavelength, temperature)

    def poling_period(self, temperature: float) -> float:
        if self.poling_period_ref is None:
            raise ArgumentError("Crystal has no poling period; design one first")
        return scaled_length(self.expansion, self.poling_period_ref, temperature)

    def length(self, temperature: float) -> float:
        return scaled_length(self.expansion, self.length_ref, temperature)

    def with_period(self, poling_period_ref: float) -> "CrystalSpec":
        return replace(self, poling_period_ref=poling_period_ref)


@dataclass(frozen=True)
class SolverSettings:
    """Signal-wavelength search window and convergence targets"""

    window: Tuple[float, float] = (1200e-9, 1900e-9)
    coarse_step: float = 0.5e-9
    xtol: float = 1e-18
    tolerance: float = 1e-4
    branch: str = "long"

    def __post_init__(self) -> None:
        lo, hi = self.window
        if not (0 < lo < hi):
            raise ArgumentError(f"Invalid search window [{lo}, {hi}] m")
        if not self.coarse_step > 0:
            raise ArgumentError("coarse_step must be positive")
        if self.branch not in ("long", "short"):
            raise ArgumentError(f"branch must be 'long' or 'short', got '{self.branch}'")

    def grid(self) -> np.ndarray:
        lo, hi = self.window
        count = int(round((hi - lo) / self.coarse_step)) + 1
        return np.linspace(lo, hi, max(count, 2))


@dataclass(frozen=True)
class PhasematchSolution:
    signal_wavelength: float
    idler_wavelength: float
    temperature: float
    residual_mismatch: float
    pump_wavelength: float
    multiplicity: int = 1
    alternatives: Tuple[float, ...] = field(default_factory=tuple)

    @property
    def signal_nm(self) -> float:
        return self.signal_wavelength * 1e9

    @property
    def idler_nm(self) -> float:
        return self.idler_wavelength * 1e9


@dataclass(frozen=True)
class SweepGap:
    """Temperature at which the sweep found no phase-matched pair"""

    temperature: float
    reason: str


SweepPoint = Union[PhasematchSolution, SweepGap]


def idler_from_energy(pump_wavelength: ArrayLike, signal_wavelength: ArrayLike) -> FloatOrArray:
    """1/λ_i = 1/λ_p − 1/λ_s"""
    lp = np.asarray(pump_wavelength, dtype=float)
    ls = np.asarray(signal_wavelength, dtype=float)
    li = 1.0 / (1.0 / lp - 1.0 / ls)
    if np.ndim(li) == 0:
        return float(li)
    return li


def phase_mismatch(
    crystal: CrystalSpec,
    pump_wavelength: ArrayLike,
    signal_wavelength: ArrayLike,
    idler_wavelength: ArrayLike,
    temperature: float,
) -> FloatOrArray:
    """Δk′ in rad/m; broadcasts over wavelength arrays"""
    lp = np.asarray(pump_wavelength, dtype=float)
    ls = np.asarray(signal_wavelength, dtype=float)
    li = np.asarray(idler_wavelength, dtype=float)
    if np.any(lp <= 0) or np.any(ls <= 0) or np.any(li <= 0):
        raise ArgumentError("Wavelengths must be positive")

    bracket = (
        np.asarray(crystal.index(0, lp, temperature)) / lp
        - np.asarray(crystal.index(1, ls, temperature)) / ls
        - np.asarray(crystal.index(2, li, temperature)) / li
    )
    dk = 2.0 * math.pi * (bracket + crystal.grating_sign / crystal.poling_period(temperature))
    if np.ndim(dk) == 0:
        return float(dk)
    return dk


def _mismatch_vs_signal(
    crystal: CrystalSpec, pump_wavelength: float, signal: ArrayLike, temperature: float
) -> FloatOrArray:
    idler = idler_from_energy(pump_wavelength, signal)
    return phase_mismatch(crystal, pump_wavelength, signal, idler, temperature)


def find_roots(
    crystal: CrystalSpec,
    pump_wavelength: float,
    temperature: float,
    settings: Optional[SolverSettings] = None,
) -> List[float]:
    """All signal wavelengths in the search window where Δk′ changes sign, ascending"""
    settings = settings or SolverSettings()
    if settings.window[0] <= pump_wavelength:
        raise ArgumentError(
            f"Search window must start above the pump wavelength "
            f"({pump_wavelength * 1e9:.2f} nm)"
        )
    grid = settings.grid()
    values = np.asarray(_mismatch_vs_signal(crystal, pump_wavelength, grid, temperature))

    def f(signal: float) -> float:
        return float(_mismatch_vs_signal(crystal, pump_wavelength, signal, temperature))

    roots = [float(x) for x in grid[values == 0.0]]
    for k in np.flatnonzero(np.sign(values[:-1]) * np.sign(values[1:]) < 0):
        a, b = float(grid[k]), float(grid[k + 1])
        root = brentq(f, a, b, xtol=settings.xtol, maxiter=200)
        logger.debug(f"T={temperature:.3f} K: root in [{a * 1e9:.2f}, {b * 1e9:.2f}] nm")
        roots.append(float(root))
    return sorted(roots)


def _select_branch(
    roots: Sequence[float], pump_wavelength: float, branch: str, near: Optional[float]
) -> float:
    if near is not None:
        return min(roots, key=lambda r: abs(r - near))
    degenerate = 2.0 * pump_wavelength
    if branch == "long":
        preferred = [r for r in roots if r > degenerate]
    else:
        preferred = [r for r in roots if r < degenerate]
    return min(preferred or roots, key=lambda r: abs(r - degenerate))


def _solution(
    crystal: CrystalSpec,
    pump_wavelength: float,
    temperature: float,
    roots: Sequence[float],
    signal: float,
    settings: SolverSettings,
) -> PhasematchSolution:
    idler = float(idler_from_energy(pump_wavelength, signal))
    residual = float(phase_mismatch(crystal, pump_wavelength, signal, idler, temperature))
    if abs(residual) > settings.tolerance:
        raise SolverError(
            f"Residual mismatch {residual:.3e} rad/m at {signal * 1e9:.6f} nm exceeds "
            f"the tolerance {settings.tolerance:.1e} rad/m"
        )
    return PhasematchSolution(
        signal_wavelength=signal,
        idler_wavelength=idler,
        temperature=temperature,
        residual_mismatch=residual,
        pump_wavelength=pump_wavelength,
        multiplicity=len(roots),
        alternatives=tuple(r for r in roots if r != signal),
    )


def _no_phasematch(temperature: float, settings: SolverSettings) -> NoPhasematchError:
    lo, hi = settings.window
    return NoPhasematchError(
        f"No phase-matching in window: Δk′ keeps one sign for signal wavelengths "
        f"[{lo * 1e9:.1f}, {hi * 1e9:.1f}] nm at {temperature:g} K "
        f"(scanned in {settings.coarse_step * 1e9:g} nm steps)",
        bracket=(lo, hi),
    )


def solve_phasematch(
    crystal: CrystalSpec,
    pump_wavelength: float,
    temperature: float,
    settings: Optional[SolverSettings] = None,
    near: Optional[float] = None,
) -> PhasematchSolution:
    """Phase-matched (λ_s, λ_i) pair at one temperature.

    With several roots, the one closest to ``near`` is returned if given;
    otherwise the root on the configured side of degeneracy (λ_s > 2λ_p for
    ``branch="long"``) nearest to it.
    """
    settings = settings or SolverSettings()
    roots = find_roots(crystal, pump_wavelength, temperature, settings)
    if not roots:
        raise _no_phasematch(temperature, settings)
    signal = _select_branch(roots, pump_wavelength, settings.branch, near)
    if len(roots) > 1:
        logger.warning(
            f"{len(roots)} phase-matching roots at {temperature:g} K; "
            f"returning {signal * 1e9:.3f} nm"
        )
    return _solution(crystal, pump_wavelength, temperature, roots, signal, settings)


def temperature_sweep(
    crystal: CrystalSpec,
    pump_wavelength: float,
    t_min: float,
    t_max: float,
    steps: int,
    settings: Optional[SolverSettings] = None,
    threads: int = 1,
) -> List[SweepPoint]:
    """Tuning curve on an evenly spaced temperature grid, ordered by temperature.

    Roots are located independently per temperature (in parallel when
    ``threads > 1``); the branch is then chosen sequentially so that each point
    continues the previous one. Failed points become ``SweepGap`` entries.
    """
    if not t_min < t_max:
        raise ArgumentError(f"Sweep needs t_min < t_max, got t_min={t_min}, t_max={t_max}")
    if steps < 2:
        raise ArgumentError(f"Sweep needs at least 2 steps, got {steps}")
    settings = settings or SolverSettings()
    temperatures = [float(t) for t in np.linspace(t_min, t_max, steps)]

    def roots_at(temperature: float) -> Union[List[float], ToolkitError]:
        try:
            return find_roots(crystal, pump_wavelength, temperature, settings)
        except ToolkitError as e:
            return e

    with ThreadPoolExecutor(max_workers=max(threads, 1)) as pool:
        all_roots = list(pool.map(roots_at, temperatures))

    points: List[SweepPoint] = []
    previous: Optional[float] = None
    for temperature, roots in zip(temperatures, all_roots):
        if isinstance(roots, ToolkitError):
            points.append(SweepGap(temperature, str(roots)))
            continue
        if not roots:
            points.append(SweepGap(temperature, str(_no_phasematch(temperature, settings))))
            continue
        signal = _select_branch(roots, pump_wavelength, settings.branch, previous)
        try:
            solution = _solution(crystal, pump_wavelength, temperature, roots, signal, settings)
        except SolverError as e:
            points.append(SweepGap(temperature, str(e)))
            continue
        points.append(solution)
        previous = signal

    gaps = sum(isinstance(p, SweepGap) for p in points)
    if gaps:
        logger.warning(f"Sweep {t_min:g}-{t_max:g} K: {gaps} of {steps} points without solution")
    logger.info(f"Sweep {t_min:g}-{t_max:g} K finished with {steps - gaps} solutions")
    return points


def design_poling_period(
    crystal: CrystalSpec,
    pump_wavelength: float,
    signal_wavelength: float,
    temperature: float,
) -> float:
    """Reference-temperature poling period that phase-matches λ_s at ``temperature``.

    Any period already set on ``crystal`` is ignored.
    """
    if not signal_wavelength > pump_wavelength:
        raise ArgumentError("Signal wavelength must exceed the pump wavelength")
    idler = float(idler_from_energy(pump_wavelength, signal_wavelength))
    pump_term = float(crystal.index(0, pump_wavelength, temperature)) / pump_wavelength
    bracket = (
        pump_term
        - float(crystal.index(1, signal_wavelength, temperature)) / signal_wavelength
        - float(crystal.index(2, idler, temperature)) / idler
    )
    if abs(bracket) <= 1e-9 * abs(pump_term):
        raise NotPhasematchableError(
            "Dispersive terms cancel: no finite poling period phase-matches this interaction"
        )
    period = -crystal.grating_sign / bracket
    if period <= 0:
        raise NotPhasematchableError(
            "Interaction not quasi-phase-matchable with this sign convention "
            f"(dispersive term {bracket:.4e} 1/m, grating sign {crystal.grating_sign:+d})"
        )
    period_ref = period / (1.0 + crystal.expansion.strain(temperature))
    logger.info(
        f"Designed period {period_ref * 1e6:.5f} um at "
        f"{crystal.expansion.reference_temperature:g} K "
        f"for {signal_wavelength * 1e9:.3f} nm at {temperature:g} K"
    )
    return period_ref
