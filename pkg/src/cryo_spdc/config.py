"""
Configuration documents, loading and hashing.

Three TOML documents describe a run: a material (dispersion of both modes and
the expansion table), a crystal (geometry and a reference to its material)
and the run itself (pump, solver, JSI, fit and counting settings). Each is
validated by a pydantic model; keys with physical quantities carry their
unit as a suffix and are converted to SI by the ``to_*`` helpers.

Documents referenced by name (no path separator, no suffix) are taken from
the data files bundled with the package.
"""

import hashlib
import json
import logging
import os
import tomllib
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from . import __version__
from .counts import PairStatistics, SourceSettings, default_window
from .dispersion import (
    DispersionModel,
    ExpansionModel,
    ExpansionSegment,
    ExtrapolationPolicy,
    Material,
    Polarization,
)
from .errors import ConfigError
from .jsa import BandwidthConvention, Normalization, PumpSpec
from .phasematch import CrystalSpec, SolverSettings

logger = logging.getLogger(__name__)

ENV_PREFIX = "CRYO_SPDC_"
DATA_PACKAGE = "cryo_spdc.data"

NM = 1e-9
UM = 1e-6
MM = 1e-3


class _Document(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DispersionSection(_Document):
    form: str
    coefficients: List[float]
    validity_window_um: Tuple[float, float]
    correction: List[List[float]] = Field(default_factory=lambda: [[0.0]])
    extrapolation: ExtrapolationPolicy = ExtrapolationPolicy.ANALYTIC
    extrapolation_t_min_K: float = 0.0
    name: str = ""

    def to_model(self, polarization: Polarization) -> DispersionModel:
        lo, hi = self.validity_window_um
        return DispersionModel(
            polarization=polarization,
            form=self.form,
            coefficients=tuple(self.coefficients),
            validity_window=(lo * UM, hi * UM),
            correction=tuple(tuple(row) for row in self.correction),
            extrapolation=self.extrapolation,
            extrapolation_t_min=self.extrapolation_t_min_K,
            name=self.name,
        )


class ExpansionSegmentSection(_Document):
    t_min_K: float
    t_max_K: float
    coefficients: List[float]


class ExpansionSection(_Document):
    reference_temperature_K: float = 295.0
    freeze_below_K: float = 60.0
    segments: List[ExpansionSegmentSection]

    def to_model(self) -> ExpansionModel:
        return ExpansionModel(
            reference_temperature=self.reference_temperature_K,
            segments=tuple(
                ExpansionSegment(s.t_min_K, s.t_max_K, tuple(s.coefficients)) for s in self.segments
            ),
            freeze_below=self.freeze_below_K,
        )


class MaterialDocument(_Document):
    name: str
    provenance: str = ""
    te: DispersionSection
    tm: DispersionSection
    expansion: ExpansionSection

    def to_material(self) -> Material:
        return Material(
            name=self.name,
            te=self.te.to_model(Polarization.TE),
            tm=self.tm.to_model(Polarization.TM),
            expansion=self.expansion.to_model(),
            provenance=self.provenance,
        )


class CrystalDocument(_Document):
    name: str
    material: str
    length_mm: float = Field(gt=0)
    poling_period_um: Optional[float] = Field(default=None, gt=0)
    modes: Tuple[Polarization, Polarization, Polarization] = (
        Polarization.TE,
        Polarization.TE,
        Polarization.TM,
    )
    grating_sign: Literal[-1, 1] = -1


class PumpSection(_Document):
    central_wavelength_nm: float = Field(default=778.0, gt=0)
    fwhm_nm: float = Field(default=3.2, ge=0)
    repetition_rate_MHz: float = Field(default=80.0, ge=0)
    transmitted_power_mW: float = Field(default=0.0, ge=0)
    bandwidth_convention: BandwidthConvention = BandwidthConvention.INTENSITY

    def to_pump(self) -> PumpSpec:
        return PumpSpec(
            central_wavelength=self.central_wavelength_nm * NM,
            fwhm_bandwidth=self.fwhm_nm * NM,
            repetition_rate=self.repetition_rate_MHz * 1e6,
            transmitted_power=self.transmitted_power_mW * 1e-3,
            bandwidth_convention=self.bandwidth_convention,
        )


class SolverSection(_Document):
    window_nm: Tuple[float, float] = (1200.0, 1900.0)
    coarse_step_nm: float = Field(default=0.5, gt=0)
    tolerance_rad_per_m: float = Field(default=1e-4, gt=0)
    branch: Literal["long", "short"] = "long"

    def to_settings(self) -> SolverSettings:
        lo, hi = self.window_nm
        return SolverSettings(
            window=(lo * NM, hi * NM),
            coarse_step=self.coarse_step_nm * NM,
            tolerance=self.tolerance_rad_per_m,
            branch=self.branch,
        )


class JsiSection(_Document):
    temperature_K: float = 295.0
    effective_length_mm: float = Field(default=7.3, gt=0)
    signal_span_nm: float = Field(default=30.0, gt=0)
    step_nm: float = Field(default=1.0, gt=0)
    normalization: Normalization = Normalization.PEAK_ONE


class FitSection(_Document):
    grid_points: int = Field(default=200, ge=3)
    refine: bool = True
    length_bounds_mm: Optional[Tuple[float, float]] = None
    instrument_response_nm: float = Field(default=0.0, ge=0)
    background: bool = False


class CountsSection(_Document):
    window_ns: Optional[float] = Field(default=None, gt=0)
    tick_resolution_ps: float = Field(default=1.0, gt=0)
    mean_pairs_per_pulse: float = Field(default=0.01, ge=0)
    efficiencies: Tuple[float, float] = (0.1, 0.1)
    dark_rates_Hz: List[float] = Field(default_factory=lambda: [0.0, 0.0])
    duration_s: float = Field(default=0.01, gt=0)
    splitter: Optional[float] = None
    statistics: PairStatistics = PairStatistics.POISSON

    def window(self, repetition_rate: float) -> float:
        if self.window_ns is not None:
            return self.window_ns * NM
        return default_window(repetition_rate)

    def to_source(self, repetition_rate: float, seed: Optional[int]) -> SourceSettings:
        return SourceSettings(
            mean_pairs_per_pulse=self.mean_pairs_per_pulse,
            efficiencies=self.efficiencies,
            repetition_rate=repetition_rate,
            duration=self.duration_s,
            dark_rates=tuple(self.dark_rates_Hz),
            splitter=self.splitter,
            statistics=self.statistics,
            tick_resolution=self.tick_resolution_ps * 1e-12,
            seed=seed,
        )


class RunConfig(_Document):
    """Everything a subcommand needs besides its own arguments"""

    material: Optional[str] = None
    crystal: str = "ti_ppln_chip"
    seed: int = 0
    threads: int = Field(default=1, ge=1)
    output_dir: str = "."
    format: Literal["csv", "bin"] = "csv"
    pump: PumpSection = Field(default_factory=PumpSection)
    solver: SolverSection = Field(default_factory=SolverSection)
    jsi: JsiSection = Field(default_factory=JsiSection)
    fit: FitSection = Field(default_factory=FitSection)
    counts: CountsSection = Field(default_factory=CountsSection)

    @field_validator("crystal")
    @classmethod
    def _crystal_not_empty(cls, value: str) -> str:
        if not value.strip():
            raise ValueError("crystal must name a bundled crystal or a file")
        return value


def _is_bundled_name(reference: str) -> bool:
    return os.sep not in reference and "/" not in reference and not reference.endswith(".toml")


def _read_toml(
    reference: Union[str, Path], base: Optional[Path] = None
) -> Tuple[Dict[str, Any], str]:
    """Parsed document and a description of where it came from"""
    text_ref = str(reference)
    try:
        if _is_bundled_name(text_ref):
            resource = resources.files(DATA_PACKAGE) / f"{text_ref}.toml"
            if not resource.is_file():
                raise ConfigError(f"No bundled configuration named '{text_ref}'")
            return tomllib.loads(resource.read_text(encoding="utf-8")), f"bundled:{text_ref}"
        path = Path(text_ref)
        if base is not None and not path.is_absolute():
            path = base / path
        return tomllib.loads(path.read_text(encoding="utf-8")), str(path)
    except FileNotFoundError as e:
        raise ConfigError(f"Configuration file not found: {e.filename}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"Malformed TOML in {text_ref}: {e}") from e


def _validate(model: type, data: Dict[str, Any], origin: str) -> Any:
    try:
        return model.model_validate(data)
    except ValidationError as e:
        details = "; ".join(
            f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()
        )
        raise ConfigError(f"Invalid configuration in {origin}: {details}") from e


def load_material_document(
    reference: Union[str, Path], base: Optional[Path] = None
) -> MaterialDocument:
    data, origin = _read_toml(reference, base)
    document: MaterialDocument = _validate(MaterialDocument, data, origin)
    logger.debug(f"Loaded material '{document.name}' from {origin}")
    return document


def _to_material(document: MaterialDocument) -> Material:
    try:
        return document.to_material()
    except ValueError as e:
        raise ConfigError(f"Material '{document.name}': {e}") from e


def load_material(reference: Union[str, Path]) -> Material:
    """Material from a bundled name or a TOML file path"""
    return _to_material(load_material_document(reference))


def load_crystal_document(reference: Union[str, Path]) -> Tuple[CrystalDocument, Optional[Path]]:
    data, origin = _read_toml(reference)
    document: CrystalDocument = _validate(CrystalDocument, data, origin)
    base = None if origin.startswith("bundled:") else Path(origin).parent
    return document, base


def build_crystal(document: CrystalDocument, material: Material) -> CrystalSpec:
    try:
        return CrystalSpec.from_material(
            material,
            length_ref=document.length_mm * MM,
            poling_period_ref=(
                document.poling_period_um * UM if document.poling_period_um is not None else None
            ),
            modes=document.modes,
            grating_sign=document.grating_sign,
            name=document.name,
        )
    except ValueError as e:
        raise ConfigError(f"Crystal '{document.name}': {e}") from e


def _resolve_crystal(
    reference: Union[str, Path], material: Optional[Union[str, Path]] = None
) -> Tuple[CrystalSpec, MaterialDocument, CrystalDocument]:
    document, base = load_crystal_document(reference)
    if material is not None:
        material_doc = load_material_document(material)
    else:
        material_doc = load_material_document(document.material, base)
    return build_crystal(document, _to_material(material_doc)), material_doc, document


def load_crystal(reference: Union[str, Path], material: Optional[str] = None) -> CrystalSpec:
    """Crystal with its material resolved (``material`` overrides the crystal's own reference)"""
    return _resolve_crystal(reference, material)[0]


def _is_crystal_document(data: Dict[str, Any]) -> bool:
    return "length_mm" in data and "material" in data


def load_run_config(path: Optional[Union[str, Path]]) -> RunConfig:
    """Run configuration from a file, or the built-in defaults when ``path`` is None.

    A crystal document passed in place of a run configuration is accepted and
    becomes the crystal of an otherwise default run.
    """
    if path is None:
        return RunConfig()
    data, origin = _read_toml(Path(path))
    if _is_crystal_document(data):
        _validate(CrystalDocument, data, origin)
        logger.debug(f"{origin} is a crystal document; using default run settings")
        return RunConfig(crystal=str(Path(path)))
    return _validate(RunConfig, data, origin)


@dataclass(frozen=True)
class EnvSettings:
    """Environment overrides, read after ``.env`` has been loaded"""

    debug: bool = False
    config: Optional[str] = None
    threads: Optional[int] = None

    @classmethod
    def from_env(cls) -> "EnvSettings":
        debug = os.getenv(f"{ENV_PREFIX}DEBUG", "False").lower() == "true"
        config = os.getenv(f"{ENV_PREFIX}CONFIG") or None
        threads_raw = os.getenv(f"{ENV_PREFIX}THREADS")
        try:
            threads = int(threads_raw) if threads_raw else None
        except ValueError as e:
            raise ConfigError(f"{ENV_PREFIX}THREADS must be an integer, got '{threads_raw}'") from e
        return cls(debug=debug, config=config, threads=threads)


@dataclass(frozen=True)
class ResolvedRun:
    """A run configuration with its crystal loaded and its hash inputs kept"""

    config: RunConfig
    crystal: CrystalSpec
    material_document: MaterialDocument
    crystal_document: CrystalDocument

    @property
    def pump(self) -> PumpSpec:
        return self.config.pump.to_pump()

    @property
    def solver(self) -> SolverSettings:
        return self.config.solver.to_settings()

    def config_hash(self, parameters: Optional[Dict[str, Any]] = None) -> str:
        return config_hash(
            self.config, self.material_document, self.crystal_document, parameters or {}
        )


def resolve_run(config: RunConfig) -> ResolvedRun:
    crystal, material_doc, crystal_doc = _resolve_crystal(config.crystal, config.material)
    return ResolvedRun(config, crystal, material_doc, crystal_doc)


def config_hash(
    run: RunConfig,
    material: MaterialDocument,
    crystal: CrystalDocument,
    parameters: Dict[str, Any],
) -> str:
    """First 16 hex digits of SHA-256 over the canonical JSON of everything that shapes the numbers.

    The output directory and thread count are left out; they do not change results.
    """
    payload = {
        "version": __version__,
        "run": run.model_dump(mode="json", exclude={"output_dir", "threads"}),
        "material": material.model_dump(mode="json"),
        "crystal": crystal.model_dump(mode="json"),
        "parameters": parameters,
    }
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]
