"""
Command-line interface for the cryo-spdc toolkit.

Subcommands:
- index: effective refractive and group index of one mode
- pm solve / sweep / design: phase-matching points, tuning curves, poling periods
- jsi simulate / marginal: joint spectral intensity grids and their marginals
- fit length / marginal: effective-length search and Gaussian marginal fits
- counts simulate / analyze: synthetic time tags and source metrics

Artifacts go to the output directory and carry the config hash; each command
prints one JSON summary line on stdout. Logs go to stderr and ``run.log``.
"""

import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import click
import numpy as np
import typer
from dotenv import load_dotenv
from rich.console import Console
from rich.logging import RichHandler
from rich.markup import escape

from .config import EnvSettings, ResolvedRun, RunConfig, load_run_config, resolve_run
from .counts import (
    METRICS,
    ChannelRoles,
    PairStatistics,
    count_coincidences,
    metrics_report,
    simulate_tag_source,
)
from .dispersion import Polarization, group_index, refractive_index
from .errors import ConfigError, ToolkitError
from .fileio import (
    artifact_header,
    grid_header,
    read_grid,
    read_spectrum,
    read_tags,
    write_grid,
    write_json,
    write_spectrum,
    write_sweep,
    write_tags,
)
from .fit import convolve_instrument_response, fit_effective_length, fit_gaussian
from .jsa import (
    Axis,
    Normalization,
    default_axes,
    jsi_orientation,
    marginal_spectrum,
    simulate_jsi,
    spectrum_fwhm,
)
from .phasematch import (
    PhasematchSolution,
    design_poling_period,
    solve_phasematch,
    temperature_sweep,
)

logger = logging.getLogger(__name__)

PACKAGE_LOGGER = "cryo_spdc"
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
RUN_LOG = "run.log"
NM = 1e-9
MM = 1e-3

err_console = Console(stderr=True)

app = typer.Typer(
    help="Design and analysis toolkit for cryogenic Type-II SPDC sources.",
    no_args_is_help=True,
    add_completion=False,
)
pm_app = typer.Typer(help="Phase-matching: solve, sweep and design.", no_args_is_help=True)
jsi_app = typer.Typer(help="Joint spectral intensity grids.", no_args_is_help=True)
fit_app = typer.Typer(help="Model fits against measured spectra.", no_args_is_help=True)
counts_app = typer.Typer(help="Time-tag simulation and source metrics.", no_args_is_help=True)
app.add_typer(pm_app, name="pm")
app.add_typer(jsi_app, name="jsi")
app.add_typer(fit_app, name="fit")
app.add_typer(counts_app, name="counts")

_handlers: List[logging.Handler] = []


class OutputFormat(str, Enum):
    CSV = "csv"
    BIN = "bin"


def setup_logging(out_dir: Path, debug: bool) -> None:
    """Rich console handler on stderr plus the timestamped ``run.log`` sidecar"""
    teardown_logging()
    package_logger = logging.getLogger(PACKAGE_LOGGER)
    package_logger.setLevel(logging.DEBUG if debug else logging.INFO)
    package_logger.propagate = False

    console_handler = RichHandler(
        console=err_console, show_time=False, show_path=False, markup=False
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    file_handler = logging.FileHandler(out_dir / RUN_LOG, encoding="utf-8", delay=True)
    file_handler.setFormatter(logging.Formatter(LOG_FORMAT))
    for handler in (console_handler, file_handler):
        package_logger.addHandler(handler)
        _handlers.append(handler)


def teardown_logging() -> None:
    package_logger = logging.getLogger(PACKAGE_LOGGER)
    while _handlers:
        handler = _handlers.pop()
        package_logger.removeHandler(handler)
        handler.close()
    package_logger.propagate = True


@dataclass
class CliState:
    """Resolved global options shared by all subcommands"""

    config: RunConfig
    out_dir: Path
    plot: bool
    threads: int
    _resolved: Optional[ResolvedRun] = field(default=None, repr=False)

    @property
    def run(self) -> ResolvedRun:
        if self._resolved is None:
            self._resolved = resolve_run(self.config)
        return self._resolved

    @property
    def fmt(self) -> str:
        return self.config.format

    def path(self, name: str) -> Path:
        return self.out_dir / name

    def data_path(self, stem: str) -> Path:
        return self.path(f"{stem}.{self.fmt}")

    def stamp(self, command: str, parameters: Dict[str, Any]) -> Tuple[str, Dict[str, Any]]:
        """Config hash of this invocation and the matching artifact header"""
        digest = self.run.config_hash({"command": command, **parameters})
        return digest, artifact_header(digest, command=command, parameters=parameters)


def _state(ctx: typer.Context) -> CliState:
    state = ctx.find_object(CliState)
    if state is None:
        raise ConfigError("Global options were not initialised")
    return state


def _emit(command: str, config_hash: str, outputs: Sequence[Path] = (), **fields: Any) -> None:
    summary = {
        "command": command,
        "status": "ok",
        "config_hash": config_hash,
        "outputs": [str(p) for p in outputs],
        **fields,
    }
    typer.echo(json.dumps(summary, sort_keys=True))


def _pair(text: Optional[str], option: str) -> Optional[Tuple[float, float]]:
    if text is None:
        return None
    parts = [p.strip() for p in text.split(",")]
    try:
        lo, hi = (float(p) for p in parts)
    except ValueError:
        raise typer.BadParameter(f"expected 'low,high', got '{text}'", param_hint=option)
    return lo, hi


def _floats(text: str, option: str) -> Tuple[float, ...]:
    try:
        return tuple(float(p) for p in text.split(","))
    except ValueError:
        raise typer.BadParameter(
            f"expected comma-separated numbers, got '{text}'", param_hint=option
        )


def _file_digest(path: Path) -> str:
    try:
        return hashlib.sha256(path.read_bytes()).hexdigest()[:16]
    except FileNotFoundError as e:
        raise ConfigError(f"File not found: {path}") from e


def _solution_fields(solution: PhasematchSolution) -> Dict[str, Any]:
    return {
        "temperature_K": solution.temperature,
        "lambda_s_nm": solution.signal_nm,
        "lambda_i_nm": solution.idler_nm,
        "lambda_p_nm": solution.pump_wavelength / NM,
        "residual_rad_per_m": solution.residual_mismatch,
        "multiplicity": solution.multiplicity,
        "alternatives_nm": [a / NM for a in solution.alternatives],
    }


@app.callback()
def main_options(
    ctx: typer.Context,
    config: Optional[Path] = typer.Option(
        None,
        "--config",
        "-c",
        help="Run configuration TOML, or a crystal TOML (or set CRYO_SPDC_CONFIG)",
    ),
    crystal: Optional[str] = typer.Option(
        None, "--crystal", help="Crystal TOML or bundled crystal name, overriding the config"
    ),
    out: Optional[Path] = typer.Option(None, "--out", "-o", help="Output directory"),
    seed: Optional[int] = typer.Option(None, "--seed", help="Seed for simulated data"),
    threads: Optional[int] = typer.Option(
        None, "--threads", min=1, help="Worker threads (or set CRYO_SPDC_THREADS)"
    ),
    fmt: Optional[OutputFormat] = typer.Option(
        None, "--format", help="Layout of grid and tag files"
    ),
    debug: bool = typer.Option(False, "--debug", help="Enable debug logging"),
    plot: bool = typer.Option(False, "--plot", help="Also render PNG figures"),
):
    """Design and analysis toolkit for cryogenic Type-II SPDC sources."""
    env = EnvSettings.from_env()
    run_config = load_run_config(config if config is not None else env.config)

    updates: Dict[str, Any] = {}
    if crystal is not None:
        updates["crystal"] = crystal
    if seed is not None:
        updates["seed"] = seed
    if fmt is not None:
        updates["format"] = fmt.value
    if updates:
        run_config = run_config.model_copy(update=updates)

    worker_threads = threads or env.threads or run_config.threads
    if worker_threads < 1:
        raise ConfigError(f"Thread count must be at least 1, got {worker_threads}")
    out_dir = out if out is not None else Path(run_config.output_dir)
    setup_logging(out_dir, debug or env.debug)
    logger.debug(f"Run configuration: {run_config.model_dump(mode='json')}")
    ctx.obj = CliState(run_config, out_dir, plot, worker_threads)


@app.command("index")
def index_command(
    ctx: typer.Context,
    wavelength_nm: float = typer.Option(..., "--wavelength-nm", help="Vacuum wavelength (nm)"),
    temperature: float = typer.Option(295.0, "--temperature", "-T", help="Temperature (K)"),
    polarization: Polarization = typer.Option(Polarization.TE, "--polarization"),
):
    """Effective refractive index and group index of one waveguide mode."""
    state = _state(ctx)
    model = state.run.crystal.model(polarization)
    n = refractive_index(model, wavelength_nm * NM, temperature)
    n_group = group_index(model, wavelength_nm * NM, temperature)
    digest, _ = state.stamp(
        "index",
        {
            "wavelength_nm": wavelength_nm,
            "temperature_K": temperature,
            "polarization": polarization.value,
        },
    )
    _emit(
        "index",
        digest,
        polarization=polarization.value,
        wavelength_nm=wavelength_nm,
        temperature_K=temperature,
        n=n,
        group_index=n_group,
    )


@pm_app.command("solve")
def pm_solve(
    ctx: typer.Context,
    temperature: float = typer.Option(295.0, "--temperature", "-T", help="Temperature (K)"),
    period: Optional[float] = typer.Option(
        None, "--period", help="Reference poling period (m); defaults to the crystal's"
    ),
    near_nm: Optional[float] = typer.Option(
        None, "--near-nm", help="Prefer the root closest to this signal wavelength"
    ),
):
    """Phase-matched signal and idler wavelengths at one temperature."""
    state = _state(ctx)
    crystal = state.run.crystal if period is None else state.run.crystal.with_period(period)
    pump = state.run.pump
    solution = solve_phasematch(
        crystal,
        pump.central_wavelength,
        temperature,
        state.run.solver,
        near=near_nm * NM if near_nm is not None else None,
    )
    parameters = {"temperature_K": temperature, "period_m": period, "near_nm": near_nm}
    digest, header = state.stamp("pm solve", parameters)
    target = write_json(state.path("pm_solve.json"), {**header, **_solution_fields(solution)})
    _emit("pm solve", digest, [target], **_solution_fields(solution))


@pm_app.command("sweep")
def pm_sweep(
    ctx: typer.Context,
    t_min: float = typer.Option(4.0, "--tmin", help="Lowest temperature (K)"),
    t_max: float = typer.Option(300.0, "--tmax", help="Highest temperature (K)"),
    steps: int = typer.Option(149, "--steps", min=2, help="Number of temperatures"),
    periods: Optional[List[float]] = typer.Option(
        None, "--period", help="Reference poling period (m); repeat for a family of curves"
    ),
):
    """Tuning curves λ_s(T), λ_i(T), one CSV per poling period."""
    state = _state(ctx)
    base = state.run.crystal
    chosen = list(periods) if periods else [base.poling_period_ref]
    if any(p is None for p in chosen):
        raise ConfigError("The crystal has no poling period; pass --period")

    parameters = {"t_min_K": t_min, "t_max_K": t_max, "steps": steps, "periods_m": chosen}
    digest, header = state.stamp("pm sweep", parameters)
    outputs: List[Path] = []
    curves = {}
    counts: Dict[str, Dict[str, int]] = {}
    for period in chosen:
        points = temperature_sweep(
            base.with_period(period),
            state.run.pump.central_wavelength,
            t_min,
            t_max,
            steps,
            state.run.solver,
            threads=state.threads,
        )
        label = f"{period / 1e-6:.4f}um"
        outputs.append(
            write_sweep(state.path(f"sweep_{label}.csv"), points, {**header, "period_m": period})
        )
        curves[f"Λ = {period / 1e-6:.3f} µm"] = points
        solved = sum(isinstance(p, PhasematchSolution) for p in points)
        counts[label] = {"solved": solved, "gaps": len(points) - solved}

    if state.plot:
        from .plotting import plot_tuning_curves

        outputs.append(plot_tuning_curves(state.path("sweep.png"), curves, base.name))
    _emit("pm sweep", digest, outputs, curves=counts)


@pm_app.command("design")
def pm_design(
    ctx: typer.Context,
    signal_nm: float = typer.Option(..., "--signal-nm", help="Target signal wavelength (nm)"),
    temperature: float = typer.Option(295.0, "--temperature", "-T", help="Temperature (K)"),
):
    """Poling period that phase-matches a target signal wavelength."""
    state = _state(ctx)
    crystal = state.run.crystal
    pump = state.run.pump
    period = design_poling_period(crystal, pump.central_wavelength, signal_nm * NM, temperature)
    check = solve_phasematch(
        crystal.with_period(period),
        pump.central_wavelength,
        temperature,
        state.run.solver,
        near=signal_nm * NM,
    )
    result = {
        "poling_period_m": period,
        "poling_period_um": period / 1e-6,
        "reference_temperature_K": crystal.expansion.reference_temperature,
        "target_signal_nm": signal_nm,
        "solution": _solution_fields(check),
    }
    parameters = {"signal_nm": signal_nm, "temperature_K": temperature}
    digest, header = state.stamp("pm design", parameters)
    target = write_json(state.path("pm_design.json"), {**header, **result})
    _emit("pm design", digest, [target], poling_period_um=period / 1e-6)


def _axis(lo_nm: float, hi_nm: float, step_nm: float) -> np.ndarray:
    if not hi_nm > lo_nm:
        raise typer.BadParameter(f"range {lo_nm},{hi_nm} is empty")
    points = int(round((hi_nm - lo_nm) / step_nm)) + 1
    return np.linspace(lo_nm, hi_nm, points) * NM


@jsi_app.command("simulate")
def jsi_simulate(
    ctx: typer.Context,
    temperature: Optional[float] = typer.Option(
        None, "--temperature", "-T", help="Temperature (K)"
    ),
    length_mm: Optional[float] = typer.Option(
        None, "--length-mm", help="Effective length at the reference temperature (mm)"
    ),
    signal_range: Optional[str] = typer.Option(
        None, "--signal-range-nm", help="Signal axis 'low,high' (nm); needs --idler-range-nm"
    ),
    idler_range: Optional[str] = typer.Option(
        None, "--idler-range-nm", help="Idler axis 'low,high' (nm); needs --signal-range-nm"
    ),
    step_nm: Optional[float] = typer.Option(None, "--step-nm", help="Axis step (nm)"),
    normalization: Optional[Normalization] = typer.Option(None, "--normalization"),
    pump_only: bool = typer.Option(False, "--pump-only", help="Pump envelope alone"),
    phasematching_only: bool = typer.Option(
        False, "--phasematching-only", help="Phase-matching function alone"
    ),
):
    """Simulate the JSI on signal and idler wavelength axes."""
    state = _state(ctx)
    section = state.config.jsi
    temperature = section.temperature_K if temperature is None else temperature
    length_mm = section.effective_length_mm if length_mm is None else length_mm
    step_nm = section.step_nm if step_nm is None else step_nm
    normalization = normalization or section.normalization
    if pump_only and phasematching_only:
        raise typer.BadParameter("--pump-only and --phasematching-only exclude each other")

    signal_pair = _pair(signal_range, "--signal-range-nm")
    idler_pair = _pair(idler_range, "--idler-range-nm")
    if (signal_pair is None) != (idler_pair is None):
        raise typer.BadParameter("--signal-range-nm and --idler-range-nm go together")
    pump = state.run.pump
    if signal_pair is not None and idler_pair is not None:
        signal_axis = _axis(*signal_pair, step_nm)
        idler_axis = _axis(*idler_pair, step_nm)
    else:
        signal_axis, idler_axis = default_axes(
            state.run.crystal,
            pump,
            temperature,
            signal_span=section.signal_span_nm * NM,
            step=step_nm * NM,
            settings=state.run.solver,
        )

    grid = simulate_jsi(
        state.run.crystal,
        pump,
        length_mm * MM,
        temperature,
        signal_axis,
        idler_axis,
        normalization=normalization,
        include_pump=not phasematching_only,
        include_phasematching=not pump_only,
    )
    parameters = {
        "temperature_K": temperature,
        "effective_length_mm": length_mm,
        "signal_range_nm": list(signal_pair) if signal_pair else None,
        "idler_range_nm": list(idler_pair) if idler_pair else None,
        "step_nm": step_nm,
        "normalization": Normalization(normalization).value,
        "pump_only": pump_only,
        "phasematching_only": phasematching_only,
    }
    digest, header = state.stamp("jsi simulate", parameters)
    meta = grid_header(
        grid,
        digest,
        command="jsi simulate",
        temperature_K=temperature,
        effective_length_mm=length_mm,
    )
    outputs = [write_grid(state.data_path("jsi"), grid, meta, state.fmt)]
    if state.plot:
        from .plotting import plot_jsi

        title = f"{temperature:g} K, L = {length_mm:g} mm"
        outputs.append(plot_jsi(state.path("jsi.png"), grid, title))

    peak_s, peak_i = grid.peak()
    fields: Dict[str, Any] = {
        "shape": list(grid.shape),
        "peak_signal_nm": peak_s / NM,
        "peak_idler_nm": peak_i / NM,
    }
    if float(np.asarray(grid.intensity).sum()) > 0:
        fields["orientation_deg"] = jsi_orientation(grid)
    _emit("jsi simulate", digest, outputs, **fields)


@jsi_app.command("marginal")
def jsi_marginal(
    ctx: typer.Context,
    grid_path: Path = typer.Option(..., "--grid", help="Grid file written by 'jsi simulate'"),
    axis: Axis = typer.Option(Axis.SIGNAL, "--axis", help="Which marginal to keep"),
    instrument_nm: Optional[float] = typer.Option(
        None, "--instrument-response-nm", help="Spectrometer response FWHM (nm)"
    ),
):
    """Marginal spectrum of a JSI grid as a two-column CSV."""
    state = _state(ctx)
    if instrument_nm is None:
        instrument_nm = state.config.fit.instrument_response_nm
    grid, _ = read_grid(grid_path)
    spectrum = convolve_instrument_response(marginal_spectrum(grid, axis), instrument_nm * NM)

    parameters = {
        "grid_digest": _file_digest(grid_path),
        "axis": axis.value,
        "instrument_response_nm": instrument_nm,
    }
    digest, header = state.stamp("jsi marginal", parameters)
    target = write_spectrum(state.path(f"marginal_{axis.value}.csv"), spectrum, header)
    fields: Dict[str, Any] = {"axis": axis.value}
    try:
        fields["fwhm_nm"] = spectrum_fwhm(spectrum) / NM
    except ToolkitError as e:
        logger.warning(f"FWHM not available: {e}")
    _emit("jsi marginal", digest, [target], **fields)


@fit_app.command("length")
def fit_length(
    ctx: typer.Context,
    measured: Path = typer.Option(..., "--measured", help="Measured JSI grid (CSV or binary)"),
    bounds: Optional[str] = typer.Option(
        None, "--bounds", help="Search bounds 'low,high' in metres"
    ),
    grid_points: Optional[int] = typer.Option(None, "--grid-points", min=3),
    temperature: Optional[float] = typer.Option(
        None, "--temperature", "-T", help="Temperature (K); defaults to the grid header's"
    ),
    instrument_nm: Optional[float] = typer.Option(
        None, "--instrument-response-nm", help="Spectrometer response FWHM (nm)"
    ),
    background: Optional[bool] = typer.Option(
        None, "--background/--no-background", help="Fit a scale and constant offset"
    ),
    refine: Optional[bool] = typer.Option(None, "--refine/--no-refine"),
):
    """Effective interaction length that best reproduces a measured JSI."""
    state = _state(ctx)
    section = state.config.fit
    grid, grid_meta = read_grid(measured)
    if temperature is None:
        temperature = float(grid_meta.get("temperature_K", state.config.jsi.temperature_K))
    length_bounds = _pair(bounds, "--bounds")
    if length_bounds is None and section.length_bounds_mm is not None:
        length_bounds = (section.length_bounds_mm[0] * MM, section.length_bounds_mm[1] * MM)
    grid_points = section.grid_points if grid_points is None else grid_points
    instrument_nm = section.instrument_response_nm if instrument_nm is None else instrument_nm
    background = section.background if background is None else background
    refine = section.refine if refine is None else refine

    result = fit_effective_length(
        grid,
        state.run.crystal,
        state.run.pump,
        temperature,
        length_bounds=length_bounds,
        grid_points=grid_points,
        refine=refine,
        instrument_response=instrument_nm * NM,
        fit_background=background,
    )
    parameters = {
        "measured_digest": _file_digest(measured),
        "bounds_m": list(length_bounds) if length_bounds else None,
        "grid_points": grid_points,
        "temperature_K": temperature,
        "instrument_response_nm": instrument_nm,
        "background": background,
        "refine": refine,
    }
    digest, header = state.stamp("fit length", parameters)
    payload = {
        **header,
        "effective_length_m": result.effective_length,
        "effective_length_mm": result.effective_length / MM,
        "grid_minimum_m": result.grid_minimum,
        "refined": result.refined,
        "at_bound": result.at_bound,
        "bounds_m": list(result.bounds),
        "temperature_K": result.temperature,
        "objective": result.objective,
        "objective_curve": {
            "length_m": list(result.length_grid),
            "value": list(result.objective_values),
        },
    }
    target = write_json(state.path("fit_length.json"), payload)
    _emit(
        "fit length",
        digest,
        [target],
        effective_length_mm=result.effective_length / MM,
        at_bound=result.at_bound,
    )


@fit_app.command("marginal")
def fit_marginal(
    ctx: typer.Context,
    spectrum_path: Path = typer.Option(
        ..., "--spectrum", help="CSV of wavelength (nm), intensity and optional error"
    ),
):
    """Gaussian fit of a marginal spectrum."""
    state = _state(ctx)
    result = fit_gaussian(read_spectrum(spectrum_path))
    digest, header = state.stamp("fit marginal", {"spectrum_digest": _file_digest(spectrum_path)})
    fields = {
        "center_nm": result.center / NM,
        "center_uncertainty_nm": result.center_uncertainty / NM,
        "fwhm_nm": result.fwhm / NM,
        "fwhm_uncertainty_nm": result.fwhm_uncertainty / NM,
        "amplitude": result.amplitude,
        "amplitude_uncertainty": result.amplitude_uncertainty,
        "residual_rms": result.residual_rms,
    }
    target = write_json(state.path("fit_marginal.json"), {**header, **fields})
    _emit(
        "fit marginal", digest, [target], center_nm=fields["center_nm"], fwhm_nm=fields["fwhm_nm"]
    )


@counts_app.command("simulate")
def counts_simulate(
    ctx: typer.Context,
    mean_pairs: Optional[float] = typer.Option(
        None, "--mean-pairs", help="Mean number of pairs per pulse"
    ),
    efficiencies: Optional[str] = typer.Option(
        None, "--efficiencies", help="Detection efficiencies 'idler,signal'"
    ),
    duration: Optional[float] = typer.Option(None, "--duration-s", help="Acquisition time (s)"),
    dark_rates: Optional[str] = typer.Option(
        None, "--dark-rates", help="Dark-count rates per channel (Hz), comma separated"
    ),
    splitter: Optional[float] = typer.Option(
        None, "--splitter", help="Split the signal arm with this ratio (enables g2)"
    ),
    statistics: Optional[PairStatistics] = typer.Option(None, "--statistics"),
):
    """Seeded time tags of a pulsed pair source."""
    state = _state(ctx)
    section = state.config.counts
    updates: Dict[str, Any] = {}
    if mean_pairs is not None:
        updates["mean_pairs_per_pulse"] = mean_pairs
    if efficiencies is not None:
        updates["efficiencies"] = _floats(efficiencies, "--efficiencies")
    if duration is not None:
        updates["duration_s"] = duration
    if dark_rates is not None:
        updates["dark_rates_Hz"] = list(_floats(dark_rates, "--dark-rates"))
    if splitter is not None:
        updates["splitter"] = splitter
    if statistics is not None:
        updates["statistics"] = statistics
    section = section.model_copy(update=updates)

    settings = section.to_source(state.run.pump.repetition_rate, state.config.seed)
    streams = simulate_tag_source(settings)
    digest, header = state.stamp("counts simulate", section.model_dump(mode="json"))
    target = write_tags(state.data_path("tags"), streams, header, state.fmt)
    _emit(
        "counts simulate",
        digest,
        [target],
        singles={str(s.channel): len(s) for s in streams},
        pulses=settings.pulses,
    )


@counts_app.command("analyze")
def counts_analyze(
    ctx: typer.Context,
    tags: Path = typer.Option(..., "--tags", help="Tag file written by 'counts simulate'"),
    window: Optional[float] = typer.Option(
        None, "--window", help="Coincidence window (s); defaults to a quarter pulse period"
    ),
    metrics: str = typer.Option(
        "all", "--metrics", help=f"'all' or a comma list of {', '.join(METRICS)}"
    ),
    idler: Optional[int] = typer.Option(None, "--idler", help="Herald channel id"),
    signals: Optional[str] = typer.Option(None, "--signals", help="Signal channel ids, comma list"),
):
    """Singles, coincidences and source metrics from a tag file."""
    state = _state(ctx)
    pump = state.run.pump
    streams = read_tags(tags)
    chosen = list(METRICS) if metrics.strip() == "all" else [
        m.strip() for m in metrics.split(",") if m.strip()
    ]
    window = state.config.counts.window(pump.repetition_rate) if window is None else window

    roles = None
    if idler is not None or signals is not None:
        channels = sorted(s.channel for s in streams)
        herald = channels[0] if idler is None else idler
        if signals is None:
            arms = tuple(c for c in channels if c != herald)[:2]
        else:
            arms = tuple(int(v) for v in _floats(signals, "--signals"))
        roles = ChannelRoles(herald, arms)

    stats = count_coincidences(streams, window, roles=roles)
    report = metrics_report(stats, pump, chosen)
    parameters = {
        "tags_digest": _file_digest(tags),
        "window_s": window,
        "metrics": chosen,
        "idler": stats.roles.idler,
        "signals": list(stats.roles.signals),
    }
    digest, header = state.stamp("counts analyze", parameters)
    target = write_json(state.path("metrics.json"), {**header, **report})
    values = {
        name: result.get("value") if isinstance(result, dict) else None
        for name, result in report["metrics"].items()
    }
    _emit("counts analyze", digest, [target], metrics=values)


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Execute one command line and return its exit status"""
    load_dotenv()
    command = typer.main.get_command(app)
    try:
        result = command.main(
            args=list(argv) if argv is not None else None,
            prog_name="cryo-spdc",
            standalone_mode=False,
        )
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except click.exceptions.Abort:
        err_console.print("Aborted.")
        return 1
    except ToolkitError as e:
        logger.debug("Command failed", exc_info=True)
        err_console.print(f"[red]Error:[/red] {escape(str(e))}", soft_wrap=True)
        return 1
    except Exception as e:
        logger.debug("Unexpected failure", exc_info=True)
        err_console.print(
            f"[red]Error:[/red] {escape(type(e).__name__)}: {escape(str(e))}", soft_wrap=True
        )
        return 1
    finally:
        teardown_logging()
    return result if isinstance(result, int) else 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
