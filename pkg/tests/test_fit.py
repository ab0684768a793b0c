import logging
import math

import numpy as np
import pytest

from cryo_spdc.errors import ArgumentError, FitError, InsensitiveFitError
from cryo_spdc.fit import (
    convolve_grid,
    convolve_instrument_response,
    fit_effective_length,
    fit_gaussian,
    instrument_kernel,
)
from cryo_spdc.jsa import (
    JsiGrid,
    Normalization,
    Spectrum,
    default_axes,
    simulate_jsi,
)

NM = 1e-9
FWHM_PER_SIGMA = 2 * math.sqrt(2 * math.log(2))


def gaussian(x_nm, center_nm, fwhm_nm, amplitude=1.0):
    sigma = fwhm_nm / FWHM_PER_SIGMA
    return amplitude * np.exp(-((x_nm - center_nm) ** 2) / (2 * sigma**2))


@pytest.fixture
def room_temperature_grid(ln_crystal, measured_pump):
    """Factory for noiseless room-temperature grids on measurement-like axes"""
    signal, idler = default_axes(ln_crystal, measured_pump, 295.0)

    def make(length):
        return simulate_jsi(ln_crystal, measured_pump, length, 295.0, signal, idler)

    return make


class TestGaussianFit:
    """Least-squares Gaussian"""

    @pytest.mark.unit
    def test_noiseless_recovery(self):
        """An exact Gaussian is recovered to numerical precision"""
        x = np.arange(1540.0, 1630.0, 1.0)
        spectrum = Spectrum(x * NM, gaussian(x, 1584.3, 29.5, 250.0))
        result = fit_gaussian(spectrum)
        assert result.center / NM == pytest.approx(1584.3, rel=1e-8)
        assert result.fwhm / NM == pytest.approx(29.5, rel=1e-6)
        assert result.amplitude == pytest.approx(250.0, rel=1e-6)
        assert result.residual_rms < 1e-8

    @pytest.mark.unit
    def test_poisson_weighted(self):
        """With Poisson errors the center lies within 3σ of the truth"""
        rng = np.random.default_rng(7)
        x = np.arange(1490.0, 1570.0, 1.0)
        counts = rng.poisson(gaussian(x, 1528.6, 17.3, 400.0)).astype(float)
        spectrum = Spectrum(x * NM, counts, np.sqrt(np.maximum(counts, 1.0)))
        result = fit_gaussian(spectrum)
        assert result.center_uncertainty > 0
        assert abs(result.center / NM - 1528.6) < 3 * result.center_uncertainty / NM
        assert abs(result.fwhm / NM - 17.3) < 3 * result.fwhm_uncertainty / NM

    @pytest.mark.unit
    def test_all_zero_spectrum(self):
        """Nothing to fit"""
        x = np.arange(1500.0, 1510.0)
        with pytest.raises(FitError):
            fit_gaussian(Spectrum(x * NM, np.zeros_like(x)))

    @pytest.mark.unit
    def test_failure_reports_best_iterate(self):
        """A fit stopped early still reports the lowest-residual parameters it saw"""
        x = np.arange(1540.0, 1630.0, 1.0)
        y = gaussian(x, 1584.3, 29.5, 250.0)
        weights = y / y.sum()
        center0 = float((weights * x).sum())
        sigma0 = math.sqrt(float((weights * (x - center0) ** 2).sum()))
        peak = y.max()
        initial = gaussian(x, center0, FWHM_PER_SIGMA * sigma0, peak)
        start = math.sqrt(np.mean(((y - initial) / peak) ** 2))

        with pytest.raises(FitError, match="did not converge") as info:
            fit_gaussian(Spectrum(x * NM, y), max_evaluations=8)
        best = info.value.best
        assert set(best) == {"center", "fwhm", "amplitude", "residual_rms"}
        assert best["residual_rms"] <= start
        assert 1540 * NM < best["center"] < 1630 * NM

    @pytest.mark.unit
    def test_too_few_points(self):
        """Three parameters need more than a handful of samples"""
        x = np.arange(1500.0, 1504.0)
        with pytest.raises(ArgumentError):
            fit_gaussian(Spectrum(x * NM, gaussian(x, 1502.0, 2.0)))


class TestInstrumentResponse:
    """Spectrometer response convolution"""

    @pytest.mark.unit
    def test_kernel_has_unit_area(self):
        """The sampled kernel sums to one"""
        kernel = instrument_kernel(0.909 * NM, 0.25 * NM)
        assert kernel.sum() == pytest.approx(1.0, rel=1e-14)
        assert kernel[len(kernel) // 2] == kernel.max()

    @pytest.mark.unit
    def test_zero_width_is_identity(self):
        """A zero-width response leaves the spectrum untouched"""
        x = np.arange(1500.0, 1600.0)
        spectrum = Spectrum(x * NM, gaussian(x, 1550.0, 17.0))
        result = convolve_instrument_response(spectrum, 0.0)
        np.testing.assert_array_equal(result.intensity, spectrum.intensity)

    @pytest.mark.unit
    def test_widths_add_in_quadrature(self):
        """Gaussian ⊗ Gaussian widens to √(a² + b²) within 0.2 %"""
        x = np.arange(1480.0, 1620.0, 0.25)
        spectrum = Spectrum(x * NM, gaussian(x, 1550.0, 17.0))
        result = fit_gaussian(convolve_instrument_response(spectrum, 0.909 * NM))
        assert result.fwhm / NM == pytest.approx(math.hypot(17.0, 0.909), rel=2e-3)

    @pytest.mark.unit
    def test_area_is_preserved(self):
        """Convolution conserves the integral away from the edges"""
        x = np.arange(1480.0, 1620.0, 1.0)
        spectrum = Spectrum(x * NM, gaussian(x, 1550.0, 17.0))
        result = convolve_instrument_response(spectrum, 0.909 * NM)
        assert result.intensity.sum() == pytest.approx(spectrum.intensity.sum(), rel=1e-9)

    @pytest.mark.unit
    def test_non_uniform_axis(self):
        """Irregular sampling must be resampled first"""
        x = np.array([1500.0, 1501.0, 1503.0, 1504.0, 1505.0])
        with pytest.raises(ArgumentError, match="uniformly sampled"):
            convolve_instrument_response(Spectrum(x * NM, np.ones(5)), 0.909 * NM)

    @pytest.mark.unit
    def test_negative_width(self):
        """Response widths are non-negative"""
        x = np.arange(1500.0, 1510.0)
        with pytest.raises(ArgumentError):
            convolve_instrument_response(Spectrum(x * NM, np.ones(10)), -1.0)

    @pytest.mark.unit
    def test_grid_keeps_normalization(self, room_temperature_grid):
        """A peak-one grid is still peak-one after smoothing"""
        grid = convolve_grid(room_temperature_grid(7.3e-3), 0.909 * NM)
        assert grid.normalization is Normalization.PEAK_ONE
        assert grid.intensity.max() == pytest.approx(1.0, rel=1e-14)


class TestEffectiveLength:
    """Grid search for L_eff"""

    @pytest.mark.unit
    @pytest.mark.parametrize("length", [3.65e-3, 7.3e-3])
    def test_noiseless_round_trip(self, ln_crystal, measured_pump, room_temperature_grid, length):
        """A simulated grid gives back its own length within 1 %"""
        result = fit_effective_length(
            room_temperature_grid(length),
            ln_crystal,
            measured_pump,
            295.0,
            length_bounds=(1e-3, 24.4e-3),
        )
        assert result.effective_length == pytest.approx(length, rel=1e-2)
        assert result.refined
        assert not result.at_bound
        assert len(result.length_grid) == len(result.objective_values) == 200
        assert result.objective["norm"] == "rms"

    @pytest.mark.unit
    @pytest.mark.parametrize("length", [2e-3, 4e-3, 8e-3, 16e-3])
    def test_length_is_identifiable(
        self, ln_crystal, measured_pump, room_temperature_grid, length
    ):
        """Lengths across the chip are told apart to better than 1 %"""
        result = fit_effective_length(
            room_temperature_grid(length),
            ln_crystal,
            measured_pump,
            295.0,
            length_bounds=(1e-3, 24.4e-3),
            grid_points=400,
        )
        assert result.effective_length == pytest.approx(length, rel=1e-2)
        assert not result.at_bound

    @pytest.mark.unit
    def test_upper_bound_at_chip_length(self, ln_crystal, measured_pump, room_temperature_grid):
        """An upper bound typed as the chip length is accepted despite rounding"""
        result = fit_effective_length(
            room_temperature_grid(7.3e-3),
            ln_crystal,
            measured_pump,
            295.0,
            length_bounds=(1e-3, 24.4e-3),
            grid_points=50,
        )
        assert result.bounds[1] <= ln_crystal.length_ref
        assert result.bounds[1] == pytest.approx(24.4e-3, rel=1e-12)

    @pytest.mark.unit
    def test_default_bounds_follow_chip_length(
        self, ln_crystal, measured_pump, room_temperature_grid
    ):
        """Without bounds the search spans 1 % to 100 % of the chip"""
        result = fit_effective_length(
            room_temperature_grid(7.3e-3), ln_crystal, measured_pump, 295.0, grid_points=50
        )
        assert result.bounds == pytest.approx((0.244e-3, 24.4e-3))

    @pytest.mark.unit
    def test_instrument_response_in_model(
        self, ln_crystal, measured_pump, room_temperature_grid
    ):
        """A smoothed measurement is matched by a smoothed model"""
        measured = convolve_grid(room_temperature_grid(7.3e-3), 0.909 * NM)
        result = fit_effective_length(
            measured,
            ln_crystal,
            measured_pump,
            295.0,
            length_bounds=(1e-3, 24.4e-3),
            grid_points=120,
            instrument_response=0.909 * NM,
        )
        assert result.effective_length == pytest.approx(7.3e-3, rel=1e-2)
        assert result.objective["instrument_response_fwhm"] == pytest.approx(0.909 * NM)

    @pytest.mark.unit
    def test_minimum_on_bound(self, ln_crystal, measured_pump, room_temperature_grid, caplog):
        """A minimum at the edge is reported, flagged and not refined"""
        with caplog.at_level(logging.WARNING, logger="cryo_spdc.fit"):
            result = fit_effective_length(
                room_temperature_grid(20e-3),
                ln_crystal,
                measured_pump,
                295.0,
                length_bounds=(1e-3, 5e-3),
                grid_points=20,
            )
        assert result.at_bound
        assert not result.refined
        assert result.effective_length == pytest.approx(5e-3)
        assert "search bound" in caplog.text

    @pytest.mark.unit
    def test_bounds_beyond_chip(self, ln_crystal, measured_pump, room_temperature_grid):
        """The interaction cannot be longer than the chip"""
        with pytest.raises(ArgumentError, match="exceeds the chip length"):
            fit_effective_length(
                room_temperature_grid(7.3e-3),
                ln_crystal,
                measured_pump,
                295.0,
                length_bounds=(1e-3, 30e-3),
            )

    @pytest.mark.unit
    def test_invalid_bounds(self, ln_crystal, measured_pump, room_temperature_grid):
        """Lower bound below upper bound, both positive"""
        with pytest.raises(ArgumentError):
            fit_effective_length(
                room_temperature_grid(7.3e-3),
                ln_crystal,
                measured_pump,
                295.0,
                length_bounds=(5e-3, 1e-3),
            )

    @pytest.mark.unit
    def test_insensitive_grid(self, flat_toy, pump):
        """When Φ is constant over the grid the length cannot be determined"""
        axis = np.arange(1550.0, 1561.0) * NM
        measured = simulate_jsi(flat_toy, pump, 5.0333e-3, 295.0, axis, axis)
        with pytest.raises(InsensitiveFitError, match="changes by less than") as info:
            fit_effective_length(
                measured,
                flat_toy,
                pump,
                295.0,
                length_bounds=(1.0333e-3, 2.0777e-3),
                grid_points=7,
            )
        assert info.value.best is not None

    @pytest.mark.slow
    def test_poisson_monte_carlo(self, ln_crystal, measured_pump, room_temperature_grid):
        """Peak-500 Poisson data: at least 45 of 50 fits land within 5 %"""
        length = 7.3e-3
        clean = room_temperature_grid(length)
        rng = np.random.default_rng(2024)
        hits = 0
        for _ in range(50):
            counts = rng.poisson(500.0 * clean.intensity).astype(float)
            measured = JsiGrid(clean.signal_axis, clean.idler_axis, counts, "raw_counts")
            result = fit_effective_length(
                measured,
                ln_crystal,
                measured_pump,
                295.0,
                length_bounds=(1e-3, 24.4e-3),
                fit_background=True,
            )
            hits += abs(result.effective_length / length - 1.0) < 0.05
        assert hits >= 45

    @pytest.mark.slow
    def test_cryogenic_monte_carlo(self, ln_crystal, measured_pump):
        """Half-length 4.7 K data at peak 500, plain RMS: at least 45 of 50 fits within 5 %"""
        length = 3.65e-3
        signal, idler = default_axes(ln_crystal, measured_pump, 4.7)
        clean = simulate_jsi(ln_crystal, measured_pump, length, 4.7, signal, idler)
        rng = np.random.default_rng(4)
        hits = 0
        for _ in range(50):
            counts = rng.poisson(500.0 * clean.intensity).astype(float)
            measured = JsiGrid(clean.signal_axis, clean.idler_axis, counts, "raw_counts")
            result = fit_effective_length(
                measured, ln_crystal, measured_pump, 4.7, length_bounds=(1e-3, 24.4e-3)
            )
            hits += abs(result.effective_length / length - 1.0) < 0.05
        assert hits >= 45
