import logging
import math
from dataclasses import replace

import pytest

from cryo_spdc.dispersion import ExpansionModel, Polarization
from cryo_spdc.errors import ArgumentError, NoPhasematchError, NotPhasematchableError
from cryo_spdc.phasematch import (
    PhasematchSolution,
    SolverSettings,
    SweepGap,
    design_poling_period,
    find_roots,
    idler_from_energy,
    phase_mismatch,
    solve_phasematch,
    temperature_sweep,
)

from .conftest import TOY_PERIOD, TOY_TE_INDEX, TOY_TM_INDEX, toy_crystal

PUMP = 778e-9
TOY_IDLER = (TOY_TE_INDEX - TOY_TM_INDEX) * TOY_PERIOD


def energy_defect(solution: PhasematchSolution) -> float:
    lp = solution.pump_wavelength
    return abs(1 / solution.signal_wavelength + 1 / solution.idler_wavelength - 1 / lp) * lp


@pytest.fixture
def type0_crystal(ln_crystal):
    """All three waves in the TE mode; roots come in mirrored signal/idler pairs"""
    crystal = replace(ln_crystal, modes=(Polarization.TE,) * 3, poling_period_ref=None)
    period = design_poling_period(crystal, PUMP, 1500e-9, 295.0)
    return crystal.with_period(period)


class TestPhaseMismatch:
    """Δk′ evaluation"""

    @pytest.mark.unit
    def test_idler_from_energy(self):
        """1/λ_i = 1/λ_p − 1/λ_s"""
        assert idler_from_energy(778e-9, 1556e-9) == pytest.approx(1556e-9, rel=1e-14)

    @pytest.mark.unit
    def test_flat_index_leaves_grating_term(self, flat_toy):
        """With one index for all waves only −2π/Λ remains"""
        signal = 1550e-9
        idler = idler_from_energy(PUMP, signal)
        dk = phase_mismatch(flat_toy, PUMP, signal, idler, 295.0)
        assert dk == pytest.approx(-2 * math.pi / 10e-6, rel=1e-9)

    @pytest.mark.unit
    def test_non_positive_wavelength(self, dispersive_toy):
        """Wavelengths must be positive"""
        with pytest.raises(ArgumentError):
            phase_mismatch(dispersive_toy, PUMP, -1550e-9, 1600e-9, 295.0)

    @pytest.mark.unit
    def test_missing_period(self, dispersive_toy):
        """A crystal without a grating cannot be evaluated"""
        crystal = replace(dispersive_toy, poling_period_ref=None)
        with pytest.raises(ArgumentError, match="no poling period"):
            phase_mismatch(crystal, PUMP, 1550e-9, 1600e-9, 295.0)


class TestSolvePhasematch:
    """Single-temperature solver"""

    @pytest.mark.unit
    def test_toy_root_is_analytic(self, dispersive_toy):
        """The toy phase-matches its idler at (n_TE − n_TM)·Λ"""
        solution = solve_phasematch(dispersive_toy, PUMP, 295.0)
        assert solution.idler_wavelength == pytest.approx(TOY_IDLER, rel=1e-9)
        assert solution.signal_wavelength == pytest.approx(
            idler_from_energy(PUMP, TOY_IDLER), rel=1e-9
        )
        assert solution.multiplicity == 1
        assert solution.alternatives == ()
        assert abs(solution.residual_mismatch) < 1e-4

    @pytest.mark.unit
    def test_energy_is_conserved(self, dispersive_toy):
        """Returned pairs conserve energy to rounding"""
        assert energy_defect(solve_phasematch(dispersive_toy, PUMP, 295.0)) < 1e-12

    @pytest.mark.unit
    def test_no_root_in_window(self, flat_toy):
        """A mismatch of constant sign raises and reports the scanned bracket"""
        settings = SolverSettings()
        with pytest.raises(NoPhasematchError) as info:
            solve_phasematch(flat_toy, PUMP, 295.0, settings)
        assert info.value.bracket == settings.window

    @pytest.mark.unit
    def test_window_must_lie_above_pump(self, dispersive_toy):
        """The signal search starts above the pump wavelength"""
        settings = SolverSettings(window=(700e-9, 1900e-9))
        with pytest.raises(ArgumentError):
            solve_phasematch(dispersive_toy, PUMP, 295.0, settings)

    @pytest.mark.unit
    def test_invalid_settings(self):
        """Unknown branch names and empty windows are rejected"""
        with pytest.raises(ArgumentError):
            SolverSettings(branch="middle")
        with pytest.raises(ArgumentError):
            SolverSettings(window=(1.9e-6, 1.2e-6))

    @pytest.mark.unit
    def test_mirrored_roots_follow_branch_rule(self, type0_crystal, caplog):
        """Two roots: the branch rule picks the side of degeneracy, the other is kept"""
        roots = find_roots(type0_crystal, PUMP, 295.0)
        mirror = idler_from_energy(PUMP, 1500e-9)
        assert len(roots) == 2
        assert roots[0] == pytest.approx(1500e-9, abs=1e-12)
        assert roots[1] == pytest.approx(mirror, abs=1e-12)

        with caplog.at_level(logging.WARNING, logger="cryo_spdc.phasematch"):
            long_branch = solve_phasematch(type0_crystal, PUMP, 295.0)
        assert long_branch.signal_wavelength == pytest.approx(mirror, abs=1e-12)
        assert long_branch.multiplicity == 2
        assert long_branch.alternatives[0] == pytest.approx(1500e-9, abs=1e-12)
        assert "phase-matching roots" in caplog.text

        short = solve_phasematch(type0_crystal, PUMP, 295.0, SolverSettings(branch="short"))
        assert short.signal_wavelength == pytest.approx(1500e-9, abs=1e-12)

    @pytest.mark.unit
    def test_near_overrides_branch(self, type0_crystal):
        """A hint selects the closest root"""
        solution = solve_phasematch(type0_crystal, PUMP, 295.0, near=1490e-9)
        assert solution.signal_wavelength == pytest.approx(1500e-9, abs=1e-12)


class TestLithiumNiobate:
    """Bundled Ti:PPLN chip"""

    @pytest.mark.unit
    def test_room_temperature_point(self, ln_crystal):
        """8.98 µm at 295 K pairs a 1586 nm signal with a 1528 nm idler"""
        solution = solve_phasematch(ln_crystal, PUMP, 295.0)
        assert solution.signal_nm == pytest.approx(1586.14, abs=15.0)
        assert solution.idler_nm == pytest.approx(1528.05, abs=15.0)
        assert solution.signal_wavelength > 2 * PUMP

    @pytest.mark.unit
    def test_cryogenic_point(self, ln_crystal):
        """At 4.7 K the same grating pairs 1494 nm with 1624 nm"""
        solution = solve_phasematch(ln_crystal, PUMP, 4.7)
        assert solution.signal_nm == pytest.approx(1494.45, abs=20.0)
        assert solution.idler_nm == pytest.approx(1624.24, abs=20.0)

    @pytest.mark.unit
    def test_cryogenic_shift(self, ln_crystal):
        """Cooling to 4.7 K moves the signal down and the idler up by 70-110 nm"""
        warm = solve_phasematch(ln_crystal, PUMP, 295.0)
        cold = solve_phasematch(ln_crystal, PUMP, 4.7)
        shift = warm.signal_nm - cold.signal_nm
        assert 70.0 <= shift <= 110.0
        assert cold.idler_nm > warm.idler_nm

    @pytest.mark.unit
    def test_degenerate_design_round_trip(self, ln_crystal):
        """Designing for λ_s = λ_i = 1556 nm and solving returns the degenerate pair"""
        period = design_poling_period(ln_crystal, PUMP, 1556e-9, 295.0)
        solution = solve_phasematch(ln_crystal.with_period(period), PUMP, 295.0)
        assert solution.signal_nm == pytest.approx(1556.0, abs=1e-3)
        assert solution.idler_nm == pytest.approx(1556.0, abs=1e-3)

    @pytest.mark.unit
    @pytest.mark.parametrize("temperature", [4.7, 77.0, 200.0, 295.0])
    @pytest.mark.parametrize("signal_nm", [1500.0, 1530.0, 1556.0, 1580.0, 1610.0])
    def test_design_solve_round_trip(self, ln_crystal, signal_nm, temperature):
        """A grating designed for a signal at T phase-matches that signal at T"""
        period = design_poling_period(ln_crystal, PUMP, signal_nm * 1e-9, temperature)
        solution = solve_phasematch(ln_crystal.with_period(period), PUMP, temperature)
        assert solution.signal_nm == pytest.approx(signal_nm, abs=1e-3)

    @pytest.mark.slow
    def test_period_family_tuning_curves(self, ln_crystal):
        """Four gratings: splitting grows on cooling, longer periods shift the signal down"""
        periods = (8.98e-6, 9.00e-6, 9.02e-6, 9.04e-6)
        curves = []
        for period in periods:
            points = temperature_sweep(ln_crystal.with_period(period), PUMP, 4.0, 300.0, 38)
            assert all(isinstance(p, PhasematchSolution) for p in points)
            signal = [p.signal_nm for p in points]
            idler = [p.idler_nm for p in points]
            assert all(a < b for a, b in zip(signal, signal[1:]))
            assert all(a > b for a, b in zip(idler, idler[1:]))
            curves.append(points)
        for row in zip(*curves):
            assert all(a.signal_nm > b.signal_nm for a, b in zip(row, row[1:]))
            assert all(a.idler_nm < b.idler_nm for a, b in zip(row, row[1:]))

    @pytest.mark.slow
    def test_sweep_conserves_energy(self, ln_crystal):
        """Every point of a 149-point sweep conserves energy"""
        points = temperature_sweep(ln_crystal, PUMP, 4.0, 300.0, 149)
        assert len(points) == 149
        solved = [p for p in points if isinstance(p, PhasematchSolution)]
        assert len(solved) == 149
        assert max(energy_defect(p) for p in solved) < 1e-12
        assert solved[0].signal_wavelength < solved[-1].signal_wavelength


class TestTemperatureSweep:
    """Tuning curves"""

    @pytest.mark.unit
    def test_follows_grating_contraction(self):
        """With linear expansion the toy idler tracks (n_TE − n_TM)·Λ(T)"""
        expansion = ExpansionModel.linear(1e-4, reference_temperature=295.0)
        crystal = toy_crystal(expansion=expansion)
        points = temperature_sweep(crystal, PUMP, 100.0, 300.0, 11)
        assert [p.temperature for p in points] == pytest.approx(
            [100.0 + 20.0 * k for k in range(11)]
        )
        for point in points:
            assert isinstance(point, PhasematchSolution)
            expected = TOY_IDLER * (1 + 1e-4 * (point.temperature - 295.0))
            assert point.idler_wavelength == pytest.approx(expected, rel=1e-9)

    @pytest.mark.unit
    def test_threads_do_not_change_results(self, type0_crystal):
        """Parallel root finding gives the same curve"""
        serial = temperature_sweep(type0_crystal, PUMP, 280.0, 300.0, 9, threads=1)
        parallel = temperature_sweep(type0_crystal, PUMP, 280.0, 300.0, 9, threads=4)
        assert serial == parallel

    @pytest.mark.unit
    def test_branch_continuity(self, type0_crystal):
        """The sweep stays on the branch it started on"""
        points = temperature_sweep(type0_crystal, PUMP, 290.0, 300.0, 6)
        assert all(p.signal_wavelength > 2 * PUMP for p in points)

    @pytest.mark.unit
    def test_failures_become_gaps(self, flat_toy):
        """Temperatures without solution are marked, not raised"""
        points = temperature_sweep(flat_toy, PUMP, 10.0, 20.0, 3)
        assert all(isinstance(p, SweepGap) for p in points)
        assert [p.temperature for p in points] == [10.0, 15.0, 20.0]
        assert "No phase-matching" in points[0].reason

    @pytest.mark.unit
    @pytest.mark.parametrize("t_min,t_max,steps", [(300.0, 4.0, 10), (4.0, 300.0, 1)])
    def test_invalid_grid(self, dispersive_toy, t_min, t_max, steps):
        """Empty ranges and single-point grids are argument errors"""
        with pytest.raises(ArgumentError):
            temperature_sweep(dispersive_toy, PUMP, t_min, t_max, steps)


class TestDesignPolingPeriod:
    """Inverse problem: grating for a target signal"""

    @pytest.mark.unit
    def test_toy_period_is_analytic(self, dispersive_toy):
        """For the toy Λ = λ_i / (n_TE − n_TM)"""
        period = design_poling_period(dispersive_toy, PUMP, 1556e-9, 295.0)
        assert period == pytest.approx(1556e-9 / (TOY_TE_INDEX - TOY_TM_INDEX), rel=1e-9)

    @pytest.mark.unit
    def test_period_quoted_at_reference_temperature(self):
        """Designing at a cold temperature undoes the contraction"""
        expansion = ExpansionModel.linear(1e-4, reference_temperature=295.0)
        crystal = toy_crystal(expansion=expansion)
        period = design_poling_period(crystal, PUMP, 1500e-9, 95.0)
        solution = solve_phasematch(crystal.with_period(period), PUMP, 95.0)
        assert solution.signal_wavelength == pytest.approx(1500e-9, rel=1e-9)

    @pytest.mark.unit
    def test_cancelling_dispersion(self, flat_toy):
        """Identical indices need an infinite period"""
        with pytest.raises(NotPhasematchableError):
            design_poling_period(flat_toy, PUMP, 1550e-9, 295.0)

    @pytest.mark.unit
    def test_wrong_grating_sign(self, dispersive_toy):
        """A negative period means the sign convention cannot phase-match"""
        crystal = replace(dispersive_toy, grating_sign=1)
        with pytest.raises(NotPhasematchableError, match="sign"):
            design_poling_period(crystal, PUMP, 1550e-9, 295.0)

    @pytest.mark.unit
    def test_signal_must_exceed_pump(self, dispersive_toy):
        """Down-conversion only produces longer wavelengths"""
        with pytest.raises(ArgumentError):
            design_poling_period(dispersive_toy, PUMP, 700e-9, 295.0)
