import pytest

from cryo_spdc.config import load_crystal
from cryo_spdc.dispersion import DispersionModel, ExpansionModel, Polarization
from cryo_spdc.jsa import BandwidthConvention, PumpSpec
from cryo_spdc.phasematch import CrystalSpec

# Toy waveguides with wavelength-independent indices. With n_p = n_s = n_TE
# and n_i = n_TM the mismatch reduces to 2π[(n_TE - n_TM)/λ_i - 1/Λ], so the
# phase-matched idler is exactly (n_TE - n_TM)·Λ.
TOY_TE_INDEX = 2.2
TOY_TM_INDEX = 2.1
TOY_PERIOD = 16e-6
TOY_LENGTH = 10e-3
TOY_WINDOW = (0.2e-6, 5.0e-6)


def constant_model(polarization: Polarization, value: float) -> DispersionModel:
    return DispersionModel(
        polarization=polarization,
        form="constant",
        coefficients=(value,),
        validity_window=TOY_WINDOW,
        name=f"toy {polarization.value} n={value}",
    )


def toy_crystal(
    te_index: float = TOY_TE_INDEX,
    tm_index: float = TOY_TM_INDEX,
    period: float = TOY_PERIOD,
    length: float = TOY_LENGTH,
    expansion: ExpansionModel = None,
) -> CrystalSpec:
    return CrystalSpec(
        te_model=constant_model(Polarization.TE, te_index),
        tm_model=constant_model(Polarization.TM, tm_index),
        expansion=expansion or ExpansionModel.zero(),
        length_ref=length,
        poling_period_ref=period,
        name="toy",
    )


@pytest.fixture
def dispersive_toy():
    """Toy crystal whose idler phase-matches at (n_TE - n_TM)·Λ = 1600 nm"""
    return toy_crystal()


@pytest.fixture
def flat_toy():
    """Toy crystal with n = 2 for every mode: Δk′ = -2π/Λ everywhere"""
    return toy_crystal(te_index=2.0, tm_index=2.0, period=10e-6)


@pytest.fixture
def ln_crystal():
    """Bundled Ti:PPLN chip with its lithium niobate material"""
    return load_crystal("ti_ppln_chip")


@pytest.fixture
def pump():
    """778 nm pump with a 3.2 nm amplitude FWHM"""
    return PumpSpec(central_wavelength=778e-9, fwhm_bandwidth=3.2e-9)


@pytest.fixture
def measured_pump():
    """778 nm pump with 3.2 nm read as the FWHM of the spectrum-analyser trace"""
    return PumpSpec(
        central_wavelength=778e-9,
        fwhm_bandwidth=3.2e-9,
        transmitted_power=1e-3,
        bandwidth_convention=BandwidthConvention.INTENSITY,
    )


@pytest.fixture
def out_dir(tmp_path):
    """Empty output directory for CLI runs"""
    path = tmp_path / "out"
    path.mkdir()
    return path
