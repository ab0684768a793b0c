"""
cryo-spdc - design and analysis toolkit for quasi-phase-matched Type-II SPDC
in periodically poled waveguides, from room temperature down to 4 K.

Features:
- Temperature-dependent TE/TM effective indices and thermal contraction
- Phase-matching solver, temperature sweeps and poling-period design
- Joint spectral intensity simulation and marginal spectra
- Gaussian marginal fits and effective-length fits against measured JSIs
- Coincidence counting and photon-pair source metrics
"""

__version__ = "1.0.0"
