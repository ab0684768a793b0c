"""Raster renderings of tuning curves and JSI grids (PNG, non-interactive)."""

import io
import logging
from pathlib import Path
from typing import Mapping, Sequence, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402

from .fileio import atomic_write_bytes  # noqa: E402
from .jsa import JsiGrid  # noqa: E402
from .phasematch import PhasematchSolution, SweepPoint  # noqa: E402

logger = logging.getLogger(__name__)

PNG_METADATA = {"Software": None}


def _save(fig: Figure, path: Union[str, Path]) -> Path:
    buffer = io.BytesIO()
    fig.savefig(buffer, format="png", dpi=150, metadata=PNG_METADATA)
    plt.close(fig)
    return atomic_write_bytes(path, buffer.getvalue())


def plot_tuning_curves(
    path: Union[str, Path], curves: Mapping[str, Sequence[SweepPoint]], title: str = ""
) -> Path:
    """Signal and idler wavelength against temperature, one colour per curve"""
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    colors = plt.cm.viridis(np.linspace(0, 0.85, max(len(curves), 1)))
    for color, (label, points) in zip(colors, curves.items()):
        solved = [p for p in points if isinstance(p, PhasematchSolution)]
        temperatures = [p.temperature for p in solved]
        signal = [p.signal_nm for p in solved]
        idler = [p.idler_nm for p in solved]
        ax.plot(temperatures, signal, "-", color=color, label=f"{label} signal")
        ax.plot(temperatures, idler, "--", color=color, label=f"{label} idler")
    ax.set_xlabel("Temperature (K)")
    ax.set_ylabel("Wavelength (nm)")
    if title:
        ax.set_title(title)
    ax.legend(fontsize="small")
    fig.tight_layout()
    target = _save(fig, path)
    logger.info(f"Rendered tuning curves to {target}")
    return target


def plot_jsi(path: Union[str, Path], grid: JsiGrid, title: str = "") -> Path:
    """Heatmap with the signal wavelength on x and the idler wavelength on y"""
    signal_nm = np.asarray(grid.signal_axis) / 1e-9
    idler_nm = np.asarray(grid.idler_axis) / 1e-9
    fig, ax = plt.subplots(figsize=(5.5, 4.5))
    mesh = ax.pcolormesh(signal_nm, idler_nm, np.asarray(grid.intensity).T, shading="nearest")
    fig.colorbar(mesh, ax=ax, label=f"JSI ({grid.normalization.value})")
    ax.set_xlabel("Signal wavelength (nm)")
    ax.set_ylabel("Idler wavelength (nm)")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    target = _save(fig, path)
    logger.info(f"Rendered JSI heatmap to {target}")
    return target
