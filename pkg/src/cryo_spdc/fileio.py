"""
Artifact formats and atomic writes.

Every artifact starts with a header carrying the toolkit version and the
config hash. Text formats put it in ``# key: <json>`` comment lines; binary
formats use an 8-byte magic, a little-endian uint32 header length and a
JSON header, followed by the payload.

Grid (``SPDCJSI1``)
    Header keys ``signal_axis_m``, ``idler_axis_m``, ``normalization``,
    ``shape``; payload float64 little-endian, row-major, one row per signal
    wavelength. The CSV variant writes the same rows, comma separated.

Tags (``SPDCTAG1``)
    Header keys ``tick_resolution_s``, ``duration_s``, ``channels``; payload
    records ``(channel: uint16, tick: int64)`` little-endian, sorted by
    channel then tick. The text variant writes ``channel,tick`` lines.
"""

import csv
import io
import json
import logging
import os
import struct
import tempfile
from pathlib import Path
from typing import Any, Dict, List, Mapping, Sequence, Tuple, Union

import numpy as np

from . import __version__
from .counts import TagStream
from .errors import ConfigError, DataError
from .jsa import JsiGrid, Normalization, Spectrum
from .phasematch import PhasematchSolution, SweepPoint

logger = logging.getLogger(__name__)

GRID_MAGIC = b"SPDCJSI1"
TAG_MAGIC = b"SPDCTAG1"
TAG_DTYPE = np.dtype([("channel", "<u2"), ("tick", "<i8")])
FLOAT_FORMAT = "%.17g"

PathLike = Union[str, Path]


def atomic_write_bytes(path: PathLike, data: bytes) -> Path:
    """Write through a temporary file in the target directory, then rename"""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{target.name}.", dir=target.parent)
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp_name, target)
    except BaseException:
        Path(tmp_name).unlink(missing_ok=True)
        raise
    logger.debug(f"Wrote {target} ({len(data)} bytes)")
    return target


def atomic_write_text(path: PathLike, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def artifact_header(config_hash: str, **fields: Any) -> Dict[str, Any]:
    return {"version": __version__, "config_hash": config_hash, **fields}


def _comment_lines(header: Mapping[str, Any]) -> str:
    return "".join(
        f"# {key}: {json.dumps(value, sort_keys=True)}\n" for key, value in header.items()
    )


def _split_comments(text: str) -> Tuple[Dict[str, Any], List[str]]:
    header: Dict[str, Any] = {}
    body: List[str] = []
    for line in text.splitlines():
        if line.startswith("#"):
            key, sep, value = line[1:].strip().partition(":")
            if sep:
                try:
                    header[key.strip()] = json.loads(value)
                except json.JSONDecodeError:
                    header[key.strip()] = value.strip()
        elif line.strip():
            body.append(line)
    return header, body


def _pack_binary(magic: bytes, header: Mapping[str, Any], payload: bytes) -> bytes:
    encoded = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return magic + struct.pack("<I", len(encoded)) + encoded + payload


def _unpack_binary(magic: bytes, data: bytes, origin: str) -> Tuple[Dict[str, Any], bytes]:
    if not data.startswith(magic):
        raise DataError(f"{origin} is not a {magic.decode()} file")
    offset = len(magic)
    if len(data) < offset + 4:
        raise DataError(f"{origin}: truncated header")
    (length,) = struct.unpack_from("<I", data, offset)
    offset += 4
    if len(data) < offset + length:
        raise DataError(f"{origin}: truncated header")
    try:
        header = json.loads(data[offset : offset + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataError(f"{origin}: corrupt header ({e})") from e
    return header, data[offset + length :]


def _read_bytes(path: PathLike) -> bytes:
    try:
        return Path(path).read_bytes()
    except FileNotFoundError as e:
        raise ConfigError(f"File not found: {path}") from e


def grid_header(grid: JsiGrid, config_hash: str, **extra: Any) -> Dict[str, Any]:
    return artifact_header(
        config_hash,
        normalization=grid.normalization.value,
        units="wavelength m, intensity dimensionless",
        shape=list(grid.shape),
        signal_axis_m=[float(v) for v in grid.signal_axis],
        idler_axis_m=[float(v) for v in grid.idler_axis],
        **extra,
    )


def write_grid(path: PathLike, grid: JsiGrid, header: Mapping[str, Any], fmt: str = "csv") -> Path:
    if fmt == "bin":
        payload = np.ascontiguousarray(grid.intensity, dtype="<f8").tobytes(order="C")
        return atomic_write_bytes(path, _pack_binary(GRID_MAGIC, header, payload))
    buffer = io.StringIO()
    buffer.write(_comment_lines(header))
    np.savetxt(buffer, grid.intensity, fmt=FLOAT_FORMAT, delimiter=",")
    return atomic_write_text(path, buffer.getvalue())


def read_grid(path: PathLike) -> Tuple[JsiGrid, Dict[str, Any]]:
    """Grid and header from either the CSV or the binary layout"""
    data = _read_bytes(path)
    if data.startswith(GRID_MAGIC):
        header, payload = _unpack_binary(GRID_MAGIC, data, str(path))
        shape = tuple(header.get("shape", ()))
        values = np.frombuffer(payload, dtype="<f8")
        if len(shape) != 2 or values.size != shape[0] * shape[1]:
            raise DataError(f"{path}: payload does not match the header shape {shape}")
        intensity = values.reshape(shape)
    else:
        try:
            header, body = _split_comments(data.decode("utf-8"))
            intensity = np.loadtxt(io.StringIO("\n".join(body)), delimiter=",", ndmin=2)
        except ValueError as e:
            raise DataError(f"{path}: not a JSI grid ({e})") from e
        if intensity.size == 0:
            raise DataError(f"{path}: grid file holds no rows")
    for key in ("signal_axis_m", "idler_axis_m"):
        if key not in header:
            raise DataError(f"{path}: header lacks '{key}'")
    grid = JsiGrid(
        np.asarray(header["signal_axis_m"], dtype=float),
        np.asarray(header["idler_axis_m"], dtype=float),
        intensity,
        Normalization(header.get("normalization", Normalization.RAW_COUNTS.value)),
    )
    return grid, header


def write_spectrum(path: PathLike, spectrum: Spectrum, header: Mapping[str, Any]) -> Path:
    """Two- or three-column CSV with the wavelength in nm"""
    columns = [spectrum.wavelength / 1e-9, spectrum.intensity]
    names = "wavelength_nm,intensity"
    if spectrum.error is not None:
        columns.append(spectrum.error)
        names += ",error"
    buffer = io.StringIO()
    buffer.write(_comment_lines({**header, "columns": names}))
    np.savetxt(buffer, np.column_stack(columns), fmt=FLOAT_FORMAT, delimiter=",")
    return atomic_write_text(path, buffer.getvalue())


def read_spectrum(path: PathLike) -> Spectrum:
    """Spectrum from a CSV of wavelength [nm], intensity and an optional error column.

    Lines starting with ``#`` and a single non-numeric column-name line are skipped.
    """
    _, body = _split_comments(_read_bytes(path).decode("utf-8"))
    if body and not body[0].lstrip()[:1].isdigit():
        body = body[1:]
    if not body:
        raise DataError(f"{path}: spectrum file holds no rows")
    try:
        table = np.loadtxt(io.StringIO("\n".join(body)), delimiter=",", ndmin=2)
    except ValueError as e:
        raise DataError(f"{path}: {e}") from e
    if table.shape[1] not in (2, 3):
        raise DataError(f"{path}: expected 2 or 3 columns, got {table.shape[1]}")
    error = table[:, 2] if table.shape[1] == 3 else None
    return Spectrum(table[:, 0] * 1e-9, table[:, 1], error)


def write_tags(
    path: PathLike, streams: Sequence[TagStream], header: Mapping[str, Any], fmt: str = "csv"
) -> Path:
    if not streams:
        raise DataError("No tag streams to write")
    resolutions = {s.tick_resolution for s in streams}
    if len(resolutions) != 1:
        raise DataError("All streams must share one tick resolution")
    ordered = sorted(streams, key=lambda s: s.channel)
    meta = {
        **header,
        "tick_resolution_s": ordered[0].tick_resolution,
        "duration_s": max(s.duration for s in ordered),
        "channels": [s.channel for s in ordered],
    }
    records = np.empty(sum(len(s) for s in ordered), dtype=TAG_DTYPE)
    offset = 0
    for stream in ordered:
        records["channel"][offset : offset + len(stream)] = stream.channel
        records["tick"][offset : offset + len(stream)] = stream.ticks
        offset += len(stream)

    if fmt == "bin":
        return atomic_write_bytes(path, _pack_binary(TAG_MAGIC, meta, records.tobytes()))
    buffer = io.StringIO()
    buffer.write(_comment_lines({**meta, "columns": "channel,tick"}))
    table = np.column_stack([records["channel"], records["tick"]])
    np.savetxt(buffer, table, fmt="%d", delimiter=",")
    return atomic_write_text(path, buffer.getvalue())


def read_tags(path: PathLike) -> List[TagStream]:
    """One stream per channel listed in the header, empty channels included"""
    data = _read_bytes(path)
    if data.startswith(TAG_MAGIC):
        header, payload = _unpack_binary(TAG_MAGIC, data, str(path))
        if len(payload) % TAG_DTYPE.itemsize:
            raise DataError(f"{path}: truncated tag records")
        records = np.frombuffer(payload, dtype=TAG_DTYPE)
        channels, ticks = records["channel"].astype(np.int64), records["tick"]
    else:
        header, body = _split_comments(data.decode("utf-8"))
        table = (
            np.loadtxt(io.StringIO("\n".join(body)), delimiter=",", dtype=np.int64, ndmin=2)
            if body
            else np.empty((0, 2), dtype=np.int64)
        )
        channels, ticks = table[:, 0], table[:, 1]
    for key in ("tick_resolution_s", "duration_s"):
        if key not in header:
            raise DataError(f"{path}: header lacks '{key}'")
    listed = header.get("channels") or sorted({int(c) for c in channels})
    unknown = set(int(c) for c in channels) - set(listed)
    if unknown:
        raise DataError(f"{path}: records for channels {sorted(unknown)} missing from the header")
    return [
        TagStream(
            int(channel),
            ticks[channels == channel],
            float(header["tick_resolution_s"]),
            float(header["duration_s"]),
        )
        for channel in listed
    ]


def write_sweep(
    path: PathLike, points: Sequence[SweepPoint], header: Mapping[str, Any]
) -> Path:
    """Tuning curve CSV; gap rows keep their temperature and leave the wavelengths empty"""
    buffer = io.StringIO()
    buffer.write(_comment_lines(header))
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["temperature_K", "lambda_s_nm", "lambda_i_nm", "residual", "status"])
    for point in points:
        if isinstance(point, PhasematchSolution):
            writer.writerow(
                [
                    f"{point.temperature:.17g}",
                    f"{point.signal_nm:.17g}",
                    f"{point.idler_nm:.17g}",
                    f"{point.residual_mismatch:.17g}",
                    "ok",
                ]
            )
        else:
            writer.writerow([f"{point.temperature:.17g}", "", "", "", "gap"])
    return atomic_write_text(path, buffer.getvalue())


def read_sweep(path: PathLike) -> List[Dict[str, Any]]:
    """Rows of a tuning-curve CSV, with None for the empty fields of gap rows"""
    _, body = _split_comments(_read_bytes(path).decode("utf-8"))
    rows = []
    for record in csv.DictReader(io.StringIO("\n".join(body))):
        rows.append(
            {
                key: (float(value) if value not in ("", None) else None)
                for key, value in record.items()
                if key != "status"
            }
            | {"ok": record["status"] == "ok"}
        )
    return rows


def write_json(path: PathLike, payload: Mapping[str, Any]) -> Path:
    return atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")
