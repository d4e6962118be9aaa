"""
CSV/JSON interchange: schema-validated dataset loading and plot-data emission.

CSV files carry one header row and optional `# key: value` comment lines
with metadata. Schemas are listed in README.md under FORMATS.
"""

import io
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import structlog

from errors import DataError, InvalidInputError
from fit_core import DecayCurve, Spectrum
from measurement_sim import Histogram
from optomechanics import SidebandSeries
from siv_model import FourLineSpectrum
from spin_phonon import MechanicalMode, ModeTable

logger = structlog.get_logger(__name__)

FLOAT_FORMAT = "%.17g"


class DatasetKind(Enum):
    MODE_TABLE = "mode-table"
    SPECTRUM = "spectrum"
    DECAY_CURVE = "decay-curve"
    HISTOGRAM = "histogram"
    SIDEBAND_SERIES = "sideband-series"
    FOUR_LINE = "four-line"
    ANGLE_SERIES = "angle-series"


@dataclass(frozen=True)
class Schema:
    required: Tuple[str, ...]
    optional: Tuple[str, ...] = ()
    # spectra name their own abscissa/value columns
    positional: bool = False


SCHEMAS: Dict[DatasetKind, Schema] = {
    DatasetKind.MODE_TABLE: Schema(("freq_ghz", "q_factor", "g_mhz"), ("g_om_mhz",)),
    DatasetKind.SPECTRUM: Schema(("abscissa", "values"), ("sigma",), positional=True),
    DatasetKind.DECAY_CURVE: Schema(("tau_us", "population"), ("sigma",)),
    DatasetKind.HISTOGRAM: Schema(("bin_start_ns", "counts")),
    DatasetKind.SIDEBAND_SERIES: Schema(("power_uw", "linewidth_khz"), ("sigma_khz",)),
    DatasetKind.FOUR_LINE: Schema(("field_kg", "f_uu_ghz", "f_dd_ghz", "f_du_ghz", "f_ud_ghz")),
    DatasetKind.ANGLE_SERIES: Schema(("theta_deg", "gamma_khz"), ("sigma_khz",)),
}


@dataclass
class Dataset:
    kind: DatasetKind
    payload: Any
    frame: pd.DataFrame
    metadata: Dict[str, str] = field(default_factory=dict)

    @property
    def provenance(self) -> Optional[str]:
        return self.metadata.get("provenance")


@dataclass
class PlotSeries:
    label: str
    columns: Dict[str, Sequence[float]]

    def __len__(self) -> int:
        lengths = {len(values) for values in self.columns.values()}
        if len(lengths) > 1:
            raise DataError(f"series '{self.label}' has columns of different lengths")
        return lengths.pop() if lengths else 0


def _scan_lines(text: str) -> Tuple[Dict[str, str], int, List[int]]:
    """Metadata comments, header line number and data line numbers (1-based)"""
    metadata: Dict[str, str] = {}
    header_line = 0
    data_lines: List[int] = []
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, sep, value = line[1:].partition(":")
            if sep:
                metadata[key.strip()] = value.strip()
            continue
        if header_line == 0:
            header_line = number
        else:
            data_lines.append(number)
    return metadata, header_line, data_lines


def _check_columns(frame: pd.DataFrame, schema: Schema, header_line: int) -> List[str]:
    columns = [str(c) for c in frame.columns]
    if schema.positional:
        if len(columns) not in (2, 3):
            raise DataError("spectrum needs 2 or 3 columns (abscissa, values[, sigma])", line=header_line)
        return columns
    for name in schema.required:
        if name not in columns:
            raise DataError(f"missing required column '{name}'", line=header_line, column=name)
    for name in columns:
        if name not in schema.required and name not in schema.optional:
            raise DataError(f"unexpected column '{name}'", line=header_line, column=name)
    return columns


def _to_float(value) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        return float("nan")


def _numeric(frame: pd.DataFrame, columns: List[str], data_lines: List[int]) -> pd.DataFrame:
    out = pd.DataFrame(index=frame.index)
    first_bad: Optional[Tuple[int, str]] = None
    for name in columns:
        # float() is correctly rounded, so %.17g text reads back bit-exact
        converted = np.array([_to_float(v) for v in frame[name]], dtype=float)
        bad = np.flatnonzero(~np.isfinite(converted))
        if bad.size and (first_bad is None or bad[0] < first_bad[0]):
            first_bad = (int(bad[0]), name)
        out[name] = converted
    if first_bad is not None:
        row, name = first_bad
        raise DataError("missing or non-numeric value", line=data_lines[row], column=name)
    return out


def _first_violation(mask: np.ndarray) -> Optional[int]:
    hits = np.flatnonzero(mask)
    return int(hits[0]) if hits.size else None


def _require_increasing(values: np.ndarray, data_lines: List[int], column: str):
    row = _first_violation(np.diff(values) <= 0)
    if row is not None:
        raise DataError(f"'{column}' must be strictly increasing", line=data_lines[row + 1], column=column)


def _build_payload(kind: DatasetKind, frame: pd.DataFrame, metadata: Dict[str, str], data_lines: List[int]):
    cols = list(frame.columns)
    if kind is DatasetKind.MODE_TABLE:
        _require_increasing(frame["freq_ghz"].to_numpy(), data_lines, "freq_ghz")
        for name in ("freq_ghz", "q_factor"):
            row = _first_violation(frame[name].to_numpy() <= 0)
            if row is not None:
                raise DataError(f"'{name}' must be positive", line=data_lines[row], column=name)
        has_g_om = "g_om_mhz" in cols
        return ModeTable(tuple(
            MechanicalMode(
                omega_q=float(r.freq_ghz),
                q_factor=float(r.q_factor),
                g_q=float(r.g_mhz),
                g_om=float(r.g_om_mhz) if has_g_om else None,
            )
            for r in frame.itertuples(index=False)
        ))
    if kind is DatasetKind.SPECTRUM:
        _require_increasing(frame[cols[0]].to_numpy(), data_lines, cols[0])
        sigmas = frame[cols[2]].to_numpy() if len(cols) == 3 else None
        units = cols[0].rsplit("_", 1)[-1] if "_" in cols[0] else ""
        return Spectrum(frame[cols[0]].to_numpy(), frame[cols[1]].to_numpy(), sigmas, units=units)
    if kind is DatasetKind.DECAY_CURVE:
        _require_increasing(frame["tau_us"].to_numpy(), data_lines, "tau_us")
        sigma = frame["sigma"].to_numpy() if "sigma" in cols else None
        return DecayCurve(frame["tau_us"].to_numpy(), frame["population"].to_numpy(), sigma)
    if kind is DatasetKind.HISTOGRAM:
        counts = frame["counts"].to_numpy()
        fractional = counts != np.round(counts)
        if metadata.get("analytic") == "true":
            fractional = np.zeros_like(fractional)
        row = _first_violation((counts < 0) | fractional)
        if row is not None:
            raise DataError("counts must be non-negative integers", line=data_lines[row], column="counts")
        return _histogram_from(frame, metadata)
    if kind is DatasetKind.SIDEBAND_SERIES:
        sideband = metadata.get("sideband")
        if sideband not in ("red", "blue"):
            raise DataError("sideband series needs a '# sideband: red|blue' comment")
        sigma = frame["sigma_khz"].to_numpy() if "sigma_khz" in cols else None
        return SidebandSeries(sideband, frame["power_uw"].to_numpy(), frame["linewidth_khz"].to_numpy(), sigma)
    if kind is DatasetKind.FOUR_LINE:
        row = _first_violation(frame["field_kg"].to_numpy() < 0)
        if row is not None:
            raise DataError("field must be non-negative", line=data_lines[row], column="field_kg")
        lines = [
            FourLineSpectrum(f_dd=float(r.f_dd_ghz), f_uu=float(r.f_uu_ghz), f_du=float(r.f_du_ghz), f_ud=float(r.f_ud_ghz))
            for r in frame.itertuples(index=False)
        ]
        return frame["field_kg"].to_numpy(), lines
    if kind is DatasetKind.ANGLE_SERIES:
        sigma = frame["sigma_khz"].to_numpy() if "sigma_khz" in cols else None
        return frame["theta_deg"].to_numpy(), frame["gamma_khz"].to_numpy(), sigma
    raise DataError(f"unknown dataset kind {kind}")


def _histogram_from(frame: pd.DataFrame, metadata: Dict[str, str]) -> Histogram:
    try:
        bin_width = float(metadata["bin_width_ns"])
        markers = {}
        for item in metadata["markers"].split(","):
            name, span = item.split("=")
            start, stop = span.split(":")
            markers[name.strip()] = (int(start), int(stop))
    except (KeyError, ValueError):
        raise DataError("histogram needs '# bin_width_ns:' and '# markers:' comments")
    return Histogram(
        bin_width=bin_width,
        counts=frame["counts"].to_numpy() if metadata.get("analytic") == "true" else frame["counts"].to_numpy().astype(np.int64),
        markers=markers,
        effective_tau_us=float(metadata.get("effective_tau_us", "nan")),
        analytic=metadata.get("analytic", "false") == "true",
    )


def load_dataset(path: Union[str, Path], kind: Union[DatasetKind, str]) -> Dataset:
    """Read and schema-validate a CSV dataset; errors name the offending file line"""
    kind = DatasetKind(kind)
    schema = SCHEMAS[kind]
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    metadata, header_line, data_lines = _scan_lines(text)
    if header_line == 0 or not data_lines:
        raise DataError(f"{path.name}: no rows")
    try:
        raw = pd.read_csv(io.StringIO(text), comment="#", dtype=str, skipinitialspace=True)
    except pd.errors.ParserError as e:
        raise DataError(f"{path.name}: malformed CSV ({e})")
    raw.columns = [str(c).strip() for c in raw.columns]
    if len(raw) != len(data_lines):
        raise DataError(f"{path.name}: malformed CSV rows", line=header_line)
    columns = _check_columns(raw, schema, header_line)
    frame = _numeric(raw, columns, data_lines)
    try:
        payload = _build_payload(kind, frame, metadata, data_lines)
    except InvalidInputError as e:
        raise DataError(f"{path.name}: {e}")
    logger.debug("dataset_loaded", path=str(path), kind=kind.value, rows=len(frame))
    return Dataset(kind=kind, payload=payload, frame=frame, metadata=metadata)


def _csv_columns(series: List[PlotSeries]) -> Dict[str, Sequence[float]]:
    lengths = {len(s) for s in series}
    if len(lengths) > 1:
        raise DataError("series of different lengths cannot share a CSV file; use JSON")
    columns: Dict[str, Sequence[float]] = {}
    for s in series:
        for name, values in s.columns.items():
            key = name if len(series) == 1 else f"{s.label}_{name}"
            if key in columns:
                raise DataError(f"duplicate column '{key}'")
            columns[key] = values
    return columns


def emit_plot_data(
    series: List[PlotSeries],
    path: Union[str, Path],
    fmt: str = "csv",
    metadata: Optional[Dict[str, Any]] = None,
) -> Path:
    """Write column-aligned CSV or JSON arrays for external plotting"""
    if not series:
        raise InvalidInputError("no series to write")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    metadata = metadata or {}
    if fmt == "csv":
        frame = pd.DataFrame({k: np.asarray(v) for k, v in _csv_columns(series).items()})
        with open(path, "w", encoding="utf-8", newline="") as f:
            for key, value in metadata.items():
                f.write(f"# {key}: {value}\n")
            frame.to_csv(f, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    elif fmt == "json":
        document = {
            "metadata": {k: str(v) for k, v in metadata.items()},
            "series": [
                {"label": s.label, "columns": {k: np.asarray(v).tolist() for k, v in s.columns.items()}}
                for s in series
            ],
        }
        with open(path, "w", encoding="utf-8") as f:
            json.dump(document, f, indent=2)
            f.write("\n")
    else:
        raise InvalidInputError(f"unknown plot format '{fmt}'")
    logger.debug("plot_data_written", path=str(path), format=fmt, series=len(series))
    return path


def spectrum_series(spectrum: Spectrum, x_name: str, y_name: str, sigma_name: str = "sigma", label: str = "spectrum") -> PlotSeries:
    columns: Dict[str, Sequence[float]] = {x_name: spectrum.abscissa, y_name: spectrum.values}
    if spectrum.sigmas is not None:
        columns[sigma_name] = spectrum.sigmas
    return PlotSeries(label, columns)


def decay_curve_series(curve: DecayCurve, label: str = "decay") -> PlotSeries:
    columns: Dict[str, Sequence[float]] = {"tau_us": curve.tau, "population": curve.population}
    if curve.sigma is not None:
        columns["sigma"] = curve.sigma
    return PlotSeries(label, columns)


def histogram_series(hist: Histogram) -> Tuple[PlotSeries, Dict[str, str]]:
    counts = hist.counts if not hist.analytic else np.asarray(hist.counts, dtype=float)
    metadata = {
        "bin_width_ns": repr(float(hist.bin_width)),
        "markers": ",".join(f"{k}={a}:{b}" for k, (a, b) in hist.markers.items()),
        "effective_tau_us": repr(float(hist.effective_tau_us)),
        "analytic": "true" if hist.analytic else "false",
    }
    return PlotSeries("histogram", {"bin_start_ns": hist.bin_starts, "counts": counts}), metadata


def mode_table_series(table: ModeTable) -> PlotSeries:
    columns: Dict[str, Sequence[float]] = {
        "freq_ghz": [m.omega_q for m in table],
        "q_factor": [m.q_factor for m in table],
        "g_mhz": [m.g_q for m in table],
    }
    if all(m.g_om is not None for m in table):
        columns["g_om_mhz"] = [m.g_om for m in table]
    return PlotSeries("modes", columns)
