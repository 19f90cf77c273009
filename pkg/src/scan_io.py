"""Self-describing scan CSV files: a YAML comment header followed by delay,value[,counts] rows."""

import io
import os
import logging
import tempfile
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import yaml
from pydantic import ValidationError

from src.noon_errors import ScanFormatError
from src.noon_types import DetectionScheme, PatternScan

logger = logging.getLogger(__name__)

FORMAT_TAG = "noon-scan/1"
COLUMNS = ("delay", "value")
FLOAT_FORMAT = "%.17g"


def scan_header(scan: PatternScan, extra: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """Header fields describing ``scan``; ``extra`` carries config, sha and seed."""
    header: Dict[str, Any] = {
        "format": FORMAT_TAG,
        "scheme": scan.scheme.label,
        "engine": scan.engine,
        "delay_unit": scan.delay_unit,
        "phase_per_delay": scan.phase_per_delay,
        "reconstructed": scan.reconstructed,
    }
    header.update(extra or {})
    return header


def _atomic_write(path: str, text: str) -> None:
    """Write to a temp file in the target directory, then rename over ``path``."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    handle, temp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".csv")
    try:
        with os.fdopen(handle, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(temp_path, path)
    except BaseException:
        if os.path.exists(temp_path):
            os.unlink(temp_path)
        raise


def render_scan(scan: PatternScan, header: Dict[str, Any], include_counts: bool = False) -> str:
    comment = yaml.safe_dump(header, sort_keys=True, default_flow_style=False, allow_unicode=True)
    lines = ["# " + line if line else "#" for line in comment.rstrip("\n").split("\n")]
    frame = pd.DataFrame({"delay": scan.delays, "value": scan.probabilities})
    if include_counts:
        if scan.counts is None:
            raise ValueError("scan has no sampled counts")
        frame["counts"] = scan.counts
    body = frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return "\n".join(lines) + "\n" + body


def write_scan(path: str, scan: PatternScan, extra: Optional[Dict[str, Any]] = None, include_counts: bool = False) -> str:
    """Write ``scan`` atomically; identical inputs give byte-identical files."""
    _atomic_write(path, render_scan(scan, scan_header(scan, extra), include_counts))
    logger.info(f"Wrote {len(scan.delays)} points to {path}")
    return path


def write_grid(path: str, frame: pd.DataFrame) -> str:
    """Write an oracle (intensity, phi, probability) grid atomically at full precision."""
    _atomic_write(path, frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n"))
    logger.info(f"Wrote {len(frame)} grid points to {path}")
    return path


def _split_header(text: str) -> Tuple[Dict[str, Any], str, int]:
    lines = text.splitlines(keepends=True)
    comment: List[str] = []
    for line in lines:
        if not line.startswith("#"):
            break
        comment.append(line[2:] if line.startswith("# ") else line[1:])
    header_lines = len(comment)
    header: Dict[str, Any] = {}
    if comment:
        try:
            header = yaml.safe_load("".join(comment)) or {}
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            line = mark.line + 1 if mark is not None else 1
            raise ScanFormatError("unreadable scan header", [f"line {line}: {getattr(exc, 'problem', exc)}"]) from None
        if not isinstance(header, dict):
            raise ScanFormatError("unreadable scan header", ["line 1: header must be a YAML mapping"])
    return header, "".join(lines[header_lines:]), header_lines


def _parse_numbers(column: pd.Series) -> Tuple[np.ndarray, List[int]]:
    """Correctly rounded float parsing, so written scans read back bit for bit."""
    values = np.empty(len(column))
    bad = []
    for row, text in enumerate(column):
        try:
            values[row] = float(text)
        except (TypeError, ValueError):
            values[row] = np.nan
        if not np.isfinite(values[row]):
            bad.append(row)
    return values, bad


def read_scan(path: str, scheme: Optional[str] = None, max_photons: int = 6) -> Tuple[PatternScan, Dict[str, Any]]:
    """Parse a scan CSV written by ``write_scan`` or a bare delay,value[,counts] table.

    Args:
        path: CSV file.
        scheme: ``m/n`` to use when the file has no header (overrides nothing otherwise).
        max_photons: Photon-number cap passed to scheme validation.

    Raises:
        ScanFormatError: with line numbers for malformed rows or a missing scheme.
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as exc:
        raise ScanFormatError(f"cannot read {path}", [str(exc)]) from None

    header, body, offset = _split_header(text)
    if not body.strip():
        raise ScanFormatError(f"{path} has no data rows")
    try:
        frame = pd.read_csv(io.StringIO(body), dtype=str, keep_default_na=False, skipinitialspace=True)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise ScanFormatError(f"cannot parse {path}", [str(exc)]) from None

    columns = [c.strip() for c in frame.columns]
    frame.columns = columns
    missing = [c for c in COLUMNS if c not in columns]
    if missing:
        raise ScanFormatError(f"{path} lacks columns", [f"line {offset + 1}: missing {', '.join(missing)}"])

    problems = []
    numeric = {}
    for column in [c for c in ("delay", "value", "counts") if c in columns]:
        values, bad = _parse_numbers(frame[column])
        for row in bad:
            problems.append(f"line {offset + 2 + row}: {column} is not a number ({frame[column].iloc[row]!r})")
        numeric[column] = values
    if problems:
        raise ScanFormatError(f"malformed rows in {path}", problems)

    value = numeric["value"]
    for row in np.nonzero((value < 0.0) | (value > 1.0))[0]:
        problems.append(f"line {offset + 2 + int(row)}: probability {float(value[row])!r} outside [0, 1]")
    if problems:
        raise ScanFormatError(f"malformed rows in {path}", problems)

    label = header.get("scheme") or scheme
    if label is None:
        raise ScanFormatError(f"{path} has no header; pass the scheme (m/n) explicitly")
    try:
        parts = str(label).split("/")
        detection = DetectionScheme.model_validate(
            {"m": parts[0], "n": parts[1] if len(parts) > 1 else None}, context={"max_photons": max_photons}
        )
        scan = PatternScan(
            scheme=detection,
            delays=numeric["delay"],
            probabilities=value,
            counts=numeric.get("counts"),
            delay_unit=header.get("delay_unit", "path_m"),
            phase_per_delay=header.get("phase_per_delay"),
            engine=header.get("engine", "ingested"),
            reconstructed=bool(header.get("reconstructed", False)),
        )
    except ValidationError as exc:
        raise ScanFormatError(f"invalid scan in {path}", [e["msg"] for e in exc.errors()]) from None
    logger.info(f"Read {len(scan.delays)} points ({scan.scheme.label}, {scan.delay_unit}) from {path}")
    return scan, header
