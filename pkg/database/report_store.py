import io
import json
import logging
import os
import re
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Union

import pandas as pd
from pandas.errors import EmptyDataError, ParserError
from pydantic import ValidationError

from models.config_models import ReportBundle
from models.spectrum_models import Spectrum, SpectrumMetadata
from utils.enums import SpectrumUnit

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
SPECTRUM_COLUMNS = ["frequency_hz", "psd", "unit", "rbw_hz"]
REPORT_FILE = "report.json"

PathLike = Union[str, Path]


class StoreError(Exception):
    """Custom exception for report and spectrum file operations"""
    pass


class TableParseError(StoreError, ValueError):
    """A table row could not be parsed; carries the 1-based file line"""

    def __init__(self, path: PathLike, line: Optional[int], reason: str):
        self.path = str(path)
        self.line = line
        where = f"line {line}" if line is not None else "header"
        super().__init__(f"{self.path}, {where}: {reason}")


def frame_to_csv(frame: pd.DataFrame) -> str:
    """CSV text with 17 significant digits, the form every table is stored in"""
    return frame.to_csv(index=False, float_format=FLOAT_FORMAT)


def csv_to_frame(text: str, numeric_columns: Iterable[str] = (), source: PathLike = "<memory>") -> pd.DataFrame:
    """Parse CSV text, checking that `numeric_columns` exist and hold numbers on every row"""
    try:
        frame = pd.read_csv(io.StringIO(text), float_precision="round_trip")
    except EmptyDataError:
        raise TableParseError(source, None, "table is empty")
    except ParserError as e:
        match = re.search(r"line (\d+)", str(e))
        raise TableParseError(source, int(match.group(1)) if match else None, str(e))

    for column in numeric_columns:
        if column not in frame.columns:
            raise TableParseError(source, None, f"missing column {column!r}")
        converted = pd.to_numeric(frame[column], errors="coerce")
        bad = converted.isna()
        if bad.any():
            row = int(bad.to_numpy().nonzero()[0][0])
            raise TableParseError(source, row + 2, f"column {column!r} value {frame[column].iloc[row]!r} is not a number")
        frame[column] = converted.astype(float)
    return frame


class ReportStore:
    """File-system persistence for spectra, tables and report bundles under one root"""

    def __init__(self, root: PathLike):
        self.root = Path(root)

    def ensure_writable(self) -> Path:
        try:
            self.root.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise StoreError(f"Cannot create output directory {self.root}: {str(e)}")
        if not os.access(self.root, os.W_OK):
            raise StoreError(f"Output directory {self.root} is not writable")
        return self.root

    def write_text(self, relative: PathLike, text: str) -> Path:
        path = self.root / relative
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w", encoding="utf-8", newline="\n") as handle:
                handle.write(text)
        except OSError as e:
            raise StoreError(f"Error writing {path}: {str(e)}")
        return path

    def _read_text(self, path: PathLike) -> str:
        try:
            with open(path, "r", encoding="utf-8") as handle:
                return handle.read()
        except OSError as e:
            raise StoreError(f"Error reading {path}: {str(e)}")

    # Spectrum operations
    def write_spectrum(self, spec: Spectrum, relative: PathLike) -> Path:
        """CSV of frequency_hz,psd,unit,rbw_hz plus a JSON sidecar with grid and metadata"""
        frame = pd.DataFrame({
            "frequency_hz": spec.frequencies,
            "psd": spec.psd,
            "unit": spec.unit.value,
            "rbw_hz": spec.rbw,
        }, columns=SPECTRUM_COLUMNS)
        path = self.write_text(relative, frame_to_csv(frame))
        sidecar = {
            "f_start": spec.f_start,
            "f_step": spec.f_step,
            "unit": spec.unit.value,
            "rbw_hz": spec.rbw,
            "metadata": spec.metadata.model_dump(mode="json"),
        }
        self.write_text(Path(relative).with_suffix(".json"), json.dumps(sidecar, indent=2, sort_keys=True))
        return path

    def read_spectrum(self, path: PathLike) -> Spectrum:
        path = Path(path)
        frame = csv_to_frame(self._read_text(path), ["frequency_hz", "psd", "rbw_hz"], source=path)
        sidecar_path = path.with_suffix(".json")
        if sidecar_path.exists():
            try:
                sidecar = json.loads(self._read_text(sidecar_path))
            except json.JSONDecodeError as e:
                raise StoreError(f"Malformed sidecar {sidecar_path}: {str(e)}")
            f_start, f_step = sidecar["f_start"], sidecar["f_step"]
            metadata = sidecar.get("metadata", {})
        else:
            logger.warning(f"No sidecar for {path}; grid taken from the frequency column")
            freqs = frame["frequency_hz"].to_numpy()
            if len(freqs) < 2:
                raise TableParseError(path, None, "spectrum needs at least two rows")
            f_start = float(freqs[0])
            f_step = float((freqs[-1] - freqs[0]) / (len(freqs) - 1))
            metadata = {"detuning": 0.0, "n_c": 0.0, "T_f": 0.0}
        try:
            return Spectrum(
                f_start=f_start,
                f_step=f_step,
                values=tuple(frame["psd"].tolist()),
                unit=SpectrumUnit(str(frame["unit"].iloc[0])),
                rbw=float(frame["rbw_hz"].iloc[0]),
                metadata=SpectrumMetadata.model_validate(metadata),
            )
        except (ValidationError, ValueError) as e:
            raise StoreError(f"Invalid spectrum in {path}: {str(e)}")

    # Table operations
    def write_table(self, name: str, csv_text: str) -> Path:
        return self.write_text(f"{name}.csv", csv_text)

    def read_table(self, path: PathLike, numeric_columns: Iterable[str] = ()) -> pd.DataFrame:
        return csv_to_frame(self._read_text(path), numeric_columns, source=path)

    # Report operations
    def write_report(self, bundle: ReportBundle) -> Path:
        """Tables as <name>.csv next to report.json holding fits, provenance and config"""
        self.ensure_writable()
        for name, text in bundle.tables.items():
            self.write_table(name, text)
        report = bundle.model_dump(mode="json", exclude={"tables"})
        report["tables"] = sorted(bundle.tables)
        path = self.write_text(REPORT_FILE, json.dumps(report, indent=2, sort_keys=True))
        logger.info(f"Wrote report with {len(bundle.tables)} tables and {len(bundle.fits)} fits to {self.root}")
        return path

    def load_bundle(self) -> ReportBundle:
        report_path = self.root / REPORT_FILE
        try:
            report = json.loads(self._read_text(report_path))
        except json.JSONDecodeError as e:
            raise StoreError(f"Malformed report {report_path}: {str(e)}")
        tables: Dict[str, str] = {}
        for name in report.pop("tables", []):
            tables[name] = self._read_text(self.root / f"{name}.csv")
        try:
            return ReportBundle.model_validate({**report, "tables": tables})
        except ValidationError as e:
            raise StoreError(f"Invalid report {report_path}: {str(e)}")

    def list_spectra(self) -> List[Path]:
        return sorted((self.root / "spectra").glob("*.csv"))
