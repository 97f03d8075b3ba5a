"""CSV tables and JSON presets."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Any, List, Tuple

import numpy as np
import pandas as pd

DATA_PATH = Path(__file__).resolve().parent.parent / "data"


class CsvFormatError(ValueError):
    """A CSV cell is missing or not numeric."""

    def __init__(self, path: Path, row: int, column: str, detail: str) -> None:
        super().__init__(f"{path}: row {row}, column {column!r}: {detail}")
        self.path = path
        self.row = row
        self.column = column


def load_json(filename: str, default: Any) -> Any:
    path = DATA_PATH / filename
    if not path.exists():
        return default
    return json.loads(path.read_text())


def save_json(path: Path, payload: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2))
    return path


def load_config(path: Path) -> dict:
    payload = json.loads(Path(path).read_text())
    if not isinstance(payload, dict):
        raise ValueError(f"{path} must contain a JSON object")
    return payload


def read_table(path: Path) -> pd.DataFrame:
    """Read a numeric CSV with a header row; any gap or non-number is an error."""

    path = Path(path)
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    if frame.shape[1] == 0:
        raise ValueError(f"{path} has no columns")
    stripped = frame.apply(lambda col: col.str.strip())
    numeric = stripped.apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna().to_numpy()
    if bad.any():
        row, col = np.argwhere(bad)[0]
        column = str(frame.columns[col])
        value = stripped.iat[row, col]
        detail = "missing value" if not isinstance(value, str) or value == "" else f"not a number: {value!r}"
        # Data rows are 1-based and exclude the header.
        raise CsvFormatError(path, int(row) + 1, column, detail)
    return numeric.astype(float)


def read_matrix(path: Path) -> Tuple[np.ndarray, List[str]]:
    frame = read_table(path)
    return frame.to_numpy(dtype=float), [str(c) for c in frame.columns]


def read_pairs(path: Path) -> List[Tuple[str, str]]:
    """Interaction pairs: a two-column CSV of predictor names."""

    frame = pd.read_csv(Path(path), dtype=str, skipinitialspace=True)
    if frame.shape[1] != 2:
        raise ValueError(f"{path} must have exactly two columns of predictor names")
    if frame.isna().to_numpy().any():
        row = int(np.argwhere(frame.isna().to_numpy())[0][0])
        raise CsvFormatError(Path(path), row + 1, str(frame.columns[0]), "missing predictor name")
    return [(a.strip(), b.strip()) for a, b in frame.itertuples(index=False, name=None)]


def write_frame(frame: pd.DataFrame, path: Path, index: bool = False) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=index, float_format="%.10g")
    return path


__all__ = [
    "DATA_PATH",
    "CsvFormatError",
    "load_json",
    "save_json",
    "load_config",
    "read_table",
    "read_matrix",
    "read_pairs",
    "write_frame",
]
