"""JSON documents for coefficients and models, and CSV readers."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .grid import GridSpec
from .models import EffectiveCoefficients, model_from_dict, model_to_dict

DOCUMENT_VERSION = 1


def _write_json(path, doc: dict) -> None:
    # repr-exact floats make the documents round-trip bit for bit
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _read_json(path, kind: str) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"cannot read {kind} document {path}: {exc}") from None
    if not isinstance(doc, dict) or doc.get("document") != kind:
        raise ValueError(f"{path} is not a {kind} document")
    if doc.get("version") != DOCUMENT_VERSION:
        raise ValueError(f"unsupported {kind} document version {doc.get('version')!r}")
    return doc


def coefficients_document(coeffs: EffectiveCoefficients, spot: float, grid: GridSpec) -> dict:
    return {
        "document": "effective_coefficients",
        "version": DOCUMENT_VERSION,
        "spot": float(spot),
        "grid": grid.to_dict(),
        "coefficients": coeffs.to_dict(),
    }


def write_coefficients(path, coeffs: EffectiveCoefficients, spot: float, grid: GridSpec) -> None:
    _write_json(path, coefficients_document(coeffs, spot, grid))


def read_coefficients(path) -> tuple[EffectiveCoefficients, float, GridSpec]:
    doc = _read_json(path, "effective_coefficients")
    extra = set(doc) - {"document", "version", "spot", "grid", "coefficients"}
    if extra:
        raise ValueError(f"unknown keys in coefficients document: {sorted(extra)}")
    return (EffectiveCoefficients.from_dict(doc["coefficients"]), float(doc["spot"]),
            GridSpec.from_dict(doc["grid"]))


def write_model(path, model) -> None:
    _write_json(path, {"document": "model", "version": DOCUMENT_VERSION, "model": model_to_dict(model)})


def read_model(path):
    return model_from_dict(_read_json(path, "model")["model"])


def read_csv_columns(path) -> dict[str, np.ndarray]:
    """Numeric CSV with a mandatory header row, as a dict of columns."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty CSV")
    header, body = rows[0], rows[1:]
    data = np.array([[float(v) for v in r] for r in body], dtype=float).reshape(len(body), len(header))
    return {name: data[:, i] for i, name in enumerate(header)}


def read_surface_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(maturities, strikes, values)`` from a ``T,K,C`` file on a full grid."""
    cols = read_csv_columns(path)
    if set(cols) != {"T", "K", "C"}:
        raise ValueError(f"{path}: expected header T,K,C")
    T = np.unique(cols["T"])
    K = np.unique(cols["K"])
    if cols["C"].size != T.size * K.size:
        raise ValueError(f"{path}: rows do not form a full T x K grid")
    return T, K, cols["C"].reshape(T.size, K.size)


def write_rows(path, header: str, rows) -> None:
    """CSV with ``.`` decimals, LF line endings and repr-exact floats."""
    with open(path, "w", newline="\n") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(v if isinstance(v, str) else f"{v:.17g}" for v in row) + "\n")
