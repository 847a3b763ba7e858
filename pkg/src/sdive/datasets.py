"""Data ingestion: one-value-per-line CSV files and the two shipped datasets."""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass

import numpy as np

from .exceptions import DatasetIntegrityError, InvalidInputError

_DATA_DIR = os.path.join(os.path.dirname(__file__), "data")

# name -> (file, provenance, MLE fingerprint (mu, sigma), tolerance)
SHIPPED = {
    "short": ("short.csv",
              "Short (1763) solar parallax; Stigler (1977), Ann. Statist. 5, Data Set 2",
              (8.378, 0.846), 1e-3),
    "newcomb": ("newcomb.csv",
                "Newcomb (1882) light passage times, deviations from 24800 ns; "
                "Stigler (1977), Ann. Statist. 5, Table 5",
                (26.21, 10.66), 1e-2),
}


@dataclass(frozen=True)
class Dataset:
    name: str
    values: np.ndarray
    provenance: str

    def __post_init__(self):
        if self.values.size == 0:
            raise InvalidInputError(f"dataset {self.name!r} is empty")
        if not np.all(np.isfinite(self.values)):
            raise InvalidInputError(f"dataset {self.name!r} has non-finite values")

    @property
    def n(self) -> int:
        return int(self.values.size)

    @property
    def checksum(self) -> str:
        """SHA-256 of the values written with ``repr``, one per line."""
        text = "\n".join(repr(float(v)) for v in self.values)
        return hashlib.sha256(text.encode()).hexdigest()


def read_values(path) -> np.ndarray:
    """Read one number per line; blank lines and ``#`` comments are skipped.

    Raises
    ------
    InvalidInputError
        If the file cannot be read or a line is not a finite number.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise InvalidInputError(f"cannot read {path}: {exc.strerror or exc}") from None
    out = []
    for i, line in enumerate(lines, 1):
        s = line.split("#", 1)[0].strip().rstrip(",").strip()
        if not s:
            continue
        try:
            v = float(s)
        except ValueError:
            raise InvalidInputError(f"{path}, line {i}: not a number: {s!r}") from None
        if not np.isfinite(v):
            raise InvalidInputError(f"{path}, line {i}: non-finite value {s!r}")
        out.append(v)
    if not out:
        raise InvalidInputError(f"{path}: no data values")
    return np.array(out)


def _normal_mle(x):
    return float(np.mean(x)), float(np.std(x))


def verify_fingerprint(ds: Dataset, expected, tol) -> None:
    """Check the normal MLE of ``ds`` against ``expected`` to ``tol``."""
    mu, sigma = _normal_mle(ds.values)
    if abs(mu - expected[0]) > tol or abs(sigma - expected[1]) > tol:
        raise DatasetIntegrityError(
            f"dataset {ds.name!r}: MLE ({mu:.6g}, {sigma:.6g}) does not match the "
            f"fingerprint ({expected[0]}, {expected[1]}) within {tol}")


def load_dataset(name_or_path: str) -> Dataset:
    """Load ``short``, ``newcomb`` (optionally prefixed ``dataset:``) or a CSV path.

    Shipped datasets are checked against their MLE fingerprint and raise
    :class:`DatasetIntegrityError` on mismatch.
    """
    key = str(name_or_path)
    if key.startswith("dataset:"):
        name = key[len("dataset:"):]
        if name not in SHIPPED:
            raise InvalidInputError(f"unknown dataset {name!r}; choose from {sorted(SHIPPED)}")
        key = name
    if key in SHIPPED:
        fname, prov, fp, tol = SHIPPED[key]
        ds = Dataset(key, read_values(os.path.join(_DATA_DIR, fname)), prov)
        verify_fingerprint(ds, fp, tol)
        return ds
    values = read_values(key)
    return Dataset(os.path.basename(key), values, f"file {key}")
