"""Rectangular result tables with a units row and ``#`` metadata header."""

from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass, field

NORMALIZATIONS = ("spectral", "variance")


def format_value(v) -> str:
    if isinstance(v, (bool, int)) and not isinstance(v, float):
        return str(int(v))
    if isinstance(v, str):
        return v
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.9g}"


@dataclass
class ResultTable:
    columns: list
    units: list
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.columns) != len(self.units):
            raise ValueError("every column needs a unit")
        if any(not u for u in self.units):
            raise ValueError("units must be non-empty (use '1' for dimensionless)")
        norm = self.metadata.get("normalization")
        if norm not in NORMALIZATIONS:
            raise ValueError(f"metadata normalization must be one of {NORMALIZATIONS}, got {norm!r}")
        for r in self.rows:
            self._check(r)

    def _check(self, row):
        if len(row) != len(self.columns):
            raise ValueError(f"row has {len(row)} fields, table has {len(self.columns)} columns")

    def append(self, row):
        row = list(row)
        self._check(row)
        self.rows.append(row)

    def column(self, name):
        i = self.columns.index(name)
        return [r[i] for r in self.rows]

    def data_text(self) -> str:
        """Header, units and data rows; excludes metadata."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        w.writerow(self.units)
        for r in self.rows:
            w.writerow([format_value(v) for v in r])
        return buf.getvalue()

    def data_hash(self) -> str:
        return hashlib.sha256(self.data_text().encode()).hexdigest()

    def to_csv(self) -> str:
        head = "".join(f"# {k}={v}\n" for k, v in self.metadata.items())
        return head + self.data_text()

    def write(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())


def read_csv(text: str) -> ResultTable:
    meta, body = {}, []
    for line in text.splitlines():
        if line.startswith("#"):
            k, _, v = line[1:].strip().partition("=")
            meta[k] = v
        elif line:
            body.append(line)
    rows = list(csv.reader(body))
    data = []
    for r in rows[2:]:
        parsed = []
        for v in r:
            try:
                parsed.append(float(v))
            except ValueError:
                parsed.append(v)
        data.append(parsed)
    return ResultTable(rows[0], rows[1], data, meta)
