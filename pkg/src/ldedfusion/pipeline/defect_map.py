"""Location-registered predictions and their JSONL / CSV files."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Tuple

from ..sim import CLASSES

CSV_HEADER = ("t_us", "x_mm", "y_mm", "z_mm", "label", "p0", "p1", "p2")


@dataclass(frozen=True)
class DefectMapRecord:
    t_us: int
    x_mm: float
    y_mm: float
    z_mm: float
    label: str
    p: Tuple[float, float, float]

    def validate(self) -> None:
        vals = (self.x_mm, self.y_mm, self.z_mm) + tuple(self.p)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite value in record at t={self.t_us}")
        if len(self.p) != len(CLASSES) or abs(sum(self.p) - 1.0) > 1e-6:
            raise ValueError(f"probabilities at t={self.t_us} do not sum to 1")
        if self.label not in CLASSES:
            raise ValueError(f"unknown label {self.label!r}")

    def to_json(self) -> dict:
        return {"t_us": self.t_us, "x_mm": self.x_mm, "y_mm": self.y_mm, "z_mm": self.z_mm,
                "label": self.label, "p": list(self.p)}


def export_defect_map(records: Iterable[DefectMapRecord], path, fmt: str = "jsonl") -> Path:
    path = Path(path)
    records = list(records)
    for r in records:
        r.validate()
    if fmt == "jsonl":
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for r in records:
                f.write(json.dumps(r.to_json()) + "\n")
    elif fmt == "csv":
        with open(path, "w", encoding="utf-8", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for r in records:
                w.writerow([r.t_us] + [repr(v) for v in (r.x_mm, r.y_mm, r.z_mm)] + [r.label]
                           + [repr(v) for v in r.p])
    else:
        raise ValueError(f"unknown defect map format {fmt!r}")
    return path


def read_defect_map(path, fmt: str = None) -> List[DefectMapRecord]:
    path = Path(path)
    fmt = fmt or path.suffix.lstrip(".")
    out = []
    with open(path, encoding="utf-8", newline="") as f:
        if fmt == "jsonl":
            for line in f:
                if line.strip():
                    d = json.loads(line)
                    out.append(DefectMapRecord(int(d["t_us"]), float(d["x_mm"]), float(d["y_mm"]), float(d["z_mm"]),
                                               d["label"], tuple(float(v) for v in d["p"])))
        elif fmt == "csv":
            rows = csv.reader(f)
            header = next(rows, None)
            if tuple(header or ()) != CSV_HEADER:
                raise ValueError(f"unexpected CSV header {header}")
            for r in rows:
                out.append(DefectMapRecord(int(r[0]), float(r[1]), float(r[2]), float(r[3]), r[4],
                                           tuple(float(v) for v in r[5:8])))
        else:
            raise ValueError(f"unknown defect map format {fmt!r}")
    return out
