"""Result bundles and bit-stable file emission."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path


def fmt(x) -> str:
    """Shortest locale-free text that round-trips a float (17 significant digits)."""
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, int):
        return str(x)
    return format(float(x), ".17g")


@dataclass
class Table:
    header: list[str]
    rows: list[tuple] = field(default_factory=list)


@dataclass
class ResultBundle:
    summary: dict
    tables: dict[str, Table] = field(default_factory=dict)
    # two-column plot files: name -> (table name, x column, y column)
    plots: dict[str, tuple[str, str, str]] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.summary.get("passed", False))


def write_csv(path: Path, table: Table) -> None:
    with open(path, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(table.header)
        for row in table.rows:
            w.writerow([fmt(v) for v in row])


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if hasattr(obj, "item"):
        return _json_safe(obj.item())
    return obj


def emit_bundle(bundle: ResultBundle, out_dir: Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    path = out_dir / "summary.json"
    with open(path, "w", encoding="ascii") as fh:
        json.dump(_json_safe(bundle.summary), fh, indent=2, sort_keys=True)
        fh.write("\n")
    written.append(path)
    for name, table in bundle.tables.items():
        path = out_dir / f"{name}.csv"
        write_csv(path, table)
        written.append(path)
    written += emit_plot_data(bundle, out_dir)
    return written


def emit_plot_data(bundle: ResultBundle, out_dir: Path) -> list[Path]:
    """Two-column CSVs (for gnuplot and friends) cut from the bundle's tables."""
    written = []
    for name, (table_name, xcol, ycol) in bundle.plots.items():
        table = bundle.tables[table_name]
        ix, iy = table.header.index(xcol), table.header.index(ycol)
        path = Path(out_dir) / f"{name}.csv"
        write_csv(path, Table([xcol, ycol], [(r[ix], r[iy]) for r in table.rows]))
        written.append(path)
    return written
