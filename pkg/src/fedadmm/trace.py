"""Per-iteration trace records and their CSV form."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable

CSV_COLUMNS = (
    "algorithm",
    "k",
    "tau",
    "cr_cumulative",
    "f_global",
    "grad_norm_sq",
    "lyapunov",
    "inner_iters_total",
    "wall_ms",
)


@dataclass(frozen=True)
class TraceRecord:
    """State after ``k`` iterations: the global model is x^{tau}."""

    k: int
    tau: int
    cr_cumulative: int
    f_global: float
    grad_norm_sq: float
    lyapunov: float | None
    inner_iters: int
    wall_ms: float
    algorithm: str = "fedadmm"

    def csv_row(self) -> list[str]:
        return [
            self.algorithm,
            str(self.k),
            str(self.tau),
            str(self.cr_cumulative),
            repr(float(self.f_global)),
            repr(float(self.grad_norm_sq)),
            "" if self.lyapunov is None else repr(float(self.lyapunov)),
            str(self.inner_iters),
            f"{self.wall_ms:.3f}",
        ]


def write_trace_csv(records: Iterable[TraceRecord], path_or_buf) -> None:
    own = isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__")
    fh = open(path_or_buf, "w", newline="", encoding="utf-8") if own else path_or_buf
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for rec in records:
            writer.writerow(rec.csv_row())
    finally:
        if own:
            fh.close()


def trace_csv_text(records: Iterable[TraceRecord]) -> str:
    buf = io.StringIO()
    write_trace_csv(records, buf)
    return buf.getvalue()


def read_trace_csv(path) -> list[TraceRecord]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append(TraceRecord(
                k=int(row["k"]),
                tau=int(row["tau"]),
                cr_cumulative=int(row["cr_cumulative"]),
                f_global=float(row["f_global"]),
                grad_norm_sq=float(row["grad_norm_sq"]),
                lyapunov=float(row["lyapunov"]) if row["lyapunov"] else None,
                inner_iters=int(row["inner_iters_total"]),
                wall_ms=float(row["wall_ms"]),
                algorithm=row["algorithm"],
            ))
    return out


def strip_wall_time(csv_text: str) -> str:
    """CSV text with the wall_ms column removed, for determinism checks."""
    rows = list(csv.reader(io.StringIO(csv_text)))
    col = rows[0].index("wall_ms")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for row in rows:
        writer.writerow(row[:col] + row[col + 1:])
    return buf.getvalue()

