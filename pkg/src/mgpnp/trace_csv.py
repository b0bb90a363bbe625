"""CSV serialization of simulation traces.

Layout: every topology epoch starts with a ``# epoch <k>`` comment row followed
by a header row (``t`` then ``<unit>.<signal>`` columns) and its data rows.
Floats are written with ``repr`` so values re-read bit-exactly.
"""
from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from .simulation import Trace, TraceEpoch

EPOCH_MARK = "# epoch"


def write_trace(trace: Trace, out) -> None:
    """Write ``trace`` to a path or an open text stream."""
    if isinstance(out, (str, Path)):
        with open(out, "w", newline="") as fh:
            write_trace(trace, fh)
        return
    w = csv.writer(out, lineterminator="\n")
    for k, ep in enumerate(trace.epochs):
        start = repr(ep.times[0]) if ep.times else "none"
        out.write(f"{EPOCH_MARK} {k} t_start={start}\n")
        w.writerow(ep.columns)
        for row in ep.rows:
            w.writerow([repr(float(v)) for v in row])


def trace_to_text(trace: Trace) -> str:
    buf = io.StringIO()
    write_trace(trace, buf)
    return buf.getvalue()


def read_trace(src) -> Trace:
    if isinstance(src, (str, Path)):
        with open(src, newline="") as fh:
            return read_trace(fh)
    trace = Trace()
    expect_header = False
    for raw in src:
        line = raw.rstrip("\n")
        if line.startswith("#"):
            if line.startswith(EPOCH_MARK):
                expect_header = True
            continue
        if not line:
            continue
        cells = next(csv.reader([line]))
        if expect_header:
            trace.epochs.append(TraceEpoch(cells))
            expect_header = False
            continue
        if not trace.epochs:
            raise ValueError("data row before any header")
        ep = trace.epochs[-1]
        if len(cells) != len(ep.columns):
            raise ValueError(f"row has {len(cells)} cells, header has {len(ep.columns)}")
        row = np.array([float(c) for c in cells])
        ep.times.append(float(row[0]))
        ep.rows.append(row)
    return trace
