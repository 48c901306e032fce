"""File formats: the observation CSV and the tab-separated trace.

Dataset CSV: header `timestamp,lon,lat`; a quiet hour leaves both coordinate
fields empty, a located event fills both.  Timestamps are ISO 8601 and must
be strictly increasing.

Trace TSV: header column `state` (the iteration index) followed by
`posterior`, `likelihood`, `prior` (log values) and one column per model
parameter; floats are written with 17 significant digits so a round trip is
exact.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import datetime
from typing import List, Sequence, Tuple

import numpy as np

from .bayes import Trace
from .core import Observation

DATASET_HEADER = ["timestamp", "lon", "lat"]


@dataclass(frozen=True)
class Dataset:
    """Parallel tuples of ISO timestamps and their observations."""

    timestamps: Tuple[str, ...]
    observations: Tuple[Observation, ...]

    def __post_init__(self):
        object.__setattr__(self, "timestamps", tuple(self.timestamps))
        object.__setattr__(self, "observations", tuple(self.observations))
        if len(self.timestamps) != len(self.observations):
            raise ValueError("timestamps and observations must have equal length")

    def __len__(self) -> int:
        return len(self.observations)


def load_dataset(path) -> Dataset:
    """Read an observation CSV, reporting malformed content with line numbers."""
    timestamps: List[str] = []
    observations: List[Observation] = []
    prev_dt = None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError("line 1: missing header") from None
        if [h.strip() for h in header] != DATASET_HEADER:
            raise ValueError(f"line 1: header must be {','.join(DATASET_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ValueError(f"line {lineno}: expected 3 fields, got {len(row)}")
            ts, lon_s, lat_s = (f.strip() for f in row)
            try:
                dt = datetime.fromisoformat(ts)
            except ValueError:
                raise ValueError(f"line {lineno}: bad timestamp {ts!r}") from None
            if prev_dt is not None and dt <= prev_dt:
                raise ValueError(f"line {lineno}: timestamps must be strictly increasing")
            prev_dt = dt
            if lon_s == "" and lat_s == "":
                ob = Observation(None)
            elif lon_s == "" or lat_s == "":
                raise ValueError(
                    f"line {lineno}: lon and lat must be both present or both empty")
            else:
                try:
                    lon, lat = float(lon_s), float(lat_s)
                except ValueError:
                    raise ValueError(f"line {lineno}: bad coordinate") from None
                if not (math.isfinite(lon) and math.isfinite(lat)):
                    raise ValueError(f"line {lineno}: coordinates must be finite")
                ob = Observation((lon, lat))
            timestamps.append(ts)
            observations.append(ob)
    return Dataset(tuple(timestamps), tuple(observations))


def save_dataset(dataset: Dataset, path) -> None:
    """Write an observation CSV with 9-decimal coordinates."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DATASET_HEADER)
        for ts, ob in zip(dataset.timestamps, dataset.observations):
            if ob.present:
                writer.writerow([ts, f"{ob.value[0]:.9f}", f"{ob.value[1]:.9f}"])
            else:
                writer.writerow([ts, "", ""])


def write_trace(trace: Trace, path) -> None:
    """Write a trace as TSV with a `state` iteration column and %.17g floats."""
    with open(path, "w") as fh:
        fh.write("state\tposterior\tlikelihood\tprior\t"
                 + "\t".join(trace.param_names) + "\n")
        for i in range(len(trace)):
            cells = [str(int(trace.iterations[i])),
                     f"{trace.log_posterior[i]:.17g}",
                     f"{trace.log_likelihood[i]:.17g}",
                     f"{trace.log_prior[i]:.17g}"]
            cells += [f"{v:.17g}" for v in trace.params[i]]
            fh.write("\t".join(cells) + "\n")


def read_trace(path) -> Trace:
    """Read a trace TSV back into a Trace; the state count is inferred from
    the p.* columns."""
    with open(path) as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if header[:4] != ["state", "posterior", "likelihood", "prior"]:
            raise ValueError("trace header must start with state, posterior, likelihood, prior")
        names = header[4:]
        k = sum(1 for n in names if n.startswith("p."))
        if k < 1 or len(names) != k * k + 6 * k:
            raise ValueError("trace header does not describe a full parameter vector")
        iters: List[int] = []
        rows: List[List[float]] = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            cells = line.rstrip("\n").split("\t")
            if len(cells) != len(header):
                raise ValueError(f"line {lineno}: expected {len(header)} fields")
            try:
                iters.append(int(cells[0]))
                rows.append([float(c) for c in cells[1:]])
            except ValueError:
                raise ValueError(f"line {lineno}: bad numeric field") from None
    if not rows:
        raise ValueError("trace file has no samples")
    data = np.asarray(rows, dtype=np.float64)
    return Trace(
        k=k,
        param_names=names,
        iterations=np.asarray(iters, dtype=np.int64),
        log_posterior=data[:, 0],
        log_likelihood=data[:, 1],
        log_prior=data[:, 2],
        params=data[:, 3:],
    )


def write_forecast_summary(rows: Sequence[Tuple[int, str, float, float, int]],
                           path) -> None:
    """Write forecast histogram rows as CSV (step, axis, bin_lo, bin_hi, count)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "axis", "bin_lo", "bin_hi", "count"])
        for step, axis, lo, hi, count in rows:
            writer.writerow([step, axis, f"{lo:.9f}", f"{hi:.9f}", count])
