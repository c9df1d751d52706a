"""CSV and JSON sinks."""

import csv
import json
from pathlib import Path

from .stats import _jsonable

SCHEMA = 1


class SnapshotWriter:
    """Streams snapshot rows to CSV.

    Columns: ``replicate_id, t, epoch, tau, stage, particle_id, x1..xd``.
    The first line is a ``# schema=1`` comment.
    """

    def __init__(self, path, dim, stages=("start", "mesh", "pre", "final")):
        self.path = Path(path)
        self.dim = dim
        self.stages = set(stages)
        self._fh = open(self.path, "w", newline="")
        self._fh.write(f"# schema={SCHEMA}\n")
        self._w = csv.writer(self._fh)
        self._w.writerow(["replicate_id", "t", "epoch", "tau", "stage", "particle_id"]
                         + [f"x{j + 1}" for j in range(dim)])
        self.rows = 0

    def write(self, replicate_id, snap):
        if snap.stage not in self.stages:
            return
        for i, row in enumerate(snap.positions):
            self._w.writerow([replicate_id, repr(float(snap.t)), snap.epoch, repr(float(snap.tau)),
                              snap.stage, i] + [repr(float(x)) for x in row])
        self.rows += snap.positions.shape[0]

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_snapshots(path):
    """Parse a snapshot CSV back into a list of dicts (floats for coordinates)."""
    with open(path, newline="") as fh:
        header = fh.readline().strip()
        if header != f"# schema={SCHEMA}":
            raise ValueError(f"unexpected schema line {header!r}")
        rows = []
        for rec in csv.DictReader(fh):
            rows.append({k: (v if k == "stage" else float(v)) for k, v in rec.items()})
        return rows


def write_json(path, obj):
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def write_pairs_csv(path, rows, fields):
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema={SCHEMA}\n")
        w = csv.writer(fh)
        w.writerow(fields)
        for r in rows:
            w.writerow([repr(float(r[f])) if isinstance(r[f], float) else r[f] for f in fields])
