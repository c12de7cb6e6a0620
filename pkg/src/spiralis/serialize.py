"""Artifact files: trajectory CSV, solution JSON and report JSON.

Every write goes to a temporary file in the destination directory and is
moved into place with :func:`os.replace`, so readers never see a partial file.
"""

from __future__ import annotations

import contextlib
import csv
import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Optional

import numpy as np

from .problem import ProblemSpec, Trajectory
from .structure import ArcStructure

CSV_COLUMNS = ("t", "x", "y", "theta", "kappa", "u",
               "lambda1", "lambda2", "lambda3", "lambda4", "lambda5", "mu1", "mu2")
FORMAT_VERSION = 1


@contextlib.contextmanager
def atomic_write(path, mode: str = "w") -> Iterator:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, mode, newline="" if "b" not in mode else None) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def write_json(path, data: dict) -> None:
    with atomic_write(path) as fh:
        json.dump(data, fh, indent=2)
        fh.write("\n")


def read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def sample_table(solution) -> np.ndarray:
    """Node samples in :data:`CSV_COLUMNS` order."""
    tr, adj = solution.trajectory, solution.adjoints
    n = len(tr)
    mu1 = adj.mu1 if adj.mu1 is not None else np.zeros(n)
    mu2 = adj.mu2 if adj.mu2 is not None else np.zeros(n)
    cols = [tr.t, tr.x, tr.y, tr.theta, tr.kappa, tr.u,
            adj.lambda1, adj.lambda2, adj.lambda3, adj.lambda4, adj.lambda5, mu1, mu2]
    return np.column_stack([np.asarray(c, float)[:n] if len(c) >= n
                            else np.append(np.asarray(c, float), [c[-1]] * (n - len(c)))
                            for c in cols])


def write_samples(path, table: np.ndarray) -> None:
    with atomic_write(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in table:
            w.writerow([_fmt(v) for v in row])


def read_samples(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != CSV_COLUMNS:
        raise ValueError(f"{path}: header does not match {','.join(CSV_COLUMNS)}")
    if len(rows) < 2:
        raise ValueError(f"{path}: no samples")
    return np.array([[float(v) for v in r] for r in rows[1:]])


def solution_dict(solution, csv_name: str = "trajectory.csv") -> dict:
    tr = solution.trajectory
    data = {
        "format": FORMAT_VERSION,
        "phase": solution.phase,
        "problem": solution.spec.to_dict(),
        "b": float(solution.b),
        "structure": None if solution.structure is None else str(solution.structure),
        "xi": None if solution.xi is None else [float(v) for v in solution.xi],
        "switching_times": [float(v) for v in solution.switching_times],
        "kappa0": solution.kappa0 if solution.kappa0 is None else float(solution.kappa0),
        "kappaf": solution.kappaf if solution.kappaf is None else float(solution.kappaf),
        "junctions": [int(j) for j in tr.junctions],
        "converged": bool(solution.converged),
        "trivial": solution.trivial,
        "chatter_windows": [list(w) for w in solution.chatter_windows],
        "direct_b": [float(v) for v in solution.direct_b],
        "warnings": list(solution.warnings),
        "samples": csv_name,
    }
    if solution.report is not None:
        data["verdict"] = "pass" if solution.report.verdict else "fail"
    return data


@dataclass
class LoadedSolution:
    """Solution JSON plus its samples, as read back from disk."""

    data: dict
    table: np.ndarray

    @property
    def spec(self) -> ProblemSpec:
        return ProblemSpec.from_dict(self.data["problem"])

    @property
    def structure(self) -> Optional[ArcStructure]:
        s = self.data.get("structure")
        return None if s is None else ArcStructure.parse(s)

    def column(self, name: str) -> np.ndarray:
        return self.table[:, CSV_COLUMNS.index(name)]

    @property
    def trajectory(self) -> Trajectory:
        s = self.table[:, 1:5]
        return Trajectory(self.column("t").copy(), s.copy(), self.column("u").copy(),
                          float(self.data["b"]), list(self.data.get("junctions", [])))


def load_solution(path) -> LoadedSolution:
    path = Path(path)
    data = read_json(path)
    if "samples" not in data or "problem" not in data:
        raise ValueError(f"{path}: not a solution file")
    table = read_samples(path.parent / data["samples"])
    return LoadedSolution(data, table)


def write_solution(out_dir, solution) -> List[Path]:
    """Write ``trajectory.csv``, ``solution.json`` and, if present, ``report.json``."""
    out = Path(out_dir)
    written = []
    write_samples(out / "trajectory.csv", sample_table(solution))
    written.append(out / "trajectory.csv")
    write_json(out / "solution.json", solution_dict(solution))
    written.append(out / "solution.json")
    if solution.report is not None:
        write_json(out / "report.json", solution.report.to_dict())
        written.append(out / "report.json")
    return written
