"""Run reports as JSON lines.

The first line is a header record; every other line carries a ``type``
field: ``pose``, ``degeneracy``, ``selection``, ``timing``, ``memory``
or ``summary``. Floats are written with ``repr`` precision, so a
write/read cycle reproduces the report exactly.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .metrics import PoseTrajectory

REPORT_FORMAT = "leanlivo-report"
REPORT_VERSION = 1
STAGES = ("lidar", "visual", "total")
# fields that depend on the wall clock; excluded from determinism checks
WALL_CLOCK_TYPES = ("timing",)


class ReportError(ValueError):
    category = "report-error"


def stage_stats(ms):
    """Mean, sample std and standard error of the mean (all in ms)."""
    a = np.asarray(ms, dtype=float)
    if a.size == 0:
        return {"n": 0, "mean": None, "std": None, "sem": None}
    std = float(a.std(ddof=1)) if a.size > 1 else 0.0
    return {"n": int(a.size), "mean": float(a.mean()), "std": std, "sem": std / np.sqrt(a.size)}


@dataclass
class RunReport:
    header: Dict[str, object] = field(default_factory=dict)
    trajectory: PoseTrajectory = field(
        default_factory=lambda: PoseTrajectory(np.zeros(0), np.zeros((0, 3)), np.zeros((0, 4))))
    degeneracy: List[dict] = field(default_factory=list)
    selection: List[dict] = field(default_factory=list)
    timing: List[dict] = field(default_factory=list)
    memory: List[dict] = field(default_factory=list)
    summary: Dict[str, object] = field(default_factory=dict)

    # --------------------------------------------------------------- derived
    @property
    def ate_rmse(self) -> Optional[float]:
        return self.summary.get("ate_rmse")

    @property
    def selection_ratio(self) -> float:
        if not self.selection:
            return 0.0
        return 100.0 * sum(r["selected"] for r in self.selection) / len(self.selection)

    def stage_table(self):
        """Runtime per stage: {stage: {n, mean, std, sem}} in milliseconds."""
        return {s: stage_stats([r[s] for r in self.timing if r.get(s) is not None]) for s in STAGES}

    def memory_table(self):
        if not self.memory:
            return {}
        keys = ("local_bytes", "longterm_bytes", "total_bytes")
        peak = {k: max(r[k] for r in self.memory) for k in keys}
        return {"peak": peak, "final": {k: self.memory[-1][k] for k in keys}}

    # ------------------------------------------------------------ serialise
    def records(self, wall_clock=True):
        yield {"type": "header", "format": REPORT_FORMAT, "version": REPORT_VERSION, **self.header}
        tr = self.trajectory
        for i in range(len(tr)):
            yield {"type": "pose", "t": float(tr.t[i]), "p": [float(v) for v in tr.positions[i]],
                   "q": [float(v) for v in tr.quaternions[i]]}
        for r in self.degeneracy:
            yield {"type": "degeneracy", **r}
        for r in self.selection:
            yield {"type": "selection", **r}
        if wall_clock:
            for r in self.timing:
                yield {"type": "timing", **r}
        for r in self.memory:
            yield {"type": "memory", **r}
        summ = dict(self.summary)
        if wall_clock:
            summ["runtime_ms"] = self.stage_table()
        yield {"type": "summary", **summ}

    def to_lines(self, wall_clock=True):
        return [json.dumps(r, sort_keys=True, allow_nan=False) for r in self.records(wall_clock)]

    def write(self, path):
        Path(path).write_text("\n".join(self.to_lines()) + "\n")

    @classmethod
    def from_lines(cls, lines, source="<report>"):
        rep = cls()
        t, p, q = [], [], []
        seen_header = False
        for i, line in enumerate(lines, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ReportError(f"{source}:{i}: {exc.msg}") from None
            kind = rec.pop("type", None)
            if not seen_header:
                if kind != "header" or rec.get("format") != REPORT_FORMAT:
                    raise ReportError(f"{source}:{i}: missing report header")
                if rec.get("version") != REPORT_VERSION:
                    raise ReportError(f"{source}:{i}: unsupported report version {rec.get('version')!r}")
                rec.pop("format")
                rec.pop("version")
                rep.header = rec
                seen_header = True
            elif kind == "pose":
                t.append(rec["t"])
                p.append(rec["p"])
                q.append(rec["q"])
            elif kind in ("degeneracy", "selection", "timing", "memory"):
                getattr(rep, kind).append(rec)
            elif kind == "summary":
                rec.pop("runtime_ms", None)
                rep.summary = rec
            else:
                raise ReportError(f"{source}:{i}: unknown record type {kind!r}")
        if not seen_header:
            raise ReportError(f"{source}: empty report")
        rep.trajectory = PoseTrajectory(np.array(t, dtype=float), np.array(p, dtype=float).reshape(-1, 3),
                                        np.array(q, dtype=float).reshape(-1, 4))
        return rep

    @classmethod
    def read(cls, path):
        p = Path(path)
        if not p.is_file():
            raise ReportError(f"{p}: report not found")
        return cls.from_lines(p.read_text().splitlines(), str(p))

    def deterministic_lines(self):
        """Serialised report without wall-clock fields (for repeatability checks)."""
        return self.to_lines(wall_clock=False)


def resource_profile(report: RunReport):
    """Runtime and memory tables of a run; both are empty for a zero-frame run.

    ``runtime`` maps each stage to n/mean/std/sem in milliseconds (the
    sample standard deviation and the standard error of the mean are both
    given). ``memory`` holds peak and final byte estimates.
    """
    if not report.timing:
        return {"runtime": {}, "memory": {}}
    return {"runtime": report.stage_table(), "memory": report.memory_table()}


def write_trajectory(path, traj: PoseTrajectory):
    """Plain ``t,px,py,pz,qw,qx,qy,qz`` CSV (same layout as groundtruth.csv)."""
    from .dataset import GT_HEADER, _write_csv
    _write_csv(Path(path), GT_HEADER, np.column_stack([traj.t, traj.positions, traj.quaternions]))


def read_trajectory(path) -> PoseTrajectory:
    """Trajectory from a report (``.jsonl``) or a ground-truth style CSV."""
    p = Path(path)
    if p.is_dir():
        p = p / "groundtruth.csv"
    if not p.is_file():
        raise ReportError(f"{p}: trajectory file not found")
    with open(p) as f:
        first = f.readline()
    if first.lstrip().startswith("{"):
        return RunReport.read(p).trajectory
    from .dataset import GT_HEADER, read_csv
    g = read_csv(p, GT_HEADER, 8)
    return PoseTrajectory(g[:, 0], g[:, 1:4], g[:, 4:8])
