"""Sensor streams and the on-disk sequence format.

A sequence directory holds::

    imu.csv              t,wx,wy,wz,ax,ay,az
    scans/index.csv      scan_id,start,end
    scans/NNNNNN.csv     t,x,y,z            (LiDAR frame)
    images/index.csv     frame_id,t
    images/NNNNNN.pgm    binary 8-bit grey (P5)
    groundtruth.csv      t,px,py,pz,qw,qx,qy,qz   (optional)
    calibration.txt      key = value camera and extrinsic parameters

Floats are written with 17 significant digits so a write/read cycle is
bit-exact.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .camera import CameraModel, Image
from .lidar import LidarScan
from .metrics import PoseTrajectory

log = logging.getLogger(__name__)

IMU_HEADER = "t,wx,wy,wz,ax,ay,az"
SCAN_INDEX_HEADER = "scan_id,start,end"
SCAN_HEADER = "t,x,y,z"
IMAGE_INDEX_HEADER = "frame_id,t"
GT_HEADER = "t,px,py,pz,qw,qx,qy,qz"


class DatasetError(ValueError):
    """Malformed or inconsistent sequence data."""

    category = "dataset-error"


class ParseError(DatasetError):
    category = "parse-error"


class OrderError(DatasetError):
    category = "order-error"


@dataclass
class ImuStream:
    t: np.ndarray
    gyro: np.ndarray
    accel: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float).reshape(-1)
        self.gyro = np.asarray(self.gyro, dtype=float).reshape(-1, 3)
        self.accel = np.asarray(self.accel, dtype=float).reshape(-1, 3)

    def __len__(self):
        return self.t.shape[0]

    def window(self, t0, t1):
        """Samples with t0 <= t <= t1 plus the last sample before t0."""
        i0 = max(int(np.searchsorted(self.t, t0, side="right")) - 1, 0)
        i1 = int(np.searchsorted(self.t, t1, side="right"))
        return self.t[i0:i1], self.gyro[i0:i1], self.accel[i0:i1]


@dataclass
class CameraFrame:
    t: float
    pixels: np.ndarray   # uint8 (H, W)

    def image(self) -> Image:
        return Image(self.pixels.astype(float) / 255.0, self.t)


@dataclass
class SensorStreams:
    imu: ImuStream
    scans: List[LidarScan]
    frames: List[CameraFrame] = field(default_factory=list)
    groundtruth: Optional[PoseTrajectory] = None
    camera: CameraModel = field(default_factory=CameraModel)
    meta: Dict[str, str] = field(default_factory=dict)

    def validate(self):
        _check_increasing(self.imu.t, "imu.csv", "IMU sample", strict=True)
        prev_end = -np.inf
        for i, s in enumerate(self.scans):
            if not s.scan_end > s.scan_start:
                raise OrderError(f"scan {i}: end {s.scan_end!r} not after start {s.scan_start!r}")
            if s.scan_start < prev_end - 1e-9:
                raise OrderError(f"scan {i}: start {s.scan_start!r} before previous scan end {prev_end!r}")
            prev_end = s.scan_end
        _check_increasing(np.array([f.t for f in self.frames]), "images/index.csv", "camera frame",
                          strict=True)
        if self.groundtruth is not None:
            _check_increasing(self.groundtruth.t, "groundtruth.csv", "ground-truth pose", strict=True)
        return self

    def is_empty(self):
        return len(self.imu) == 0 and not self.scans and not self.frames


def _check_increasing(t, source, what, strict=True):
    t = np.asarray(t, dtype=float)
    if t.size < 2:
        return
    d = np.diff(t)
    bad = np.flatnonzero(d <= 0 if strict else d < 0)
    if bad.size:
        i = int(bad[0]) + 1
        raise OrderError(f"{source}: {what} {i} at t={t[i]!r} is not after t={t[i - 1]!r}")


# ----------------------------------------------------------------------- write
def _write_csv(path: Path, header: str, rows):
    rows = np.asarray(rows, dtype=float)
    with open(path, "w") as f:
        f.write(header + "\n")
        if rows.size:
            np.savetxt(f, rows.reshape(rows.shape[0], -1), fmt="%.17g", delimiter=",")


def write_pgm(path, pixels):
    a = np.asarray(pixels)
    if a.dtype != np.uint8 or a.ndim != 2:
        raise ValueError("PGM writer expects a 2-D uint8 array")
    with open(path, "wb") as f:
        f.write(f"P5\n{a.shape[1]} {a.shape[0]}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(a).tobytes())


def read_pgm(path):
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParseError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise ParseError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    try:
        w, h, maxval = (int(x) for x in tokens[1:])
    except ValueError as exc:
        raise ParseError(f"{path}: bad PGM header") from exc
    if maxval != 255:
        raise ParseError(f"{path}: only 8-bit PGM supported")
    body = data[pos + 1:]
    if len(body) < w * h:
        raise ParseError(f"{path}: truncated PGM data ({len(body)} of {w * h} bytes)")
    return np.frombuffer(body[:w * h], dtype=np.uint8).reshape(h, w).copy()


def write_calibration(path, camera: CameraModel, meta=None):
    lines = [f"fx = {camera.fx!r}", f"fy = {camera.fy!r}", f"cx = {camera.cx!r}",
             f"cy = {camera.cy!r}", f"width = {camera.width}", f"height = {camera.height}",
             "R_ci = " + " ".join(repr(float(v)) for v in camera.R_ci.ravel()),
             "t_ci = " + " ".join(repr(float(v)) for v in camera.t_ci)]
    for k, v in sorted((meta or {}).items()):
        lines.append(f"meta.{k} = {v}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_calibration(path):
    vals = {}
    for i, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"{path}:{i}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        vals[k] = v
    meta = {k[5:]: v for k, v in vals.items() if k.startswith("meta.")}
    try:
        cam = CameraModel(fx=float(vals["fx"]), fy=float(vals["fy"]), cx=float(vals["cx"]),
                          cy=float(vals["cy"]), width=int(vals["width"]), height=int(vals["height"]),
                          R_ci=np.array([float(x) for x in vals["R_ci"].split()]).reshape(3, 3),
                          t_ci=np.array([float(x) for x in vals["t_ci"].split()]))
    except KeyError as exc:
        raise ParseError(f"{path}: missing calibration key {exc.args[0]}") from exc
    return cam, meta


def write_dataset(path, streams: SensorStreams):
    root = Path(path)
    (root / "scans").mkdir(parents=True, exist_ok=True)
    (root / "images").mkdir(parents=True, exist_ok=True)
    imu = streams.imu
    _write_csv(root / "imu.csv", IMU_HEADER, np.column_stack([imu.t, imu.gyro, imu.accel]))
    _write_csv(root / "scans" / "index.csv", SCAN_INDEX_HEADER,
               np.array([[i, s.scan_start, s.scan_end] for i, s in enumerate(streams.scans)]).reshape(-1, 3))
    for i, s in enumerate(streams.scans):
        _write_csv(root / "scans" / f"{i:06d}.csv", SCAN_HEADER, np.column_stack([s.times, s.points]))
    _write_csv(root / "images" / "index.csv", IMAGE_INDEX_HEADER,
               np.array([[i, f.t] for i, f in enumerate(streams.frames)]).reshape(-1, 2))
    for i, f in enumerate(streams.frames):
        write_pgm(root / "images" / f"{i:06d}.pgm", f.pixels)
    gt = streams.groundtruth
    if gt is not None:
        _write_csv(root / "groundtruth.csv", GT_HEADER, np.column_stack([gt.t, gt.positions, gt.quaternions]))
    write_calibration(root / "calibration.txt", streams.camera, streams.meta)
    return root


# ------------------------------------------------------------------------ read
def read_csv(path, header, ncols):
    """Parse a headed numeric CSV; errors carry the 1-based line number."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"{path}: missing file")
    text = path.read_text()
    lines = text.split("\n")
    if not lines or lines[0].strip() != header:
        raise ParseError(f"{path}:1: expected header {header!r}")
    body = lines[1:]
    if body and body[-1] == "":
        body = body[:-1]
    elif body:
        # no trailing newline: the last record may have been cut short
        pass
    if not body:
        return np.zeros((0, ncols))
    try:
        arr = np.loadtxt(body, delimiter=",", ndmin=2, dtype=float)
        if arr.shape[1] != ncols:
            raise ValueError
        return arr
    except ValueError:
        pass
    for i, line in enumerate(body, 2):
        parts = line.split(",")
        if len(parts) != ncols:
            raise ParseError(f"{path}:{i}: expected {ncols} fields, got {len(parts)}")
        try:
            [float(p) for p in parts]
        except ValueError as exc:
            raise ParseError(f"{path}:{i}: {exc}") from exc
    raise ParseError(f"{path}: unparseable content")


def read_dataset(path) -> SensorStreams:
    root = Path(path)
    if not root.is_dir():
        raise DatasetError(f"{root}: not a sequence directory")
    imu_rows = read_csv(root / "imu.csv", IMU_HEADER, 7)
    imu = ImuStream(imu_rows[:, 0], imu_rows[:, 1:4], imu_rows[:, 4:7])
    _check_increasing(imu.t, "imu.csv", "IMU sample")
    idx = read_csv(root / "scans" / "index.csv", SCAN_INDEX_HEADER, 3)
    scans = []
    for k, (sid, t0, t1) in enumerate(idx):
        if sid != k:
            raise OrderError(f"scans/index.csv:{k + 2}: scan id {sid:g} out of sequence (expected {k})")
        name = root / "scans" / f"{int(sid):06d}.csv"
        rows = read_csv(name, SCAN_HEADER, 4)
        try:
            scans.append(LidarScan(rows[:, 0], rows[:, 1:4], float(t0), float(t1)))
        except ValueError as exc:
            raise OrderError(f"{name}: scan {k}: {exc}") from exc
    fidx = read_csv(root / "images" / "index.csv", IMAGE_INDEX_HEADER, 2)
    frames = []
    for k, (fid, t) in enumerate(fidx):
        if fid != k:
            raise OrderError(f"images/index.csv:{k + 2}: frame id {fid:g} out of sequence (expected {k})")
        frames.append(CameraFrame(float(t), read_pgm(root / "images" / f"{int(fid):06d}.pgm")))
    gt = None
    if (root / "groundtruth.csv").exists():
        g = read_csv(root / "groundtruth.csv", GT_HEADER, 8)
        gt = PoseTrajectory(g[:, 0], g[:, 1:4], g[:, 4:8])
    camera, meta = (read_calibration(root / "calibration.txt") if (root / "calibration.txt").exists()
                    else (CameraModel(), {}))
    streams = SensorStreams(imu, scans, frames, gt, camera, meta)
    return streams.validate()
