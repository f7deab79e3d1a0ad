"""Frame loop: propagation, LiDAR update, degeneracy, frame selection,
visual update, map maintenance and report assembly."""
from __future__ import annotations

import itertools
import logging
import time
import warnings
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import so3
from .camera import CameraModel
from .config import PipelineConfig
from .dataset import SensorStreams
from .degeneracy import DegeneracyState, constraint_spectrum, update_degeneracy
from .lidar import (UnderconstrainedWarning, UndistortionGapError, build_residuals,
                    lidar_builder, lidar_iterated_update, undistort)
from .longterm_map import LongTermMap, select_visible
from .metrics import MetricUndefinedError, PoseTrajectory, ate_rmse
from .report import RunReport
from .selector import SelectorState, adaptive_threshold, should_select
from .state import (GRAVITY, ImuSample, PropagationGapError, StateVector, default_covariance,
                    imu_process_noise, propagate)
from .visual import DepthGrid, attach_visual_points, visible_points, visual_iterated_update
from .voxel_map import VoxelMap

log = logging.getLogger(__name__)

MAX_PROPAGATION_GAP = 0.1
# frames closer than this to a scan end are processed right after its LiDAR update
SAME_TIME = 1e-6


class EmptyDatasetError(ValueError):
    category = "empty-dataset"


class StreamGapError(ValueError):
    category = "stream-gap"


def _finite_or_none(v):
    v = float(v)
    return v if np.isfinite(v) else None


def voxel_downsample(points, size):
    """First point (in scan order) of every ``size`` grid cell."""
    if size <= 0 or points.shape[0] == 0:
        return points
    k = np.floor(points / size).astype(np.int64)
    k -= k.min(axis=0)
    span = k.max(axis=0) + 1
    code = (k[:, 0] * span[1] + k[:, 1]) * span[2] + k[:, 2]
    _, first = np.unique(code, return_index=True)
    return points[np.sort(first)]


def static_alignment(accel, gyro):
    """Level rotation (yaw 0) and gyro bias from a stationary IMU segment."""
    a = np.mean(accel, axis=0)
    z = a / np.linalg.norm(a)
    # rotate body-frame specific force onto world +z
    axis = np.cross(z, [0.0, 0.0, 1.0])
    s, c = np.linalg.norm(axis), float(z[2])
    if s < 1e-12:
        R = np.eye(3) if c > 0 else so3.exp(np.array([np.pi, 0.0, 0.0]))
    else:
        R = so3.exp(axis / s * np.arctan2(s, c))
    return R, np.mean(gyro, axis=0)


class _VisualRegistry:
    """Local-map visual points by uid, with cached arrays for visibility."""

    def __init__(self):
        self.points = {}
        self._arrays = None

    def add(self, vps):
        for vp in vps:
            self.points[vp.uid] = vp
        if vps:
            self._arrays = None

    def remove(self, vps):
        for vp in vps:
            self.points.pop(vp.uid, None)
        if vps:
            self._arrays = None

    def arrays(self):
        if self._arrays is None:
            pts = [self.points[k] for k in sorted(self.points)]
            if pts:
                pos = np.array([p.position for p in pts])
                nrm = np.array([p.normal_hint for p in pts])
                score = np.array([p.observation_score for p in pts])
            else:
                pos = nrm = np.zeros((0, 3))
                score = np.zeros(0)
            self._arrays = (pts, pos, nrm, score)
        return self._arrays

    def scores_changed(self):
        self._arrays = None


@dataclass
class _Stats:
    min_eig: float = np.inf
    updates: int = 0


class Pipeline:
    """One run over a set of sensor streams. Use :func:`run_pipeline`."""

    def __init__(self, config: PipelineConfig, camera: CameraModel):
        self.cfg = config
        self.camera = camera
        self.vmap = VoxelMap(root_size=config.root_size, edge_length=config.local_edge,
                             slide_threshold=config.local_slide, min_points=config.min_points,
                             planarity_threshold=config.planarity_threshold,
                             node_cap=config.node_cap, point_sigma=config.beam_sigma,
                             seed=config.seed)
        self.ltm = LongTermMap(cell_size=config.ltm_cell, edge_length=config.ltm_edge,
                               slide_threshold=config.ltm_slide,
                               max_points_per_cell=config.ltm_cap)
        self.registry = _VisualRegistry()
        self.degen = DegeneracyState(threshold=config.degeneracy_threshold,
                                     required_consecutive=config.degeneracy_window)
        self.sel = SelectorState()
        self.sigma_min = 0.0
        self._uids = itertools.count(1)
        self.stats = _Stats()
        self.x: Optional[StateVector] = None
        self.P = None
        self.t = None
        self.last_world = np.zeros((0, 3))

    # ------------------------------------------------------------ helpers
    def _next_uid(self):
        return next(self._uids)

    def _check_cov(self):
        w = np.linalg.eigvalsh(self.P)
        self.stats.min_eig = min(self.stats.min_eig, float(w[0]) / max(float(w[-1]), 1e-300))
        self.stats.updates += 1

    def _propagate_to(self, t_target):
        """Forward-Euler propagation with zero-order hold on each IMU sample."""
        imu = self.imu
        if t_target <= self.t:
            return
        i = int(np.searchsorted(imu.t, self.t, side="right")) - 1
        if i < 0:
            raise StreamGapError(f"no IMU sample at or before t={self.t!r}")
        cfg = self.cfg
        while self.t < t_target:
            nxt = imu.t[i + 1] if i + 1 < len(imu) else np.inf
            b = min(nxt, t_target)
            dt = b - self.t
            if b - imu.t[i] >= MAX_PROPAGATION_GAP:
                raise StreamGapError(f"IMU gap after t={imu.t[i]!r} (next sample "
                                     f"{'none' if not np.isfinite(nxt) else repr(float(nxt))})")
            if dt > 0:
                u = ImuSample(imu.t[i], imu.gyro[i], imu.accel[i])
                Q = imu_process_noise(dt, cfg.gyro_noise, cfg.accel_noise, cfg.gyro_bias_rw,
                                      cfg.accel_bias_rw)
                try:
                    self.x, self.P = propagate(self.x, self.P, u, dt, Q)
                except PropagationGapError as exc:
                    raise StreamGapError(f"t={self.t!r}: {exc}") from None
            self.t = b
            if b == nxt:
                i += 1

    def _initial_state(self, streams: SensorStreams, t0):
        cfg = self.cfg
        gt = streams.groundtruth
        mode = cfg.init
        if mode == "auto":
            mode = "groundtruth" if gt is not None and len(gt) >= 2 else "static"
        if mode == "groundtruth":
            if gt is None or len(gt) < 2:
                raise EmptyDatasetError("init = groundtruth needs a ground-truth trajectory")
            j = int(np.clip(np.searchsorted(gt.t, t0), 1, len(gt) - 1))
            j = j - 1 if abs(gt.t[j - 1] - t0) <= abs(gt.t[j] - t0) else j
            k = min(j + 1, len(gt) - 1)
            k0 = k - 1
            v = (gt.positions[k] - gt.positions[k0]) / (gt.t[k] - gt.t[k0])
            return StateVector(rotation=gt.rotations[j], position=gt.positions[j], velocity=v)
        imu = streams.imu
        sel = imu.t <= imu.t[0] + 0.2
        R, bg = static_alignment(imu.accel[sel], imu.gyro[sel])
        return StateVector(rotation=R, gyro_bias=bg, gravity=GRAVITY)

    # --------------------------------------------------------------- stages
    def _lidar_stage(self, k, scan, x_start):
        cfg = self.cfg
        imu = self.imu
        t_imu, g, a = imu.window(scan.scan_start, scan.scan_end)
        try:
            local = undistort(scan, (t_imu, g, a), x_start)
        except UndistortionGapError as exc:
            raise StreamGapError(f"scan {k} at t={scan.scan_start!r}: {exc}") from None
        pts = voxel_downsample(local, cfg.downsample)
        first = not self.vmap.table
        rec = {"frame": k, "t": float(scan.scan_end)}
        if first:
            world = pts @ self.x.rotation.T + self.x.position
            # centre the map box before the first insertion
            self.vmap.slide(self.x.position)
            self.ltm.slide(self.x.position)
            self.vmap.update(world)
            rs = build_residuals(self.x, pts, self.vmap, cfg.lidar_gate, cfg.beam_sigma ** 2,
                                 sigma_gate=cfg.lidar_sigma_gate)
            normals, n_res, iters, conv = rs.normals, len(rs), 0, True
        else:
            builder = lidar_builder(pts, self.vmap, cfg.lidar_gate, cfg.beam_sigma ** 2,
                                    sigma_gate=cfg.lidar_sigma_gate)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", UnderconstrainedWarning)
                res = lidar_iterated_update(self.x, self.P, builder, cfg.epsilon, cfg.max_iters)
            self.x, self.P = res.state, res.covariance
            self._check_cov()
            normals = res.normals
            n_res = 0 if res.residuals is None else len(res.residuals)
            iters, conv = res.iterations, res.converged
            world = pts @ self.x.rotation.T + self.x.position
            self.vmap.update(world)
        spec = constraint_spectrum(normals) if len(normals) else constraint_spectrum(np.zeros((0, 3)))
        self.degen = update_degeneracy(self.degen, spec)
        self.sigma_min = spec.sigma_min if spec.valid else 0.0
        self.last_world = world
        rec.update({"sigma": [float(spec.sigma_min), float(spec.sigma_mid), float(spec.sigma_max)],
                    "valid": bool(spec.valid), "flag": bool(self.degen.flag),
                    "below": int(self.degen.below_count), "n_residuals": int(n_res),
                    "iterations": int(iters), "converged": bool(conv)})
        return rec

    def _maintain(self):
        pos = self.x.position
        evicted = self.vmap.slide(pos)
        self.registry.remove(evicted)
        if self.cfg.longterm_map:
            self.ltm.absorb(evicted)
            self.ltm.slide(pos)

    def _candidates(self, R_wc, t_wc):
        cfg = self.cfg
        cap = 4 * cfg.max_visual_points
        pts, pos, nrm, score = self.registry.arrays()
        out = []
        if pts:
            out += select_visible(pts, pos, nrm, score, (R_wc, t_wc), self.camera, cap,
                                  max_view_angle=np.deg2rad(cfg.max_view_angle_deg))
        if cfg.longterm_map:
            out += self.ltm.query_visible((R_wc, t_wc), self.camera, cap,
                                          max_view_angle=np.deg2rad(cfg.max_view_angle_deg))
        return out

    def _visual_stage(self, j, frame):
        cfg = self.cfg
        rec = {"frame": j, "t": float(frame.t), "sigma_min": float(self.sigma_min),
               "degenerate": bool(self.degen.flag)}
        pose = (self.x.rotation, self.x.position)
        if cfg.selector:
            tau = adaptive_threshold(self.sigma_min, cfg.thresholds)
            dec, self.sel = should_select(self.sel, pose, tau, self.degen.flag)
            selected, dpos, drot = dec.selected, dec.delta_position, dec.delta_rotation
            rec.update(tau_p=float(tau.tau_position), tau_r=float(tau.tau_rotation))
        else:
            s = self.sel
            if s.last_keyframe_pose is None:
                dpos = drot = np.inf
            else:
                dpos = float(np.linalg.norm(pose[1] - s.last_keyframe_pose[1]))
                drot = so3.angle(s.last_keyframe_pose[0].T @ pose[0])
            s.frames_seen += 1
            s.frames_selected += 1
            s.last_keyframe_pose = (pose[0].copy(), pose[1].copy())
            selected = True
            rec.update(tau_p=None, tau_r=None)
        rec.update(selected=bool(selected), dpos=_finite_or_none(dpos), drot=_finite_or_none(drot),
                   n_points=0, attached=0, cost0=None, cost1=None)
        if not (selected and cfg.visual):
            return rec
        img = frame.image()
        cam = self.camera
        R_wc, t_wc = cam.camera_pose(self.x.rotation, self.x.position)
        grid = DepthGrid.from_points(self.last_world, self.x, cam)
        cand = self._candidates(R_wc, t_wc)
        vis = visible_points(self.x, cand, img, cam, np.deg2rad(cfg.max_view_angle_deg), grid)
        vis.sort(key=lambda vp: (-vp.observation_score, vp.uid))
        use = vis[:cfg.max_visual_points]
        if use:
            res = visual_iterated_update(self.x, self.P, use, img, cam, cfg.epsilon, cfg.max_iters,
                                         gain=cfg.fixed_gain, sigma=cfg.photo_sigma,
                                         huber=cfg.huber_delta)
            self.x, self.P = res.state, res.covariance
            self._check_cov()
            for vp in res.used:
                vp.observation_score += 1.0
                vp.n_observations += 1
                vp.last_observed = j
            self.registry.scores_changed()
            self.ltm._cache = None
            rec.update(n_points=int(res.n_points), cost0=float(res.cost_initial),
                       cost1=float(res.cost_final))
        # suppress attachments next to points that are already tracked
        R_wc, t_wc = cam.camera_pose(self.x.rotation, self.x.position)
        if vis:
            Xc = (np.array([vp.position for vp in vis]) - t_wc) @ R_wc
            occ = cam.project(Xc[Xc[:, 2] > 1e-6])
        else:
            occ = None
        new = attach_visual_points(self.vmap, img, cam, self.x, cfg.visual_budget,
                                   spacing=cfg.visual_spacing, occupied_uv=occ, frame_index=j,
                                   max_view_angle=np.deg2rad(cfg.max_view_angle_deg),
                                   next_uid=self._next_uid)
        self.registry.add(new)
        rec["attached"] = len(new)
        return rec

    def _memory_record(self, k):
        loc = self.vmap.memory_stats()
        ltm = self.ltm.memory_stats()
        return {"frame": k, "voxels": loc.voxel_count, "nodes": loc.node_count,
                "visual_points": loc.visual_point_count, "ltm_points": ltm.visual_point_count,
                "local_bytes": loc.estimated_bytes, "longterm_bytes": ltm.estimated_bytes,
                "total_bytes": loc.estimated_bytes + ltm.estimated_bytes}

    # ------------------------------------------------------------------ run
    def run(self, streams: SensorStreams) -> RunReport:
        cfg = self.cfg
        if streams.is_empty() or not streams.scans or len(streams.imu) == 0:
            raise EmptyDatasetError("dataset has no IMU samples or no LiDAR scans")
        self.imu = streams.imu
        scans, frames = streams.scans, streams.frames
        t0 = scans[0].scan_start
        if self.imu.t[0] > t0 + 1e-9:
            raise StreamGapError(f"IMU starts at t={self.imu.t[0]!r} after the first scan "
                                 f"(t={t0!r})")
        self.x = self._initial_state(streams, t0)
        self.P = default_covariance()
        self.t = float(t0)
        report = RunReport(header={"config": cfg.as_dict(), "meta": dict(streams.meta)})
        traj_t, traj_R, traj_p = [], [], []
        fi = 0
        # frames before the first scan cannot be processed
        while fi < len(frames) and frames[fi].t < t0:
            report.selection.append({"frame": fi, "t": float(frames[fi].t), "selected": False,
                                     "skipped": "before-init"})
            fi += 1
        for k, scan in enumerate(scans):
            tic = time.perf_counter()
            visual_ms = 0.0
            while fi < len(frames) and frames[fi].t <= scan.scan_start:
                self._propagate_to(frames[fi].t)
                tv = time.perf_counter()
                report.selection.append(self._visual_stage(fi, frames[fi]))
                visual_ms += (time.perf_counter() - tv) * 1e3
                fi += 1
            self._propagate_to(scan.scan_start)
            x_start = self.x
            while fi < len(frames) and frames[fi].t < scan.scan_end - SAME_TIME:
                self._propagate_to(frames[fi].t)
                tv = time.perf_counter()
                report.selection.append(self._visual_stage(fi, frames[fi]))
                visual_ms += (time.perf_counter() - tv) * 1e3
                fi += 1
            self._propagate_to(scan.scan_end)
            tl = time.perf_counter()
            report.degeneracy.append(self._lidar_stage(k, scan, x_start))
            lidar_ms = (time.perf_counter() - tl) * 1e3
            while fi < len(frames) and frames[fi].t <= scan.scan_end + SAME_TIME:
                tv = time.perf_counter()
                report.selection.append(self._visual_stage(fi, frames[fi]))
                visual_ms += (time.perf_counter() - tv) * 1e3
                fi += 1
            self._maintain()
            traj_t.append(float(scan.scan_end))
            traj_R.append(self.x.rotation)
            traj_p.append(self.x.position)
            total_ms = (time.perf_counter() - tic) * 1e3
            report.timing.append({"frame": k, "lidar": lidar_ms, "visual": visual_ms,
                                  "total": total_ms})
            report.memory.append(self._memory_record(k))
        while fi < len(frames):
            last = self.imu.t[-1]
            if frames[fi].t > last + MAX_PROPAGATION_GAP:
                raise StreamGapError(f"camera frame {fi} at t={frames[fi].t!r} is beyond the IMU "
                                     f"stream (last sample t={last!r})")
            self._propagate_to(frames[fi].t)
            report.selection.append(self._visual_stage(fi, frames[fi]))
            fi += 1
        report.trajectory = PoseTrajectory.from_rotations(np.array(traj_t), np.array(traj_R),
                                                          np.array(traj_p))
        report.summary = self._summary(report, streams)
        return report

    def _summary(self, report: RunReport, streams: SensorStreams):
        ate = None
        if streams.groundtruth is not None:
            try:
                ate = ate_rmse(report.trajectory, streams.groundtruth)
            except MetricUndefinedError:
                ate = None
        mem = report.memory
        n_sel = sum(1 for r in report.selection if r.get("selected"))
        return {
            "ate_rmse": ate,
            "n_lidar_frames": len(report.degeneracy),
            "n_camera_frames": len(report.selection),
            "n_selected": n_sel,
            "selection_ratio": report.selection_ratio,
            "n_degenerate": sum(1 for r in report.degeneracy if r["flag"]),
            "max_voxels": max((r["voxels"] for r in mem), default=0),
            "peak_local_bytes": max((r["local_bytes"] for r in mem), default=0),
            "peak_longterm_bytes": max((r["longterm_bytes"] for r in mem), default=0),
            "peak_total_bytes": max((r["total_bytes"] for r in mem), default=0),
            "min_cov_eig_ratio": _finite_or_none(self.stats.min_eig),
            "n_updates": self.stats.updates,
        }


def scenario_config(scn, **overrides) -> PipelineConfig:
    """Default config with the selector thresholds of scenario ``scn``."""
    th = scn.thresholds
    kw = {"tau_position": float(th.tau_position),
          "tau_rotation_deg": float(np.rad2deg(th.tau_rotation))}
    kw.update(overrides)
    return PipelineConfig(**kw)


def run_pipeline(config: Optional[PipelineConfig], data) -> RunReport:
    """Run the estimator over ``data``: :class:`SensorStreams` or a scenario name.

    A scenario name is simulated with default noise and ``config.seed``;
    without a config the scenario's own selector thresholds are used.
    """
    if isinstance(data, str):
        from .sim import SensorNoiseSpec, scenario, simulate
        scn = scenario(data)
        config = config or scenario_config(scn)
        data = simulate(scn, SensorNoiseSpec(seed=config.seed))
    config = config or PipelineConfig()
    streams: SensorStreams = data
    return Pipeline(config, streams.camera).run(streams)
