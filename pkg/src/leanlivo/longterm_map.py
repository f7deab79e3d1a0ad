"""Long-term visual map: a coarse, capped archive of evicted visual points."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .voxel_map import RECORD_BYTES, MapMemoryReport, _fmt_line


@dataclass(eq=False)
class VisualPoint:
    """Map point carrying a three-level patch pyramid.

    ``reference_pose`` is the world-from-camera (R, t) at capture and
    ``reference_pixel`` the level-0 pixel the patches are centred on; both
    are needed to re-derive where each patch sample lies on the host plane.
    """
    position: np.ndarray
    patch_pyramid: np.ndarray
    reference_pose: Tuple[np.ndarray, np.ndarray]
    normal_hint: np.ndarray
    observation_score: float = 0.0
    last_observed: int = 0
    reference_pixel: Optional[np.ndarray] = None
    uid: int = 0
    n_observations: int = 0
    _samples: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        pyr = np.asarray(self.patch_pyramid, dtype=np.float32)
        if pyr.ndim != 3 or pyr.shape[0] != 3:
            raise ValueError("patch pyramid must have exactly 3 levels")
        if not np.all(np.isfinite(pyr)):
            raise ValueError("patch intensities must be finite")
        self.patch_pyramid = pyr
        n = np.asarray(self.normal_hint, dtype=float).reshape(3)
        nn = np.linalg.norm(n)
        if not nn > 0:
            raise ValueError("normal_hint must be non-zero")
        self.normal_hint = n / nn

    def priority(self):
        """Sort key: smaller is better (higher score, then earlier, then position, then uid)."""
        return (-self.observation_score, self.last_observed, tuple(self.position.tolist()), self.uid)


@dataclass
class AbsorbSummary:
    absorbed: int = 0
    displaced: int = 0
    cells_touched: int = 0


@dataclass
class LongTermMap:
    cell_size: float = 2.0
    edge_length: float = 800.0
    slide_threshold: float = 100.0
    max_points_per_cell: int = 5
    table: Dict[Tuple[int, int, int], List[VisualPoint]] = field(default_factory=dict)
    last_slide_center: Optional[np.ndarray] = None
    _cache: Optional[tuple] = field(default=None, repr=False)

    def _key(self, p):
        return tuple(int(v) for v in np.floor(np.asarray(p) / self.cell_size))

    def absorb(self, evicted) -> AbsorbSummary:
        summary = AbsorbSummary()
        touched = set()
        for vp in evicted:
            key = self._key(vp.position)
            cell = self.table.setdefault(key, [])
            cell.append(vp)
            touched.add(key)
        cap = self.max_points_per_cell
        incoming = {id(vp) for vp in evicted}
        for key in touched:
            cell = self.table[key]
            if len(cell) > cap:
                cell.sort(key=VisualPoint.priority)
                summary.displaced += len(cell) - cap
                del cell[cap:]
            summary.absorbed += sum(id(vp) in incoming for vp in cell)
        summary.cells_touched = len(touched)
        if evicted:
            self._cache = None
        return summary

    def points(self):
        out = []
        for key in sorted(self.table):
            out.extend(self.table[key])
        return out

    def _arrays(self):
        if self._cache is None:
            pts = self.points()
            if pts:
                pos = np.array([p.position for p in pts])
                nrm = np.array([p.normal_hint for p in pts])
                score = np.array([p.observation_score for p in pts])
            else:
                pos = nrm = np.zeros((0, 3))
                score = np.zeros(0)
            self._cache = (pts, pos, nrm, score)
        return self._cache

    def query_visible(self, camera_pose, camera, max_points=100, margin=0.0,
                      max_view_angle=np.deg2rad(60.0)):
        """Points projecting in-image with positive depth, ranked by score.

        ``camera_pose`` is world-from-camera (R_wc, t_wc).
        """
        pts, pos, nrm, score = self._arrays()
        if not pts:
            return []
        return select_visible(pts, pos, nrm, score, camera_pose, camera, max_points,
                              margin, max_view_angle)

    def slide(self, robot_position) -> int:
        pos = np.asarray(robot_position, dtype=float).reshape(3)
        if self.last_slide_center is None:
            self.last_slide_center = pos.copy()
            return 0
        if np.linalg.norm(pos - self.last_slide_center) < self.slide_threshold:
            return 0
        self.last_slide_center = pos.copy()
        evicted = 0
        half = 0.5 * self.edge_length
        for key in list(self.table):
            c = (np.array(key, dtype=float) + 0.5) * self.cell_size
            if np.any(np.abs(c - pos) > half):
                evicted += len(self.table.pop(key))
        if evicted:
            self._cache = None
        return evicted

    def memory_stats(self) -> MapMemoryReport:
        n = sum(len(v) for v in self.table.values())
        return MapMemoryReport(voxel_count=len(self.table), node_count=0, point_count=0,
                               plane_count=0, visual_point_count=n,
                               estimated_bytes=len(self.table) * RECORD_BYTES["voxel"]
                               + n * RECORD_BYTES["visual_point"])

    def snapshot_lines(self):
        lines = []
        for key in sorted(self.table):
            for vp in self.table[key]:
                lines.append(_fmt_line("P", key, 0, vp.position, vp.normal_hint,
                                       vp.observation_score))
        return lines


def select_visible(pts, pos, nrm, score, camera_pose, camera, max_points, margin=0.0,
                   max_view_angle=np.deg2rad(60.0)):
    R_wc, t_wc = camera_pose
    Xc = (pos - t_wc) @ R_wc
    ok = Xc[:, 2] > 1e-6
    uv = np.full((pos.shape[0], 2), -1.0)
    uv[ok] = camera.project(Xc[ok])
    ok &= camera.in_image(uv, margin)
    to_cam = t_wc - pos
    dist = np.linalg.norm(to_cam, axis=1)
    cosang = np.einsum("ij,ij->i", nrm, to_cam) / np.maximum(dist, 1e-12)
    ok &= cosang > np.cos(max_view_angle)
    cand = np.flatnonzero(ok)
    if cand.size == 0:
        return []
    # stable ordering: score descending, then uid
    uids = np.array([pts[i].uid for i in cand])
    order = np.lexsort((uids, -score[cand]))
    return [pts[i] for i in cand[order][:max_points]]


def absorb(ltm: LongTermMap, evicted) -> AbsorbSummary:
    return ltm.absorb(evicted)


def query_visible(ltm: LongTermMap, camera_pose, camera, max_points=100):
    return ltm.query_visible(camera_pose, camera, max_points)


def slide_longterm(ltm: LongTermMap, robot_position) -> int:
    return ltm.slide(robot_position)
