"""Direct photometric update against map visual points.

Each patch sample of a visual point is tied to a 3-D location on the
host plane: the reference pixel grid is back-projected from the capture
pose onto the plane (position, normal_hint). Residuals are the current
image at the reprojection of those locations minus the gain-scaled
reference intensities.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from . import so3
from .camera import (N_LEVELS, PATCH_SIZE, CameraModel, Image, PatchOutOfBoundsError,
                     extract_patch_pyramid, level_margin_ok, patch_offsets, to_level)
from .esikf import Measurement, iterated_update
from .longterm_map import VisualPoint
from .state import StateVector

log = logging.getLogger(__name__)

HUBER_DELTA = 0.1
PHOTO_SIGMA = 0.04
MAX_VIEW_ANGLE = np.deg2rad(60.0)
_uid_counter = itertools.count(1)


def patch_world_samples(vp: VisualPoint, camera: CameraModel, level: int):
    """World positions of the ``level`` patch samples on the host plane (64, 3)."""
    cached = vp._samples.get(level)
    if cached is not None:
        return cached
    R_wc, t_wc = vp.reference_pose
    uv_l = to_level(vp.reference_pixel, level) + patch_offsets(PATCH_SIZE)
    uv0 = (uv_l + 0.5) * float(1 << level) - 0.5
    rays = camera.pixel_rays(uv0) @ R_wc.T
    n = vp.normal_hint
    denom = rays @ n
    denom = np.where(np.abs(denom) < 1e-6, np.copysign(1e-6, denom), denom)
    s = ((vp.position - t_wc) @ n) / denom
    pts = t_wc + s[:, None] * rays
    vp._samples[level] = pts
    return pts


def _plane_samples(uv, position, normal, R_wc, t_wc, camera: CameraModel, level):
    """Back-projection of each point's ``level`` patch grid onto its host plane (N, 64, 3)."""
    uv_l = to_level(uv, level)[:, None, :] + patch_offsets(PATCH_SIZE)[None]
    uv0 = (uv_l + 0.5) * float(1 << level) - 0.5
    rays = camera.pixel_rays(uv0.reshape(-1, 2)).reshape(uv0.shape[0], -1, 3) @ R_wc.T
    denom = np.einsum("nsk,nk->ns", rays, normal)
    denom = np.where(np.abs(denom) < 1e-6, np.copysign(1e-6, denom), denom)
    s = np.einsum("nk,nk->n", position - t_wc, normal)[:, None] / denom
    return t_wc + s[..., None] * rays


def patch_support(vmap, uv, position, normal, R_wc, t_wc, camera: CameraModel,
                  min_cos=0.9, max_offset=0.05, min_known=0.75):
    """True where the coarsest patch lies on mapped structure of the host plane.

    Every sample that falls in a planar leaf must agree with the host
    plane, and at least ``min_known`` of the samples must fall in one.
    Patches straddling an edge or corner back-project partly into empty
    space or onto a differently oriented leaf; the plane-induced warp
    would be wrong for them.
    """
    if uv.shape[0] == 0:
        return np.zeros(0, dtype=bool)
    pts = _plane_samples(uv, position, normal, R_wc, t_wc, camera, N_LEVELS - 1)
    n, S, _ = pts.shape
    flat = pts.reshape(-1, 3)
    sid = vmap.query_sids(flat)
    known = sid >= 0
    nn, cc, _, _ = vmap.plane_arrays(np.where(known, sid, 0))
    host = np.repeat(normal, S, axis=0)
    agree = ((np.abs(np.einsum("ij,ij->i", nn, host)) > min_cos)
             & (np.abs(np.einsum("ij,ij->i", flat - cc, nn)) < max_offset))
    bad = (known & ~agree).reshape(n, S).any(axis=1)
    return ~bad & (known.reshape(n, S).mean(axis=1) >= min_known)


@dataclass
class PhotometricObservation:
    visual_point: VisualPoint
    level: int
    residual: np.ndarray
    jacobian: np.ndarray
    exposure_gain: float


@dataclass
class _Batch:
    residual: np.ndarray    # (N, S)
    jacobian: np.ndarray    # (N, S, 6)
    current: np.ndarray     # (N, S) sampled intensities
    reference: np.ndarray   # (N, S)


def _evaluate(state: StateVector, samples, reference, image: Image, camera: CameraModel,
              level: int, gain: float, jacobian=True):
    """Vectorised residuals for stacked samples (N, S, 3)."""
    R, p = state.rotation, state.position
    N, S, _ = samples.shape
    Xi = (samples.reshape(-1, 3) - p) @ R          # IMU frame
    Xc = Xi @ camera.R_ci.T + camera.t_ci
    uv0 = camera.project(Xc)
    uvl = to_level(uv0, level)
    if jacobian:
        val, g = image.sample(uvl, level, gradient=True)
    else:
        val = image.sample(uvl, level)
    val = val.reshape(N, S)
    res = val - gain * reference
    if not jacobian:
        return _Batch(res, None, val, reference)
    Jp = camera.project_jacobian(Xc)                  # (M, 2, 3)
    gJ = np.einsum("mi,mij->mj", g, Jp) / float(1 << level)   # dI/dXc (M, 3)
    gI = gJ @ camera.R_ci                             # dI/dXi
    J = np.empty((N * S, 6))
    # Xi(R exp(dtheta)) = Xi + Xi x dtheta, so dI/dtheta = gI x Xi; dXi/dp = -R^T
    J[:, :3] = np.cross(gI, Xi)
    J[:, 3:] = -gI @ R.T
    return _Batch(res, J.reshape(N, S, 6), val, reference)


def _stack(points: Sequence[VisualPoint], camera, level):
    samples = np.stack([patch_world_samples(vp, camera, level) for vp in points])
    ref = np.stack([vp.patch_pyramid[level].reshape(-1) for vp in points]).astype(float)
    return samples, ref


def estimate_gain(current, reference):
    """Median ratio of current to reference patch means."""
    mc = current.mean(axis=1)
    mr = reference.mean(axis=1)
    ok = mr > 1e-3
    if not np.any(ok):
        return 1.0
    return float(np.median(mc[ok] / mr[ok]))


def photometric_residuals(state: StateVector, points: Sequence[VisualPoint], image: Image,
                          camera: CameraModel, level: int, gain: Optional[float] = 1.0):
    """One :class:`PhotometricObservation` per usable point.

    ``gain=None`` estimates the exposure gain from the data. Points behind
    the camera or whose samples leave the level image are skipped.
    """
    if not points:
        return []
    samples, ref = _stack(points, camera, level)
    vis = _sample_visibility(state, samples, image, camera, level)
    if not np.any(vis):
        return []
    idx = np.flatnonzero(vis)
    b = _evaluate(state, samples[idx], ref[idx], image, camera, level, 1.0)
    if gain is None:
        gain = estimate_gain(b.current, b.reference)
    res = b.current - gain * b.reference
    return [PhotometricObservation(points[i], level, res[k], b.jacobian[k], gain)
            for k, i in enumerate(idx)]


def _sample_visibility(state, samples, image: Image, camera: CameraModel, level, margin=2.0):
    R, p = state.rotation, state.position
    N, S, _ = samples.shape
    Xc = ((samples.reshape(-1, 3) - p) @ R) @ camera.R_ci.T + camera.t_ci
    front = (Xc[:, 2] > 0.1).reshape(N, S)
    uv = np.full((N * S, 2), -1e9)
    f = front.reshape(-1)
    uv[f] = to_level(camera.project(Xc[f]), level)
    h, w = image.level_shape(level)
    inside = ((uv[:, 0] >= margin) & (uv[:, 0] <= w - 1 - margin)
              & (uv[:, 1] >= margin) & (uv[:, 1] <= h - 1 - margin)).reshape(N, S)
    return np.all(front & inside, axis=1)


def huber_weights(r, delta=HUBER_DELTA):
    a = np.abs(r)
    return np.where(a <= delta, 1.0, delta / np.maximum(a, 1e-300))


def visible_points(state: StateVector, points: Sequence[VisualPoint], image: Image,
                   camera: CameraModel, max_view_angle=MAX_VIEW_ANGLE, depth_grid=None):
    """Points usable at every pyramid level from the current estimate."""
    if not points:
        return []
    R_wc, t_wc = camera.camera_pose(state.rotation, state.position)
    pos = np.array([vp.position for vp in points])
    nrm = np.array([vp.normal_hint for vp in points])
    to_cam = t_wc - pos
    dist = np.linalg.norm(to_cam, axis=1)
    ok = np.einsum("ij,ij->i", nrm, to_cam) > np.cos(max_view_angle) * dist
    if depth_grid is not None:
        ok &= ~depth_grid.occluded(pos, state, camera)
    keep = [vp for vp, k in zip(points, ok) if k]
    for level in range(N_LEVELS):
        if not keep:
            break
        samples, _ = _stack(keep, camera, level)
        vis = _sample_visibility(state, samples, image, camera, level)
        keep = [vp for vp, k in zip(keep, vis) if k]
    return keep


@dataclass
class DepthGrid:
    """Coarse per-cell minimum depth from LiDAR points, for occlusion tests."""
    cell: int
    depth: np.ndarray

    @classmethod
    def from_points(cls, world_points, state: StateVector, camera: CameraModel, cell=8):
        gh = -(-camera.height // cell)
        gw = -(-camera.width // cell)
        depth = np.full((gh, gw), np.inf)
        pts = np.asarray(world_points, dtype=float).reshape(-1, 3)
        if pts.shape[0]:
            Xc = ((pts - state.position) @ state.rotation) @ camera.R_ci.T + camera.t_ci
            Xc = Xc[Xc[:, 2] > 0.1]
            uv = camera.project(Xc) if Xc.shape[0] else np.zeros((0, 2))
            ok = camera.in_image(uv)
            ij = np.floor(uv[ok] / cell).astype(int)
            np.minimum.at(depth, (ij[:, 1], ij[:, 0]), Xc[ok, 2])
        return cls(cell, depth)

    def occluded(self, world_points, state: StateVector, camera: CameraModel, tol=0.3, rel=0.05):
        pts = np.atleast_2d(world_points)
        Xc = ((pts - state.position) @ state.rotation) @ camera.R_ci.T + camera.t_ci
        out = np.zeros(pts.shape[0], dtype=bool)
        front = Xc[:, 2] > 0.1
        uv = np.full((pts.shape[0], 2), -1.0)
        uv[front] = camera.project(Xc[front])
        ok = front & camera.in_image(uv)
        ij = np.floor(uv[ok] / self.cell).astype(int)
        d = self.depth[ij[:, 1], ij[:, 0]]
        z = Xc[ok, 2]
        out[ok] = z > d + tol + rel * z
        return out


@dataclass
class VisualUpdateResult:
    state: StateVector
    covariance: np.ndarray
    n_points: int
    iterations: int = 0
    converged: bool = True
    cost_initial: float = 0.0
    cost_final: float = 0.0
    used: List[VisualPoint] = field(default_factory=list)
    gains: dict = field(default_factory=dict)


def visual_builder(points, image, camera, level, gain, sigma=PHOTO_SIGMA, huber=HUBER_DELTA,
                   max_point_error=0.3, log_costs=None):
    """Residual builder for :func:`iterated_update` at one pyramid level."""
    samples, ref = _stack(points, camera, level)
    S = samples.shape[1]

    def build(x):
        b = _evaluate(x, samples, ref, image, camera, level, gain)
        r = b.residual
        good = np.mean(np.abs(r), axis=1) < max_point_error
        if log_costs is not None:
            log_costs.append(float(np.mean(r[good] ** 2)) if np.any(good) else 0.0)
        if not np.any(good):
            return None
        r = r[good].reshape(-1)
        J = b.jacobian[good].reshape(-1, 6)
        w = huber_weights(r, huber)
        return Measurement(r, J, sigma * sigma / w, extra=good)
    return build


def visual_iterated_update(state: StateVector, P, points: Sequence[VisualPoint], image: Image,
                           camera: CameraModel, epsilon=1e-4, max_iters=5, levels=(2, 1, 0),
                           gain: Optional[float] = None, sigma=PHOTO_SIGMA, huber=HUBER_DELTA):
    """Coarse-to-fine iterated visual update.

    Every level runs a full iterated update from the same prior
    (``state``, ``P``); coarser levels only supply the starting iterate of
    the next, so the image information enters the covariance once.
    """
    points = list(points)
    if not points:
        return VisualUpdateResult(state, np.asarray(P, dtype=float), 0)
    x = state
    res = None
    gains = {}
    costs_first, costs_last = None, None
    iters = 0
    for level in levels:
        g = gain
        if g is None:
            samples, ref = _stack(points, camera, level)
            b = _evaluate(x, samples, ref, image, camera, level, 1.0, jacobian=False)
            g = estimate_gain(b.current, b.reference)
        gains[level] = g
        costs = []
        builder = visual_builder(points, image, camera, level, g, sigma, huber, log_costs=costs)
        res = iterated_update(state, P, builder, epsilon, max_iters, x_start=x)
        x = res.state
        iters += res.iterations
        if costs_first is None and costs:
            costs_first = costs[0]
        builder(x)  # logs the cost at the level's final iterate
        costs_last = costs[-1] if costs else 0.0
    good = res.measurement.extra if res.measurement is not None else None
    used = points if good is None else [vp for vp, k in zip(points, good) if k]
    return VisualUpdateResult(x, res.covariance, len(used), iters, res.converged,
                              costs_first or 0.0, costs_last or 0.0, used, gains)


def gradient_score(image: Image, uv):
    _, g = image.sample(to_level(uv, 0), 0, gradient=True)
    return np.linalg.norm(g, axis=1)


def attach_visual_points(vmap, image: Image, camera: CameraModel, state: StateVector, budget=40,
                         candidates=None, spacing=20.0, occupied_uv=None, frame_index=0,
                         min_gradient=5e-3, max_view_angle=MAX_VIEW_ANGLE, min_depth=0.5,
                         next_uid=None, max_range=60.0):
    """Attach up to ``budget`` new visual points to planar map nodes.

    ``candidates`` are world points (default: buffered points of the planar
    leaves within ``max_range`` of the camera). Scores are image-gradient magnitudes at the projections;
    selection is greedy with ``spacing`` pixels between accepted points
    and from ``occupied_uv`` (already tracked projections). Returns the
    list of new :class:`VisualPoint`.
    """
    if budget <= 0:
        return []
    next_uid = next_uid or (lambda: next(_uid_counter))
    R_wc, t_wc = camera.camera_pose(state.rotation, state.position)
    if candidates is None:
        candidates = _map_candidates(vmap, t_wc, max_range)
    pts = np.asarray(candidates, dtype=float).reshape(-1, 3)
    # cheap frustum cull before the map lookup
    Xc = (pts - t_wc) @ R_wc
    front = Xc[:, 2] > min_depth
    uv0 = camera.project(Xc[front])
    inb = (uv0[:, 0] >= 0) & (uv0[:, 0] < camera.width) & (uv0[:, 1] >= 0) & (uv0[:, 1] < camera.height)
    pts = pts[np.flatnonzero(front)[inb]]
    if pts.shape[0] == 0:
        return []
    sid = vmap.query_sids(pts)
    has = sid >= 0
    pts, sid = pts[has], sid[has]
    if pts.shape[0] == 0:
        return []
    normals, centers, _, _ = vmap.plane_arrays(sid)
    # snap onto the host plane
    pts = pts - normals * np.einsum("ij,ij->i", pts - centers, normals)[:, None]
    Xc = (pts - t_wc) @ R_wc
    ok = Xc[:, 2] > min_depth
    to_cam = t_wc - pts
    dist = np.linalg.norm(to_cam, axis=1)
    cosang = np.einsum("ij,ij->i", normals, to_cam) / np.maximum(dist, 1e-12)
    normals = normals * np.where(cosang < 0, -1.0, 1.0)[:, None]
    ok &= np.abs(cosang) > np.cos(max_view_angle)
    uv = np.full((pts.shape[0], 2), -1.0)
    uv[ok] = camera.project(Xc[ok])
    for level in range(N_LEVELS):
        ok &= level_margin_ok(image, to_level(uv, level), level)
    idx = np.flatnonzero(ok)
    if idx.size == 0:
        return []
    score = gradient_score(image, uv[idx])
    keep = score > min_gradient
    idx, score = idx[keep], score[keep]
    # best candidate per spacing cell; the greedy pass below enforces the spacing
    cells = np.floor(uv[idx] / spacing).astype(np.int64)
    ckey = cells[:, 0] * (int(camera.height // spacing) + 2) + cells[:, 1]
    o = np.lexsort((idx, -score, ckey))
    first = np.concatenate([[True], ckey[o][1:] != ckey[o][:-1]]) if o.size else np.zeros(0, bool)
    idx, score = idx[o[first]], score[o[first]]
    sup = patch_support(vmap, uv[idx], pts[idx], normals[idx], R_wc, t_wc, camera)
    idx, score = idx[sup], score[sup]
    order = np.lexsort((idx, -score))
    grid = {}
    cell = spacing

    def near(u):
        gx, gy = int(u[0] // cell), int(u[1] // cell)
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for q in grid.get((gx + dx, gy + dy), ()):
                    if (q[0] - u[0]) ** 2 + (q[1] - u[1]) ** 2 < spacing * spacing:
                        return True
        return False

    def occupy(u):
        grid.setdefault((int(u[0] // cell), int(u[1] // cell)), []).append(u)

    if occupied_uv is not None:
        for u in np.atleast_2d(occupied_uv):
            if u.size == 2:
                occupy(u)
    out = []
    for k in order:
        i = idx[k]
        u = uv[i]
        if near(u):
            continue
        try:
            pyr = extract_patch_pyramid(image, u)
        except PatchOutOfBoundsError:
            continue
        vp = VisualPoint(position=pts[i], patch_pyramid=pyr, reference_pose=(R_wc, t_wc),
                         normal_hint=normals[i], observation_score=0.0,
                         last_observed=frame_index, reference_pixel=u.copy(),
                         uid=next_uid())
        if not vmap.attach_visual_point(vp):
            continue
        occupy(u)
        out.append(vp)
        if len(out) >= budget:
            break
    return out


def _map_candidates(vmap, center=None, radius=None):
    return vmap.planar_points(center, radius)
