"""Unified local map: hash-indexed root voxels holding three-level octrees.

Each leaf keeps exact sufficient statistics of every point it absorbed
(count, centred sum, centred outer-product sum) so plane refits are
incremental and order independent, plus a capped raw-point buffer that is
only used when a node has to subdivide.

Node statistics and plane parameters live in flat arrays owned by the map
(one row per node), so absorbing a scan, refitting planes and answering
queries are batched numpy operations rather than per-node Python work.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from ._validation import check_points

MAX_LEVELS = 3

# Bytes per stored record; the single source for memory accounting.
RECORD_BYTES = {
    "voxel": 64,        # hash entry + root pointer + key
    "node": 160,        # bounds, level, counters, sufficient statistics
    "point": 24,        # raw xyz, float64
    "plane": 352,       # centre, normal, 6x6 covariance, count, planarity
    "visual_point": 1024,  # position, 3x 8x8 float32 patches, pose, normal, score
}

_MASK64 = (1 << 64) - 1


class InsufficientPointsError(ValueError):
    """Fewer points than needed to fit a plane."""


@dataclass(frozen=True)
class VoxelKey:
    ix: int
    iy: int
    iz: int

    def as_tuple(self):
        return (self.ix, self.iy, self.iz)

    def center(self, root_size):
        return (np.array(self.as_tuple(), dtype=float) + 0.5) * root_size


def voxel_key(point, root_size: float) -> VoxelKey:
    p = np.asarray(point, dtype=float).reshape(3)
    if not np.all(np.isfinite(p)):
        raise ValueError("point must be finite")
    if not root_size > 0:
        raise ValueError("root_size must be positive")
    ix, iy, iz = (int(v) for v in np.floor(p / root_size))
    return VoxelKey(ix, iy, iz)


def voxel_keys(points, root_size):
    """Integer key array (N, 3) for many points."""
    return np.floor(np.asarray(points, dtype=float) / root_size).astype(np.int64)


@dataclass
class PlaneFeature:
    center: np.ndarray
    normal: np.ndarray
    uncertainty: np.ndarray   # 6x6 over (normal, center)
    point_count: int
    planarity: float

    @property
    def normal_cov(self):
        return self.uncertainty[:3, :3]

    @property
    def center_cov(self):
        return self.uncertainty[3:, 3:]

    def distance(self, points):
        return (np.atleast_2d(points) - self.center) @ self.normal


def _canonical_normal(n):
    # deterministic sign: largest-magnitude component positive
    k = int(np.argmax(np.abs(n)))
    return n if n[k] >= 0 else -n


def _canonical_normals(n):
    k = np.argmax(np.abs(n), axis=1)
    sgn = np.where(n[np.arange(n.shape[0]), k] >= 0, 1.0, -1.0)
    return n * sgn[:, None]


# status codes of a node's statistics
EMPTY, BUFFERING, UNDECIDED, NOT_PLANAR, PLANAR, SPLIT = range(6)
STATUS_NAMES = ("empty", "buffering", "undecided", "not_planar", "planar", "split")


def planes_from_stats(count, sum_c, outer_c, origin, sigma=0.02, planarity_threshold=0.1,
                      min_spread=0.0):
    """Batched plane fit from sufficient statistics.

    Returns ``(status, center, normal, uncertainty, ratio)`` with one row per
    input; rows whose status is not PLANAR carry undefined plane fields.
    """
    count = np.asarray(count, dtype=float)
    n = count.shape[0]
    mean = sum_c / count[:, None]
    cov = outer_c / count[:, None, None] - mean[:, :, None] * mean[:, None, :]
    cov = 0.5 * (cov + np.swapaxes(cov, 1, 2))
    lam, vec = np.linalg.eigh(cov)
    lam = np.maximum(lam, 0.0)
    spread2 = np.broadcast_to(np.asarray(min_spread, dtype=float) ** 2, (n,))
    status = np.full(n, UNDECIDED, dtype=np.int8)
    pos = lam[:, 1] > 0.0
    ratio = np.where(pos, lam[:, 0] / np.where(pos, lam[:, 1], 1.0), 1.0)
    spread_ok = lam[:, 1] >= spread2
    status[pos & spread_ok & (ratio >= planarity_threshold)] = NOT_PLANAR
    planar = pos & spread_ok & (ratio < planarity_threshold)
    status[planar] = PLANAR
    normal = _canonical_normals(vec[:, :, 0])
    s2 = sigma * sigma
    unc = np.zeros((n, 6, 6))
    if np.any(planar):
        cov_n = np.zeros((n, 3, 3))
        for m in (1, 2):
            gap = np.where(planar, lam[:, m] - lam[:, 0], 1.0)
            u = vec[:, :, m]
            w = (lam[:, m] + lam[:, 0]) / (gap * gap)
            cov_n += w[:, None, None] * u[:, :, None] * u[:, None, :]
        cov_n *= (s2 / count)[:, None, None]
        unc[:, :3, :3] = cov_n
        unc[:, 3:, 3:] = np.eye(3) * (s2 / count)[:, None, None]
    return status, origin + mean, normal, unc, ratio


def plane_from_stats(count, sum_c, outer_c, origin, sigma=0.02,
                     planarity_threshold=0.1, min_spread=0.0):
    """Fit a plane from sufficient statistics relative to ``origin``.

    Returns ``(status, plane)`` where status is one of ``"planar"``,
    ``"not_planar"`` or ``"undecided"`` (points not yet spread enough in two
    directions to judge).
    """
    st, c, nrm, unc, ratio = planes_from_stats(
        np.array([count]), np.asarray(sum_c, dtype=float)[None], np.asarray(outer_c, dtype=float)[None],
        np.asarray(origin, dtype=float)[None], sigma, planarity_threshold, min_spread)
    name = STATUS_NAMES[int(st[0])]
    if st[0] != PLANAR:
        return name, None
    return name, PlaneFeature(center=c[0], normal=nrm[0], uncertainty=unc[0],
                              point_count=int(count), planarity=float(ratio[0]))


def fit_plane(points, min_points=10, planarity_threshold=0.1, sigma=0.02):
    """Eigen-decomposition plane fit of a point set.

    Returns a :class:`PlaneFeature`, or ``None`` when the scatter is not
    planar. Raises :class:`InsufficientPointsError` below ``min_points``.
    """
    pts = check_points(points)
    if pts.shape[0] < min_points:
        raise InsufficientPointsError(f"{pts.shape[0]} points < {min_points}")
    origin = pts.mean(axis=0)
    c = pts - origin
    status, plane = plane_from_stats(pts.shape[0], c.sum(axis=0), c.T @ c, origin,
                                     sigma=sigma, planarity_threshold=planarity_threshold)
    return plane if status == "planar" else None


def _splitmix(x):
    # wrap-around arithmetic is intended
    with np.errstate(over="ignore"):
        x = (x + np.uint64(0x9E3779B97F4A7C15))
        x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return x ^ (x >> np.uint64(31))


class _NodeStore:
    """Struct-of-arrays storage for node statistics, plane parameters and
    octree links (``child[i, o]`` is the row of octant ``o`` or -1)."""

    def __init__(self, capacity=1024, node_cap=100):
        self.size = 0
        self.free: List[int] = []
        self.nodes: List[Optional["OctreeNode"]] = []
        self._alloc(capacity)
        # raw-point buffers live in a pool; ``slot[i]`` is the pool row of node i
        self.node_cap = node_cap
        self.pool = np.zeros((0, node_cap, 3))
        self.pool_used = 0
        self.pool_free: List[int] = []

    def buffers(self, sids):
        """Pool rows for ``sids``, assigning rows to nodes that have none."""
        need = sids[self.slot[sids] < 0]
        if need.size:
            rows = [self.pool_free.pop() for _ in range(min(len(self.pool_free), need.size))]
            extra = need.size - len(rows)
            if extra:
                if self.pool_used + extra > self.pool.shape[0]:
                    grown = np.zeros((max(2 * self.pool.shape[0], self.pool_used + extra, 256),
                                      self.node_cap, 3))
                    grown[:self.pool_used] = self.pool[:self.pool_used]
                    self.pool = grown
                rows += range(self.pool_used, self.pool_used + extra)
                self.pool_used += extra
            self.slot[need] = rows
        return self.slot[sids]

    def free_buffer(self, i):
        if self.slot[i] >= 0:
            self.pool_free.append(int(self.slot[i]))
            self.slot[i] = -1

    def _alloc(self, cap):
        old = getattr(self, "count", None)
        new = {
            "count": np.zeros(cap, dtype=np.int64),
            "sum": np.zeros((cap, 3)),
            "outer": np.zeros((cap, 3, 3)),
            "seen": np.zeros(cap, dtype=np.int64),
            "n_buf": np.zeros(cap, dtype=np.int64),
            "salt": np.zeros(cap, dtype=np.uint64),
            "origin": np.zeros((cap, 3)),
            "extent": np.zeros(cap),
            "level": np.zeros(cap, dtype=np.int8),
            "child": np.full((cap, 8), -1, dtype=np.int64),
            "slot": np.full(cap, -1, dtype=np.int64),
            "status": np.zeros(cap, dtype=np.int8),
            "alive": np.zeros(cap, dtype=bool),
            "p_center": np.zeros((cap, 3)),
            "p_normal": np.zeros((cap, 3)),
            "p_unc": np.zeros((cap, 6, 6)),
            "p_ncov": np.zeros((cap, 3, 3)),
            "p_cvar": np.zeros(cap),
            "p_ratio": np.zeros(cap),
        }
        if old is not None:
            n = old.shape[0]
            for k, arr in new.items():
                arr[:n] = getattr(self, k)
        for k, arr in new.items():
            setattr(self, k, arr)
        self.capacity = cap

    def new(self, node, salt):
        if self.free:
            i = self.free.pop()
            self.nodes[i] = node
        else:
            if self.size == self.capacity:
                self._alloc(2 * self.capacity)
            i = self.size
            self.size += 1
            self.nodes.append(node)
        self.reset(i)
        self.origin[i] = node.center
        self.extent[i] = node.size
        self.level[i] = node.level
        self.child[i] = -1
        self.slot[i] = -1
        self.salt[i] = np.uint64(salt)
        self.alive[i] = True
        return i

    def reset(self, i):
        self.count[i] = 0
        self.sum[i] = 0.0
        self.outer[i] = 0.0
        self.seen[i] = 0
        self.n_buf[i] = 0
        self.status[i] = EMPTY

    def release(self, i):
        self.alive[i] = False
        self.reset(i)
        self.child[i] = -1
        self.free_buffer(i)
        self.nodes[i] = None
        self.free.append(i)


class OctreeNode:
    __slots__ = ("level", "center", "size", "sid", "store", "children",
                 "visual_points")

    def __init__(self, level, center, size, sid, store):
        self.level = level
        self.center = center
        self.size = size
        self.sid = sid
        self.store = store
        self.children: Optional[List[Optional["OctreeNode"]]] = None
        self.visual_points: list = []

    # statistics are views into the map's node store
    @property
    def count(self):
        return int(self.store.count[self.sid])

    @property
    def n_buf(self):
        return int(self.store.n_buf[self.sid])

    @property
    def seen(self):
        return int(self.store.seen[self.sid])

    @property
    def status(self):
        return STATUS_NAMES[int(self.store.status[self.sid])]

    @property
    def has_plane(self):
        return self.store.status[self.sid] == PLANAR

    @property
    def plane(self) -> Optional[PlaneFeature]:
        s, i = self.store, self.sid
        if s.status[i] != PLANAR:
            return None
        return PlaneFeature(center=s.p_center[i].copy(), normal=s.p_normal[i].copy(),
                            uncertainty=s.p_unc[i].copy(), point_count=int(s.count[i]),
                            planarity=float(s.p_ratio[i]))

    @property
    def points(self):
        row = self.store.slot[self.sid]
        if row < 0:
            return np.zeros((0, 3))
        return self.store.pool[row, :self.n_buf]

    def bounds(self):
        h = 0.5 * self.size
        return self.center - h, self.center + h

    def octant(self, pts):
        d = pts >= self.center
        return d[:, 0] * 4 + d[:, 1] * 2 + d[:, 2] * 1

    def iter_nodes(self):
        yield self
        if self.children is not None:
            for c in self.children:
                if c is not None:
                    yield from c.iter_nodes()

    def leaf_for(self, p):
        node = self
        while node.children is not None:
            o = (p[0] >= node.center[0]) * 4 + (p[1] >= node.center[1]) * 2 + (p[2] >= node.center[2])
            child = node.children[o]
            if child is None:
                return None
            node = child
        return node


@dataclass
class UpdateSummary:
    new_voxels: int = 0
    refit_planes: int = 0
    subdivided_nodes: int = 0
    points_inserted: int = 0
    points_dropped: int = 0


@dataclass
class MapMemoryReport:
    voxel_count: int = 0
    node_count: int = 0
    point_count: int = 0
    plane_count: int = 0
    visual_point_count: int = 0
    estimated_bytes: int = 0

    def as_dict(self):
        return dict(self.__dict__)


_KEY_BITS = 21
_KEY_OFF = 1 << (_KEY_BITS - 1)


def _encode(keys):
    k = keys + _KEY_OFF
    if k.size and (k.min() < 0 or k.max() >= (1 << _KEY_BITS)):
        raise ValueError("voxel key out of the supported range")
    return (k[:, 0] << (2 * _KEY_BITS)) | (k[:, 1] << _KEY_BITS) | k[:, 2]


def _groups(keys):
    """Sort order and [start, end) runs of identical key rows."""
    order = np.lexsort((keys[:, 2], keys[:, 1], keys[:, 0]))
    sk = keys[order]
    n = sk.shape[0]
    brk = np.flatnonzero(np.any(np.diff(sk, axis=0) != 0, axis=1)) + 1
    starts = np.concatenate([[0], brk]).astype(np.int64)
    ends = np.concatenate([brk, [n]]).astype(np.int64)
    return order, sk, starts, ends


@dataclass
class VoxelMap:
    """Hash map VoxelKey -> root :class:`OctreeNode` with sliding bounds."""
    root_size: float = 0.5
    edge_length: float = 200.0
    slide_threshold: float = 20.0
    min_points: int = 10
    planarity_threshold: float = 0.1
    node_cap: int = 100
    point_sigma: float = 0.02
    seed: int = 0
    table: Dict[Tuple[int, int, int], OctreeNode] = field(default_factory=dict)
    last_slide_center: Optional[np.ndarray] = None

    def __post_init__(self):
        self.store = _NodeStore(node_cap=self.node_cap)
        self._n_visual = 0
        self._index = None

    @property
    def max_voxels(self) -> int:
        """Resident root-voxel budget, (edge_length / root_size)^3."""
        return int(np.floor((self.edge_length / self.root_size) ** 3 + 1e-9))

    # ----------------------------------------------------------------- insert
    def _new_root(self, key):
        center = (np.array(key, dtype=float) + 0.5) * self.root_size
        salt = hash((self.seed, key[0], key[1], key[2])) & _MASK64
        node = OctreeNode(0, center, self.root_size, -1, self.store)
        node.sid = self.store.new(node, salt)
        return node

    def _make_child(self, node, o):
        S = self.store
        q = 0.25 * node.size
        offs = np.array([(o >> 2) & 1, (o >> 1) & 1, o & 1], dtype=float) * 2.0 - 1.0
        salt = int(_splitmix(np.uint64(int(S.salt[node.sid]) ^ (o + 1)))) & _MASK64
        child = OctreeNode(node.level + 1, node.center + offs * q, 0.5 * node.size, -1, S)
        child.sid = S.new(child, salt)
        node.children[o] = child
        S.child[node.sid, o] = child.sid
        return child

    def _descend(self, sids, pts, create):
        """Leaf row for each (start row, point); -1 where a child is missing."""
        S = self.store
        sids = sids.copy()
        active = np.flatnonzero(S.status[sids] == SPLIT)
        while active.size:
            cur = sids[active]
            d = pts[active] >= S.origin[cur]
            o = d[:, 0] * 4 + d[:, 1] * 2 + d[:, 2]
            ch = S.child[cur, o]
            miss = ch < 0
            if np.any(miss):
                if create:
                    for sid, oc in set(zip(cur[miss].tolist(), o[miss].tolist())):
                        self._make_child(S.nodes[sid], oc)
                    ch = S.child[cur, o]
                else:
                    sids[active[miss]] = -1
                    active, ch = active[~miss], ch[~miss]
            sids[active] = ch
            active = active[S.status[ch] == SPLIT]
        return sids

    def _absorb_rows(self, rows, pts, summary):
        """Group points by leaf row (stable) and absorb them."""
        order = np.argsort(rows, kind="stable")
        r = rows[order]
        brk = np.flatnonzero(np.diff(r)) + 1
        starts = np.concatenate([[0], brk]).astype(np.int64)
        counts = np.diff(np.concatenate([starts, [r.size]])).astype(np.int64)
        self._absorb(r[starts], pts[order], starts, counts, summary)

    def _absorb(self, sids, pts, starts, counts, summary):
        """Add point runs ``pts[starts[i]:starts[i]+counts[i]]`` to leaf row ``sids[i]``."""
        if sids.size == 0:
            return
        S = self.store
        gid = np.repeat(np.arange(sids.size), counts)
        c = pts - S.origin[sids][gid]
        S.count[sids] += counts
        S.sum[sids] += np.add.reduceat(c, starts, axis=0)
        S.outer[sids] += np.add.reduceat(c[:, :, None] * c[:, None, :], starts, axis=0)
        # capped buffer with deterministic reservoir retention
        cap = self.node_cap
        nb = S.n_buf[sids]
        take = np.minimum(cap - nb, counts)
        rows = S.buffers(sids)
        rank = np.arange(pts.shape[0]) - np.repeat(starts, counts)
        fill = rank < take[gid]
        S.pool[rows[gid[fill]], nb[gid[fill]] + rank[fill]] = pts[fill]
        S.n_buf[sids] += take
        rest = np.flatnonzero(~fill)
        if rest.size:
            g = gid[rest]
            idx = (S.seen[sids][g] + rank[rest] + 1).astype(np.uint64)
            j = _splitmix(idx ^ S.salt[sids][g]) % idx
            hit = j < np.uint64(cap)
            # later points overwrite earlier ones, as a sequential reservoir would
            for k in np.flatnonzero(hit).tolist():
                S.pool[rows[g[k]], int(j[k])] = pts[rest[k]]
        S.seen[sids] += counts
        self._refit(sids, summary)

    def _refit(self, sids, summary):
        S = self.store
        enough = S.count[sids] >= self.min_points
        S.status[sids[~enough]] = BUFFERING
        if not np.any(enough):
            return
        fs = sids[enough]
        st, ctr, nrm, unc, ratio = planes_from_stats(
            S.count[fs], S.sum[fs], S.outer[fs], S.origin[fs], self.point_sigma,
            self.planarity_threshold, 0.05 * S.extent[fs])
        pl = st == PLANAR
        S.p_center[fs[pl]] = ctr[pl]
        S.p_normal[fs[pl]] = nrm[pl]
        S.p_unc[fs[pl]] = unc[pl]
        S.p_ncov[fs[pl]] = unc[pl, :3, :3]
        S.p_cvar[fs[pl]] = unc[pl, 3, 3]
        S.p_ratio[fs[pl]] = ratio[pl]
        summary.refit_planes += int(pl.sum())
        split = (st == NOT_PLANAR) & (S.level[fs] < MAX_LEVELS - 1)
        S.status[fs] = st
        for sid in fs[split].tolist():
            self._split(S.nodes[sid], summary)

    def _split(self, node, summary):
        S = self.store
        pts = node.points.copy()
        vps = node.visual_points
        node.children = [None] * 8
        S.free_buffer(node.sid)
        S.reset(node.sid)
        S.status[node.sid] = SPLIT
        node.visual_points = []
        summary.subdivided_nodes += 1
        if pts.shape[0]:
            rows = self._descend(np.full(pts.shape[0], node.sid, dtype=np.int64), pts, True)
            self._absorb_rows(rows, pts, summary)
        for vp in vps:
            leaf = self._leaf_or_create(node, vp.position)
            leaf.visual_points.append(vp)

    def _leaf_or_create(self, node, p):
        while node.children is not None:
            o = int((p[0] >= node.center[0]) * 4 + (p[1] >= node.center[1]) * 2 + (p[2] >= node.center[2]))
            node = node.children[o] or self._make_child(node, o)
        return node

    def update(self, world_points) -> UpdateSummary:
        pts = check_points(world_points)
        summary = UpdateSummary(points_inserted=int(pts.shape[0]))
        if pts.shape[0] == 0:
            return summary
        keys = voxel_keys(pts, self.root_size)
        codes = _encode(keys)
        uniq, first, inv = np.unique(codes, return_index=True, return_inverse=True)
        inv = inv.ravel()
        icodes, isids = self._root_index()
        pos = np.clip(np.searchsorted(icodes, uniq), 0, max(icodes.size - 1, 0))
        root = np.full(uniq.size, -1, dtype=np.int64)
        if icodes.size:
            hit = icodes[pos] == uniq
            root[hit] = isids[pos[hit]]
        new = np.flatnonzero(root < 0)
        room = self.max_voxels - len(self.table)
        if new.size > room:
            # the voxel budget is exhausted: keep the new voxels nearest the map box centre
            center = self.last_slide_center
            if center is None:
                center = pts.mean(axis=0)
            c = (keys[first[new]] + 0.5) * self.root_size
            d = np.abs(c - center).max(axis=1)
            drop = new[np.argsort(d, kind="stable")[max(room, 0):]]
            keep_pt = ~np.isin(inv, drop)
            summary.points_dropped = int((~keep_pt).sum())
            summary.points_inserted -= summary.points_dropped
            new = np.setdiff1d(new, drop)
            pts, inv = pts[keep_pt], inv[keep_pt]
            if pts.shape[0] == 0:
                return summary
        if new.size:
            for i in new.tolist():
                key = tuple(int(v) for v in keys[first[i]])
                node = self._new_root(key)
                self.table[key] = node
                root[i] = node.sid
            summary.new_voxels = int(new.size)
            at = np.searchsorted(icodes, uniq[new])
            self._index = (np.insert(icodes, at, uniq[new]), np.insert(isids, at, root[new]))
        rows = self._descend(root[inv], pts, True)
        self._absorb_rows(rows, pts, summary)
        return summary

    # ------------------------------------------------------------------ query
    def _root_index(self):
        """Sorted encoded root keys and their store rows."""
        if self._index is None:
            if self.table:
                codes = _encode(np.array(list(self.table.keys()), dtype=np.int64))
                sids = np.fromiter((r.sid for r in self.table.values()), dtype=np.int64,
                                   count=len(self.table))
                order = np.argsort(codes)
                self._index = (codes[order], sids[order])
            else:
                self._index = (np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))
        return self._index

    def query_sids(self, world_points):
        """Node-store row of the planar leaf containing each point (-1 if none)."""
        pts = np.asarray(world_points, dtype=float).reshape(-1, 3)
        out = np.full(pts.shape[0], -1, dtype=np.int64)
        codes, sids = self._root_index()
        if pts.shape[0] == 0 or codes.size == 0:
            return out
        try:
            q = _encode(voxel_keys(pts, self.root_size))
        except ValueError:
            return out
        pos = np.clip(np.searchsorted(codes, q), 0, codes.size - 1)
        found = np.flatnonzero(codes[pos] == q)
        if found.size == 0:
            return out
        rows = self._descend(sids[pos[found]], pts[found], False)
        ok = rows >= 0
        rows[ok] = np.where(self.store.status[rows[ok]] == PLANAR, rows[ok], -1)
        out[found] = rows
        return out

    def plane_arrays(self, sids):
        """(normal, center, normal_cov, center_var) rows for store indices."""
        S = self.store
        return S.p_normal[sids], S.p_center[sids], S.p_ncov[sids], S.p_cvar[sids]

    def plane_at(self, sid) -> Optional[PlaneFeature]:
        S = self.store
        if sid < 0 or S.status[sid] != PLANAR:
            return None
        return PlaneFeature(center=S.p_center[sid].copy(), normal=S.p_normal[sid].copy(),
                            uncertainty=S.p_unc[sid].copy(), point_count=int(S.count[sid]),
                            planarity=float(S.p_ratio[sid]))

    def query(self, world_point) -> Optional[PlaneFeature]:
        p = np.asarray(world_point, dtype=float).reshape(1, 3)
        return self.plane_at(int(self.query_sids(p)[0]))

    def query_many(self, world_points):
        """Plane for each point: (list of planes, index array with -1 for none)."""
        sid = self.query_sids(world_points)
        idx = np.full(sid.shape[0], -1, dtype=np.int64)
        ok = sid >= 0
        if not np.any(ok):
            return [], idx
        uniq, inv = np.unique(sid[ok], return_inverse=True)
        idx[ok] = inv
        return [self.plane_at(int(s)) for s in uniq], idx

    def leaf_at(self, world_point):
        p = np.asarray(world_point, dtype=float).reshape(3)
        key = tuple(int(v) for v in np.floor(p / self.root_size))
        node = self.table.get(key)
        return None if node is None else node.leaf_for(p)

    # ---------------------------------------------------------------- visual
    def attach_visual_point(self, vp) -> bool:
        leaf = self.leaf_at(vp.position)
        if leaf is None:
            return False
        leaf.visual_points.append(vp)
        self._n_visual += 1
        return True

    def visual_points(self):
        out = []
        for node in self.table.values():
            for n in node.iter_nodes():
                if n.visual_points:
                    out.extend(n.visual_points)
        return out

    def planar_points(self, center=None, radius=None):
        """Buffered raw points of planar leaves (visual-point candidates).

        With ``center`` and ``radius`` only leaves whose plane centroid lies
        within ``radius`` of ``center`` contribute.
        """
        S = self.store
        n = S.size
        mask = (S.status[:n] == PLANAR) & (S.slot[:n] >= 0)
        if center is not None and radius is not None:
            d2 = ((S.p_center[:n] - np.asarray(center, dtype=float)) ** 2).sum(axis=1)
            mask &= d2 <= radius * radius
        rows = np.flatnonzero(mask)
        if rows.size == 0:
            return np.zeros((0, 3))
        cnt = S.n_buf[rows]
        base = np.repeat(S.slot[rows] * self.node_cap - np.cumsum(cnt) + cnt, cnt)
        flat = base + np.arange(int(cnt.sum()))
        return S.pool.reshape(-1, 3)[flat]

    # ---------------------------------------------------------------- sliding
    def inside(self, centers, center=None):
        center = self.last_slide_center if center is None else center
        return np.all(np.abs(np.asarray(centers) - center) <= 0.5 * self.edge_length, axis=-1)

    def slide(self, robot_position) -> list:
        """Recentre the map if the robot moved past the slide threshold.

        Returns the visual points of evicted voxels; everything else in an
        evicted voxel is dropped.
        """
        pos = np.asarray(robot_position, dtype=float).reshape(3)
        if self.last_slide_center is None:
            self.last_slide_center = pos.copy()
            return []
        if np.linalg.norm(pos - self.last_slide_center) < self.slide_threshold:
            return []
        self.last_slide_center = pos.copy()
        if not self.table:
            return []
        keys = list(self.table.keys())
        centers = (np.array(keys, dtype=float) + 0.5) * self.root_size
        out = ~self.inside(centers)
        evicted = []
        for i in np.flatnonzero(out):
            node = self.table.pop(keys[i])
            for n in node.iter_nodes():
                evicted.extend(n.visual_points)
                self.store.release(n.sid)
        self._n_visual -= len(evicted)
        if np.any(out):
            self._index = None
        return evicted

    # ------------------------------------------------------------- reporting
    def memory_stats(self) -> MapMemoryReport:
        S = self.store
        alive = S.alive[:S.size]
        rep = MapMemoryReport()
        rep.voxel_count = len(self.table)
        rep.node_count = int(alive.sum())
        rep.point_count = int(S.n_buf[:S.size][alive].sum())
        rep.plane_count = int((S.status[:S.size][alive] == PLANAR).sum())
        rep.visual_point_count = self._n_visual
        rep.estimated_bytes = (rep.voxel_count * RECORD_BYTES["voxel"]
                               + rep.node_count * RECORD_BYTES["node"]
                               + rep.point_count * RECORD_BYTES["point"]
                               + rep.plane_count * RECORD_BYTES["plane"]
                               + rep.visual_point_count * RECORD_BYTES["visual_point"])
        return rep

    def recount(self) -> MapMemoryReport:
        """Same as :meth:`memory_stats` but by walking every octree (for checks)."""
        rep = MapMemoryReport(voxel_count=len(self.table))
        for root in self.table.values():
            for n in root.iter_nodes():
                rep.node_count += 1
                rep.point_count += n.n_buf
                rep.plane_count += bool(n.has_plane)
                rep.visual_point_count += len(n.visual_points)
        rep.estimated_bytes = (rep.voxel_count * RECORD_BYTES["voxel"]
                               + rep.node_count * RECORD_BYTES["node"]
                               + rep.point_count * RECORD_BYTES["point"]
                               + rep.plane_count * RECORD_BYTES["plane"]
                               + rep.visual_point_count * RECORD_BYTES["visual_point"])
        return rep

    def snapshot_lines(self):
        """Line-oriented export, one record per leaf node and visual point.

        ``V ix iy iz level cx cy cz nx ny nz count`` for geometry (plane
        fields are ``nan`` for leaves without a plane) and
        ``P ix iy iz level px py pz nx ny nz score`` for visual points.
        """
        lines = []
        S = self.store
        for key in sorted(self.table):
            root = self.table[key]
            for n in root.iter_nodes():
                if n.children is not None:
                    continue
                if S.status[n.sid] == PLANAR:
                    c, nn = S.p_center[n.sid], S.p_normal[n.sid]
                else:
                    c = nn = np.full(3, np.nan)
                lines.append(_fmt_line("V", key, n.level, c, nn, n.count))
                for vp in n.visual_points:
                    lines.append(_fmt_line("P", key, n.level, vp.position, vp.normal_hint,
                                           vp.observation_score))
        return lines


def _fmt_line(kind, key, level, a, b, last):
    vals = " ".join(repr(float(v)) for v in (*a, *b))
    return f"{kind} {key[0]} {key[1]} {key[2]} {level} {vals} {last!r}"


def parse_snapshot_line(line):
    f = line.split()
    kind = f[0]
    key = tuple(int(v) for v in f[1:4])
    level = int(f[4])
    a = np.array([float(v) for v in f[5:8]])
    b = np.array([float(v) for v in f[8:11]])
    last = float(f[11]) if kind == "P" else int(f[11])
    return kind, key, level, a, b, last


def update_map(vmap: VoxelMap, world_points) -> UpdateSummary:
    return vmap.update(world_points)


def query_plane(vmap: VoxelMap, world_point) -> Optional[PlaneFeature]:
    return vmap.query(world_point)


def slide(vmap: VoxelMap, robot_position):
    return vmap.slide(robot_position)


def memory_stats(vmap: VoxelMap) -> MapMemoryReport:
    return vmap.memory_stats()
