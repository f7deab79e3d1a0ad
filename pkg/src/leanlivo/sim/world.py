"""Planes-only worlds with procedural textures and vectorised ray casting."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

TEXTURES = ("constant", "checker", "smooth")


@dataclass(frozen=True)
class Texture:
    """Procedural scalar field over in-plane coordinates (s, t) in metres.

    ``smooth`` is a sum of sinusoids with wavelengths in
    ``[wavelength, 3 * wavelength]``, directions and phases drawn from
    ``seed``; ``checker`` alternates ``lo``/``hi`` squares of side
    ``wavelength``.
    """
    kind: str = "smooth"
    wavelength: float = 1.0
    value: float = 0.5
    lo: float = 0.2
    hi: float = 0.8
    seed: int = 0
    n_waves: int = 6

    def __post_init__(self):
        if self.kind not in TEXTURES:
            raise ValueError(f"unknown texture {self.kind!r}")
        if not self.wavelength > 0:
            raise ValueError("texture wavelength must be positive")

    def _waves(self):
        rng = np.random.Generator(np.random.Philox(key=[self.seed & 0xFFFFFFFFFFFFFFFF, 0x7E57]))
        ang = rng.uniform(0, np.pi, self.n_waves)
        lam = self.wavelength * rng.uniform(1.0, 3.0, self.n_waves)
        k = np.column_stack([np.cos(ang), np.sin(ang)]) * (2 * np.pi / lam)[:, None]
        ph = rng.uniform(0, 2 * np.pi, self.n_waves)
        amp = rng.uniform(0.5, 1.0, self.n_waves)
        return k, ph, amp / amp.sum()

    def __call__(self, s, t):
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            return np.full(s.shape, self.value)
        if self.kind == "checker":
            q = (np.floor(s / self.wavelength) + np.floor(t / self.wavelength)) % 2
            return np.where(q == 0, self.lo, self.hi)
        k, ph, amp = self._waves()
        arg = np.multiply.outer(s, k[:, 0]) + np.multiply.outer(t, k[:, 1]) + ph
        return 0.5 + 0.4 * (np.sin(arg) @ amp)


@dataclass(frozen=True)
class Plane:
    """Finite rectangle: ``center + s * u + t * v`` with |s| <= half_u, |t| <= half_v."""
    center: np.ndarray
    normal: np.ndarray
    u: np.ndarray
    half_u: float
    half_v: float
    texture: Texture = Texture("constant")

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        n = n / np.linalg.norm(n)
        u = np.asarray(self.u, dtype=float)
        u = u - n * (u @ n)
        u = u / np.linalg.norm(u)
        if not (self.half_u > 0 and self.half_v > 0):
            raise ValueError("plane extents must be positive")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "u", u)

    @property
    def v(self):
        return np.cross(self.normal, self.u)

    @property
    def radius(self):
        return float(np.hypot(self.half_u, self.half_v))

    def distance(self, pts):
        return (np.asarray(pts) - self.center) @ self.normal


def wall(a, b, z0, z1, texture=Texture("constant")) -> Plane:
    """Vertical rectangle over the 2-D segment a -> b, heights z0..z1."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = b - a
    L = np.linalg.norm(d)
    u = np.array([d[0], d[1], 0.0]) / L
    n = np.array([-u[1], u[0], 0.0])
    c = np.array([(a[0] + b[0]) / 2, (a[1] + b[1]) / 2, (z0 + z1) / 2])
    # u along the segment, v = n x u = +z
    return Plane(c, n, u, L / 2, (z1 - z0) / 2, texture)


def horizontal(x0, x1, y0, y1, z, texture=Texture("constant"), up=True) -> Plane:
    c = np.array([(x0 + x1) / 2, (y0 + y1) / 2, z])
    n = np.array([0.0, 0.0, 1.0 if up else -1.0])
    return Plane(c, n, np.array([1.0, 0.0, 0.0]), (x1 - x0) / 2, (y1 - y0) / 2, texture)


def segmented_wall(a, b, z0, z1, max_len, texture_fn):
    """Split a long wall into pieces of at most ``max_len`` (better culling)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = max(1, int(np.ceil(np.linalg.norm(b - a) / max_len)))
    out = []
    for i in range(n):
        pa = a + (b - a) * i / n
        pb = a + (b - a) * (i + 1) / n
        out.append(wall(pa, pb, z0, z1, texture_fn(i)))
    return out


def segmented_horizontal(x0, x1, y0, y1, z, max_len, texture_fn, up=True):
    nx = max(1, int(np.ceil((x1 - x0) / max_len)))
    ny = max(1, int(np.ceil((y1 - y0) / max_len)))
    out = []
    for i in range(nx):
        for j in range(ny):
            out.append(horizontal(x0 + (x1 - x0) * i / nx, x0 + (x1 - x0) * (i + 1) / nx,
                                  y0 + (y1 - y0) * j / ny, y0 + (y1 - y0) * (j + 1) / ny,
                                  z, texture_fn(i * ny + j), up))
    return out


def box(cx, cy, hx, hy, z0, z1, texture_fn):
    """Four vertical faces of an axis-aligned box (a pillar or building)."""
    corners = [(cx - hx, cy - hy), (cx + hx, cy - hy), (cx + hx, cy + hy), (cx - hx, cy + hy)]
    return [wall(corners[i], corners[(i + 1) % 4], z0, z1, texture_fn(i)) for i in range(4)]


@dataclass
class WorldModel:
    planes: List[Plane]
    background: float = 0.0
    _arrays: Optional[tuple] = field(default=None, repr=False)

    def __post_init__(self):
        if not self.planes:
            raise ValueError("world needs at least one plane")

    def arrays(self):
        if self._arrays is None:
            P = self.planes
            self._arrays = (np.array([p.center for p in P]), np.array([p.normal for p in P]),
                            np.array([p.u for p in P]), np.array([p.v for p in P]),
                            np.array([p.half_u for p in P]), np.array([p.half_v for p in P]),
                            np.array([p.radius for p in P]))
        return self._arrays

    def candidates(self, origin, max_range):
        """Plane indices whose bounding sphere is within ``max_range`` of ``origin``."""
        c, *_, rad = self.arrays()
        o = np.atleast_2d(origin)
        lo, hi = o.min(axis=0), o.max(axis=0)
        d = np.linalg.norm(np.maximum(np.maximum(lo - c, c - hi), 0.0), axis=1)
        return np.flatnonzero(d - rad <= max_range)

    def candidates_cone(self, origin, axis, half_angle, max_range):
        """Planes whose bounding sphere touches the cone (origin, axis, half_angle)."""
        c, *_, rad = self.arrays()
        d = c - np.asarray(origin, dtype=float)
        dist = np.linalg.norm(d, axis=1)
        near = dist <= rad
        cosang = np.clip((d @ axis) / np.maximum(dist, 1e-12), -1.0, 1.0)
        ang = np.arccos(cosang)
        spread = np.arcsin(np.clip(rad / np.maximum(dist, 1e-12), 0.0, 1.0))
        ok = near | ((ang - spread <= half_angle) & (dist - rad <= max_range))
        return np.flatnonzero(ok)

    def raycast(self, origins, dirs, max_range=np.inf, plane_ids=None):
        """Nearest hit per ray: (range, plane index) with index -1 on a miss.

        Rays parallel to a plane never hit it; planes are two-sided.
        """
        dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
        origins = np.asarray(origins, dtype=float)
        single = origins.ndim == 1
        n_rays = dirs.shape[0]
        best = np.full(n_rays, np.inf)
        idx = np.full(n_rays, -1, dtype=np.int64)
        C, N, U, V, HU, HV, _ = self.arrays()
        if plane_ids is None:
            plane_ids = self.candidates(origins, max_range) if np.isfinite(max_range) \
                else np.arange(len(self.planes))
        if not single:
            origins = np.broadcast_to(origins, dirs.shape)
        for k in plane_ids:
            denom = dirs @ N[k]
            num = (C[k] - origins) @ N[k]
            with np.errstate(divide="ignore", invalid="ignore"):
                t = num / denom
            ok = (np.abs(denom) > 1e-12) & (t > 1e-9) & (t < best) & (t <= max_range)
            sel = np.flatnonzero(ok)
            if sel.size == 0:
                continue
            o = origins if single else origins[sel]
            h = o + t[sel, None] * dirs[sel] - C[k]
            inside = (np.abs(h @ U[k]) <= HU[k]) & (np.abs(h @ V[k]) <= HV[k])
            sel = sel[inside]
            best[sel] = t[sel]
            idx[sel] = k
        return best, idx

    def shade(self, points, plane_idx):
        """Texture value at hit points (background where index is -1)."""
        out = np.full(plane_idx.shape[0], self.background)
        C, _, U, V, *_ = self.arrays()
        for k in np.unique(plane_idx):
            if k < 0:
                continue
            sel = plane_idx == k
            d = points[sel] - C[k]
            out[sel] = self.planes[k].texture(d @ U[k], d @ V[k])
        return out
