"""Pinhole camera model, grey-scale images and patch pyramids."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

N_LEVELS = 3
PATCH_SIZE = 8
_PAD = 20


class PatchOutOfBoundsError(ValueError):
    """Patch samples would fall too close to the image border."""


def _body_to_optical(yaw=0.0):
    # optical z forward = body x, optical x right = -body y, optical y down = -body z;
    # ``yaw`` turns the optical axis to the left about body z
    B = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])
    c, s = np.cos(yaw), np.sin(yaw)
    return B @ np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class CameraModel:
    fx: float = 160.0
    fy: float = 160.0
    cx: float = 127.5
    cy: float = 95.5
    width: int = 256
    height: int = 192
    R_ci: np.ndarray = field(default_factory=_body_to_optical)
    t_ci: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.05, -0.1]))

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        object.__setattr__(self, "R_ci", np.asarray(self.R_ci, dtype=float).reshape(3, 3))
        object.__setattr__(self, "t_ci", np.asarray(self.t_ci, dtype=float).reshape(3))

    @classmethod
    def side_looking(cls, yaw_deg, **kw):
        """Default intrinsics with the optical axis yawed ``yaw_deg`` left of body x."""
        return cls(R_ci=_body_to_optical(np.deg2rad(yaw_deg)), **kw)

    # -- frames ---------------------------------------------------------------
    def world_to_camera(self, R_wi, p_wi):
        """(R_cw, t_cw) with X_c = R_cw X_w + t_cw."""
        R_cw = self.R_ci @ R_wi.T
        return R_cw, self.t_ci - R_cw @ p_wi

    def camera_pose(self, R_wi, p_wi):
        """World-from-camera (R_wc, t_wc)."""
        R_cw, t_cw = self.world_to_camera(R_wi, p_wi)
        return R_cw.T, -R_cw.T @ t_cw

    # -- projection -------------------------------------------------------------
    def project(self, Xc):
        Xc = np.atleast_2d(Xc)
        z = Xc[:, 2]
        return np.column_stack([self.fx * Xc[:, 0] / z + self.cx,
                                self.fy * Xc[:, 1] / z + self.cy])

    def project_jacobian(self, Xc):
        """d(u, v)/d(X_c) as an (N, 2, 3) array."""
        Xc = np.atleast_2d(Xc)
        iz = 1.0 / Xc[:, 2]
        J = np.zeros((Xc.shape[0], 2, 3))
        J[:, 0, 0] = self.fx * iz
        J[:, 0, 2] = -self.fx * Xc[:, 0] * iz * iz
        J[:, 1, 1] = self.fy * iz
        J[:, 1, 2] = -self.fy * Xc[:, 1] * iz * iz
        return J

    def pixel_rays(self, uv):
        """Camera-frame ray directions (z = 1) through pixel coordinates."""
        uv = np.atleast_2d(uv)
        return np.column_stack([(uv[:, 0] - self.cx) / self.fx,
                                (uv[:, 1] - self.cy) / self.fy,
                                np.ones(uv.shape[0])])

    def in_image(self, uv, margin=0.0):
        uv = np.atleast_2d(uv)
        return ((uv[:, 0] >= margin) & (uv[:, 0] <= self.width - 1 - margin)
                & (uv[:, 1] >= margin) & (uv[:, 1] <= self.height - 1 - margin))


def to_level(uv0, level):
    """Level-0 pixel coordinates -> level-``level`` coordinates."""
    s = float(1 << level)
    return (np.asarray(uv0, dtype=float) + 0.5) / s - 0.5


def _bspline_weights(t):
    t2 = t * t
    t3 = t2 * t
    w = np.stack([(1 - t) ** 3, 3 * t3 - 6 * t2 + 4, -3 * t3 + 3 * t2 + 3 * t + 1, t3], axis=-1) / 6.0
    dw = np.stack([-(1 - t) ** 2, 3 * t2 - 4 * t, -3 * t2 + 2 * t + 1, t2], axis=-1) * 0.5
    return w, dw


class Image:
    """Grey-scale image in [0, 1] with a three-level pyramid.

    Sub-pixel values come from a prefiltered cubic B-spline, which
    reproduces linear intensity ramps exactly and has a continuous
    gradient, so photometric Jacobians are smooth in the pose.
    """

    def __init__(self, intensities, timestamp=0.0):
        a = np.asarray(intensities, dtype=float)
        if a.ndim != 2 or not np.all(np.isfinite(a)):
            raise ValueError("image intensities must be a finite 2-D array")
        self.intensities = a
        self.timestamp = float(timestamp)
        self._levels = None
        self._coeffs = None

    @property
    def height(self):
        return self.intensities.shape[0]

    @property
    def width(self):
        return self.intensities.shape[1]

    def level(self, l):
        if self._levels is None:
            levels = [self.intensities]
            for _ in range(1, N_LEVELS):
                a = levels[-1]
                h, w = (a.shape[0] // 2) * 2, (a.shape[1] // 2) * 2
                a = a[:h, :w]
                levels.append(0.25 * (a[0::2, 0::2] + a[1::2, 0::2] + a[0::2, 1::2] + a[1::2, 1::2]))
            self._levels = levels
        return self._levels[l]

    def _coeff(self, l):
        if self._coeffs is None:
            self._coeffs = [None] * N_LEVELS
        if self._coeffs[l] is None:
            # odd reflection continues linear ramps, keeping the border exact
            padded = np.pad(self.level(l), _PAD, mode="reflect", reflect_type="odd")
            self._coeffs[l] = ndimage.spline_filter(padded, order=3, mode="mirror")
        return self._coeffs[l]

    def level_shape(self, l):
        return self.level(l).shape

    def sample(self, uv, level=0, gradient=False):
        """Interpolated intensity at level-``level`` pixel coordinates (N, 2).

        With ``gradient=True`` also returns d(intensity)/d(u, v) (N, 2).
        """
        uv = np.atleast_2d(np.asarray(uv, dtype=float))
        c = self._coeff(level)
        x = uv[:, 0] + _PAD
        y = uv[:, 1] + _PAD
        ix = np.floor(x).astype(np.int64)
        iy = np.floor(y).astype(np.int64)
        wx, dwx = _bspline_weights(x - ix)
        wy, dwy = _bspline_weights(y - iy)
        off = np.arange(-1, 3)
        cols = np.clip(ix[:, None] + off, 0, c.shape[1] - 1)
        rows = np.clip(iy[:, None] + off, 0, c.shape[0] - 1)
        taps = c[rows[:, :, None], cols[:, None, :]]   # (N, 4, 4) [row, col]
        tx = np.einsum("nrc,nc->nr", taps, wx)
        val = np.einsum("nr,nr->n", tx, wy)
        if not gradient:
            return val
        gu = np.einsum("nrc,nc,nr->n", taps, dwx, wy)
        gv = np.einsum("nr,nr->n", tx, dwy)
        return val, np.column_stack([gu, gv])


def patch_offsets(size=PATCH_SIZE):
    """(size*size, 2) grid of (du, dv) offsets centred on the pixel."""
    r = np.arange(size) - (size - 1) / 2.0
    du, dv = np.meshgrid(r, r)
    return np.column_stack([du.ravel(), dv.ravel()])


def level_margin_ok(image: Image, uv_level, level, size=PATCH_SIZE):
    """True where the whole patch stays >= 2 px inside the level image."""
    h, w = image.level_shape(level)
    uv_level = np.atleast_2d(uv_level)
    m = (size - 1) / 2.0 + 2.0
    return ((uv_level[:, 0] >= m) & (uv_level[:, 0] <= w - 1 - m)
            & (uv_level[:, 1] >= m) & (uv_level[:, 1] <= h - 1 - m))


def extract_patch_pyramid(image: Image, pixel, size=PATCH_SIZE):
    """Three ``size`` x ``size`` patches centred on a level-0 pixel.

    Level ``l`` is sampled on the 2^l-downsampled image, so coarser
    patches cover a proportionally larger footprint.
    """
    pixel = np.asarray(pixel, dtype=float).reshape(2)
    offs = patch_offsets(size)
    out = np.empty((N_LEVELS, size, size))
    for l in range(N_LEVELS):
        ul = to_level(pixel, l)
        if not level_margin_ok(image, ul, l, size)[0]:
            raise PatchOutOfBoundsError(f"pixel {tuple(pixel)} too close to border at level {l}")
        out[l] = image.sample(ul + offs, l).reshape(size, size)
    return out
