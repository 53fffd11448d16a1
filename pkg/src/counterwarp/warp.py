"""Differentiable affine warps: parameter factorizations, sampling grids,
bilinear interpolation, and exact point transforms.

Conventions: normalized coordinates in [-1, 1] with align-corners (pixel 0
maps to -1, pixel W-1 to +1); a transform matrix maps OUTPUT pixel
coordinates to SOURCE sampling coordinates (inverse warping); samples
outside the input rectangle read zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DimensionError, DomainError
from .tensor import Tensor, _record, as_tensor

__all__ = [
    "AffineParams",
    "AffineRanges",
    "SampleGrid",
    "affine_from_rst",
    "affine_grid",
    "identity_grid",
    "grid_sample",
    "warp_image",
    "point_affine",
    "random_affine",
]

# Unnormalizing exact identity grids leaves pixel coordinates a few ulp off
# their integer targets; snapping within this tolerance restores bit-exact
# identity warps without disturbing any genuinely fractional sample.
_SNAP_EPS = 1e-9


class AffineParams:
    """A 2x3 affine matrix mapping homogeneous (u, v, 1) coordinates."""

    def __init__(self, theta):
        t = as_tensor(theta)
        if t.shape != (2, 3):
            raise DimensionError(f"affine matrix must be 2x3, got {t.shape}")
        if not np.isfinite(t.data).all():
            raise DomainError("affine matrix entries must be finite")
        self.theta = t

    @classmethod
    def identity(cls) -> "AffineParams":
        return cls(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))

    @property
    def matrix(self) -> np.ndarray:
        return self.theta.data

    def compose(self, inner: "AffineParams") -> "AffineParams":
        """The transform equivalent to applying ``inner`` first, then self."""
        aug_self = np.vstack([self.matrix, [0.0, 0.0, 1.0]])
        aug_inner = np.vstack([inner.matrix, [0.0, 0.0, 1.0]])
        return AffineParams((aug_self @ aug_inner)[:2])

    def __repr__(self) -> str:
        return f"AffineParams({self.matrix.tolist()})"


@dataclass(frozen=True)
class AffineRanges:
    """Uniform sampling ranges for random transforms (angle in radians,
    shifts in normalized units)."""

    max_angle: float = math.radians(30.0)
    scale_lo: float = 0.8
    scale_hi: float = 1.2
    max_shift: float = 0.1

    def validate(self) -> None:
        if self.max_angle < 0:
            raise DomainError(f"max_angle must be >= 0, got {self.max_angle}")
        if self.scale_lo <= 0 or self.scale_lo > self.scale_hi:
            raise DomainError(
                f"scale range invalid: [{self.scale_lo}, {self.scale_hi}]")
        if self.max_shift < 0:
            raise DomainError(f"max_shift must be >= 0, got {self.max_shift}")


class SampleGrid:
    """Per-output-pixel normalized source coordinates, last axis (u, v)."""

    def __init__(self, coords):
        c = as_tensor(coords)
        if c.shape[-1] != 2 or c.ndim not in (3, 4):
            raise DimensionError(f"grid must be (H,W,2) or (B,H,W,2), got {c.shape}")
        self.coords = c

    @property
    def shape(self) -> tuple:
        return self.coords.shape


def affine_from_rst(alpha: float, s: float, du: float, dv: float) -> AffineParams:
    """Rotation/scale/translation factorization of the affine matrix."""
    if s <= 0:
        raise DomainError(f"scale factor must be positive, got {s}")
    c, si = s * math.cos(alpha), s * math.sin(alpha)
    return AffineParams(np.array([[c, -si, du], [si, c, dv]]))


def _as_theta(theta) -> Tensor:
    if isinstance(theta, AffineParams):
        return theta.theta
    t = as_tensor(theta)
    if t.shape[-2:] != (2, 3) or t.ndim not in (2, 3):
        raise DimensionError(f"theta must be (2,3) or (B,2,3), got {t.shape}")
    return t


@lru_cache(maxsize=64)
def _base_grid(h: int, w: int) -> np.ndarray:
    """(H, W, 3) array of homogeneous normalized coordinates (u, v, 1)."""
    u = np.linspace(-1.0, 1.0, w)
    v = np.linspace(-1.0, 1.0, h)
    base = np.empty((h, w, 3), dtype=np.float64)
    base[..., 0] = u[None, :]
    base[..., 1] = v[:, None]
    base[..., 2] = 1.0
    base.setflags(write=False)
    return base


def identity_grid(h: int, w: int) -> SampleGrid:
    if h < 2 or w < 2:
        raise DomainError(f"grid needs H, W >= 2, got {h}x{w}")
    return SampleGrid(Tensor(_base_grid(h, w)[..., :2].copy()))


def affine_grid(theta, h: int, w: int) -> SampleGrid:
    """Source coordinates theta @ (u, v, 1) for every output pixel."""
    if h < 2 or w < 2:
        raise DomainError(f"grid needs H, W >= 2, got {h}x{w}")
    t = _as_theta(theta)
    base = _base_grid(h, w)
    if t.ndim == 2:
        out_data = np.einsum("hwk,lk->hwl", base, t.data)
    else:
        out_data = np.einsum("hwk,blk->bhwl", base, t.data)

    def bwd(g, needs):
        if t.ndim == 2:
            return (np.einsum("hwl,hwk->lk", g, base),)
        return (np.einsum("bhwl,hwk->blk", g, base),)

    return SampleGrid(_record((t,), out_data, bwd))


def grid_sample(img, grid) -> Tensor:
    """Bilinear sampling of ``img`` at ``grid`` locations, zero-padded
    outside, differentiable w.r.t. both the image and the grid."""
    img = as_tensor(img)
    coords = grid.coords if isinstance(grid, SampleGrid) else as_tensor(grid)
    if not np.isfinite(coords.data).all():
        raise DomainError("grid coordinates must be finite")

    batched = coords.ndim == 4
    if batched and img.ndim != 4:
        raise DimensionError(f"batched grid {coords.shape} needs (B,C,H,W) image, got {img.shape}")
    if not batched and img.ndim != 3:
        raise DimensionError(f"single grid {coords.shape} needs (C,H,W) image, got {img.shape}")

    imgd = img.data if batched else img.data[None]
    gd = coords.data if batched else coords.data[None]
    b, c, hi, wi = imgd.shape
    if batched and gd.shape[0] != b:
        raise DimensionError(f"batch mismatch: image {b}, grid {gd.shape[0]}")

    half_w, half_h = (wi - 1) / 2.0, (hi - 1) / 2.0
    x = (gd[..., 0] + 1.0) * half_w
    y = (gd[..., 1] + 1.0) * half_h
    xr, yr = np.round(x), np.round(y)
    x = np.where(np.abs(x - xr) <= _SNAP_EPS, xr, x)
    y = np.where(np.abs(y - yr) <= _SNAP_EPS, yr, y)

    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx, fy = x - x0, y - y0

    flat = imgd.reshape(b, c, hi * wi)
    bidx = np.arange(b)[:, None, None]

    def corner(xs, ys):
        valid = (xs >= 0) & (xs < wi) & (ys >= 0) & (ys < hi)
        lin = np.clip(ys, 0, hi - 1) * wi + np.clip(xs, 0, wi - 1)
        vals = flat[bidx, :, lin]                       # (B, Hg, Wg, C)
        vals = np.moveaxis(vals, -1, 1)                 # (B, C, Hg, Wg)
        return vals * valid[:, None], valid, lin

    v00, m00, l00 = corner(x0, y0)
    v01, m01, l01 = corner(x0 + 1, y0)
    v10, m10, l10 = corner(x0, y0 + 1)
    v11, m11, l11 = corner(x0 + 1, y0 + 1)

    wfx, wfy = fx[:, None], fy[:, None]
    out = ((1 - wfy) * ((1 - wfx) * v00 + wfx * v01)
           + wfy * ((1 - wfx) * v10 + wfx * v11))
    out_data = out if batched else out[0]

    def bwd(g, needs):
        gb = g if batched else g[None]
        gimg = None
        if needs[0]:
            cbase = np.arange(c)[None, :, None, None] * (hi * wi)
            boff = (np.arange(b)[:, None, None, None] * c) * (hi * wi)
            buf = np.zeros(b * c * hi * wi, dtype=np.float64)
            for lin, mask, wgt in (
                (l00, m00, (1 - wfx) * (1 - wfy)),
                (l01, m01, wfx * (1 - wfy)),
                (l10, m10, (1 - wfx) * wfy),
                (l11, m11, wfx * wfy),
            ):
                contrib = gb * wgt * mask[:, None]
                idx = boff + cbase + lin[:, None]
                buf += np.bincount(idx.ravel(), weights=contrib.ravel(),
                                   minlength=buf.size)
            gimg = buf.reshape(imgd.shape)
            if not batched:
                gimg = gimg[0]
        ggrid = None
        if needs[1]:
            dfx = ((1 - wfy) * (v01 - v00) + wfy * (v11 - v10))
            dfy = ((1 - wfx) * (v10 - v00) + wfx * (v11 - v01))
            gu = (gb * dfx).sum(axis=1) * half_w
            gv = (gb * dfy).sum(axis=1) * half_h
            ggrid = np.stack([gu, gv], axis=-1)
            if not batched:
                ggrid = ggrid[0]
        return gimg, ggrid

    return _record((img, coords), out_data, bwd)


def warp_image(img, theta) -> Tensor:
    """Affine-warp an image: sample it along the grid theta generates."""
    img = as_tensor(img)
    if img.ndim not in (3, 4):
        raise DimensionError(f"expected (C,H,W) or (B,C,H,W), got {img.shape}")
    h, w = img.shape[-2], img.shape[-1]
    return grid_sample(img, affine_grid(theta, h, w))


def point_affine(points, theta) -> Tensor:
    """Apply theta to raw 2-D points, exactly (no interpolation).

    ``theta`` of shape (2,3) transforms every point; shape (B,2,3) with
    points (B,2) applies one matrix per point.
    """
    pts = as_tensor(points)
    t = _as_theta(theta)
    if pts.shape[-1] != 2 or pts.ndim != 2:
        raise DimensionError(f"points must be (N,2), got {pts.shape}")
    aug = np.concatenate([pts.data, np.ones((pts.shape[0], 1))], axis=1)
    if t.ndim == 2:
        out_data = aug @ t.data.T
    else:
        if t.shape[0] != pts.shape[0]:
            raise DimensionError(f"{t.shape[0]} matrices for {pts.shape[0]} points")
        out_data = np.einsum("nk,nlk->nl", aug, t.data)

    def bwd(g, needs):
        if t.ndim == 2:
            gp = g @ t.data[:, :2] if needs[0] else None
            gt = g.T @ aug if needs[1] else None
        else:
            gp = np.einsum("nl,nlk->nk", g, t.data[:, :, :2]) if needs[0] else None
            gt = np.einsum("nl,nk->nlk", g, aug) if needs[1] else None
        return gp, gt

    return _record((pts, t), out_data, bwd)


def random_affine(rng: np.random.Generator, ranges: AffineRanges = AffineRanges()) -> AffineParams:
    """Draw alpha, s, du, dv independently and uniformly from ``ranges``."""
    ranges.validate()
    alpha = rng.uniform(-ranges.max_angle, ranges.max_angle)
    s = rng.uniform(ranges.scale_lo, ranges.scale_hi)
    du = rng.uniform(-ranges.max_shift, ranges.max_shift)
    dv = rng.uniform(-ranges.max_shift, ranges.max_shift)
    return affine_from_rst(alpha, s, du, dv)
