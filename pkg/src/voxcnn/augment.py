"""Random 3D augmentations over a homogeneous-affine resampling primitive.

All transforms act about the geometric volume center and keep the input
shape.  Interpolation is trilinear with a constant fill value; sampled
coordinates that land within 1e-6 of a grid point are snapped to it, so
90-degree rotations and integer shifts are exact index operations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .rng import substream

_SNAP = 1e-6


@dataclass
class AugmentConfig:
    max_rotation_deg: float = 0.0
    zoom_min: float = 1.0
    zoom_max: float = 1.0
    flip_x: bool = False
    flip_y: bool = False
    flip_z: bool = False
    max_shift_frac: float = 0.0
    fill_value: float = 0.0

    def __post_init__(self):
        if self.max_rotation_deg < 0:
            raise InputError("max_rotation_deg must be >= 0")
        if not 0.0 < self.zoom_min <= self.zoom_max:
            raise InputError("zoom bounds must satisfy 0 < min <= max")
        if not 0.0 <= self.max_shift_frac < 1.0:
            raise InputError("max_shift_frac must be in [0, 1)")

    @property
    def is_identity(self) -> bool:
        return (
            self.max_rotation_deg == 0.0
            and self.zoom_min == self.zoom_max == 1.0
            and not (self.flip_x or self.flip_y or self.flip_z)
            and self.max_shift_frac == 0.0
        )

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentConfig":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known)


def identity_affine() -> np.ndarray:
    return np.eye(4)


def rotation_affine(axis: int, angle_deg: float) -> np.ndarray:
    """Rotation in the coordinate plane perpendicular to ``axis`` (0=x,1=y,2=z)."""
    a, b = [i for i in range(3) if i != axis]
    th = math.radians(angle_deg)
    m = np.eye(4)
    m[a, a] = math.cos(th)
    m[a, b] = -math.sin(th)
    m[b, a] = math.sin(th)
    m[b, b] = math.cos(th)
    return m


def zoom_affine(zx: float, zy: float, zz: float) -> np.ndarray:
    return np.diag([zx, zy, zz, 1.0])


def shift_affine(sx: float, sy: float, sz: float) -> np.ndarray:
    m = np.eye(4)
    m[:3, 3] = (sx, sy, sz)
    return m


def affine_resample(vol: np.ndarray, matrix: np.ndarray, fill: float = 0.0) -> np.ndarray:
    """Resample a volume under a homogeneous affine map.

    ``matrix`` maps centered source coordinates to centered output
    coordinates; each output voxel is sampled at the inverse-mapped source
    position with trilinear interpolation.  Out-of-bounds samples take
    ``fill``.  Channels are transformed identically.
    """
    vol = np.asarray(vol)
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.shape != (4, 4):
        raise InputError(f"affine matrix must be 4x4, got {matrix.shape}")
    if abs(np.linalg.det(matrix)) < 1e-12:
        raise InputError("affine matrix is singular")
    inv = np.linalg.inv(matrix)

    nx, ny, nz, _ = vol.shape
    center = (np.array([nx, ny, nz], dtype=np.float64) - 1.0) / 2.0

    gx, gy, gz = np.meshgrid(
        np.arange(nx, dtype=np.float64) - center[0],
        np.arange(ny, dtype=np.float64) - center[1],
        np.arange(nz, dtype=np.float64) - center[2],
        indexing="ij",
    )
    coords = np.stack([gx, gy, gz], axis=-1) @ inv[:3, :3].T + inv[:3, 3]
    coords += center

    snapped = np.round(coords)
    coords = np.where(np.abs(coords - snapped) < _SNAP, snapped, coords)

    lo = np.floor(coords).astype(np.int64)
    frac = coords - lo

    out = np.zeros_like(vol)
    acc = np.zeros(vol.shape, dtype=np.float64)
    weight_inb = np.zeros(vol.shape[:3], dtype=np.float64)
    dims = np.array([nx, ny, nz])
    for corner in range(8):
        off = np.array([(corner >> 2) & 1, (corner >> 1) & 1, corner & 1])
        idx = lo + off
        w = np.prod(np.where(off == 1, frac, 1.0 - frac), axis=-1)
        inb = np.all((idx >= 0) & (idx < dims), axis=-1)
        idx_c = np.clip(idx, 0, dims - 1)
        vals = vol[idx_c[..., 0], idx_c[..., 1], idx_c[..., 2], :]
        w_eff = np.where(inb, w, 0.0)
        acc += w_eff[..., None] * vals
        weight_inb += w_eff
    acc += (1.0 - weight_inb)[..., None] * fill
    out[...] = acc.astype(vol.dtype)
    return out


def _draw_rotation(rng, max_deg: float):
    axis = int(rng.integers(0, 3))
    angle = float(rng.uniform(-max_deg, max_deg))
    return axis, angle


def random_rotation(vol, max_deg: float, rng) -> np.ndarray:
    if max_deg < 0:
        raise InputError("max_deg must be >= 0")
    if max_deg == 0:
        return vol
    axis, angle = _draw_rotation(rng, max_deg)
    return affine_resample(vol, rotation_affine(axis, angle))


def random_zoom(vol, zmin: float, zmax: float, rng) -> np.ndarray:
    if not 0.0 < zmin <= zmax:
        raise InputError("zoom bounds must satisfy 0 < min <= max")
    if zmin == zmax == 1.0:
        return vol
    z = float(rng.uniform(zmin, zmax))
    return affine_resample(vol, zoom_affine(z, z, z))


def random_flip(vol, axes, rng) -> np.ndarray:
    """Reverse each enabled axis with probability 1/2 (pure index operation)."""
    out = vol
    for axis, enabled in enumerate(axes):
        if enabled and rng.random() < 0.5:
            out = np.flip(out, axis=axis)
    return np.ascontiguousarray(out) if out is not vol else vol


def random_shift(vol, max_frac: float, rng, fill: float = 0.0) -> np.ndarray:
    if not 0.0 <= max_frac < 1.0:
        raise InputError("max_frac must be in [0, 1)")
    if max_frac == 0:
        return vol
    axis = int(rng.integers(0, 3))
    limit = max_frac * vol.shape[axis]
    d = float(rng.uniform(-limit, limit))
    shift = [0.0, 0.0, 0.0]
    shift[axis] = d
    return affine_resample(vol, shift_affine(*shift), fill)


def augment(vol: np.ndarray, config: AugmentConfig, sample_seed: int) -> np.ndarray:
    """Apply flip, rotation, zoom, shift (fixed order) with per-sample draws.

    Rotation, zoom, and shift compose into a single affine so the volume is
    resampled at most once.  An identity config returns the input bitwise.
    """
    if config.is_identity:
        return vol
    rng = substream(sample_seed, "augment-draws")
    out = random_flip(vol, (config.flip_x, config.flip_y, config.flip_z), rng)

    m = identity_affine()
    resample = False
    if config.max_rotation_deg > 0:
        axis, angle = _draw_rotation(rng, config.max_rotation_deg)
        m = rotation_affine(axis, angle) @ m
        resample = True
    if not (config.zoom_min == config.zoom_max == 1.0):
        z = float(rng.uniform(config.zoom_min, config.zoom_max))
        m = zoom_affine(z, z, z) @ m
        resample = True
    if config.max_shift_frac > 0:
        axis = int(rng.integers(0, 3))
        limit = config.max_shift_frac * vol.shape[axis]
        shift = [0.0, 0.0, 0.0]
        shift[axis] = float(rng.uniform(-limit, limit))
        m = shift_affine(*shift) @ m
        resample = True
    if resample:
        out = affine_resample(out, m, config.fill_value)
    return out
