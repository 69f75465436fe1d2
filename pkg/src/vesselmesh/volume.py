"""3D scalar volumes: storage, world/index mapping, trilinear sampling, raw I/O.

World coordinates follow the voxel-center convention,
``world = origin + index * spacing``, so the continuous domain covered by a
volume is the axis-aligned box spanned by the first and last voxel centers.
Sampling outside that box clamps to the nearest boundary-face projection
(clamp-to-edge), unless strict mode is requested.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class Volume:
    """Immutable 3D scalar image.

    Attributes
    ----------
    data : np.ndarray
        float32 array of shape (nz, ny, nx), indexed ``data[z, y, x]``.
        Flattened in C order this is the canonical x-fastest layout
        ``index = x + nx * (y + ny * z)``.
    spacing : tuple of float
        Voxel spacing (sx, sy, sz) in mm, all strictly positive.
    origin : tuple of float
        World position (ox, oy, oz) of voxel (0, 0, 0) in mm.
    """

    data: np.ndarray
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float]

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ValueError(f"volume data must be 3D (nz, ny, nx), got shape {data.shape}")
        if data.dtype != np.float32:
            raise ValueError(f"volume data must be float32, got {data.dtype}")
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise ValueError(f"spacing must be 3 positive values, got {self.spacing}")
        if len(self.origin) != 3 or not all(np.isfinite(self.origin)):
            raise ValueError(f"origin must be 3 finite values, got {self.origin}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @property
    def dims(self) -> tuple[int, int, int]:
        """Grid size (nx, ny, nz)."""
        nz, ny, nx = self.data.shape
        return nx, ny, nz

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Voxel-center bounding box (lo, hi) in world mm."""
        lo = np.asarray(self.origin, dtype=np.float64)
        n = np.asarray(self.dims, dtype=np.float64)
        hi = lo + (n - 1.0) * np.asarray(self.spacing, dtype=np.float64)
        return lo, hi

    def index_to_world(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.float64)
        return np.asarray(self.origin) + idx * np.asarray(self.spacing)

    def world_to_index(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        return (pts - np.asarray(self.origin)) / np.asarray(self.spacing)


def from_flat(flat, dims, spacing, origin) -> Volume:
    """Build a Volume from a flat x-fastest array and (nx, ny, nz) dims."""
    nx, ny, nz = (int(d) for d in dims)
    flat = np.asarray(flat, dtype=np.float32)
    if flat.size != nx * ny * nz:
        raise ValueError(f"data length {flat.size} does not match dims {(nx, ny, nz)}")
    return Volume(flat.reshape(nz, ny, nx), tuple(spacing), tuple(origin))


def sample_trilinear(vol: Volume, points, strict: bool = False):
    """Trilinearly interpolate the volume at world points.

    Parameters
    ----------
    vol : Volume
    points : array-like
        A single (3,) world point or an (N, 3) batch, in mm.
    strict : bool
        If True, raise on points outside the voxel-center bounding box
        instead of clamping to the edge.

    Returns
    -------
    float or np.ndarray
        Interpolated scalar(s), float64.  At voxel centers the stored value
        is returned exactly; affine fields are reproduced to round-off.
    """
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[-1] != 3:
        raise ValueError(f"points must have 3 components, got shape {pts.shape}")
    if not np.isfinite(pts).all():
        raise ValueError("non-finite sample point")

    q = vol.world_to_index(pts)
    nx, ny, nz = vol.dims
    n = np.array([nx, ny, nz], dtype=np.float64)
    if strict:
        if (q < -1e-12).any() or (q > n - 1 + 1e-12).any():
            raise ValueError("sample point outside volume bounds in strict mode")
    q = np.clip(q, 0.0, n - 1.0)

    i0 = np.floor(q).astype(np.int64)
    i0 = np.minimum(i0, np.asarray([nx - 2, ny - 2, nz - 2], dtype=np.int64))
    i0 = np.maximum(i0, 0)
    f = q - i0
    # axes with a single voxel degenerate to nearest lookup
    for ax, size in enumerate((nx, ny, nz)):
        if size == 1:
            i0[:, ax] = 0
            f[:, ax] = 0.0

    x0, y0, z0 = i0[:, 0], i0[:, 1], i0[:, 2]
    x1 = np.minimum(x0 + 1, nx - 1)
    y1 = np.minimum(y0 + 1, ny - 1)
    z1 = np.minimum(z0 + 1, nz - 1)
    fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
    gx, gy, gz = 1.0 - fx, 1.0 - fy, 1.0 - fz

    d = vol.data
    c = (
        d[z0, y0, x0] * (gx * gy * gz)
        + d[z0, y0, x1] * (fx * gy * gz)
        + d[z0, y1, x0] * (gx * fy * gz)
        + d[z0, y1, x1] * (fx * fy * gz)
        + d[z1, y0, x0] * (gx * gy * fz)
        + d[z1, y0, x1] * (fx * gy * fz)
        + d[z1, y1, x0] * (gx * fy * fz)
        + d[z1, y1, x1] * (fx * fy * fz)
    )
    return float(c[0]) if single else c


def normalize(vol: Volume) -> Volume:
    """Affinely map intensities to [0, 1].

    Raises on constant volumes (the scale is undefined).  The argmin and
    argmax voxel locations are preserved.
    """
    data = vol.data.astype(np.float64)
    lo = float(data.min())
    hi = float(data.max())
    if hi == lo:
        raise ValueError("cannot normalize a constant volume")
    out = ((data - lo) / (hi - lo)).astype(np.float32)
    return Volume(out, vol.spacing, vol.origin)


def store_raw(vol: Volume, path, header_path=None) -> None:
    """Write the payload as little-endian float32 plus a JSON sidecar.

    The payload is the canonical x-fastest flat order.  ``header_path``
    defaults to the payload path with a ``.json`` suffix appended.
    """
    path = Path(path)
    header_path = Path(header_path) if header_path else path.with_suffix(path.suffix + ".json")
    nx, ny, nz = vol.dims
    header = {
        "dims": [nx, ny, nz],
        "spacing_mm": list(vol.spacing),
        "origin_mm": list(vol.origin),
        "dtype": "f32le",
    }
    header_path.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    payload = np.ascontiguousarray(vol.data, dtype="<f4")
    path.write_bytes(payload.tobytes())


def load_raw(path, header_path=None) -> Volume:
    """Read a volume written by :func:`store_raw`.

    ``store_raw`` followed by ``load_raw`` is the identity, bit-exact.
    """
    path = Path(path)
    header_path = Path(header_path) if header_path else path.with_suffix(path.suffix + ".json")
    header = json.loads(header_path.read_text())
    if header.get("dtype") != "f32le":
        raise ValueError(f"unknown dtype {header.get('dtype')!r}, expected 'f32le'")
    nx, ny, nz = (int(d) for d in header["dims"])
    raw = np.frombuffer(path.read_bytes(), dtype="<f4")
    if raw.size != nx * ny * nz:
        raise ValueError(
            f"payload has {raw.size} values but header dims {(nx, ny, nz)} "
            f"require {nx * ny * nz}"
        )
    data = raw.reshape(nz, ny, nx).astype(np.float32)
    return Volume(data, tuple(header["spacing_mm"]), tuple(header["origin_mm"]))
