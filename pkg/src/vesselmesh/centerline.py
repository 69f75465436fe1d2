"""Centerline containers, smoothing, tangents, and rotation-stable local frames.

A centerline is an ordered (k, 3) array of world points in mm, k >= 4, with
consecutive points distinct.  Frames are rotation minimizing (double
reflection), which avoids the twisting and inflection flips a Frenet frame
would introduce before surface skinning.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


def validate_centerline(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"centerline must have shape (k, 3), got {pts.shape}")
    if len(pts) < 4:
        raise ValueError(f"centerline needs at least 4 points, got {len(pts)}")
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    if (seg == 0).any():
        raise ValueError("consecutive centerline points must be distinct")
    return pts


@dataclass(frozen=True)
class LocalFrame:
    """Orthonormal (t, n, b) triple anchored at a centerline point.

    The rotation matrix ``r`` has columns (b, n, t) and determinant +1,
    mapping in-plane coordinates (along b, along n, along t) to world
    offsets.
    """

    t: np.ndarray
    n: np.ndarray
    b: np.ndarray
    anchor: np.ndarray

    @property
    def r(self) -> np.ndarray:
        return np.column_stack([self.b, self.n, self.t])


def tangents(points) -> np.ndarray:
    """Unit tangents from adjacent points.

    Interior stations use the central difference p[i+1] - p[i-1]; the first
    uses the forward difference, and the last station copies the tangent of
    its predecessor.
    """
    pts = validate_centerline(points)
    k = len(pts)
    t = np.zeros_like(pts)
    t[0] = pts[1] - pts[0]
    for i in range(1, k - 1):
        t[i] = pts[i + 1] - pts[i - 1]
    norms = np.linalg.norm(t[: k - 1], axis=1)
    if (norms < 1e-14).any():
        raise ValueError("zero-length tangent difference")
    t[: k - 1] /= norms[:, None]
    t[k - 1] = t[k - 2]
    return t


def _preferred_normal(t0: np.ndarray) -> np.ndarray:
    """Normalized rejection of the coordinate axis least aligned with t0.

    Ties prefer x, then y, then z.
    """
    align = np.abs(t0)
    axis = np.zeros(3)
    axis[int(np.argmin(align))] = 1.0
    n = axis - np.dot(axis, t0) * t0
    return n / np.linalg.norm(n)


def frames(points) -> list[LocalFrame]:
    """Rotation-minimizing frames along the centerline (double reflection)."""
    pts = validate_centerline(points)
    ts = tangents(pts)
    k = len(pts)
    ns = np.zeros_like(pts)
    ns[0] = _preferred_normal(ts[0])
    for i in range(k - 1):
        v1 = pts[i + 1] - pts[i]
        c1 = float(np.dot(v1, v1))
        r_l = ns[i] - (2.0 / c1) * np.dot(v1, ns[i]) * v1
        t_l = ts[i] - (2.0 / c1) * np.dot(v1, ts[i]) * v1
        v2 = ts[i + 1] - t_l
        c2 = float(np.dot(v2, v2))
        if c2 < 1e-28:
            ns[i + 1] = r_l
        else:
            ns[i + 1] = r_l - (2.0 / c2) * np.dot(v2, r_l) * v2
        # re-orthogonalize against accumulated round-off
        ns[i + 1] -= np.dot(ns[i + 1], ts[i + 1]) * ts[i + 1]
        ns[i + 1] /= np.linalg.norm(ns[i + 1])
    out = []
    for i in range(k):
        b = np.cross(ns[i], ts[i])
        out.append(LocalFrame(t=ts[i], n=ns[i], b=b, anchor=pts[i]))
    return out


# ---------------------------------------------------------------------------
# cubic B-spline smoothing with uniform arc-length resampling

_QUAD_SEGMENTS = 256  # piecewise-linear quadrature segments per knot span


def _clamped_uniform_knots(n_ctrl: int, degree: int = 3) -> np.ndarray:
    n_spans = n_ctrl - degree
    interior = np.arange(1, n_spans) / n_spans
    return np.concatenate([np.zeros(degree + 1), interior, np.ones(degree + 1)])


def _bspline_point(knots, ctrl, degree, u):
    from .nurbs import basis_functions

    span, vals = basis_functions(knots, degree, u)
    return vals @ ctrl[span - degree : span + 1]


def smooth_resample(points, k_out: int) -> np.ndarray:
    """Smooth the polyline with a cubic B-spline and resample uniformly.

    The input points act as control points of a clamped uniform cubic
    B-spline (they are not interpolated except at the two ends), and the
    curve is evaluated at k_out parameters uniform in arc length.  Arc
    length is estimated with 256 piecewise-linear segments per knot span.
    """
    pts = validate_centerline(points)
    if k_out < 2:
        raise ValueError("k_out must be at least 2")
    degree = 3
    knots = _clamped_uniform_knots(len(pts), degree)
    n_spans = len(pts) - degree

    us = np.linspace(0.0, 1.0, n_spans * _QUAD_SEGMENTS + 1)
    samples = np.empty((len(us), 3))
    for i, u in enumerate(us):
        samples[i] = _bspline_point(knots, pts, degree, u)
    seg = np.linalg.norm(np.diff(samples, axis=0), axis=1)
    s_cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = s_cum[-1]

    targets = np.linspace(0.0, total, k_out)
    u_targets = np.interp(targets, s_cum, us)
    out = np.empty((k_out, 3))
    for i, u in enumerate(u_targets):
        out[i] = _bspline_point(knots, pts, degree, u)
    return out


# ---------------------------------------------------------------------------
# [-1, 1] image encoding against a volume's voxel-center bounding box


def encode_image(points, bounds_lo, bounds_hi) -> np.ndarray:
    """Map world points into the [-1, 1]^3 cube spanned by the given bounds."""
    pts = np.asarray(points, dtype=np.float64)
    lo = np.asarray(bounds_lo, dtype=np.float64)
    hi = np.asarray(bounds_hi, dtype=np.float64)
    if (hi <= lo).any():
        raise ValueError("degenerate bounds")
    return 2.0 * (pts - lo) / (hi - lo) - 1.0


def decode_image(image, bounds_lo, bounds_hi) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    lo = np.asarray(bounds_lo, dtype=np.float64)
    hi = np.asarray(bounds_hi, dtype=np.float64)
    return lo + (img + 1.0) * 0.5 * (hi - lo)


# ---------------------------------------------------------------------------
# CSV interchange (one x,y,z row per point, mm, 9 significant digits)


def write_csv(points, path) -> None:
    pts = np.asarray(points, dtype=np.float64)
    lines = [f"{p[0]:.9g},{p[1]:.9g},{p[2]:.9g}" for p in pts]
    Path(path).write_text("\n".join(lines) + "\n")


def read_csv(path) -> np.ndarray:
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        rows.append([float(x) for x in line.split(",")])
    return validate_centerline(np.asarray(rows))
