"""Synthetic vessel volumes with analytic ground truth.

Each phantom is a tube swept along an analytic, unit-speed centerline with
a slowly varying radius profile.  Voxel intensity follows a soft wall ramp

    I(x) = clamp01(1 - (d(x) - r(s*)) / w)

where d is the distance to the centerline, s* the nearest arc-length
parameter, and w the wall softness.  The lumen interior is ~1, background
~0, and the 0.5 level sits at distance r + w/2.  Rasterization is
deterministic for a given spec.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .volume import Volume
from . import centerline as cl
from .meshkit import TriMesh, loft_rings

SHAPES = ("straight", "arc", "helix", "aneurysm", "coarctation", "branched")


@dataclass(frozen=True)
class PhantomSpec:
    shape: str = "straight"
    length_mm: float = 40.0
    base_radius_mm: float = 6.0
    dims: tuple[int, int, int] = (64, 64, 64)
    spacing_mm: tuple[float, float, float] = (0.9, 0.9, 0.9)
    wall_softness_mm: float | None = None  # default: one (max) voxel spacing
    # arc curvature
    arc_radius_mm: float = 25.0
    # helix geometry
    helix_radius_mm: float = 8.0
    helix_pitch_mm: float = 30.0
    # radius bump (aneurysm > 0) or dip (coarctation < 0), Gaussian profile
    bump_amplitude: float = 0.0
    bump_width_mm: float = 6.0
    bump_center_fraction: float = 0.5
    # side branch (branched shape)
    branch_radius_mm: float = 3.0
    branch_length_mm: float = 18.0
    branch_angle_deg: float = 90.0
    branch_attach_fraction: float = 0.5
    # lateral displacement of the whole curve, mm (varies tube placement)
    axis_offset_mm: tuple[float, float] = (0.0, 0.0)
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown phantom shape {self.shape!r}")
        if self.base_radius_mm <= 0:
            raise ValueError("base_radius_mm must be positive")
        if self.bump_amplitude <= -1.0:
            raise ValueError("bump amplitude must stay above -1 (lumen never collapses)")

    @property
    def wall_softness(self) -> float:
        if self.wall_softness_mm is not None:
            return float(self.wall_softness_mm)
        return float(max(self.spacing_mm))

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "PhantomSpec":
        doc = json.loads(text)
        doc["dims"] = tuple(doc["dims"])
        doc["spacing_mm"] = tuple(doc["spacing_mm"])
        if "axis_offset_mm" in doc:
            doc["axis_offset_mm"] = tuple(doc["axis_offset_mm"])
        return PhantomSpec(**doc)


def load_spec(path) -> PhantomSpec:
    return PhantomSpec.from_json(Path(path).read_text())


def _volume_center(spec: PhantomSpec) -> np.ndarray:
    n = np.asarray(spec.dims, dtype=np.float64)
    sp = np.asarray(spec.spacing_mm, dtype=np.float64)
    center = (n - 1.0) * sp / 2.0  # origin fixed at (0, 0, 0)
    return center + np.array([spec.axis_offset_mm[0], spec.axis_offset_mm[1], 0.0])


def _main_curve(spec: PhantomSpec, s: np.ndarray) -> np.ndarray:
    """Unit-speed centerline points at arc lengths s in [0, length]."""
    c = _volume_center(spec)
    L = spec.length_mm
    if spec.shape in ("straight", "aneurysm", "coarctation", "branched"):
        z = s - L / 2.0
        return np.column_stack([np.full_like(s, c[0]), np.full_like(s, c[1]), c[2] + z])
    if spec.shape == "arc":
        R = spec.arc_radius_mm
        half = L / (2.0 * R)
        alpha = s / R - half
        x = -R * np.cos(alpha)
        z = R * np.sin(alpha)
        # center the arc's bounding box in the volume
        x_mid = -R * (1.0 + np.cos(half)) / 2.0
        return np.column_stack([c[0] + x - x_mid, np.full_like(s, c[1]), c[2] + z])
    if spec.shape == "helix":
        a = spec.helix_radius_mm
        b = spec.helix_pitch_mm / (2.0 * np.pi)
        omega = 1.0 / np.hypot(a, b)
        phi = omega * (s - L / 2.0)
        return np.column_stack(
            [c[0] + a * np.cos(phi), c[1] + a * np.sin(phi), c[2] + b * phi]
        )
    raise AssertionError(spec.shape)


def _branch_curve(spec: PhantomSpec, s: np.ndarray) -> np.ndarray:
    c = _volume_center(spec)
    z0 = spec.branch_attach_fraction * spec.length_mm - spec.length_mm / 2.0
    start = np.array([c[0], c[1], c[2] + z0])
    phi = np.deg2rad(spec.branch_angle_deg)
    d = np.array([np.sin(phi), 0.0, np.cos(phi)])
    return start[None, :] + s[:, None] * d[None, :]


def radius_profile(spec: PhantomSpec, s: np.ndarray) -> np.ndarray:
    """Lumen radius r(s) along the main centerline."""
    r = np.full_like(np.asarray(s, dtype=np.float64), spec.base_radius_mm)
    amp = spec.bump_amplitude
    if spec.shape == "aneurysm" and amp == 0.0:
        amp = 0.4
    if spec.shape == "coarctation" and amp == 0.0:
        amp = -0.3
    if amp != 0.0 and spec.shape in ("aneurysm", "coarctation"):
        s0 = spec.bump_center_fraction * spec.length_mm
        g = np.exp(-0.5 * ((np.asarray(s) - s0) / spec.bump_width_mm) ** 2)
        r = spec.base_radius_mm * (1.0 + amp * g)
    return r


def analytic_centerline(spec: PhantomSpec, k: int = 16, branch: str = "main") -> np.ndarray:
    """k points uniformly spaced by arc length on the analytic curve."""
    if k < 4:
        raise ValueError("k must be at least 4")
    if branch == "main":
        s = np.linspace(0.0, spec.length_mm, k)
        return _main_curve(spec, s)
    if branch == "side":
        if spec.shape != "branched":
            raise ValueError("side branch only exists for the branched shape")
        s = np.linspace(0.0, spec.branch_length_mm, k)
        return _branch_curve(spec, s)
    raise ValueError(f"unknown branch {branch!r}")


def analytic_surface(
    spec: PhantomSpec, nu: int = 64, nv: int = 64, caps: bool = True, branch: str = "main"
) -> TriMesh:
    """Swept-circle ground-truth mesh using the centerline module's frames."""
    if nu < 8 or nv < 8:
        raise ValueError("analytic surface needs nu, nv >= 8")
    pts = analytic_centerline(spec, max(nu, 4), branch=branch)
    frs = cl.frames(pts)
    if branch == "main":
        s = np.linspace(0.0, spec.length_mm, nu)
        radii = radius_profile(spec, s)
    else:
        radii = np.full(nu, spec.branch_radius_mm)
    theta = 2.0 * np.pi * np.arange(nv) / nv
    rings = np.empty((nu, nv, 3))
    # counter-clockwise in (b, n) so the loft winding points outward
    for i, fr in enumerate(frs):
        rings[i] = (
            fr.anchor[None, :]
            + radii[i] * (np.cos(theta)[:, None] * fr.b[None, :]
                          + np.sin(theta)[:, None] * fr.n[None, :])
        )
    return loft_rings(rings, caps=caps)


def _dense_curve_samples(spec: PhantomSpec, branch: str, n: int = 1024):
    length = spec.length_mm if branch == "main" else spec.branch_length_mm
    s = np.linspace(0.0, length, n)
    pts = _main_curve(spec, s) if branch == "main" else _branch_curve(spec, s)
    return s, pts


def _distance_to_curve(query: np.ndarray, s: np.ndarray, pts: np.ndarray):
    """Exact distance to the densely sampled polyline, plus arc parameter.

    Nearest sample via a KD-tree, refined by projecting onto the two
    adjacent segments.
    """
    from scipy.spatial import cKDTree

    tree = cKDTree(pts)
    _, idx = tree.query(query, k=1)
    best_d2 = np.einsum("ij,ij->i", query - pts[idx], query - pts[idx])
    best_s = s[idx]
    for lo in (np.maximum(idx - 1, 0), idx):
        hi = np.minimum(lo + 1, len(pts) - 1)
        a = pts[lo]
        b = pts[hi]
        ab = b - a
        denom = np.einsum("ij,ij->i", ab, ab)
        tproj = np.where(
            denom > 0, np.einsum("ij,ij->i", query - a, ab) / np.where(denom > 0, denom, 1.0), 0.0
        )
        tproj = np.clip(tproj, 0.0, 1.0)
        closest = a + tproj[:, None] * ab
        d2 = np.einsum("ij,ij->i", query - closest, query - closest)
        better = d2 < best_d2
        best_d2 = np.where(better, d2, best_d2)
        best_s = np.where(better, s[lo] + tproj * (s[hi] - s[lo]), best_s)
    return np.sqrt(best_d2), best_s


def rasterize(spec: PhantomSpec) -> Volume:
    """Rasterize the phantom into a float32 volume with origin (0, 0, 0)."""
    nx, ny, nz = spec.dims
    sp = np.asarray(spec.spacing_mm, dtype=np.float64)
    w = spec.wall_softness

    branches = ["main"]
    if spec.shape == "branched":
        branches.append("side")

    # bounds check: tube plus 2w must fit inside the volume
    hi_extent = (np.asarray(spec.dims, dtype=np.float64) - 1.0) * sp
    for br in branches:
        _, pts = _dense_curve_samples(spec, br, 256)
        rad = spec.base_radius_mm if br == "main" else spec.branch_radius_mm
        rmax = rad * (1.0 + max(spec.bump_amplitude, 0.0)) if br == "main" else rad
        margin = rmax + 2.0 * w
        if (pts - margin < 0).any() or (pts + margin > hi_extent).any():
            raise ValueError(f"phantom tube ({br}) exceeds volume bounds")

    xs = np.arange(nx) * sp[0]
    ys = np.arange(ny) * sp[1]
    zs = np.arange(nz) * sp[2]
    intensity = np.zeros((nz, ny, nx), dtype=np.float64)

    for br in branches:
        s_dense, pts_dense = _dense_curve_samples(spec, br)
        # z-slab chunks bound the KD-tree query memory
        for z0 in range(0, nz, 16):
            z1 = min(z0 + 16, nz)
            gz, gy, gx = np.meshgrid(zs[z0:z1], ys, xs, indexing="ij")
            query = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])
            d, s_near = _distance_to_curve(query, s_dense, pts_dense)
            if br == "main":
                r = radius_profile(spec, s_near)
            else:
                r = np.full_like(d, spec.branch_radius_mm)
            val = np.clip(1.0 - (d - r) / w, 0.0, 1.0)
            block = intensity[z0:z1].reshape(-1)
            np.maximum(block, val, out=block)

    if spec.noise_sigma > 0:
        rng = np.random.default_rng(spec.seed)
        intensity = intensity + rng.normal(0.0, spec.noise_sigma, intensity.shape)
        intensity = np.clip(intensity, 0.0, 1.0)

    # keep voxel values off the default iso-level so marching cells never
    # hit a corner exactly
    near_half = np.abs(intensity - 0.5) < 1e-7
    intensity[near_half] = 0.5 + 1e-6

    return Volume(intensity.astype(np.float32), tuple(spec.spacing_mm), (0.0, 0.0, 0.0))
