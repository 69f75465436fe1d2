"""Triangle meshes: container, topology validation, marching cubes, branch merging, I/O.

The validation report is the CFD-readiness gate for reconstructed surfaces:
watertightness here means every edge is shared by exactly two consistently
oriented triangles and no boundary loops remain.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._mc_tables import EDGE_TABLE, TRI_TABLE
from .volume import Volume

_DEGENERATE_AREA = 1e-12  # mm^2


@dataclass(frozen=True)
class TriMesh:
    """Indexed triangle mesh. vertices (N, 3) float64 mm, triangles (T, 3) int."""

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise ValueError("triangle index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def triangle_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        return 0.5 * np.linalg.norm(
            np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1
        )

    def clean(self) -> "TriMesh":
        """Drop zero-area (< 1e-12 mm^2) and duplicate triangles."""
        tris = self.triangles
        if not len(tris):
            return self
        keep = self.triangle_areas() >= _DEGENERATE_AREA
        tris = tris[keep]
        # duplicates regardless of cyclic order / winding
        key = np.sort(tris, axis=1)
        _, first = np.unique(key, axis=0, return_index=True)
        tris = tris[np.sort(first)]
        return TriMesh(self.vertices, tris)


def signed_volume(mesh: TriMesh) -> float:
    """Enclosed volume by the divergence theorem; positive for outward normals."""
    p = mesh.vertices[mesh.triangles]
    return float(np.einsum("ij,ij->i", p[:, 0], np.cross(p[:, 1], p[:, 2])).sum() / 6.0)


@dataclass(frozen=True)
class TopologyReport:
    watertight: bool
    manifold: bool
    boundary_loop_count: int
    non_manifold_edge_count: int
    euler_characteristic: int
    consistent_orientation: bool
    self_intersection_count: int

    def to_dict(self) -> dict:
        return {
            "watertight": self.watertight,
            "manifold": self.manifold,
            "boundary_loop_count": self.boundary_loop_count,
            "non_manifold_edge_count": self.non_manifold_edge_count,
            "euler_characteristic": self.euler_characteristic,
            "consistent_orientation": self.consistent_orientation,
            "self_intersection_count": self.self_intersection_count,
        }


def _edge_incidence(triangles: np.ndarray):
    """Map undirected edge -> list of directed occurrences (+1 for (a,b) a<b)."""
    edges: dict[tuple[int, int], list[int]] = {}
    for tri in triangles:
        a, b, c = (int(tri[0]), int(tri[1]), int(tri[2]))
        for u, v in ((a, b), (b, c), (c, a)):
            key = (u, v) if u < v else (v, u)
            edges.setdefault(key, []).append(1 if u < v else -1)
    return edges


def _boundary_loop_count(boundary_edges) -> int:
    if not boundary_edges:
        return 0
    parent: dict[int, int] = {}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for u, v in boundary_edges:
        parent.setdefault(u, u)
        parent.setdefault(v, v)
        ru, rv = find(u), find(v)
        if ru != rv:
            parent[ru] = rv
    return len({find(v) for v in parent})


def validate(mesh: TriMesh, check_self_intersections: bool = True) -> TopologyReport:
    """Classify mesh topology.

    An edge is manifold iff shared by exactly two triangles with opposite
    directed orientation.  Watertight requires zero boundary loops, a
    manifold edge set, and globally consistent orientation.
    """
    if mesh.n_triangles == 0:
        raise ValueError("cannot validate an empty mesh")
    edges = _edge_incidence(mesh.triangles)

    boundary = []
    non_manifold = 0
    consistent = True
    for key, dirs in edges.items():
        if len(dirs) == 1:
            boundary.append(key)
        elif len(dirs) == 2:
            if dirs[0] + dirs[1] != 0:
                non_manifold += 1
                consistent = False
        else:
            non_manifold += 1
            consistent = False

    loops = _boundary_loop_count(boundary)
    n_ref_vertices = len(np.unique(mesh.triangles))
    euler = n_ref_vertices - len(edges) + mesh.n_triangles
    manifold = non_manifold == 0
    self_x = count_self_intersections(mesh) if check_self_intersections else 0
    watertight = manifold and consistent and loops == 0
    return TopologyReport(
        watertight=watertight,
        manifold=manifold,
        boundary_loop_count=loops,
        non_manifold_edge_count=non_manifold,
        euler_characteristic=euler,
        consistent_orientation=consistent,
        self_intersection_count=self_x,
    )


# ---------------------------------------------------------------------------
# self-intersection counting (spatial hash + triangle-triangle overlap test)


def _tri_tri_intersect(t1: np.ndarray, t2: np.ndarray, eps: float = 1e-10) -> bool:
    """Moller's interval test; shared-vertex contacts are filtered by the caller."""
    v0, v1, v2 = t1
    u0, u1, u2 = t2

    n2 = np.cross(u1 - u0, u2 - u0)
    dv = np.array([np.dot(n2, v0 - u0), np.dot(n2, v1 - u0), np.dot(n2, v2 - u0)])
    scale1 = max(np.abs(dv).max(), 1.0)
    dv[np.abs(dv) < eps * scale1] = 0.0
    if (dv > 0).all() or (dv < 0).all():
        return False

    n1 = np.cross(v1 - v0, v2 - v0)
    du = np.array([np.dot(n1, u0 - v0), np.dot(n1, u1 - v0), np.dot(n1, u2 - v0)])
    scale2 = max(np.abs(du).max(), 1.0)
    du[np.abs(du) < eps * scale2] = 0.0
    if (du > 0).all() or (du < 0).all():
        return False

    if (dv == 0).all() and (du == 0).all():
        return _coplanar_tri_tri(t1, t2, n1)

    d = np.cross(n1, n2)
    axis = int(np.argmax(np.abs(d)))
    pv = np.array([v0[axis], v1[axis], v2[axis]])
    pu = np.array([u0[axis], u1[axis], u2[axis]])
    i1 = _crossing_interval(pv, dv)
    i2 = _crossing_interval(pu, du)
    if i1 is None or i2 is None:
        return False
    lo = max(i1[0], i2[0])
    hi = min(i1[1], i2[1])
    span = max(abs(i1[1] - i1[0]), abs(i2[1] - i2[0]), 1.0)
    return hi - lo > eps * span


def _crossing_interval(p: np.ndarray, d: np.ndarray):
    """Projection interval of a triangle on the plane-intersection line."""
    pos = [i for i in range(3) if d[i] > 0]
    neg = [i for i in range(3) if d[i] < 0]
    zer = [i for i in range(3) if d[i] == 0]
    if len(zer) == 3:
        return None
    ts = []
    for side_a, side_b in ((pos, neg), (neg, pos)):
        for i in side_a:
            for j in side_b:
                ts.append(p[i] + (p[j] - p[i]) * d[i] / (d[i] - d[j]))
    for i in zer:
        ts.append(p[i])
    if len(ts) < 2:
        return None
    return min(ts), max(ts)


def _coplanar_tri_tri(t1, t2, n) -> bool:
    axis = int(np.argmax(np.abs(n)))
    keep = [a for a in range(3) if a != axis]
    a = t1[:, keep]
    b = t2[:, keep]

    def seg_x(p1, p2, q1, q2):
        r = p2 - p1
        s = q2 - q1
        denom = r[0] * s[1] - r[1] * s[0]
        if abs(denom) < 1e-14:
            return False
        qp = q1 - p1
        t = (qp[0] * s[1] - qp[1] * s[0]) / denom
        u = (qp[0] * r[1] - qp[1] * r[0]) / denom
        return 1e-9 < t < 1 - 1e-9 and 1e-9 < u < 1 - 1e-9

    for i in range(3):
        for j in range(3):
            if seg_x(a[i], a[(i + 1) % 3], b[j], b[(j + 1) % 3]):
                return True

    def contains(tri2d, pt):
        sign = 0
        for i in range(3):
            e = tri2d[(i + 1) % 3] - tri2d[i]
            w = pt - tri2d[i]
            cr = e[0] * w[1] - e[1] * w[0]
            if abs(cr) < 1e-14:
                return False
            s = 1 if cr > 0 else -1
            if sign == 0:
                sign = s
            elif s != sign:
                return False
        return True

    return contains(a, b.mean(axis=0)) or contains(b, a.mean(axis=0))


def count_self_intersections(mesh: TriMesh) -> int:
    """Number of triangle pairs that properly intersect (shared-vertex pairs excluded)."""
    tris = mesh.triangles
    nt = len(tris)
    if nt < 2:
        return 0
    p = mesh.vertices[tris]
    lo = p.min(axis=1)
    hi = p.max(axis=1)
    ext = hi - lo
    cell = float(np.median(ext.max(axis=1)))
    if cell <= 0:
        cell = max(float(ext.max()), 1e-9)

    grid: dict[tuple[int, int, int], list[int]] = {}
    ilo = np.floor(lo / cell).astype(np.int64)
    ihi = np.floor(hi / cell).astype(np.int64)
    for t in range(nt):
        for gx in range(ilo[t, 0], ihi[t, 0] + 1):
            for gy in range(ilo[t, 1], ihi[t, 1] + 1):
                for gz in range(ilo[t, 2], ihi[t, 2] + 1):
                    grid.setdefault((gx, gy, gz), []).append(t)

    cand = set()
    for members in grid.values():
        m = len(members)
        if m < 2:
            continue
        for ii in range(m):
            for jj in range(ii + 1, m):
                cand.add((members[ii], members[jj]))
    if not cand:
        return 0

    pairs = np.array(sorted(cand), dtype=np.int64)
    # bbox overlap prefilter
    ok = ((lo[pairs[:, 0]] <= hi[pairs[:, 1]]) & (lo[pairs[:, 1]] <= hi[pairs[:, 0]])).all(axis=1)
    pairs = pairs[ok]
    if not len(pairs):
        return 0
    # shared-vertex pairs are adjacency, not intersections
    shares = (tris[pairs[:, 0]][:, :, None] == tris[pairs[:, 1]][:, None, :]).any(axis=(1, 2))
    pairs = pairs[~shares]
    if not len(pairs):
        return 0

    # vectorized plane-separation reject before the exact pair test
    t1 = p[pairs[:, 0]]
    t2 = p[pairs[:, 1]]
    n2 = np.cross(t2[:, 1] - t2[:, 0], t2[:, 2] - t2[:, 0])
    dv = np.einsum("pij,pj->pi", t1 - t2[:, 0:1, :], n2)
    sep1 = (dv > 1e-12).all(axis=1) | (dv < -1e-12).all(axis=1)
    n1 = np.cross(t1[:, 1] - t1[:, 0], t1[:, 2] - t1[:, 0])
    du = np.einsum("pij,pj->pi", t2 - t1[:, 0:1, :], n1)
    sep2 = (du > 1e-12).all(axis=1) | (du < -1e-12).all(axis=1)
    pairs = pairs[~(sep1 | sep2)]

    count = 0
    for i, j in pairs:
        if _tri_tri_intersect(p[i], p[j]):
            count += 1
    return count


# ---------------------------------------------------------------------------
# lofting helper shared by phantom surfaces and NURBS tessellation


def loft_rings(rings: np.ndarray, caps: bool) -> TriMesh:
    """Mesh a stack of closed rings into a tube.

    rings has shape (nu, nv, 3) with each ring ordered counter-clockwise
    about the direction of increasing u, which makes the winding here point
    outward.  Optional triangle-fan caps close the two ends at the ring
    centroids.
    """
    rings = np.asarray(rings, dtype=np.float64)
    nu, nv, _ = rings.shape
    if nu < 2 or nv < 3:
        raise ValueError("need at least 2 rings of 3 points to loft")
    verts = rings.reshape(nu * nv, 3)
    tris = []
    for i in range(nu - 1):
        base = i * nv
        nxt = (i + 1) * nv
        for j in range(nv):
            j2 = (j + 1) % nv
            tris.append((base + j, base + j2, nxt + j2))
            tris.append((base + j, nxt + j2, nxt + j))
    if caps:
        c0 = rings[0].mean(axis=0)
        c1 = rings[-1].mean(axis=0)
        verts = np.vstack([verts, c0[None, :], c1[None, :]])
        a0 = nu * nv
        a1 = nu * nv + 1
        start = (nu - 1) * nv
        for j in range(nv):
            j2 = (j + 1) % nv
            tris.append((a0, j2, j))
            tris.append((a1, start + j, start + j2))
    return TriMesh(verts, np.asarray(tris, dtype=np.int64))


# ---------------------------------------------------------------------------
# marching cubes

# cell-local edge -> (corner a, corner b) in the classic corner layout
_EDGE_CORNERS = (
    (0, 1), (1, 2), (2, 3), (3, 0),
    (4, 5), (5, 6), (6, 7), (7, 4),
    (0, 4), (1, 5), (2, 6), (3, 7),
)
# corner -> (dx, dy, dz) offsets from the cell's low corner
_CORNER_OFFSETS = (
    (0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
    (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1),
)
# canonical global key (axis, x, y, z) per cell-local edge
_EDGE_KEYS = tuple(
    (
        0 if _CORNER_OFFSETS[a][0] != _CORNER_OFFSETS[b][0]
        else (1 if _CORNER_OFFSETS[a][1] != _CORNER_OFFSETS[b][1] else 2),
        min(_CORNER_OFFSETS[a][0], _CORNER_OFFSETS[b][0]),
        min(_CORNER_OFFSETS[a][1], _CORNER_OFFSETS[b][1]),
        min(_CORNER_OFFSETS[a][2], _CORNER_OFFSETS[b][2]),
    )
    for a, b in _EDGE_CORNERS
)


def marching_cubes(vol: Volume, iso: float = 0.5) -> TriMesh:
    """Standard 256-case marching cubes with linear edge interpolation.

    Vertices are produced in world coordinates and welded by global edge
    key, so the result is vertex-shared.  Triangles are wound outward for
    superlevel-set ({value >= iso}) interiors.  No ambiguity resolution is
    applied.
    """
    data = vol.data.astype(np.float64)
    if not (float(data.min()) < iso < float(data.max())):
        raise ValueError(f"iso {iso} outside data range [{data.min()}, {data.max()}]")
    nx, ny, nz = vol.dims
    below = data < iso

    ci = np.zeros((nz - 1, ny - 1, nx - 1), dtype=np.uint16)
    for bit, (dx, dy, dz) in enumerate(_CORNER_OFFSETS):
        sl = below[dz : dz + nz - 1, dy : dy + ny - 1, dx : dx + nx - 1]
        ci |= sl.astype(np.uint16) << bit

    active = np.argwhere((ci > 0) & (ci < 255))
    origin = np.asarray(vol.origin, dtype=np.float64)
    spacing = np.asarray(vol.spacing, dtype=np.float64)

    verts: list[np.ndarray] = []
    vert_ids: dict[tuple[int, int, int, int], int] = {}
    tris: list[tuple[int, int, int]] = []

    for zc, yc, xc in active:
        case = int(ci[zc, yc, xc])
        emask = EDGE_TABLE[case]
        local = {}
        for e in range(12):
            if not (emask >> e) & 1:
                continue
            ax, ox, oy, oz = _EDGE_KEYS[e]
            key = (ax, xc + ox, yc + oy, zc + oz)
            vid = vert_ids.get(key)
            if vid is None:
                ca, cb = _EDGE_CORNERS[e]
                ax_a = _CORNER_OFFSETS[ca]
                ax_b = _CORNER_OFFSETS[cb]
                va = data[zc + ax_a[2], yc + ax_a[1], xc + ax_a[0]]
                vb = data[zc + ax_b[2], yc + ax_b[1], xc + ax_b[0]]
                t = (iso - va) / (vb - va)
                t = min(max(t, 0.0), 1.0)
                ia = np.array([xc + ax_a[0], yc + ax_a[1], zc + ax_a[2]], dtype=np.float64)
                ib = np.array([xc + ax_b[0], yc + ax_b[1], zc + ax_b[2]], dtype=np.float64)
                pos = origin + (ia + t * (ib - ia)) * spacing
                vid = len(verts)
                verts.append(pos)
                vert_ids[key] = vid
            local[e] = vid
        tt = TRI_TABLE[case]
        for k in range(0, len(tt), 3):
            tris.append((local[tt[k]], local[tt[k + 1]], local[tt[k + 2]]))

    if not tris:
        raise ValueError("iso-surface is empty")
    return TriMesh(np.asarray(verts), np.asarray(tris, dtype=np.int64)).clean()


# ---------------------------------------------------------------------------
# inside test and branch merging


def points_inside_mesh(points: np.ndarray, mesh: TriMesh) -> np.ndarray:
    """Ray-parity containment test with deterministic perturbation on grazing hits."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    tri = mesh.vertices[mesh.triangles]
    v0, e1, e2 = tri[:, 0], tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]
    # axis ray first, then fixed fallback directions for grazing hits
    dirs = [
        np.array([1.0, 0.0, 0.0]),
        np.array([0.12905, 0.98237, 0.13471]),
        np.array([-0.33296, 0.54713, 0.76804]),
        np.array([0.57735, -0.57735, 0.57735]),
    ]

    def parity(p, d):
        h = np.cross(d, e2)
        det = np.einsum("ij,ij->i", e1, h)
        ok = np.abs(det) > 1e-12
        safe = np.where(ok, det, 1.0)
        s = p - v0
        u = np.einsum("ij,ij->i", s, h) / safe
        q = np.cross(s, e1)
        v = (q @ d) / safe
        t = np.einsum("ij,ij->i", e2, q) / safe
        hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 1e-9)
        grazed = bool(
            (hit & ((u < 1e-9) | (v < 1e-9) | (u + v > 1 - 1e-9))).any()
        )
        return bool(hit.sum() % 2 == 1), grazed

    out = np.zeros(len(pts), dtype=bool)
    for pi, p in enumerate(pts):
        for d in dirs:
            inside, grazed = parity(p, d / np.linalg.norm(d))
            if not grazed:
                break
        out[pi] = inside  # last direction's parity if every ray grazed
    return out


def _ordered_boundary_loops(mesh: TriMesh) -> list[list[int]]:
    """Boundary loops as ordered vertex index lists (consistent winding assumed)."""
    edges = {}
    for tri in mesh.triangles:
        a, b, c = (int(tri[0]), int(tri[1]), int(tri[2]))
        for u, v in ((a, b), (b, c), (c, a)):
            key = (u, v) if u < v else (v, u)
            edges.setdefault(key, []).append((u, v))
    nxt = {}
    for key, occ in edges.items():
        if len(occ) == 1:
            u, v = occ[0]
            # boundary loop runs opposite to the lone interior edge direction
            nxt[v] = u
    loops = []
    seen = set()
    for start in sorted(nxt):
        if start in seen:
            continue
        loop = [start]
        seen.add(start)
        cur = nxt[start]
        while cur != start and cur not in seen:
            loop.append(cur)
            seen.add(cur)
            cur = nxt.get(cur)
            if cur is None:
                break
        if cur == start and len(loop) >= 3:
            loops.append(loop)
    return loops


@dataclass(frozen=True)
class JunctionReport:
    removed_triangles: int
    bridged_loops: int
    max_bridge_length_mm: float
    residual_gap_mm: float

    def to_dict(self) -> dict:
        return {
            "removed_triangles": self.removed_triangles,
            "bridged_loops": self.bridged_loops,
            "max_bridge_length_mm": self.max_bridge_length_mm,
            "residual_gap_mm": self.residual_gap_mm,
        }


def merge_branches(main: TriMesh, branch: TriMesh) -> tuple[TriMesh, JunctionReport]:
    """Cull the branch triangles inside the main tube and bridge the cut to it.

    Branch triangles whose centroids lie inside the main surface (ray
    parity) are removed; each boundary loop opened by the cull is connected
    to its vertex-wise nearest points on the main mesh by a triangle strip.
    The union is connected but explicitly not guaranteed watertight.
    """
    from scipy.spatial import cKDTree

    centroids = branch.vertices[branch.triangles].mean(axis=1)
    inside = points_inside_mesh(centroids, main)
    if inside.all():
        raise ValueError("branch lies entirely inside the main mesh")
    if not inside.any():
        raise ValueError("branch does not intersect the main mesh")

    kept = branch.triangles[~inside]
    removed_vertex_set = set(np.unique(branch.triangles[inside]).tolist())
    culled = TriMesh(branch.vertices, kept)

    pre_loops = {frozenset(l) for l in _ordered_boundary_loops(branch)}
    loops = [
        l
        for l in _ordered_boundary_loops(culled)
        if frozenset(l) not in pre_loops and (set(l) & removed_vertex_set)
    ]

    tree = cKDTree(main.vertices)
    nv_main = main.n_vertices
    verts = np.vstack([main.vertices, branch.vertices])
    tris = [main.triangles, kept + nv_main]

    max_bridge = 0.0
    max_gap = 0.0
    strip = []
    for loop in loops:
        lpts = branch.vertices[loop]
        dist, anchor = tree.query(lpts)
        max_bridge = max(max_bridge, float(dist.max()))
        n = len(loop)
        for i in range(n):
            j = (i + 1) % n
            vi = loop[i] + nv_main
            vj = loop[j] + nv_main
            mi = int(anchor[i])
            mj = int(anchor[j])
            max_gap = max(max_gap, float(np.linalg.norm(main.vertices[mi] - main.vertices[mj])))
            if mi == mj:
                strip.append((vi, vj, mi))
            else:
                strip.append((vi, vj, mj))
                strip.append((vi, mj, mi))
    if strip:
        tris.append(np.asarray(strip, dtype=np.int64))

    merged = TriMesh(verts, np.vstack(tris)).clean()
    report = JunctionReport(
        removed_triangles=int(inside.sum()),
        bridged_loops=len(loops),
        max_bridge_length_mm=max_bridge,
        residual_gap_mm=max_gap,
    )
    return merged, report


# ---------------------------------------------------------------------------
# file formats


def write_obj(mesh: TriMesh, path) -> None:
    """ASCII OBJ, 9 significant digits, 1-based face indices."""
    lines = []
    for v in mesh.vertices:
        lines.append(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}")
    for t in mesh.triangles:
        lines.append(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path) -> TriMesh:
    verts = []
    tris = []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(p.split("/")[0]) - 1 for p in parts[1:4]]
            tris.append(idx)
    if not verts or not tris:
        raise ValueError(f"no mesh data in {path}")
    return TriMesh(np.asarray(verts), np.asarray(tris, dtype=np.int64))


def write_stl(mesh: TriMesh, path) -> None:
    """Binary little-endian STL: 80-byte header, uint32 count, 50 bytes/triangle."""
    p = mesh.vertices[mesh.triangles].astype("<f4")
    n = np.cross(
        p[:, 1].astype(np.float64) - p[:, 0].astype(np.float64),
        p[:, 2].astype(np.float64) - p[:, 0].astype(np.float64),
    )
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    n = np.where(norm > 0, n / np.where(norm > 0, norm, 1.0), 0.0).astype("<f4")
    with open(path, "wb") as f:
        f.write(b"vesselmesh binary stl".ljust(80, b"\0"))
        f.write(struct.pack("<I", mesh.n_triangles))
        for i in range(mesh.n_triangles):
            f.write(n[i].tobytes())
            f.write(p[i].tobytes())
            f.write(struct.pack("<H", 0))


def read_stl(path) -> TriMesh:
    raw = Path(path).read_bytes()
    if len(raw) < 84:
        raise ValueError("truncated STL file")
    (count,) = struct.unpack_from("<I", raw, 80)
    expected = 84 + 50 * count
    if len(raw) != expected:
        raise ValueError(f"STL length {len(raw)} != expected {expected} for {count} triangles")
    tri_pts = np.zeros((count, 3, 3), dtype=np.float64)
    off = 84
    for i in range(count):
        vals = struct.unpack_from("<12f", raw, off)
        tri_pts[i] = np.asarray(vals[3:], dtype=np.float64).reshape(3, 3)
        off += 50
    flat = tri_pts.reshape(-1, 3)
    uniq, inv = np.unique(flat, axis=0, return_inverse=True)
    return TriMesh(uniq, inv.reshape(-1, 3).astype(np.int64))
