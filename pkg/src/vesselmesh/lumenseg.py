"""Prompt-seeded lumen segmentation, boundary tracing, contour resampling.

The segmenter is a deterministic stand-in for an interactive model: a
threshold flood fill seeded at the projected centerline point.  It sits
behind :func:`segment_slice` so externally produced masks (PGM files) can
be substituted per station.  Boundary extraction is an exact Moore-neighbor
trace of the mask, which on binary input replaces an edge-detection pass
with no loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .slicer import Slice, SlicePlane

_MIN_CONTOUR_POINTS = 8
_PROMPT_SEARCH_RADIUS = 5  # pixels


class SegmentationFailed(RuntimeError):
    """No above-threshold pixel reachable from the prompt."""


@dataclass(frozen=True)
class Mask:
    pixels: np.ndarray  # (n, n) bool
    prompt: tuple[int, int]

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=bool)
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "prompt", (int(self.prompt[0]), int(self.prompt[1])))

    @property
    def area_pixels(self) -> int:
        return int(self.pixels.sum())


@dataclass(frozen=True)
class Contour:
    """Closed polyline; the last point implicitly connects to the first.

    space is "plane-mm" for (M, 2) in-plane coordinates (along b, along n)
    or "world-3d" for (M, 3) world points.
    """

    points: np.ndarray
    space: str

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if self.space == "plane-mm":
            if pts.ndim != 2 or pts.shape[1] != 2:
                raise ValueError(f"plane-mm contour must be (M, 2), got {pts.shape}")
        elif self.space == "world-3d":
            if pts.ndim != 2 or pts.shape[1] != 3:
                raise ValueError(f"world-3d contour must be (M, 3), got {pts.shape}")
        else:
            raise ValueError(f"unknown contour space {self.space!r}")
        if len(pts) < _MIN_CONTOUR_POINTS:
            raise ValueError(
                f"contour needs M >= {_MIN_CONTOUR_POINTS} points, got {len(pts)}"
            )
        object.__setattr__(self, "points", pts)

    def perimeter(self) -> float:
        rolled = np.roll(self.points, -1, axis=0)
        return float(np.linalg.norm(rolled - self.points, axis=1).sum())


def signed_area(points2d) -> float:
    p = np.asarray(points2d, dtype=np.float64)
    q = np.roll(p, -1, axis=0)
    return float(0.5 * np.sum(p[:, 0] * q[:, 1] - q[:, 0] * p[:, 1]))


def is_simple(points2d, tol: float = 1e-12) -> bool:
    """O(M^2) proper segment-intersection check on a closed polygon."""
    p = np.asarray(points2d, dtype=np.float64)
    m = len(p)
    segs = [(p[i], p[(i + 1) % m]) for i in range(m)]
    for i in range(m):
        a1, a2 = segs[i]
        for j in range(i + 1, m):
            if j == i or (j + 1) % m == i or (i + 1) % m == j:
                continue  # adjacent segments share an endpoint
            b1, b2 = segs[j]
            r = a2 - a1
            s = b2 - b1
            denom = r[0] * s[1] - r[1] * s[0]
            if abs(denom) < tol:
                continue
            qp = b1 - a1
            t = (qp[0] * s[1] - qp[1] * s[0]) / denom
            u = (qp[0] * r[1] - qp[1] * r[0]) / denom
            if tol < t < 1 - tol and tol < u < 1 - tol:
                return False
    return True


def segment_slice(slc: Slice, prompt_pixel, threshold: float = 0.5) -> Mask:
    """4-connected flood fill of the superlevel set from the prompt pixel.

    If the prompt itself is below threshold, the nearest above-threshold
    pixel within a 5-pixel radius is used instead (row-major tie-break),
    which tolerates generated centerline points that are not perfectly
    centered.
    """
    if not (0.0 < threshold < 1.0):
        raise ValueError("threshold must lie strictly between 0 and 1")
    px = slc.pixels
    n = px.shape[0]
    i0, j0 = int(prompt_pixel[0]), int(prompt_pixel[1])
    if not (0 <= i0 < n and 0 <= j0 < n):
        raise SegmentationFailed(f"prompt pixel {(i0, j0)} outside the slice")
    above = px >= threshold

    seed = (i0, j0)
    if not above[seed]:
        best = None
        r = _PROMPT_SEARCH_RADIUS
        for i in range(max(0, i0 - r), min(n, i0 + r + 1)):
            for j in range(max(0, j0 - r), min(n, j0 + r + 1)):
                if not above[i, j]:
                    continue
                d2 = (i - i0) ** 2 + (j - j0) ** 2
                if d2 > r * r:
                    continue
                cand = (d2, i, j)
                if best is None or cand < best:
                    best = cand
        if best is None:
            raise SegmentationFailed(
                f"no pixel >= {threshold} within {r} pixels of prompt {(i0, j0)}"
            )
        seed = (best[1], best[2])

    structure = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
    labels, _ = ndimage.label(above, structure=structure)
    mask = labels == labels[seed]
    return Mask(mask, seed)


# Moore neighborhood in clockwise order starting east, image coords (row down)
_MOORE = ((0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1))


def _moore_trace(mask: np.ndarray) -> list[tuple[int, int]]:
    """One period of the outer Moore-boundary cycle, starting at the
    lexicographically smallest boundary pixel."""
    fg = np.argwhere(mask)
    if not len(fg):
        raise ValueError("empty mask")
    start = tuple(int(x) for x in min(fg.tolist()))
    if len(fg) == 1:
        return [start]

    def is_fg(p):
        return 0 <= p[0] < mask.shape[0] and 0 <= p[1] < mask.shape[1] and mask[p]

    def advance(p, b):
        # scan the Moore ring clockwise starting just past the backtrack
        k0 = _MOORE.index((b[0] - p[0], b[1] - p[1]))
        for k in range(1, 9):
            d = _MOORE[(k0 + k) % 8]
            cand = (p[0] + d[0], p[1] + d[1])
            if is_fg(cand):
                return cand, b
            b = cand
        return None, b

    # the west neighbor of the scan-order start is background by construction
    p, b = start, (start[0], start[1] - 1)
    seen: dict[tuple, int] = {}
    states: list[tuple[int, int]] = []
    for _ in range(8 * len(fg) + 16):
        nxt, b = advance(p, b)
        if nxt is None:
            return [start]
        state = (nxt, b)
        if state in seen:
            cycle = states[seen[state] :]
            pivot = cycle.index(min(cycle))
            return cycle[pivot:] + cycle[:pivot]
        seen[state] = len(states)
        states.append(nxt)
        p = nxt
    raise RuntimeError("boundary trace did not close")


def trace_boundary(mask: Mask, plane: SlicePlane) -> Contour:
    """Outermost boundary of the mask as a CCW plane-mm contour.

    Moore-neighbor tracing over pixel centers; the start point is the
    boundary pixel with lexicographically smallest (row, col).  Pixel
    indices convert to in-plane mm through the slicer contract.
    """
    if not mask.pixels.any():
        raise ValueError("cannot trace an empty mask")
    trace = _moore_trace(mask.pixels)
    pts = plane.pixel_to_plane(np.asarray(trace, dtype=np.float64))
    if len(pts) >= 3 and signed_area(pts) < 0:
        pts = np.vstack([pts[:1], pts[1:][::-1]])
    return Contour(pts, "plane-mm")


def resample_contour(contour: Contour, m: int = 32) -> Contour:
    """m points equally spaced by arc length along the closed contour.

    The seam (index 0) is the input vertex with the maximum first in-plane
    coordinate (the b axis), ties broken by lowest index; orientation is
    preserved.
    """
    if contour.space != "plane-mm":
        raise ValueError("resampling operates on plane-mm contours")
    if m < _MIN_CONTOUR_POINTS:
        raise ValueError(f"m must be at least {_MIN_CONTOUR_POINTS}")
    p = contour.points
    n = len(p)
    edges = np.roll(p, -1, axis=0) - p
    seg_len = np.linalg.norm(edges, axis=1)
    perim = float(seg_len.sum())
    if perim <= 0:
        raise ValueError("degenerate zero-length contour")
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])

    seam = int(np.argmax(p[:, 0]))
    s0 = cum[seam]
    out = np.empty((m, 2))
    out[0] = p[seam]
    for k in range(1, m):
        s = (s0 + k * perim / m) % perim
        e = int(np.searchsorted(cum, s, side="right")) - 1
        e = min(e, n - 1)
        t = (s - cum[e]) / seg_len[e] if seg_len[e] > 0 else 0.0
        out[k] = p[e] + t * edges[e]
    return Contour(out, "plane-mm")
