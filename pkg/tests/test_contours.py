import numpy as np
import pytest

from vesselmesh import contours, lumenseg, phantom


def _ring(radius, m, phase=0.0, z=0.0, center=(0.0, 0.0)):
    theta = 2 * np.pi * np.arange(m) / m + phase
    return np.column_stack(
        [center[0] + radius * np.cos(theta), center[1] + radius * np.sin(theta),
         np.full(m, z)]
    )


def _contour(points):
    return lumenseg.Contour(points, "world-3d")


def test_exact_shift_recovered():
    prev = _ring(5.0, 32)
    prev += np.random.default_rng(0).normal(0, 0.3, prev.shape)
    nxt = np.roll(prev, 5, axis=0)
    k, cost = contours.best_shift(prev, nxt)
    assert k == 5
    assert cost <= 1e-20
    aligned = contours.align_adjacent(_contour(prev), _contour(nxt))
    assert np.array_equal(aligned.points, prev)


def test_concentric_phase_offset_closed_form():
    m = 32
    for theta in (0.3, 1.1, 2.0):
        prev = _ring(5.0, m)
        nxt = _ring(7.0, m, phase=-theta)
        k, _ = contours.best_shift(prev, nxt)
        # closed-form optimum for circles: the shift undoing the phase offset
        assert k == round(theta * m / (2 * np.pi)) % m


def test_exhaustive_search_is_optimal():
    rng = np.random.default_rng(1)
    m = 32
    prev = _ring(4.0, m) + rng.normal(0, 0.5, (m, 3))
    nxt = _ring(4.5, m, phase=0.7) + rng.normal(0, 0.5, (m, 3))
    k_star, best = contours.best_shift(prev, nxt)
    # brute-force certification over all m candidate shifts
    costs = [
        float(((prev - np.roll(nxt, -k, axis=0)) ** 2).sum()) for k in range(m)
    ]
    assert best == pytest.approx(min(costs), rel=1e-12)
    assert k_star == int(np.argmin(costs))


def test_alignment_preserves_geometry():
    rng = np.random.default_rng(2)
    prev = _ring(5.0, 32) + rng.normal(0, 0.2, (32, 3))
    nxt = _ring(5.5, 32, phase=0.4, z=2.0) + rng.normal(0, 0.2, (32, 3))
    aligned = contours.align_adjacent(_contour(prev), _contour(nxt))
    assert sorted(map(tuple, aligned.points)) == sorted(map(tuple, nxt))
    per_in = _contour(nxt).perimeter()
    per_out = aligned.perimeter()
    assert per_out == pytest.approx(per_in, rel=1e-12)


def test_mismatched_m_errors():
    with pytest.raises(ValueError):
        contours.align_adjacent(_contour(_ring(5, 32)), _contour(_ring(5, 16)))


def test_chain_identical_unchanged():
    ring = _ring(5.0, 32)
    chain = [_contour(ring.copy()) for _ in range(6)]
    aligned = contours.align_chain(chain)
    for c in aligned:
        assert np.array_equal(c.points, ring)


def test_chain_recovers_injected_shifts():
    rng = np.random.default_rng(3)
    base = []
    z = 0.0
    for i in range(8):
        ring = _ring(5.0 + 0.1 * i, 32, z=z) + rng.normal(0, 0.05, (32, 3))
        base.append(ring)
        z += 2.0
    shifted = [base[0]] + [np.roll(r, int(rng.integers(0, 32)), axis=0) for r in base[1:]]
    aligned = contours.align_chain([_contour(r) for r in shifted])
    for got, want in zip(aligned, base):
        assert np.abs(got.points - want).max() <= 1e-12
    # total chain cost equals the unshifted chain's cost
    def chain_cost(cs):
        return sum(((a - b) ** 2).sum() for a, b in zip(cs[:-1], cs[1:]))
    assert chain_cost([c.points for c in aligned]) == pytest.approx(chain_cost(base), rel=1e-12)


def test_arc_stack_alignment_improves_correspondence(arc_spec):
    # contour stack on the arc phantom with deliberate index scrambling
    rng = np.random.default_rng(4)
    from vesselmesh import centerline as cl, slicer, lumenseg as seg

    vol = phantom.rasterize(arc_spec)
    pts = phantom.analytic_centerline(arc_spec, 8)
    frs = cl.frames(pts)
    stack = []
    for fr in frs:
        plane = slicer.SlicePlane(fr, half_extent=4 * arc_spec.base_radius_mm, n_pix=64)
        slc = slicer.extract_slice(vol, plane)
        c = (plane.n_pix - 1) // 2
        contour = seg.resample_contour(seg.trace_boundary(seg.segment_slice(slc, (c, c)), plane), 32)
        stack.append(slicer.lift_to_3d(contour.points, plane))
    scrambled = [stack[0]] + [np.roll(s, int(rng.integers(1, 31)), axis=0) for s in stack[1:]]

    def mean_corresponding(cs):
        return np.mean([np.linalg.norm(a - b, axis=1).mean() for a, b in zip(cs[:-1], cs[1:])])

    aligned = contours.align_chain([_contour(s) for s in scrambled])
    assert mean_corresponding([c.points for c in aligned]) <= mean_corresponding(scrambled)
