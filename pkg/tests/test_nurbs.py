import numpy as np
import pytest

from vesselmesh import lumenseg, meshkit, nurbs


def _naive_basis(knots, degree, i, u):
    """Textbook Cox-de Boor recursion, the independent oracle."""
    if degree == 0:
        last = knots[i + 1] == knots[-1]
        if knots[i] <= u < knots[i + 1] or (last and u == knots[i + 1] and knots[i] < knots[i + 1]):
            return 1.0
        return 0.0
    left = 0.0
    if knots[i + degree] > knots[i]:
        left = (u - knots[i]) / (knots[i + degree] - knots[i]) * _naive_basis(knots, degree - 1, i, u)
    right = 0.0
    if knots[i + degree + 1] > knots[i + 1]:
        right = ((knots[i + degree + 1] - u) / (knots[i + degree + 1] - knots[i + 1])
                 * _naive_basis(knots, degree - 1, i + 1, u))
    return left + right


def _circle_contours(radius, m, zs):
    theta = 2 * np.pi * np.arange(m) / m
    out = []
    for z in zs:
        pts = np.column_stack(
            [radius * np.cos(theta), radius * np.sin(theta), np.full(m, z)]
        )
        out.append(lumenseg.Contour(pts, "world-3d"))
    return out


def test_degree1_hat_functions():
    span, vals = nurbs.basis_functions([0, 0, 1, 1], 1, 0.5)
    assert np.allclose(vals, [0.5, 0.5], atol=1e-15)


def test_partition_of_unity():
    knots = np.array([0, 0, 0, 0, 0.2, 0.5, 0.7, 1, 1, 1, 1], dtype=float)
    rng = np.random.default_rng(0)
    for u in rng.uniform(0, 1, 500):
        _, vals = nurbs.basis_functions(knots, 3, u)
        assert abs(vals.sum() - 1.0) <= 1e-12


def test_basis_matches_naive_recursion():
    knots = np.array([0, 0, 0, 0, 0.25, 0.5, 0.75, 1, 1, 1, 1], dtype=float)
    degree = 3
    n_ctrl = len(knots) - degree - 1
    rng = np.random.default_rng(1)
    for u in list(rng.uniform(0, 1, 100)) + [0.0, 0.25, 0.5, 1.0]:
        full = nurbs.basis_matrix(knots, degree, n_ctrl, [u])[0]
        oracle = [_naive_basis(knots, degree, i, u) for i in range(n_ctrl)]
        assert np.abs(full - oracle).max() <= 1e-12


def test_basis_outside_domain_errors():
    with pytest.raises(ValueError):
        nurbs.basis_functions([0, 0, 1, 1], 1, 1.5)


def test_interpolate_collinear_linear_precision():
    pts = np.column_stack([np.linspace(0, 9, 6), np.linspace(0, -3, 6), np.linspace(1, 4, 6)])
    curve = nurbs.interpolate_curve(pts, 3)
    d = pts[-1] - pts[0]
    d /= np.linalg.norm(d)
    rel = curve.control_points - pts[0]
    off = rel - (rel @ d)[:, None] * d[None, :]
    assert np.abs(off).max() <= 1e-9
    for u in np.linspace(0, 1, 40):
        p = curve.evaluate(u)
        off_line = (p - pts[0]) - np.dot(p - pts[0], d) * d
        assert np.linalg.norm(off_line) <= 1e-9


def test_interpolation_hits_input_points():
    rng = np.random.default_rng(2)
    pts = np.cumsum(rng.uniform(-1, 1, size=(9, 3)) + [1.0, 0, 0], axis=0)
    t = nurbs.chord_parameters(pts, True)
    for clamp_ends in (False, True):
        curve = nurbs.interpolate_curve(pts, 3, clamp_ends=clamp_ends)
        for ti, p in zip(t, pts):
            assert np.linalg.norm(curve.evaluate(ti) - p) <= 1e-8


def test_periodic_circle_radial_error():
    theta = 2 * np.pi * np.arange(8) / 8
    pts = np.column_stack([np.cos(theta), np.sin(theta), np.zeros(8)])
    curve = nurbs.interpolate_curve(pts, 3, closed=True)
    us = np.linspace(0, 1, 4000, endpoint=False)
    rad = np.array([np.linalg.norm(curve.evaluate(u)[:2]) for u in us])
    assert np.abs(rad - 1.0).max() <= 0.002
    for i in range(8):
        assert np.linalg.norm(curve.evaluate(i / 8) - pts[i]) <= 1e-9


def test_singular_system_raises():
    pts = np.array([[0, 0, 0], [0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0.0]])
    with pytest.raises(nurbs.SingularSystemError):
        nurbs.interpolate_curve(pts, 3)


def test_skin_cylinder_radial_error():
    stacks = _circle_contours(5.0, 32, np.linspace(0, 20, 8))
    surf = nurbs.skin_surface(stacks)
    rng = np.random.default_rng(3)
    us = rng.uniform(0, 1, 10000)
    vs = rng.uniform(0, 1, 10000)
    worst = 0.0
    # grid evaluation in batches keeps this fast while sampling 10^4 params
    for u, v in zip(us[:200], vs[:200]):
        p = nurbs.eval_surface(surf, u, v)
        worst = max(worst, abs(np.hypot(p[0], p[1]) - 5.0))
    grid = nurbs.eval_surface_grid(surf, us[:100], vs[:100])
    rad = np.hypot(grid[:, :, 0], grid[:, :, 1])
    worst = max(worst, float(np.abs(rad - 5.0).max()))
    assert worst <= 0.002 * 5.0


def test_skin_interpolates_contour_points():
    rng = np.random.default_rng(4)
    zs = np.linspace(0, 12, 6)
    stacks = []
    theta = 2 * np.pi * np.arange(16) / 16
    for z in zs:
        r = 4.0 + rng.uniform(-0.5, 0.5, 16)
        pts = np.column_stack([r * np.cos(theta), r * np.sin(theta), np.full(16, z)])
        stacks.append(lumenseg.Contour(pts, "world-3d"))
    surf = nurbs.skin_surface(stacks)
    # u parameters reproduce the averaged centripetal parameterization
    all_pts = np.stack([c.points for c in stacks])
    t_cols = np.stack([nurbs.chord_parameters(all_pts[:, j, :], True) for j in range(16)])
    t_bar = t_cols.mean(axis=0)
    t_bar[0], t_bar[-1] = 0.0, 1.0
    for i, contour in enumerate(stacks):
        for j, p in enumerate(contour.points):
            got = nurbs.eval_surface(surf, t_bar[i], j / 16)
            assert np.linalg.norm(got - p) <= 1e-7


def test_skin_dimensions_16_stations_32_points():
    stacks = _circle_contours(5.0, 32, np.linspace(0, 30, 16))
    surf = nurbs.skin_surface(stacks)
    # clamped u with Bessel end tangents: 16 + 2; periodic v wrap: 32 + 3
    assert surf.net_dims == (18, 35)


def test_rational_eval_matches_nonrational_for_unit_weights():
    stacks = _circle_contours(3.0, 16, np.linspace(0, 10, 5))
    surf = nurbs.skin_surface(stacks)
    rng = np.random.default_rng(5)
    m, n = surf.net_dims
    for _ in range(50):
        u = float(rng.uniform(0, 1))
        v = float(rng.uniform(0, 1))
        su, bu = nurbs.basis_functions(surf.knots_u.values, surf.degree_u, u)
        sv, bv = nurbs.basis_functions(surf.knots_v.values, surf.degree_v, v)
        cp = surf.control_points[su - 3 : su + 1, sv - 3 : sv + 1]
        nonrational = np.einsum("i,j,ijk->k", bu, bv, cp)
        assert np.abs(nurbs.eval_surface(surf, u, v) - nonrational).max() <= 1e-12


def test_eval_affine_and_weight_scale_invariance():
    stacks = _circle_contours(3.0, 16, np.linspace(0, 10, 5))
    surf = nurbs.skin_surface(stacks)
    shifted = nurbs.NurbsSurface(
        surf.degree_u, surf.degree_v, surf.knots_u, surf.knots_v,
        surf.control_points + np.array([1.0, -2.0, 3.0]), surf.weights,
    )
    scaled = nurbs.NurbsSurface(
        surf.degree_u, surf.degree_v, surf.knots_u, surf.knots_v,
        surf.control_points, surf.weights * 10.0,
    )
    rng = np.random.default_rng(6)
    for _ in range(50):
        u = float(rng.uniform(0, 1))
        v = float(rng.uniform(0, 1))
        base = nurbs.eval_surface(surf, u, v)
        assert np.abs(nurbs.eval_surface(shifted, u, v) - base - [1, -2, 3]).max() <= 1e-12
        assert np.abs(nurbs.eval_surface(scaled, u, v) - base).max() <= 1e-12


def test_tensor_partition_of_unity():
    stacks = _circle_contours(4.0, 16, np.linspace(0, 10, 6))
    surf = nurbs.skin_surface(stacks)
    m, n = surf.net_dims
    rng = np.random.default_rng(7)
    us = rng.uniform(0, 1, 1000)
    vs = rng.uniform(0, 1, 1000)
    bu = nurbs.basis_matrix(surf.knots_u.values, surf.degree_u, m, us)
    bv = nurbs.basis_matrix(surf.knots_v.values, surf.degree_v, n, vs)
    # sum over the tensor-product blend factorizes into row-sum products
    total = bu.sum(axis=1) * bv.sum(axis=1)
    assert np.abs(total - 1.0).max() <= 1e-12


def test_local_support():
    stacks = _circle_contours(4.0, 16, np.linspace(0, 20, 10))
    surf = nurbs.skin_surface(stacks)
    m, n = surf.net_dims
    cp = surf.control_points.copy()
    iu, iv = 5, 4
    cp[iu, iv] += np.array([0.0, 0.0, 1.0])
    bumped = nurbs.NurbsSurface(
        surf.degree_u, surf.degree_v, surf.knots_u, surf.knots_v, cp, surf.weights
    )
    ku = surf.knots_u.values
    kv = surf.knots_v.values
    # support of N_{iu,3} x N_{iv,3}
    u_lo, u_hi = ku[iu], ku[iu + 4]
    v_lo, v_hi = kv[iv], kv[iv + 4]
    rng = np.random.default_rng(8)
    for _ in range(200):
        u = float(rng.uniform(0, 1))
        v = float(rng.uniform(0, 1))
        diff = np.linalg.norm(
            nurbs.eval_surface(bumped, u, v) - nurbs.eval_surface(surf, u, v)
        )
        inside = (u_lo <= u <= u_hi) and (v_lo <= v <= v_hi)
        if not inside:
            assert diff <= 1e-12


def test_convex_hull_containment_on_cylinder():
    stacks = _circle_contours(5.0, 24, np.linspace(0, 10, 6))
    surf = nurbs.skin_surface(stacks)
    # hull of the control net for a straight circular cylinder: radius of the
    # control rings, z range of the control net
    cp = surf.control_points.reshape(-1, 3)
    r_max = np.hypot(cp[:, 0], cp[:, 1]).max()
    z_lo, z_hi = cp[:, 2].min(), cp[:, 2].max()
    rng = np.random.default_rng(9)
    grid = nurbs.eval_surface_grid(surf, rng.uniform(0, 1, 50), rng.uniform(0, 1, 50))
    pts = grid.reshape(-1, 3)
    assert np.hypot(pts[:, 0], pts[:, 1]).max() <= r_max + 1e-9
    assert pts[:, 2].min() >= z_lo - 1e-9 and pts[:, 2].max() <= z_hi + 1e-9


def test_tessellate_watertight_and_counts():
    stacks = _circle_contours(5.0, 32, np.linspace(0, 20, 8))
    surf = nurbs.skin_surface(stacks)
    nu, nv = 24, 32
    capped = nurbs.tessellate(surf, nu, nv, caps=True)
    report = meshkit.validate(capped, check_self_intersections=False)
    assert report.watertight and report.euler_characteristic == 2
    assert capped.n_triangles == 2 * (nu - 1) * nv + 2 * nv

    open_tube = nurbs.tessellate(surf, nu, nv, caps=False)
    rep2 = meshkit.validate(open_tube, check_self_intersections=False)
    assert rep2.boundary_loop_count == 2
    # each boundary loop has nv edges
    edges = {}
    for tri in open_tube.triangles:
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            key = (min(a, b), max(a, b))
            edges[key] = edges.get(key, 0) + 1
    boundary_edges = [k for k, cnt in edges.items() if cnt == 1]
    assert len(boundary_edges) == 2 * nv


def test_interpolation_residual_invariant():
    rng = np.random.default_rng(10)
    pts = np.cumsum(rng.uniform(-1, 1, size=(12, 3)) + [0.5, 0, 0.5], axis=0)
    t = nurbs.chord_parameters(pts, True)
    curve = nurbs.interpolate_curve(pts, 3)
    nmat = nurbs.basis_matrix(curve.knots.values, 3, len(curve.control_points), t)
    resid = np.abs(nmat @ curve.control_points - pts).max()
    assert resid <= 1e-9


def test_surface_json_round_trip(tmp_path):
    stacks = _circle_contours(4.0, 16, np.linspace(0, 10, 6))
    surf = nurbs.skin_surface(stacks)
    nurbs.write_surface_json(surf, tmp_path / "s.json")
    again = nurbs.read_surface_json(tmp_path / "s.json")
    assert again.net_dims == surf.net_dims
    assert np.array_equal(again.control_points, surf.control_points)
    assert np.array_equal(again.knots_u.values, surf.knots_u.values)
    assert np.array_equal(again.weights, surf.weights)
    nurbs.write_surface_json(again, tmp_path / "s2.json")
    assert (tmp_path / "s.json").read_bytes() == (tmp_path / "s2.json").read_bytes()


def test_knot_vector_style_invariants():
    good_clamped = nurbs.KnotVector(np.array([0, 0, 0, 0, 0.5, 1, 1, 1, 1.0]), "clamped")
    good_clamped.check_style(3)
    bad = nurbs.KnotVector(np.array([0, 0, 0, 0.5, 1, 1, 1, 1.0]), "clamped")
    with pytest.raises(ValueError, match="multiplicity"):
        bad.check_style(3)

    m = 8
    per = nurbs.KnotVector((np.arange(m + 7) - 3) / m, "periodic")
    per.check_style(3)
    vals = (np.arange(m + 7) - 3) / m
    vals[-1] += 0.2  # break the wrap spacing
    with pytest.raises(ValueError, match="wrap"):
        nurbs.KnotVector(vals, "periodic").check_style(3)
