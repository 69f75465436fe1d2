"""B-spline basis evaluation, global curve interpolation, surface skinning.

Curves and surfaces follow the classical control-point / knot-vector
formulation.  Closed directions use a periodic uniform knot vector with
wrapped control points (the last ``degree`` control columns replicate the
first ones), so evaluation needs no special casing at the seam and the
closure is C^(degree-1).

All interpolation solves are dense LU with partial pivoting; every solve is
followed by a residual check (max-norm <= 1e-9) so an ill-conditioned
system fails loudly instead of producing a bad surface.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

_RESIDUAL_TOL = 1e-9
_DOMAIN_TOL = 1e-12


class SingularSystemError(RuntimeError):
    """Interpolation system is singular or failed the residual check."""


@dataclass(frozen=True)
class KnotVector:
    values: np.ndarray
    style: str  # "clamped" | "periodic"

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if (np.diff(vals) < 0).any():
            raise ValueError("knot vector must be nondecreasing")
        if self.style not in ("clamped", "periodic"):
            raise ValueError(f"unknown knot style {self.style!r}")
        object.__setattr__(self, "values", vals)

    def check_style(self, degree: int) -> None:
        """Style invariants need the degree: clamped ends have multiplicity
        degree+1; periodic knots repeat with the domain period."""
        v = self.values
        n_ctrl = len(v) - degree - 1
        if self.style == "clamped":
            if not (np.all(v[: degree + 1] == v[0]) and np.all(v[-degree - 1 :] == v[-1])):
                raise ValueError("clamped knot vector needs degree+1 end multiplicity")
        else:
            core = n_ctrl - degree  # wrapped control points repeat after this many
            period = v[n_ctrl] - v[degree]
            if core < 1 or period <= 0:
                raise ValueError("degenerate periodic knot vector")
            shifted = v[core : core + 2 * degree + 1] - period
            if np.abs(shifted - v[: 2 * degree + 1]).max() > 1e-9 * max(1.0, period):
                raise ValueError("periodic knot vector spacing is not wrap-consistent")


def find_span(knots: np.ndarray, degree: int, u: float, n_ctrl: int) -> int:
    lo = knots[degree]
    hi = knots[n_ctrl]
    if u < lo - _DOMAIN_TOL or u > hi + _DOMAIN_TOL:
        raise ValueError(f"parameter {u} outside knot domain [{lo}, {hi}]")
    if u >= hi:
        span = n_ctrl - 1
        while span > degree and knots[span] == knots[span + 1]:
            span -= 1
        return span
    a, b = degree, n_ctrl
    while a + 1 < b:
        mid = (a + b) // 2
        if u < knots[mid]:
            b = mid
        else:
            a = mid
    return a


def basis_functions(knots, degree: int, u: float):
    """Nonzero B-spline basis values at u (Cox-de Boor recursion).

    Returns (span, values) where values holds N_{span-degree..span, degree}(u)
    and sums to 1.
    """
    knots = np.asarray(knots, dtype=np.float64)
    n_ctrl = len(knots) - degree - 1
    span = find_span(knots, degree, float(u), n_ctrl)
    vals = np.zeros(degree + 1)
    left = np.zeros(degree + 1)
    right = np.zeros(degree + 1)
    vals[0] = 1.0
    for j in range(1, degree + 1):
        left[j] = u - knots[span + 1 - j]
        right[j] = knots[span + j] - u
        saved = 0.0
        for r in range(j):
            tmp = vals[r] / (right[r + 1] + left[j - r])
            vals[r] = saved + right[r + 1] * tmp
            saved = left[j - r] * tmp
        vals[j] = saved
    return span, vals


def basis_derivatives(knots, degree: int, u: float, order: int):
    """Basis values and derivatives up to the given order (Piegl A2.3 style)."""
    knots = np.asarray(knots, dtype=np.float64)
    n_ctrl = len(knots) - degree - 1
    span = find_span(knots, degree, float(u), n_ctrl)
    ndu = np.zeros((degree + 1, degree + 1))
    ndu[0, 0] = 1.0
    left = np.zeros(degree + 1)
    right = np.zeros(degree + 1)
    for j in range(1, degree + 1):
        left[j] = u - knots[span + 1 - j]
        right[j] = knots[span + j] - u
        saved = 0.0
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            tmp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * tmp
            saved = left[j - r] * tmp
        ndu[j, j] = saved

    ders = np.zeros((order + 1, degree + 1))
    ders[0] = ndu[:, degree]
    a = np.zeros((2, degree + 1))
    for r in range(degree + 1):
        s1, s2 = 0, 1
        a[0, 0] = 1.0
        for k in range(1, order + 1):
            dval = 0.0
            rk = r - k
            pk = degree - k
            if r >= k:
                a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                dval = a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else degree - r
            for j in range(j1, j2 + 1):
                a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                dval += a[s2, j] * ndu[rk + j, pk]
            if r <= pk:
                a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                dval += a[s2, k] * ndu[r, pk]
            ders[k, r] = dval
            s1, s2 = s2, s1
    fac = degree
    for k in range(1, order + 1):
        ders[k] *= fac
        fac *= degree - k
    return span, ders


def basis_matrix(knots, degree: int, n_ctrl: int, us) -> np.ndarray:
    """Dense collocation matrix N[i, j] = N_{j,degree}(us[i])."""
    us = np.atleast_1d(np.asarray(us, dtype=np.float64))
    out = np.zeros((len(us), n_ctrl))
    for i, u in enumerate(us):
        span, vals = basis_functions(knots, degree, u)
        out[i, span - degree : span + 1] = vals
    return out


# ---------------------------------------------------------------------------
# curves


@dataclass(frozen=True)
class NurbsCurve:
    degree: int
    knots: KnotVector
    control_points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        cp = np.asarray(self.control_points, dtype=np.float64)
        w = np.asarray(self.weights, dtype=np.float64)
        n_ctrl = len(self.knots.values) - self.degree - 1
        if len(cp) != n_ctrl or len(w) != n_ctrl:
            raise ValueError(
                f"control point count {len(cp)} inconsistent with "
                f"{len(self.knots.values)} knots at degree {self.degree}"
            )
        if (w <= 0).any():
            raise ValueError("weights must be strictly positive")
        self.knots.check_style(self.degree)
        object.__setattr__(self, "control_points", cp)
        object.__setattr__(self, "weights", w)

    @property
    def periodic(self) -> bool:
        return self.knots.style == "periodic"

    def domain(self) -> tuple[float, float]:
        kv = self.knots.values
        return float(kv[self.degree]), float(kv[len(self.control_points)])

    def evaluate(self, u: float) -> np.ndarray:
        lo, hi = self.domain()
        if self.periodic:
            u = lo + (u - lo) % (hi - lo)
        span, vals = basis_functions(self.knots.values, self.degree, u)
        cp = self.control_points[span - self.degree : span + 1]
        w = self.weights[span - self.degree : span + 1]
        num = (vals * w) @ cp
        den = float(vals @ w)
        return num / den


def chord_parameters(points: np.ndarray, centripetal: bool) -> np.ndarray:
    d = np.linalg.norm(np.diff(points, axis=0), axis=1)
    if centripetal:
        d = np.sqrt(d)
    total = d.sum()
    if total <= 0:
        raise SingularSystemError("coincident interpolation points")
    t = np.concatenate([[0.0], np.cumsum(d)]) / total
    t[-1] = 1.0
    return t


def _averaged_knots(t: np.ndarray, degree: int) -> np.ndarray:
    n = len(t)
    inner = [t[j : j + degree].mean() for j in range(1, n - degree)]
    return np.concatenate([np.zeros(degree + 1), inner, np.ones(degree + 1)])


def _solve_checked(matrix: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        sol = np.linalg.solve(matrix, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(f"interpolation system singular: {exc}") from exc
    resid = np.abs(matrix @ sol - rhs).max()
    scale = max(1.0, np.abs(rhs).max())
    if not np.isfinite(resid) or resid > _RESIDUAL_TOL * scale:
        raise SingularSystemError(f"interpolation residual {resid:.3e} exceeds tolerance")
    return sol


def _bessel_derivative(t0, t1, t2, q0, q1, q2, at: float) -> np.ndarray:
    """Derivative of the parabola through three samples, evaluated at ``at``."""
    d0 = (2 * at - t1 - t2) / ((t0 - t1) * (t0 - t2))
    d1 = (2 * at - t0 - t2) / ((t1 - t0) * (t1 - t2))
    d2 = (2 * at - t0 - t1) / ((t2 - t0) * (t2 - t1))
    return d0 * q0 + d1 * q1 + d2 * q2


def interpolate_curve(
    points,
    degree: int = 3,
    parameterization: str = "centripetal",
    closed: bool = False,
    clamp_ends: bool = False,
) -> NurbsCurve:
    """Global curve interpolation; all weights are 1.

    Open curves use chord or centripetal parameters with knot averaging and
    a clamped knot vector; the curve passes through every input point.
    With ``clamp_ends`` two end-derivative rows (Bessel estimates from the
    first/last three points) are added, yielding n+2 control points.

    Closed curves use uniform parameters on a periodic uniform knot vector
    with wrapped control-point unknowns; do not repeat the first point.
    """
    q = np.asarray(points, dtype=np.float64)
    if q.ndim != 2 or q.shape[1] != 3:
        raise ValueError(f"points must be (n, 3), got {q.shape}")
    n = len(q)
    if n < degree + 1:
        raise ValueError(f"need at least {degree + 1} points for degree {degree}")
    if parameterization not in ("chord", "centripetal"):
        raise ValueError(f"unknown parameterization {parameterization!r}")

    if closed:
        m = n
        t = np.arange(m) / m
        knots = (np.arange(m + 2 * degree + 1) - degree) / m
        amat = np.zeros((m, m))
        for i, ti in enumerate(t):
            span, vals = basis_functions(knots, degree, ti)
            for r, val in enumerate(vals):
                amat[i, (span - degree + r) % m] += val
        ctrl_core = _solve_checked(amat, q)
        ctrl = np.vstack([ctrl_core, ctrl_core[:degree]])
        kv = KnotVector(knots, "periodic")
        return NurbsCurve(degree, kv, ctrl, np.ones(len(ctrl)))

    t = chord_parameters(q, parameterization == "centripetal")
    if np.diff(t).min() < 1e-12:
        raise SingularSystemError("coincident interpolation parameters")

    if not clamp_ends:
        knots = _averaged_knots(t, degree)
        nmat = basis_matrix(knots, degree, n, t)
        ctrl = _solve_checked(nmat, q)
        return NurbsCurve(degree, KnotVector(knots, "clamped"), ctrl, np.ones(n))

    # end-derivative (Bessel) conditions: n + 2 unknowns
    knots = np.concatenate([np.zeros(degree + 1), t[1:-1], np.ones(degree + 1)])
    n_ctrl = n + 2
    rows = np.zeros((n_ctrl, n_ctrl))
    rhs = np.zeros((n_ctrl, 3))
    rows[0, : degree + 1] = basis_matrix(knots, degree, n_ctrl, [t[0]])[0, : degree + 1]
    rhs[0] = q[0]
    span, ders = basis_derivatives(knots, degree, t[0], 1)
    rows[1, span - degree : span + 1] = ders[1]
    rhs[1] = _bessel_derivative(t[0], t[1], t[2], q[0], q[1], q[2], t[0])
    for i in range(1, n - 1):
        span, vals = basis_functions(knots, degree, t[i])
        rows[i + 1, span - degree : span + 1] = vals
        rhs[i + 1] = q[i]
    span, ders = basis_derivatives(knots, degree, t[-1], 1)
    rows[n, span - degree : span + 1] = ders[1]
    rhs[n] = _bessel_derivative(t[-3], t[-2], t[-1], q[-3], q[-2], q[-1], t[-1])
    span, vals = basis_functions(knots, degree, t[-1])
    rows[n + 1, span - degree : span + 1] = vals
    rhs[n + 1] = q[-1]
    ctrl = _solve_checked(rows, rhs)
    return NurbsCurve(degree, KnotVector(knots, "clamped"), ctrl, np.ones(n_ctrl))


# ---------------------------------------------------------------------------
# surfaces


@dataclass(frozen=True)
class NurbsSurface:
    """Tensor-product surface, clamped along u, periodic (wrapped) along v.

    control_points has shape (m, n, 3); the last degree_v columns replicate
    the first degree_v ones (periodic closure).  weights has shape (m, n),
    all strictly positive.
    """

    degree_u: int
    degree_v: int
    knots_u: KnotVector
    knots_v: KnotVector
    control_points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        cp = np.asarray(self.control_points, dtype=np.float64)
        w = np.asarray(self.weights, dtype=np.float64)
        m_expect = len(self.knots_u.values) - self.degree_u - 1
        n_expect = len(self.knots_v.values) - self.degree_v - 1
        if cp.shape[:2] != (m_expect, n_expect) or w.shape != (m_expect, n_expect):
            raise ValueError(
                f"net {cp.shape[:2]} inconsistent with knots "
                f"({m_expect}, {n_expect}) at degrees "
                f"({self.degree_u}, {self.degree_v})"
            )
        if (w <= 0).any():
            raise ValueError("weights must be strictly positive")
        if self.knots_v.style == "periodic":
            qv = self.degree_v
            if not np.allclose(cp[:, -qv:], cp[:, :qv], atol=1e-12):
                raise ValueError("periodic v direction requires wrapped control columns")
        self.knots_u.check_style(self.degree_u)
        self.knots_v.check_style(self.degree_v)
        object.__setattr__(self, "control_points", cp)
        object.__setattr__(self, "weights", w)

    @property
    def net_dims(self) -> tuple[int, int]:
        return self.control_points.shape[0], self.control_points.shape[1]

    def domain_u(self) -> tuple[float, float]:
        kv = self.knots_u.values
        return float(kv[self.degree_u]), float(kv[self.control_points.shape[0]])

    def domain_v(self) -> tuple[float, float]:
        kv = self.knots_v.values
        return float(kv[self.degree_v]), float(kv[self.control_points.shape[1]])


def eval_surface(surface: NurbsSurface, u: float, v: float) -> np.ndarray:
    """Rational point evaluation: weighted basis blend over the control net."""
    ulo, uhi = surface.domain_u()
    vlo, vhi = surface.domain_v()
    if surface.knots_v.style == "periodic":
        v = vlo + (v - vlo) % (vhi - vlo)
    su, bu = basis_functions(surface.knots_u.values, surface.degree_u, u)
    sv, bv = basis_functions(surface.knots_v.values, surface.degree_v, v)
    cp = surface.control_points[
        su - surface.degree_u : su + 1, sv - surface.degree_v : sv + 1
    ]
    w = surface.weights[su - surface.degree_u : su + 1, sv - surface.degree_v : sv + 1]
    num = np.einsum("i,j,ijk->k", bu, bv, cp * w[:, :, None])
    den = float(bu @ w @ bv)
    return num / den


def eval_surface_grid(surface: NurbsSurface, us, vs) -> np.ndarray:
    """Evaluate on a (len(us), len(vs)) parameter grid; v wraps if periodic."""
    vlo, vhi = surface.domain_v()
    vs = np.asarray(vs, dtype=np.float64)
    if surface.knots_v.style == "periodic":
        vs = vlo + (vs - vlo) % (vhi - vlo)
    m, n = surface.net_dims
    bu = basis_matrix(surface.knots_u.values, surface.degree_u, m, us)
    bv = basis_matrix(surface.knots_v.values, surface.degree_v, n, vs)
    wcp = surface.control_points * surface.weights[:, :, None]
    num = np.einsum("um,mnk,vn->uvk", bu, wcp, bv)
    den = np.einsum("um,mn,vn->uv", bu, surface.weights, bv)
    return num / den[:, :, None]


def skin_surface(contours, degree_u: int = 3, degree_v: int = 3) -> NurbsSurface:
    """Skin a stack of aligned closed contours into a surface.

    Stage 1 interpolates each contour with a periodic curve along v; stage 2
    interpolates corresponding control points across stations along u with
    clamped (Bessel end-tangent) curves.  The surface interpolates every
    input contour point.  For K stations of M points at cubic degrees the
    control net is (K + 2) x (M + 3).
    """
    stacks = [np.asarray(getattr(c, "points", c), dtype=np.float64) for c in contours]
    k = len(stacks)
    if k < 4:
        raise ValueError(f"need at least 4 contours to skin, got {k}")
    m = len(stacks[0])
    if m < 8:
        raise ValueError(f"contours need at least 8 points, got {m}")
    if any(s.shape != (m, 3) for s in stacks):
        raise ValueError("contours must share the same point count")
    pts = np.stack(stacks)  # (k, m, 3)

    # stage 1: periodic fit of each section
    v_curves = [interpolate_curve(pts[i], degree_v, closed=True) for i in range(k)]
    knots_v = v_curves[0].knots
    sect_ctrl = np.stack([c.control_points[:m] for c in v_curves])  # (k, m, 3)

    # common u parameters: centripetal per contour-point column, averaged
    t_cols = np.stack([chord_parameters(pts[:, j, :], True) for j in range(m)])
    t_bar = t_cols.mean(axis=0)
    t_bar[0], t_bar[-1] = 0.0, 1.0

    knots_u = np.concatenate(
        [np.zeros(degree_u + 1), t_bar[1:-1], np.ones(degree_u + 1)]
    )
    n_ctrl_u = k + 2
    rows = np.zeros((n_ctrl_u, n_ctrl_u))
    span, vals = basis_functions(knots_u, degree_u, t_bar[0])
    rows[0, span - degree_u : span + 1] = vals
    span, ders = basis_derivatives(knots_u, degree_u, t_bar[0], 1)
    rows[1, span - degree_u : span + 1] = ders[1]
    for i in range(1, k - 1):
        span, vals = basis_functions(knots_u, degree_u, t_bar[i])
        rows[i + 1, span - degree_u : span + 1] = vals
    span, ders = basis_derivatives(knots_u, degree_u, t_bar[-1], 1)
    rows[k, span - degree_u : span + 1] = ders[1]
    span, vals = basis_functions(knots_u, degree_u, t_bar[-1])
    rows[k + 1, span - degree_u : span + 1] = vals

    net = np.zeros((n_ctrl_u, m, 3))
    for j in range(m):
        col = sect_ctrl[:, j, :]
        rhs = np.zeros((n_ctrl_u, 3))
        rhs[0] = col[0]
        rhs[1] = _bessel_derivative(t_bar[0], t_bar[1], t_bar[2], col[0], col[1], col[2], t_bar[0])
        rhs[2 : k] = col[1 : k - 1]
        rhs[k] = _bessel_derivative(
            t_bar[-3], t_bar[-2], t_bar[-1], col[-3], col[-2], col[-1], t_bar[-1]
        )
        rhs[k + 1] = col[-1]
        net[:, j, :] = _solve_checked(rows, rhs)

    net_wrapped = np.concatenate([net, net[:, :degree_v, :]], axis=1)
    weights = np.ones(net_wrapped.shape[:2])
    return NurbsSurface(
        degree_u=degree_u,
        degree_v=degree_v,
        knots_u=KnotVector(knots_u, "clamped"),
        knots_v=knots_v,
        control_points=net_wrapped,
        weights=weights,
    )


def tessellate(surface: NurbsSurface, nu: int, nv: int, caps: bool = True):
    """Triangulate on a uniform (nu, nv) parameter grid, v wrapped.

    With caps the two ends are closed by triangle fans and the mesh is
    watertight; triangle count is 2*(nu-1)*nv + 2*nv.
    """
    from .meshkit import loft_rings

    if nu < 16 or nv < 16:
        raise ValueError("tessellation needs nu >= 16 and nv >= 16")
    ulo, uhi = surface.domain_u()
    vlo, vhi = surface.domain_v()
    us = np.linspace(ulo, uhi, nu)
    vs = vlo + (vhi - vlo) * np.arange(nv) / nv
    rings = eval_surface_grid(surface, us, vs)
    return loft_rings(rings, caps=caps)


# ---------------------------------------------------------------------------
# serialization


def surface_to_dict(surface: NurbsSurface) -> dict:
    m, n = surface.net_dims
    return {
        "degrees": [surface.degree_u, surface.degree_v],
        "knots_u": surface.knots_u.values.tolist(),
        "knots_v": surface.knots_v.values.tolist(),
        "knot_styles": [surface.knots_u.style, surface.knots_v.style],
        "net_dims": [m, n],
        "control_points": surface.control_points.reshape(m * n, 3).tolist(),
        "weights": surface.weights.reshape(m * n).tolist(),
    }


def surface_from_dict(doc: dict) -> NurbsSurface:
    m, n = (int(x) for x in doc["net_dims"])
    return NurbsSurface(
        degree_u=int(doc["degrees"][0]),
        degree_v=int(doc["degrees"][1]),
        knots_u=KnotVector(np.asarray(doc["knots_u"]), doc["knot_styles"][0]),
        knots_v=KnotVector(np.asarray(doc["knots_v"]), doc["knot_styles"][1]),
        control_points=np.asarray(doc["control_points"]).reshape(m, n, 3),
        weights=np.asarray(doc["weights"]).reshape(m, n),
    )


def write_surface_json(surface: NurbsSurface, path) -> None:
    Path(path).write_text(json.dumps(surface_to_dict(surface), indent=2, sort_keys=True) + "\n")


def read_surface_json(path) -> NurbsSurface:
    return surface_from_dict(json.loads(Path(path).read_text()))
