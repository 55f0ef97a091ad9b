"""Properly convex domains and their Hilbert geometry.

Every backend answers one primitive, ``line_intervals``: for chart points
``X`` and chart directions ``U`` it returns the open parameter interval of
``X + t U`` lying in the domain.  Distances, boundary hits, shadows and the
flow are all derived from it.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import ConvexHull

from .projective import ProjectiveError, ProjectivePoint, as_point

NEAR_BOUNDARY = 1e-10
FACE_TOL = 1e-7


class DomainError(ValueError):
    pass


def _chart_frame(chart: np.ndarray) -> np.ndarray:
    """Orthonormal basis (columns) of the kernel of the chart functional.

    Standard basis vectors are projected to the kernel and orthonormalised
    in order, skipping the coordinate the chart weighs most, so a coordinate
    chart such as e3 gives the plain coordinates x/z, y/z.
    """
    c = chart / np.linalg.norm(chart)
    keep = np.delete(np.arange(c.size), np.argmax(np.abs(c)))
    P = np.eye(c.size)[:, keep] - np.outer(c, c[keep])
    Q, R = np.linalg.qr(P)
    return Q * np.sign(np.diag(R))


class ConvexDomain:
    kind = "abstract"

    def __init__(self, chart):
        self.chart = np.asarray(chart, dtype=float)
        self.frame = _chart_frame(self.chart)

    @property
    def dim(self) -> int:
        return self.chart.size

    # -- chart helpers -------------------------------------------------
    def lift(self, v) -> np.ndarray:
        """Representative(s) normalised to chart value 1."""
        if isinstance(v, ProjectivePoint):
            v = v.coords
        v = np.asarray(v, dtype=float)
        c = v @ self.chart
        if np.any(np.abs(c) < 1e-14):
            raise DomainError("point at infinity of the chart")
        return v / c[..., None] if v.ndim > 1 else v / c

    def affine(self, v) -> np.ndarray:
        """Coordinates in R^d of the chart point(s)."""
        return self.lift(v) @ self.frame

    def from_affine(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        p0 = self.chart / (self.chart @ self.chart)
        return p0 + u @ self.frame.T

    # -- backend primitives ------------------------------------------------
    def line_intervals(self, X, U):
        raise NotImplementedError

    def inside(self, X) -> np.ndarray:
        raise NotImplementedError

    def supporting_functionals(self, xi) -> np.ndarray:
        """Rows: linear functionals vanishing at xi, positive on the domain."""
        raise NotImplementedError

    def random_interior(self, rng, n: int) -> np.ndarray:
        raise NotImplementedError

    # -- vectorised geometry --------------------------------------------------
    def pair_distances(self, X, Y) -> np.ndarray:
        """Row-wise Hilbert distances between chart points X[i] and Y[i]."""
        X = np.atleast_2d(self.lift(X))
        Y = np.atleast_2d(self.lift(Y))
        X, Y = np.broadcast_arrays(X, Y)
        U = Y - X
        out = np.zeros(X.shape[0])
        move = np.linalg.norm(U, axis=1) > 1e-15
        if not np.any(move):
            return out
        lo, hi = self.line_intervals(X[move], U[move])
        if np.any(~(lo < 0)) or np.any(~(hi > 1)):
            raise DomainError("point not in the domain")
        out[move] = 0.5 * (np.log1p(-1.0 / lo) + np.log1p(1.0 / (hi - 1.0)))
        return out

    def distances(self, x, Y) -> np.ndarray:
        return self.pair_distances(np.atleast_2d(self.lift(x)), Y)


class Ellipsoid(ConvexDomain):
    """Projective model {v : v^T J v < 0} for J of signature (d, 1)."""

    kind = "ellipsoid"

    def __init__(self, form, chart=None):
        J = np.asarray(form, dtype=float)
        J = 0.5 * (J + J.T)
        w, q = np.linalg.eigh(J)
        if not (np.sum(w < 0) == 1 and np.all(np.abs(w) > 1e-12)):
            raise DomainError("quadratic form must have exactly one negative direction")
        self.form = J
        timelike = q[:, 0]
        if chart is None:
            chart = -J @ timelike
            if chart @ timelike < 0:
                chart = -chart
        super().__init__(chart)
        # frame in which J becomes diag(1, ..., 1, -1)
        order = np.r_[np.arange(1, w.size), 0]
        self._std = q[:, order] / np.sqrt(np.abs(w[order]))
        self.interior_point = self.lift(timelike)
        if self.q(self.interior_point) >= 0:
            raise DomainError("chart does not bound the ellipsoid")

    def q(self, X, Y=None):
        Y = X if Y is None else Y
        return np.einsum("...i,ij,...j->...", X, self.form, Y)

    def inside(self, X):
        X = self.lift(X)
        return self.q(X) < 0

    def line_intervals(self, X, U):
        X = np.atleast_2d(X)
        U = np.atleast_2d(U)
        A = self.q(U)
        B = self.q(X, U)
        C = self.q(X)
        disc = B * B - A * C
        lo = np.full(A.shape, np.nan)
        hi = np.full(A.shape, np.nan)
        ok = (disc > 0) & (A > 0)
        sq = np.sqrt(np.where(ok, disc, 0.0))
        qq = -(B + np.where(B >= 0, 1.0, -1.0) * sq)
        with np.errstate(divide="ignore", invalid="ignore"):
            r1 = qq / A
            r2 = C / qq
        r2 = np.where(np.abs(qq) > 0, r2, r1)
        lo[ok] = np.minimum(r1, r2)[ok]
        hi[ok] = np.maximum(r1, r2)[ok]
        return lo, hi

    def supporting_functionals(self, xi):
        xi = self.lift(xi)
        f = -(self.form @ xi)
        return (f / abs(f @ self.interior_point))[None, :]

    def random_interior(self, rng, n, radius=0.9):
        d = self.dim - 1
        z = rng.normal(size=(n, d))
        z *= (radius * rng.uniform(size=(n, 1)) ** (1.0 / d)) / np.linalg.norm(z, axis=1)[:, None]
        v = np.concatenate([z, np.ones((n, 1))], axis=1) @ self._std.T
        return self.lift(v)

    def pair_distances_closed(self, X, Y):
        """cosh d = |<x, y>| / sqrt(<x, x><y, y>), the hyperboloid formula."""
        X = np.atleast_2d(X)
        Y = np.atleast_2d(Y)
        c = np.abs(self.q(X, Y)) / np.sqrt(self.q(X) * self.q(Y))
        return np.arccosh(np.maximum(c, 1.0))


class Polytope(ConvexDomain):
    kind = "polytope"

    def __init__(self, vertices, chart=None, interior=None):
        V = np.asarray(vertices, dtype=float)
        if V.ndim != 2 or V.shape[0] < V.shape[1]:
            raise DomainError("polytope needs at least dim V vertices")
        if interior is None and chart is None:
            raise DomainError("interior point missing")
        if chart is None:
            chart = np.asarray(interior, dtype=float)
        super().__init__(chart)
        self.vertices = self.lift(V)
        self.interior_point = self.lift(interior) if interior is not None else self.vertices.mean(axis=0)
        self._build_faces()

    def _build_faces(self):
        A = self.vertices @ self.frame
        hull = ConvexHull(A)
        eq = hull.equations
        # merge triangulated pieces of one facet
        keys = {}
        for row in eq:
            k = tuple(np.round(row / np.linalg.norm(row[:-1]), 7))
            keys.setdefault(k, row / np.linalg.norm(row[:-1]))
        eq = np.array(list(keys.values()))
        # qhull: a.u + c <= 0 inside; lift to homogeneous functionals f >= 0
        F = -(eq[:, :-1] @ self.frame.T + eq[:, -1:] * self.chart[None, :])
        self.vertices = self.vertices[np.unique(hull.vertices)]
        self._set_functionals(F)

    def _set_functionals(self, F):
        F = F / np.abs(F @ self.interior_point)[:, None]
        self.functionals = F
        vals = self.vertices @ F.T
        self.incidence = np.abs(vals) < FACE_TOL * np.abs(vals).max()
        m = F.shape[0]
        shared = (self.incidence.astype(int).T @ self.incidence.astype(int)) > 0
        self.facet_adjacent = shared & ~np.eye(m, dtype=bool)

    def inside(self, X):
        X = self.lift(X)
        return np.all(X @ self.functionals.T > 0, axis=-1)

    def line_intervals(self, X, U):
        X = np.atleast_2d(X)
        U = np.atleast_2d(U)
        fx = X @ self.functionals.T
        fu = U @ self.functionals.T
        with np.errstate(divide="ignore", invalid="ignore"):
            t = -fx / fu
        hi = np.min(np.where(fu < 0, t, np.inf), axis=1)
        lo = np.max(np.where(fu > 0, t, -np.inf), axis=1)
        parallel_out = np.any((fu == 0) & (fx <= 0), axis=1)
        bad = parallel_out | ~(lo < hi) | ~np.isfinite(lo) | ~np.isfinite(hi)
        lo = np.where(bad, np.nan, lo)
        hi = np.where(bad, np.nan, hi)
        return lo, hi

    def active_facets(self, xi, tol=FACE_TOL) -> np.ndarray:
        vals = self.lift(xi) @ self.functionals.T
        return np.flatnonzero(vals < tol)

    def supporting_functionals(self, xi):
        act = self.active_facets(xi)
        if act.size == 0:
            raise DomainError("point is not on the boundary")
        return self.functionals[act]

    def random_interior(self, rng, n):
        w = rng.dirichlet(np.ones(len(self.vertices)), size=n)
        return self.lift(w @ self.vertices)


class Simplex(Polytope):
    kind = "simplex"

    def __init__(self, vertices=None, dim=3):
        if vertices is None:
            vertices = np.eye(dim)
        V = np.asarray(vertices, dtype=float)
        if V.shape[0] != V.shape[1]:
            raise DomainError("a simplex in P(V) has dim V vertices")
        F = np.linalg.inv(V.T)  # rows: barycentric coordinate functionals
        ConvexDomain.__init__(self, F.sum(axis=0))
        self.vertices = self.lift(V)
        self.interior_point = self.vertices.mean(axis=0)
        self._set_functionals(F)

    def barycentric(self, X):
        return self.lift(X) @ self.functionals.T

    def pair_distances_closed(self, X, Y):
        """Half the log of the largest ratio of barycentric ratios."""
        cx = np.atleast_2d(self.barycentric(X))
        cy = np.atleast_2d(self.barycentric(Y))
        r = np.log(cy) - np.log(cx)
        return 0.5 * (r.max(axis=1) - r.min(axis=1))


class OrbitHull(Polytope):
    """Convex hull of a finite orbit, frozen at construction.

    Boundary hits are located by bisection against hull membership.
    """

    kind = "orbit_hull"

    def __init__(self, points, chart, depth=None, bisection_tol=1e-9):
        pts = np.asarray(points, dtype=float)
        ConvexDomain.__init__(self, chart)
        self.vertices = self.lift(pts)
        self.interior_point = self.vertices.mean(axis=0)
        self.depth = depth
        self.bisection_tol = bisection_tol
        self._build_faces()

    def line_intervals(self, X, U):
        X = np.atleast_2d(X)
        U = np.atleast_2d(U)
        lo_exact, hi_exact = Polytope.line_intervals(self, X, U)
        inside0 = self.inside(X)
        if not np.any(inside0):
            return lo_exact, hi_exact
        span = np.ptp(self.vertices @ self.frame, axis=0).max()
        scale = 2 * span / np.linalg.norm(U, axis=1) + 1.0
        out = []
        for sign in (1.0, -1.0):
            a = np.zeros(len(X))
            b = scale.copy()
            while np.any((b - a) * np.linalg.norm(U, axis=1) > self.bisection_tol):
                m = 0.5 * (a + b)
                ins = self.inside(X + (sign * m)[:, None] * U)
                a = np.where(ins, m, a)
                b = np.where(ins, b, m)
            out.append(sign * 0.5 * (a + b))
        hi, lo = out
        return np.where(inside0, lo, lo_exact), np.where(inside0, hi, hi_exact)


# -- data types -----------------------------------------------------------------


@dataclass(frozen=True)
class BoundaryPoint:
    point: ProjectivePoint
    smooth: Optional[bool]
    extremal: Optional[bool]
    strongly_extremal: Optional[bool]
    hints: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ShadowSpec:
    x: object
    y: object
    r: float
    variant: str = "plain"

    def __post_init__(self):
        if self.r <= 0:
            raise ValueError("shadow radius must be positive")
        if self.variant not in ("plain", "plus", "minus"):
            raise ValueError(f"unknown shadow variant {self.variant!r}")


# -- operations -------------------------------------------------------------------


def locate(domain: ConvexDomain, p) -> str:
    """'inside', 'near_boundary' or 'outside'."""
    x = domain.lift(as_point(p).coords)
    centre = domain.interior_point
    u = x - centre
    if np.linalg.norm(u) < 1e-15:
        return "inside"
    lo, hi = domain.line_intervals(centre, u)
    t = hi[0]
    if not np.isfinite(t):
        return "outside"
    gap = (t - 1.0) * np.linalg.norm(u)
    if abs(gap) <= NEAR_BOUNDARY:
        return "near_boundary"
    return "inside" if gap > 0 else "outside"


def contains(domain: ConvexDomain, p) -> bool:
    return locate(domain, p) == "inside"


def _require_inside(domain, *pts):
    for p in pts:
        if not contains(domain, p):
            raise DomainError("point not in the domain")


def ray_boundary(domain: ConvexDomain, x, y):
    """Boundary points a, b with a, x, y, b aligned in this order."""
    _require_inside(domain, x, y)
    X = domain.lift(as_point(x).coords)
    Y = domain.lift(as_point(y).coords)
    U = Y - X
    if np.linalg.norm(U) < 1e-15:
        raise DomainError("x and y coincide")
    lo, hi = domain.line_intervals(X, U)
    return ProjectivePoint(X + lo[0] * U), ProjectivePoint(X + hi[0] * U)


def hilbert_distance(domain: ConvexDomain, x, y) -> float:
    """Half the log of the cross-ratio [a, x, y, b]."""
    X = domain.lift(as_point(x).coords)
    Y = domain.lift(as_point(y).coords)
    return float(domain.pair_distances(X, Y)[0])


def _chord_point(t0, lo, hi, dist):
    """Parameter reached from t0 after Hilbert distance ``dist`` towards hi."""
    p = (t0 - lo) / (hi - lo)
    u = 0.5 * np.log(p / (1 - p)) + dist
    return lo + (hi - lo) / (1 + np.exp(-2 * u))


def _golden_min(f, lo, hi, tol=1e-10, ternary_cap=200):
    """Minimise a vectorised quasiconvex f on [lo, hi] componentwise.

    Ternary bracketing first (capped at ``ternary_cap`` rounds), then golden
    section until the bracket is below ``tol`` in the line parameter.
    """
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    for _ in range(ternary_cap):
        if np.all(hi - lo < 1e-3):
            break
        m1 = lo + (hi - lo) / 3
        m2 = hi - (hi - lo) / 3
        left = f(m1) <= f(m2)
        hi = np.where(left, m2, hi)
        lo = np.where(left, lo, m1)
    g = (np.sqrt(5) - 1) / 2
    c = hi - g * (hi - lo)
    d = lo + g * (hi - lo)
    fc, fd = f(c), f(d)
    while np.any(hi - lo > tol):
        left = fc <= fd
        lo = np.where(left, lo, c)
        hi = np.where(left, d, hi)
        keep = np.where(left, c, d)
        fkeep = np.where(left, fc, fd)
        probe = np.where(left, hi - g * (hi - lo), lo + g * (hi - lo))
        fprobe = f(probe)
        c = np.where(left, probe, keep)
        fc = np.where(left, fprobe, fkeep)
        d = np.where(left, keep, probe)
        fd = np.where(left, fkeep, fprobe)
    t = 0.5 * (lo + hi)
    return t, f(t)


def distance_to_segments(domain: ConvexDomain, a, B, y) -> np.ndarray:
    """min over the segment [a, b_i] of d(., y), for each row b_i of B."""
    A = domain.lift(as_point(a).coords)
    B = np.atleast_2d(domain.lift(np.asarray(B, dtype=float)))
    Y = domain.lift(as_point(y).coords)
    U = B - A
    lo, hi = domain.line_intervals(np.broadcast_to(A, B.shape), U)
    s_lo = np.maximum(lo, 0.0)
    s_hi = np.minimum(hi, 1.0)
    if np.any(~(s_lo < s_hi)):
        raise DomainError("segment misses the domain")
    pad = 1e-12 * (s_hi - s_lo)
    s_lo = np.where(lo < 0, s_lo, s_lo + pad)
    s_hi = np.where(hi > 1, s_hi, s_hi - pad)
    Yb = np.broadcast_to(Y, B.shape)

    def f(t):
        return domain.pair_distances(A + t[:, None] * U, Yb)

    _, val = _golden_min(f, s_lo, s_hi)
    # the endpoints themselves if they are inside
    ends = [val]
    if np.all(lo < 0):
        ends.append(np.full(len(B), domain.distances(A, Y[None, :])[0]))
    return np.minimum.reduce(ends)


def distance_to_segment(domain: ConvexDomain, a, b, y) -> float:
    _require_inside(domain, y)
    return float(distance_to_segments(domain, a, [as_point(b).coords], y)[0])


def point_at_distance(domain: ConvexDomain, x, direction, dist) -> np.ndarray:
    X = domain.lift(as_point(x).coords)
    U = np.asarray(direction, dtype=float)
    lo, hi = domain.line_intervals(X, U)
    return X + _chord_point(0.0, lo[0], hi[0], dist) * U


def sample_ball(domain, x, r, rng, n) -> np.ndarray:
    """n points of the Hilbert ball B(x, r): random chart direction and radius."""
    X = domain.lift(as_point(x).coords)
    U = rng.normal(size=(n, domain.dim)) @ domain.frame @ domain.frame.T
    lo, hi = domain.line_intervals(np.broadcast_to(X, U.shape), U)
    rho = r * rng.uniform(size=n)
    t = _chord_point(0.0, lo, hi, rho)
    return X + t[:, None] * U


def shadow_mask(domain, x, y, r, xis) -> np.ndarray:
    """Plain shadow membership of each boundary point row of ``xis``."""
    return distance_to_segments(domain, x, xis, y) < r


def shadow_contains(domain: ConvexDomain, s: ShadowSpec, xi, n_z: int = 64, seed: int = 0) -> bool:
    if s.variant == "plain":
        return bool(shadow_mask(domain, s.x, s.y, s.r, [as_point(xi).coords])[0])
    rng = np.random.default_rng(seed)
    zs = np.vstack([domain.lift(as_point(s.x).coords), sample_ball(domain, s.x, s.r, rng, n_z)])
    hits = [distance_to_segment(domain, z, xi, s.y) < s.r for z in zs]
    return bool(any(hits)) if s.variant == "plus" else bool(all(hits))


def _same_point(domain, p, q, tol=1e-9):
    return np.linalg.norm(domain.lift(p) - domain.lift(q)) < tol


def simplicial_distance(domain: ConvexDomain, xi, eta):
    """Shortest chain of boundary segments; ``None`` when unknown."""
    p = as_point(xi).coords
    q = as_point(eta).coords
    if isinstance(domain, OrbitHull):
        return None
    if _same_point(domain, p, q):
        return 0
    if isinstance(domain, Ellipsoid):
        return float("inf")
    if not isinstance(domain, Polytope):
        return None
    A = set(domain.active_facets(p))
    Bset = set(domain.active_facets(q))
    if not A or not Bset:
        raise DomainError("points must lie on the boundary")
    if A & Bset:
        return 1
    # BFS in the facet-intersection graph
    dist = {k: 0 for k in A}
    queue = deque(A)
    while queue:
        k = queue.popleft()
        for l in np.flatnonzero(domain.facet_adjacent[k]):
            if l not in dist:
                dist[l] = dist[k] + 1
                if l in Bset:
                    return dist[l] + 1
                queue.append(l)
    return float("inf")


def boundary_classify(domain: ConvexDomain, xi) -> BoundaryPoint:
    p = as_point(xi)
    if isinstance(domain, Ellipsoid):
        return BoundaryPoint(p, True, True, True)
    act = domain.active_facets(p.coords)
    if isinstance(domain, OrbitHull):
        F = domain.functionals[act] if act.size else np.zeros((0, domain.dim))
        width = 0.0
        if len(F) > 1:
            n = F @ domain.frame
            n /= np.linalg.norm(n, axis=1)[:, None]
            width = float(np.degrees(np.arccos(np.clip(n @ n.T, -1, 1)).max()))
        return BoundaryPoint(p, None, None, None, {"active_facets": int(act.size), "support_cone_width_deg": width})
    if act.size == 0:
        raise DomainError("point is not on the boundary")
    rank = np.linalg.matrix_rank(domain.functionals[act], tol=1e-8)
    extremal = bool(rank == domain.dim - 1)
    return BoundaryPoint(p, bool(act.size == 1), extremal, False)


def face_distance(domain: ConvexDomain, xi, eta) -> Optional[float]:
    """Hilbert distance inside the common open face, inf if no common face."""
    p = domain.lift(as_point(xi).coords)
    q = domain.lift(as_point(eta).coords)
    if _same_point(domain, p, q):
        return 0.0
    if isinstance(domain, Ellipsoid):
        return float("inf")
    if isinstance(domain, OrbitHull) or not isinstance(domain, Polytope):
        return None
    A = domain.active_facets(p)
    if not np.array_equal(A, domain.active_facets(q)):
        return float("inf")
    rest = np.setdiff1d(np.arange(len(domain.functionals)), A)
    F = domain.functionals[rest]
    U = q - p
    fx, fu = F @ p, F @ U
    with np.errstate(divide="ignore", invalid="ignore"):
        t = -fx / fu
    hi = np.min(np.where(fu < 0, t, np.inf))
    lo = np.max(np.where(fu > 0, t, -np.inf))
    return float(0.5 * (np.log1p(-1.0 / lo) + np.log1p(1.0 / (hi - 1.0))))


def dual_polytope(P: Polytope) -> Polytope:
    """The dual body: functionals positive on the closure, charted by P's interior point."""
    if getattr(P, "interior_point", None) is None:
        raise DomainError("interior point missing")
    x0 = P.interior_point
    if not P.inside(x0):
        raise DomainError("interior point missing")
    # any interior point of the dual cone works as its own interior point
    return Polytope(P.functionals, chart=x0, interior=P.functionals.mean(axis=0))


# -- fixtures / JSON ------------------------------------------------------------------


def disk(dim: int = 3) -> Ellipsoid:
    J = np.eye(dim)
    J[-1, -1] = -1.0
    return Ellipsoid(J, chart=np.eye(dim)[-1])


def chart_point(domain: ConvexDomain, *coords) -> ProjectivePoint:
    """Point with the given affine coordinates, for the standard disk chart."""
    c = np.asarray(coords, dtype=float).reshape(-1)
    return ProjectivePoint(np.append(c, 1.0)) if isinstance(domain, Ellipsoid) else ProjectivePoint(domain.from_affine(c))


def domain_from_json(spec: dict) -> ConvexDomain:
    kind = spec.get("type")
    try:
        if kind == "ellipsoid":
            return Ellipsoid(spec["form"], spec.get("chart"))
        if kind == "simplex":
            return Simplex(spec.get("vertices"), dim=spec.get("dim", 3))
        if kind == "polytope":
            return Polytope(spec["vertices"], spec.get("chart"), spec.get("interior"))
        if kind == "orbit_hull":
            return OrbitHull(spec["points"], spec["chart"], spec.get("depth"))
    except KeyError as exc:
        raise DomainError(f"domain field missing: {exc.args[0]}") from exc
    except (ProjectiveError, ValueError) as exc:
        raise DomainError(str(exc)) from exc
    raise DomainError(f"unknown domain type {kind!r}")


def domain_to_json(domain: ConvexDomain) -> dict:
    if isinstance(domain, Ellipsoid):
        return {"type": "ellipsoid", "form": domain.form.tolist(), "chart": domain.chart.tolist()}
    if isinstance(domain, Simplex):
        return {"type": "simplex", "vertices": domain.vertices.tolist()}
    if isinstance(domain, OrbitHull):
        return {"type": "orbit_hull", "points": domain.vertices.tolist(), "chart": domain.chart.tolist(), "depth": domain.depth}
    return {
        "type": "polytope",
        "vertices": domain.vertices.tolist(),
        "chart": domain.chart.tolist(),
        "interior": domain.interior_point.tolist(),
    }
