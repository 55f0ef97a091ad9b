"""Geodesic flow in endpoint coordinates, Busemann functions and Hopf coordinates.

A unit tangent vector is stored as its two boundary endpoints plus the chord
parameter of its footpoint.  Along a chord with endpoints at parameters 0 and
1 the Hilbert distance between parameters p < q is
``0.5 * log(q (1 - p) / (p (1 - q)))``, so the flow is a shift of the
half-logit of the parameter.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .domain import ConvexDomain, DomainError, Ellipsoid, Polytope, boundary_classify
from .projective import ProjectivePoint, as_map

SMOOTH_TOL = 1e-7
RAY_DEPTHS = (3.0, 4.0, 5.0)


class FlowError(ValueError):
    pass


def _lift(domain, p):
    if isinstance(p, ProjectivePoint):
        p = p.coords
    return domain.lift(np.asarray(p, dtype=float))


def half_logit(s):
    return 0.5 * np.log(s / (1.0 - s))


def from_half_logit(u):
    return 0.5 * (1.0 + np.tanh(u))


@dataclass(frozen=True, eq=False)
class UnitTangent:
    """Backward endpoint, forward endpoint, and the footpoint's chord parameter."""

    domain: ConvexDomain
    xi_minus: np.ndarray
    xi_plus: np.ndarray
    s: float

    @classmethod
    def from_points(cls, domain, xi_minus, xi_plus, foot):
        a = _lift(domain, xi_minus)
        b = _lift(domain, xi_plus)
        x = _lift(domain, foot)
        d = b - a
        s = float((x - a) @ d / (d @ d))
        if np.linalg.norm(a + s * d - x) > 1e-8 or not 0 < s < 1:
            raise FlowError("footpoint is not on the open chord")
        return cls(domain, a, b, s)

    @classmethod
    def through(cls, domain, x, y):
        """The vector at x pointing towards y."""
        X = _lift(domain, x)
        U = _lift(domain, y) - X
        lo, hi = domain.line_intervals(X, U)
        if not (lo[0] < 0 < hi[0]):
            raise DomainError("point not in the domain")
        a = X + lo[0] * U
        b = X + hi[0] * U
        return cls(domain, a, b, float(-lo[0] / (hi[0] - lo[0])))

    @property
    def foot(self) -> np.ndarray:
        return (1 - self.s) * self.xi_minus + self.s * self.xi_plus

    def flip(self) -> "UnitTangent":
        return UnitTangent(self.domain, self.xi_plus, self.xi_minus, 1.0 - self.s)

    def transform(self, g) -> "UnitTangent":
        m = as_map(g).matrix
        return UnitTangent.from_points(self.domain, m @ self.xi_minus, m @ self.xi_plus, m @ self.foot)


def geodesic_flow(v: UnitTangent, t: float) -> UnitTangent:
    return UnitTangent(v.domain, v.xi_minus, v.xi_plus, float(from_half_logit(half_logit(v.s) + t)))


def flow_feet(xm, xp, s, t):
    """Vectorised footpoints of phi_t for endpoint arrays and parameters."""
    s2 = from_half_logit(half_logit(np.asarray(s)) + np.asarray(t))
    s2 = np.asarray(s2)
    return (1 - s2)[..., None] * xm + s2[..., None] * xp


def flow_trajectory(v: UnitTangent, times) -> np.ndarray:
    """Rows (t, affine chart coordinates of the footpoint)."""
    times = np.asarray(times, dtype=float)
    feet = flow_feet(v.xi_minus, v.xi_plus, v.s, times)
    return np.column_stack([times, v.domain.affine(feet)])


def write_trajectory_csv(path, v: UnitTangent, times) -> None:
    rows = flow_trajectory(v, times)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"u{i}" for i in range(rows.shape[1] - 1)])
        for r in rows:
            w.writerow([f"{x:.12g}" for x in r])


# -- Busemann functions -----------------------------------------------------------------


def _active_functionals(domain, XI):
    """(F, mask): functionals and which of them support each row of XI."""
    if isinstance(domain, Ellipsoid):
        F = -(XI @ domain.form)
        F = F / np.abs(F @ domain.interior_point)[:, None]
        return F[:, None, :], np.ones((len(XI), 1), dtype=bool)
    if isinstance(domain, Polytope):
        vals = XI @ domain.functionals.T
        mask = vals < SMOOTH_TOL
        if not np.all(mask.any(axis=1)):
            raise DomainError("point is not on the boundary")
        return np.broadcast_to(domain.functionals, (len(XI),) + domain.functionals.shape), mask
    F = np.stack([domain.supporting_functionals(x) for x in XI])
    return F, np.ones(F.shape[:2], dtype=bool)


def _back_term(domain, P, XI):
    """0.5 log(|xi - a| / |p - a|), a the far end of the line from xi through p."""
    lo, hi = domain.line_intervals(P, XI - P)
    if np.any(~(lo < 0)):
        raise DomainError("point not in the domain")
    return 0.5 * np.log1p(-1.0 / lo)


def busemann_batch(domain: ConvexDomain, XI, X, Y) -> np.ndarray:
    """b_xi(x, y) = lim d(x, z) - d(y, z) as z -> xi along [y, xi), row-wise.

    At a boundary point whose tangent cone is cut out by functionals f_k the
    limit equals

        0.5 log(|xi-a_x| / |x-a_x|) - 0.5 log(|xi-a_y| / |y-a_y|)
        - 0.5 log(min_k f_k(y) / f_k(x)),

    the minimum running over supporting functionals at xi (a single one at
    smooth points).
    """
    XI = np.atleast_2d(_lift(domain, XI))
    X = np.atleast_2d(_lift(domain, X))
    Y = np.atleast_2d(_lift(domain, Y))
    XI, X, Y = (np.ascontiguousarray(a) for a in np.broadcast_arrays(XI, X, Y))
    F, mask = _active_functionals(domain, XI)
    fx = np.einsum("nkj,nj->nk", F, X)
    fy = np.einsum("nkj,nj->nk", F, Y)
    ratio = np.where(mask, fy / fx, np.inf).min(axis=1)
    return _back_term(domain, X, XI) - _back_term(domain, Y, XI) - 0.5 * np.log(ratio)


def busemann_ray(domain: ConvexDomain, xi, x, y, depths=RAY_DEPTHS, tol=1e-6) -> float:
    """Along-ray sampling with Richardson extrapolation (error ~ exp(-2D)).

    Depths are offsets beyond d(x, y), since the error constant grows like
    exp(2 d(x, y)).  Float64 runs out of room past a total depth of about 10.
    """
    XI = _lift(domain, xi)
    X = _lift(domain, x)
    Y = _lift(domain, y)
    U = XI - Y
    lo, hi = domain.line_intervals(Y, U)
    lo, hi = lo[0], hi[0]
    base = float(domain.pair_distances(X, Y)[0])
    depths = [base + D for D in depths]
    vals = []
    for D in depths:
        p = (0 - lo) / (hi - lo)
        t = lo + (hi - lo) * from_half_logit(half_logit(p) + D)
        z = Y + t * U
        vals.append(float(domain.pair_distances(X, z)[0]) - D)
    ests = []
    for (d1, v1), (d2, v2) in zip(zip(depths, vals), zip(depths[1:], vals[1:])):
        q = np.exp(-2 * (d2 - d1))
        ests.append((v2 - q * v1) / (1 - q))
    if max(ests) - min(ests) > tol:
        raise FlowError("busemann divergent")
    return ests[-1]


def busemann(domain: ConvexDomain, xi, x, y, method: str = "limit") -> float:
    XI = _lift(domain, xi)
    if not isinstance(domain, Ellipsoid):
        bp = boundary_classify(domain, XI)
        if bp.smooth is not True:
            warnings.warn("busemann at a non-smooth point: along-ray value, ambiguous", stacklevel=2)
    if method == "ray":
        return busemann_ray(domain, XI, x, y)
    return float(busemann_batch(domain, XI, x, y)[0])


# -- Gromov products and Hopf coordinates ----------------------------------------------


def chord_midpoints(domain, XI, ETA):
    M = 0.5 * (XI + ETA)
    if not np.all(domain.inside(M)):
        raise FlowError("not a geodesic pair")
    return M


def gromov_batch(domain, XI, ETA, X) -> np.ndarray:
    """<xi, eta>_x = 0.5 (b_xi(x, y) + b_eta(x, y)) for y on the chord (xi, eta)."""
    XI = np.atleast_2d(_lift(domain, XI))
    ETA = np.atleast_2d(_lift(domain, ETA))
    XI, ETA = np.broadcast_arrays(XI, ETA)
    M = chord_midpoints(domain, XI, ETA)
    return 0.5 * (busemann_batch(domain, XI, X, M) + busemann_batch(domain, ETA, X, M))


def gromov_product(domain, xi, eta, x) -> float:
    return float(gromov_batch(domain, xi, eta, x)[0])


@dataclass(frozen=True)
class HopfCoord:
    o: np.ndarray
    xi: np.ndarray
    eta: np.ndarray
    t: float


def hopf(domain, o, xi, eta, t) -> UnitTangent:
    """The vector on the chord from xi to eta with b_eta(o, foot) = t."""
    XI = _lift(domain, xi)
    ETA = _lift(domain, eta)
    M = chord_midpoints(domain, XI[None], ETA[None])[0]
    t0 = float(busemann_batch(domain, ETA, o, M)[0])
    # b_eta(o, .) grows at unit speed towards eta
    return UnitTangent(domain, XI, ETA, float(from_half_logit(t - t0)))


def hopf_batch(domain, o, XI, ETA, T):
    """Chord parameters of Hopf_o(xi_i, eta_i, t_i)."""
    M = chord_midpoints(domain, XI, ETA)
    t0 = busemann_batch(domain, ETA, o, M)
    return from_half_logit(np.asarray(T) - t0)


def hopf_coords(o, v: UnitTangent) -> HopfCoord:
    t = float(busemann_batch(v.domain, v.xi_plus, o, v.foot)[0])
    return HopfCoord(_lift(v.domain, o), v.xi_minus, v.xi_plus, t)


def rho(domain, xi, eta, eta2, o=None) -> float:
    o = domain.interior_point if o is None else o
    return 2 * gromov_product(domain, xi, eta2, o) - 2 * gromov_product(domain, xi, eta, o)


def cross_ratio_B(domain, xi, xi2, eta, eta2, o=None) -> float:
    """B(xi, xi', eta, eta') = rho_{xi,eta}(eta') + rho_{xi',eta'}(eta)."""
    return rho(domain, xi, eta, eta2, o) + rho(domain, xi2, eta2, eta, o)


def period_check(domain, g, xi) -> float:
    """B(x_g^+, x_g^-, xi, g xi); equals twice the translation length."""
    g = as_map(g)
    sp = g.spectral
    if not sp.biproximal:
        raise FlowError("element is not biproximal")
    xp = _lift(domain, sp.x_plus)
    xm = _lift(domain, sp.x_minus)
    if not domain.inside(0.5 * (xp + xm)):
        raise FlowError("axis misses the domain")
    XI = _lift(domain, xi)
    return cross_ratio_B(domain, xp, xm, XI, g.matrix @ XI)


def stable_distance(v: UnitTangent, w: UnitTangent, t_grid, n_sub: int = 11, tol: float = 1e-6):
    """max over s in [t, t+1] of d(foot phi_s v, foot phi_s w), for t in t_grid."""
    dom = v.domain
    if np.linalg.norm(v.xi_plus - w.xi_plus) > 1e-9:
        raise FlowError("vectors do not share a forward endpoint")
    if boundary_classify(dom, v.xi_plus).smooth is not True:
        raise FlowError("forward endpoint is not smooth")
    if abs(busemann_batch(dom, v.xi_plus, v.foot, w.foot)[0]) > tol:
        raise FlowError("footpoints are not on a common horosphere")
    out = []
    for t in t_grid:
        ss = np.linspace(t, t + 1, n_sub)
        fv = flow_feet(v.xi_minus, v.xi_plus, v.s, ss)
        fw = flow_feet(w.xi_minus, w.xi_plus, w.s, ss)
        out.append(float(dom.pair_distances(fv, fw).max()))
    return out
