"""Atomic Patterson-Sullivan densities, shadow statistics and Bowen-Margulis sampling."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numba
import numpy as np
from scipy import stats

from .domain import ConvexDomain, Ellipsoid, distance_to_segments
from .flow import UnitTangent, busemann_batch, flow_feet, from_half_logit, gromov_batch, half_logit, hopf_batch
from .groups import (
    OrbitBall,
    RANK_ONE,
    ConjClass,
    _keys,
    dirichlet_polygon,
    dirichlet_reduce_batch,
    orbit,
)


class DensityError(ValueError):
    pass


@dataclass(eq=False)
class AtomicDensity:
    """Weighted boundary atoms seen from ``basepoint``.

    ``carriers`` are ball indices of the orbit points whose ray directions
    give the atoms.  ``mass`` is the unnormalised total after a reweight.
    """

    ball: OrbitBall
    basepoint: np.ndarray
    s: float
    depth: int
    directions: np.ndarray
    weights: np.ndarray
    carriers: np.ndarray
    mass: float = 1.0
    flagged: int = 0

    @property
    def domain(self) -> ConvexDomain:
        return self.ball.domain

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    def normalized(self) -> "AtomicDensity":
        return replace(self, weights=self.weights / self.weights.sum(), mass=1.0)


def patterson_weights(dist, s, h: Optional[Callable] = None):
    w = np.exp(-s * dist)
    return w if h is None else w * h(dist)


def slow_growth(eps: float, r0: float = 1.0) -> Callable:
    """Piecewise-exponential slowly growing weight: h(r) = exp(eps * max(r - r0, 0))."""

    def h(r):
        return np.exp(eps * np.maximum(np.asarray(r) - r0, 0.0))

    return h


def build_density(ball: OrbitBall, s: Optional[float] = None, delta_hat: Optional[float] = None,
                  h: Optional[Callable] = None) -> AtomicDensity:
    """Patterson's sum over the ball, pushed to ray directions and normalised.

    Without an explicit s the exponent is delta_hat + 1 / depth.
    """
    if s is None:
        if delta_hat is None:
            raise DensityError("need s or delta_hat")
        s = delta_hat + 1.0 / max(ball.depth, 1)
    elif delta_hat is not None and s < delta_hat:
        warnings.warn("exponent below the critical exponent estimate", stacklevel=2)
    idx = np.arange(1, len(ball))
    if not idx.size:
        raise DensityError("empty ball")
    w = patterson_weights(ball.dist[idx], s, h)
    return AtomicDensity(ball, ball.basepoint, float(s), ball.depth, ball.directions[idx], w / w.sum(), idx)


def reweight(nu: AtomicDensity, x) -> AtomicDensity:
    """Change of basepoint: weights times exp(-s b_xi(x, basepoint)), unnormalised.

    Atoms whose Busemann value fails are flagged and dropped.
    """
    dom = nu.domain
    X = dom.lift(np.asarray(getattr(x, "coords", x), dtype=float))
    with np.errstate(all="ignore"):
        b = busemann_batch(dom, nu.directions, X, nu.basepoint)
    ok = np.isfinite(b)
    w = nu.weights[ok] * np.exp(-nu.s * b[ok])
    return replace(nu, basepoint=X, directions=nu.directions[ok], weights=w, carriers=nu.carriers[ok],
                   mass=float(w.sum()), flagged=nu.flagged + int((~ok).sum()))


def equivariance_defect(nu: AtomicDensity, g_index: int) -> dict:
    """Total variation between g_* nu_o and nu_{g o} on the atoms present in both.

    The atom carried by h in g_* nu_o is matched with the atom carried by
    g h in nu_{g o}; both are renormalised on the matched set.
    """
    ball = nu.ball
    G = ball.matrices[g_index]
    Gi = ball.inverses[g_index]
    prods = G @ ball.matrices[nu.carriers]
    pinv = ball.inverses[nu.carriers] @ Gi
    keys = _keys(prods, pinv)
    pos = {c: k for k, c in enumerate(nu.carriers)}
    match = [(k, pos.get(ball.index.get(key))) for k, key in enumerate(keys)]
    match = [(a, b) for a, b in match if b is not None]
    if not match:
        raise DensityError("no shared atoms")
    a, b = np.array(match).T
    pushed = nu.weights[a]
    if ball.dist[g_index] > 15:
        raise DensityError("translate too deep for a chart basepoint")
    target = np.exp(-nu.s * busemann_batch(nu.domain, nu.directions[b], ball.points[g_index], nu.basepoint)) * nu.weights[b]
    p = pushed / pushed.sum()
    q = target / target.sum()
    return {"tv": float(0.5 * np.abs(p - q).sum()), "shared": int(len(a)), "shared_mass": float(pushed.sum())}


# -- shadows -----------------------------------------------------------------------


def _ray_distances_ellipsoid(dom: Ellipsoid, o, Y, XI, qyy=None):
    """d(y_j, [o, xi_i)) for all pairs, closed form in dimension 3.

    The geodesic through o and xi lies in the plane they span; its unit
    normal n gives sinh d = |<y, n>| / sqrt(-<y, y> <n, n>) when the foot of
    the perpendicular falls on the ray, and d(y, o) otherwise.  ``qyy`` may
    pass the known value of <y, y> for unnormalised deep points.
    """
    Q = dom.form
    Qi = np.linalg.inv(Q)
    N = np.cross(np.broadcast_to(o, XI.shape), XI) @ Qi.T  # rows n_i
    nn = np.einsum("ij,jk,ik->i", N, Q, N)
    yy = dom.q(Y) if qyy is None else np.broadcast_to(qyy, len(Y))
    yn = Y @ Q @ N.T  # (m, k)
    sinh_d = np.abs(yn) / np.sqrt(-yy[:, None] * nn[None, :])
    line = np.arcsinh(sinh_d)
    # foot of the perpendicular: y projected to span(o, xi), coordinates in (o, xi)
    yP = Y[:, None, :] - (yn / nn[None, :])[..., None] * N[None, :, :]
    M = np.stack([np.broadcast_to(o, XI.shape), XI], axis=-1)  # (k, 3, 2)
    coef = np.einsum("kab,mka->mkb", np.linalg.pinv(M).transpose(0, 2, 1), yP)
    on_ray = (coef[..., 0] * coef[..., 1]) > 0
    qo = dom.q(o)
    d_o = np.arccosh(np.maximum(np.abs(Y @ Q @ o) / np.sqrt(yy * qo), 1.0))
    return np.where(on_ray, line, d_o[:, None])


def ray_distances(ball: OrbitBall, rows, XI):
    """Distance from the orbit points ``rows`` to each ray [o, xi)."""
    dom = ball.domain
    o = ball.basepoint
    if isinstance(dom, Ellipsoid) and dom.dim == 3:
        Y = ball.matrices[rows] @ o
        return _ray_distances_ellipsoid(dom, o, Y, XI, qyy=dom.q(o))
    out = np.empty((len(rows), len(XI)))
    for k, r in enumerate(rows):
        far = _far_points(dom, o, XI)
        out[k] = distance_to_segments(dom, o, far, ball.points[r])
    return out


def _far_points(dom, o, XI, depth=17.0):
    from .domain import _chord_point

    U = XI - o
    lo, hi = dom.line_intervals(np.broadcast_to(o, U.shape), U)
    t = _chord_point(0.0, lo, hi, depth)
    return o + t[:, None] * U


def shadow_masses(nu: AtomicDensity, rows, R: float, chunk: int = 256) -> np.ndarray:
    """nu(O_R(o, g o)) for the ball rows ``rows``."""
    out = np.empty(len(rows))
    for k in range(0, len(rows), chunk):
        D = ray_distances(nu.ball, rows[k:k + chunk], nu.directions)
        out[k:k + chunk] = (D < R) @ nu.weights
    return out


@dataclass
class ShadowReport:
    dist: np.ndarray
    mass: np.ndarray
    ratio: np.ndarray
    R: float
    delta_hat: float
    summary: dict = field(default_factory=dict)


def shadow_lemma_report(nu: AtomicDensity, R: Optional[float] = None, delta_hat: Optional[float] = None,
                        annulus=None, exponent: Optional[float] = None) -> ShadowReport:
    """Shadow masses against exp(-exponent * d) over an annulus of orbit points.

    Default R is twice the largest generator displacement at the basepoint;
    the default annulus runs from R to the completeness radius.
    ``exponent`` defaults to ``delta_hat``.
    """
    ball = nu.ball
    if R is None:
        R = default_radius(ball)
    if delta_hat is None:
        raise DensityError("need delta_hat")
    expo = delta_hat if exponent is None else exponent
    if annulus is None:
        annulus = (R, ball.completeness_radius)
    lo, hi = annulus
    rows = np.flatnonzero((ball.dist >= lo) & (ball.dist <= hi))
    if rows.size < 3:
        raise DensityError("annulus holds fewer than three orbit points")
    mass = shadow_masses(nu, rows, R)
    d = ball.dist[rows]
    with np.errstate(divide="ignore"):
        ratio = mass * np.exp(expo * d)
    pos = mass > 0
    fit = stats.linregress(d[pos], np.log(ratio[pos])) if pos.sum() > 2 else None
    summary = {
        "n": int(rows.size),
        "empty_shadows": int((~pos).sum()),
        "min_ratio": float(ratio.min()),
        "max_ratio": float(ratio.max()),
        "spread_C": float(np.sqrt(ratio[pos].max() / ratio[pos].min())) if pos.any() else float("inf"),
        "C": float(max(ratio.max(), 1.0 / ratio.min())) if pos.all() else float("inf"),
        "slope": float(fit.slope) if fit else float("nan"),
        "slope_stderr": float(fit.stderr) if fit else float("nan"),
        "annulus": (float(lo), float(hi)),
    }
    return ShadowReport(d, mass, ratio, float(R), float(delta_hat), summary)


def default_radius(ball: OrbitBall) -> float:
    gens = np.array([i for i, w in enumerate(ball.words) if len(w) == 1])
    return 2.0 * float(ball.dist[gens].max())


# -- Bowen-Margulis sampling -------------------------------------------------------

EXHAUSTIVE_PAIRS = 1_000_000


@dataclass
class BMSamples:
    """Weighted vectors: endpoints, Hopf time, chord parameter of the foot, weight."""

    xi: np.ndarray
    eta: np.ndarray
    t: np.ndarray
    s: np.ndarray
    weight: np.ndarray
    mode: str = "importance"

    def __len__(self):
        return len(self.t)

    @property
    def feet(self) -> np.ndarray:
        return (1 - self.s)[:, None] * self.xi + self.s[:, None] * self.eta

    @property
    def ess(self) -> float:
        w = self.weight
        return float(w.sum() ** 2 / (w @ w)) if len(w) else 0.0

    def vector(self, i) -> UnitTangent:
        return UnitTangent(self.domain, self.xi[i], self.eta[i], float(self.s[i]))

    domain: Optional[ConvexDomain] = None


def _chord_cell_params(F, XI, ETA):
    """Chord parameter interval of (1 - p) xi + p eta inside {F x <= 0}; nan when empty."""
    a = XI @ F.T
    b = (ETA - XI) @ F.T  # constraint value a + p b <= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        root = -a / b
    lo = np.max(np.where(b < 0, root, 0.0), axis=1, initial=0.0)
    hi = np.min(np.where(b > 0, root, 1.0), axis=1, initial=1.0)
    lo = np.clip(lo, 0.0, 1.0)
    hi = np.clip(hi, 0.0, 1.0)
    bad = ~(hi > lo) | np.any((b == 0) & (a > 0), axis=1)
    lo[bad] = np.nan
    hi[bad] = np.nan
    return lo, hi


def _pair_weights(nu, delta_hat, i, j, cell):
    """BM pair density times the Hopf-time length of the chord inside the cell."""
    dom = nu.domain
    XI, ETA = nu.directions[i], nu.directions[j]
    distinct = np.linalg.norm(XI - ETA, axis=1) > 1e-12
    mid = 0.5 * (XI + ETA)
    ok = distinct & dom.inside(mid)
    g = np.full(len(i), np.nan)
    if ok.any():
        g[ok] = gromov_batch(dom, XI[ok], ETA[ok], nu.basepoint)
    lo = np.full(len(i), np.nan)
    hi = np.full(len(i), np.nan)
    if cell is not None and ok.any():
        lo[ok], hi[ok] = _chord_cell_params(cell, XI[ok], ETA[ok])
    length = half_logit(hi) - half_logit(lo) if cell is not None else np.ones(len(i))
    w = np.exp(2 * delta_hat * g) * length
    w[~np.isfinite(w)] = 0.0
    return w, g, lo, hi


def bm_sampler(nu: AtomicDensity, delta_hat: float, n: int, rng, cell=None, t_window: float = 4.0) -> BMSamples:
    """Weighted vectors for the Bowen-Margulis measure built from ``nu``.

    Pairs (xi, eta) of atoms get density w(xi) w(eta) exp(2 delta <xi, eta>_o);
    below a million pairs the full pair table is the proposal, above it
    independent atom draws are reweighted.  With ``cell`` (rows of a linear
    Dirichlet cell) the time is uniform on the part of the chord inside the
    cell and the weight carries that length; otherwise time is uniform on
    [-t_window, t_window].  Every pair is emitted in both orientations with
    the flipped vector, so the stream is exactly flip invariant; n is
    rounded up to an even count.
    """
    dom = nu.domain
    K = len(nu.weights)
    if K < 2:
        raise DensityError("need at least two atoms")
    m = (n + 1) // 2
    if m == 0:
        empty = np.zeros((0, dom.dim))
        return BMSamples(empty, empty, np.zeros(0), np.zeros(0), np.zeros(0), "empty", dom)
    if K * K <= EXHAUSTIVE_PAIRS:
        I, J = np.triu_indices(K, 1)
        W, G, LO, HI = _pair_weights(nu, delta_hat, I, J, cell)
        W = W * nu.weights[I] * nu.weights[J]
        if not np.any(W > 0):
            raise DensityError("no geodesic pairs")
        total = W.sum()
        pick = rng.choice(len(W), size=m, p=W / total) if m else np.zeros(0, int)
        i, j, g, lo, hi = I[pick], J[pick], G[pick], LO[pick], HI[pick]
        w = np.full(m, total / max(m, 1))
        mode = "exhaustive"
    else:
        i_parts, j_parts, w_parts, g_parts, lo_parts, hi_parts = [], [], [], [], [], []
        got, tries = 0, 0
        while got < m:
            k = max(2 * (m - got), 256)
            ii = rng.choice(K, size=k, p=nu.weights)
            jj = rng.choice(K, size=k, p=nu.weights)
            ww, gg, ll, hh = _pair_weights(nu, delta_hat, ii, jj, cell)
            keep = ww > 0
            i_parts.append(ii[keep]); j_parts.append(jj[keep]); w_parts.append(ww[keep])
            g_parts.append(gg[keep]); lo_parts.append(ll[keep]); hi_parts.append(hh[keep])
            got += int(keep.sum())
            tries += 1
            if tries > 50 and got == 0:
                raise DensityError("no geodesic pairs")
        i, j, w, g, lo, hi = (np.concatenate(p)[:m] for p in (i_parts, j_parts, w_parts, g_parts, lo_parts, hi_parts))
        mode = "importance"
    XI, ETA = nu.directions[i], nu.directions[j]
    if cell is not None:
        u = rng.uniform(size=len(i))
        # uniform in Hopf time = uniform in half-logit of the chord parameter
        h = half_logit(lo) + u * (half_logit(hi) - half_logit(lo))
        s = from_half_logit(h)
    else:
        T = rng.uniform(-t_window, t_window, size=len(i))
        s = hopf_batch(dom, nu.basepoint, XI, ETA, T) if len(i) else np.zeros(0)
    t = np.empty(len(i))
    if len(i):
        t = busemann_batch(dom, ETA, nu.basepoint, (1 - s)[:, None] * XI + s[:, None] * ETA)
    # the flip of each vector: same foot, swapped endpoints, time 2<xi,eta>_o - t
    return BMSamples(
        xi=np.concatenate([XI, ETA]),
        eta=np.concatenate([ETA, XI]),
        t=np.concatenate([t, 2 * g - t]),
        s=np.concatenate([s, 1 - s]),
        weight=np.concatenate([w, w]),
        mode=mode,
        domain=dom,
    )


def write_samples_jsonl(path, samples: BMSamples, header: dict) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for k in range(len(samples)):
            rec = {
                "xi": [float(f"{x:.12g}") for x in samples.xi[k]],
                "eta": [float(f"{x:.12g}") for x in samples.eta[k]],
                "t": float(f"{samples.t[k]:.12g}"),
                "weight": float(f"{samples.weight[k]:.12g}"),
            }
            fh.write(json.dumps(rec) + "\n")


def weighted_mean(values, weights) -> tuple[float, float]:
    """Self-normalised mean and its delta-method standard error."""
    w = np.asarray(weights, dtype=float)
    v = np.asarray(values, dtype=float)
    W = w.sum()
    mu = float(w @ v / W)
    se = float(np.sqrt(np.sum((w * (v - mu)) ** 2)) / W)
    return mu, se


# -- observables on the quotient ---------------------------------------------------


@dataclass
class Reducer:
    """Dirichlet reduction of vectors through a small neighbourhood ball."""

    ball: OrbitBall

    def vectors(self, XI, ETA, s):
        """Reduced (foot, backward endpoint, forward endpoint) of the given vectors."""
        dom = self.ball.domain
        feet = (1 - s)[:, None] * XI + s[:, None] * ETA
        Xr, _, Gi = dirichlet_reduce_batch(self.ball, feet)
        return (
            Xr,
            dom.lift(np.einsum("nij,nj->ni", Gi, XI)),
            dom.lift(np.einsum("nij,nj->ni", Gi, ETA)),
        )

    def flowed(self, XI, ETA, s, t):
        s2 = from_half_logit(half_logit(s) + t)
        return self.vectors(XI, ETA, s2)


def foot_halfplane(domain, normal) -> Callable:
    """Indicator that the reduced foot lies on the positive side of a chart line through o."""
    normal = np.asarray(normal, dtype=float)

    def f(feet, xm, xp):
        return (domain.affine(feet) @ normal > 0).astype(float)

    return f


def forward_sector(domain, lo, hi) -> Callable:
    """Indicator that the chart angle of the unit direction at the reduced foot is in [lo, hi)."""

    def f(feet, xm, xp):
        d = domain.affine(xp) - domain.affine(feet)
        ang = np.mod(np.arctan2(d[:, 1], d[:, 0]), 2 * np.pi)
        return ((ang >= lo) & (ang < hi)).astype(float)

    return f


def smooth_ball(domain, centre, radius, width=0.1) -> Callable:
    """Logistic bump of the Hilbert distance from the reduced foot to ``centre`` (chart coordinates)."""
    c = domain.lift(domain.from_affine(centre))

    def f(feet, xm, xp):
        d = domain.pair_distances(np.broadcast_to(c, feet.shape), feet)
        return 1.0 / (1.0 + np.exp((d - radius) / width))

    return f


def constant(value=1.0) -> Callable:
    def f(feet, xm, xp):
        return np.full(len(feet), float(value))

    return f


def geodesic_average(cls: ConjClass, f: Callable, reducer: Reducer, n_steps: int = 256, start: float = 0.0) -> float:
    """Mean of f over one period of the closed geodesic of a rank-one class."""
    if cls.kind != RANK_ONE:
        raise DensityError("geodesic average needs a rank-one class")
    dom = reducer.ball.domain
    sp = cls.representative.spectral
    xp = dom.lift(sp.x_plus.coords)
    xm = dom.lift(sp.x_minus.coords)
    ell = cls.ell
    n = max(n_steps, 1)
    tau = start + ell * np.arange(n) / n  # periodic trapezoid rule, step l / n
    s = from_half_logit(tau)
    XI = np.broadcast_to(xm, (n, xm.size))
    ETA = np.broadcast_to(xp, (n, xp.size))
    feet, a, b = reducer.vectors(XI, ETA, s)
    return float(np.mean(f(feet, a, b)))


def bm_mean(samples: BMSamples, f: Callable, reducer: Optional[Reducer] = None):
    if reducer is None:
        vals = f(samples.feet, samples.xi, samples.eta)
    else:
        vals = f(*reducer.vectors(samples.xi, samples.eta, samples.s))
    return weighted_mean(vals, samples.weight)


def equidistribution_report(classes, samples: BMSamples, T_grid, observables: dict, reducer: Reducer,
                            rng=None, max_classes: int = 400, n_steps: int = 256) -> list[dict]:
    """Geodesic averages over rank-one classes with l <= T against the BM mean.

    At most ``max_classes`` classes are drawn per threshold (uniformly, with
    the given generator) to bound the cost.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    r1 = [c for c in classes if c.kind == RANK_ONE]
    ells = np.array([c.ell for c in r1])
    rows = []
    for name, f in observables.items():
        bm, bm_se = bm_mean(samples, f, reducer)
        cache = {}
        for T in T_grid:
            idx = np.flatnonzero(ells <= T)
            if idx.size < 5:
                raise DensityError(f"fewer than five rank-one classes below T={T}")
            if idx.size > max_classes:
                idx = np.sort(rng.choice(idx, size=max_classes, replace=False))
            vals = []
            for k in idx:
                if k not in cache:
                    cache[k] = geodesic_average(r1[k], f, reducer, n_steps)
                vals.append(cache[k])
            vals = np.array(vals)
            mean = float(vals.mean())
            se = float(vals.std(ddof=1) / np.sqrt(len(vals))) if len(vals) > 1 else 0.0
            rows.append({
                "observable": name, "T": float(T), "classes": int(np.sum(ells <= T)), "used": int(len(vals)),
                "geodesic_mean": mean, "geodesic_se": se, "bm_mean": bm, "bm_se": bm_se,
                "discrepancy": abs(mean - bm), "combined_se": float(np.hypot(se, bm_se)),
            })
    return rows


def equidistribution_trend(rows) -> dict:
    """Per observable: is the discrepancy non-increasing in T within two combined standard errors?"""
    out = {}
    for name in dict.fromkeys(r["observable"] for r in rows):
        rs = [r for r in rows if r["observable"] == name]
        ok = all(b["discrepancy"] <= a["discrepancy"] + 2 * np.hypot(a["combined_se"], b["combined_se"])
                 for a, b in zip(rs, rs[1:]))
        out[name] = ok
    return out


def mixing_correlation(samples: BMSamples, A: Callable, B: Callable, t_grid, reducer: Reducer) -> list[dict]:
    """C(t) = m(B and A o phi_-t) on the quotient against m(A) m(B), with standard errors."""
    red0 = reducer.vectors(samples.xi, samples.eta, samples.s)
    b0 = B(*red0)
    a0 = A(*red0)
    mA, _ = weighted_mean(a0, samples.weight)
    mB, _ = weighted_mean(b0, samples.weight)
    if not (mA > 0 and mB > 0):
        raise DensityError("degenerate observable")
    rows = []
    for t in t_grid:
        at = A(*reducer.flowed(samples.xi, samples.eta, samples.s, -t))
        c, se = weighted_mean(at * b0, samples.weight)
        rows.append({"t": float(t), "C": c, "se": se, "mA": mA, "mB": mB, "gap": c - mA * mB})
    return rows


def dynamical_ball_mass(samples: BMSamples, v: UnitTangent, t: float, r: float, reducer: Reducer,
                        n_sub: int = 9) -> dict:
    """Weighted share of samples within r of v in the Bowen metric up to time t (diagnostic)."""
    dom = samples.domain
    nb = reducer.ball
    ss = np.linspace(0, t, n_sub)
    # lift-level: each sample compared with every neighbour translate of v
    best = np.full(len(samples), np.inf)
    for g in range(len(nb)):
        m = nb.matrices[g]
        xm, xp = dom.lift(m @ v.xi_minus), dom.lift(m @ v.xi_plus)
        s0 = from_half_logit(half_logit(v.s))
        dmax = np.zeros(len(samples))
        for s in ss:
            fv = flow_feet(xm, xp, s0, s)
            fw = flow_feet(samples.xi, samples.eta, samples.s, s)
            dmax = np.maximum(dmax, dom.pair_distances(np.broadcast_to(fv, fw.shape), fw))
        best = np.minimum(best, dmax)
    mass, se = weighted_mean(best < r, samples.weight)
    return {"t": t, "r": r, "mass": mass, "se": se}


# -- separated-set entropy ---------------------------------------------------------


def _hyperboloid_frame(dom: Ellipsoid, o):
    """Columns e1, e2, e0 with E^T Q E = diag(1, 1, -1) and e0 the normalised basepoint."""
    Q = dom.form
    e0 = o / np.sqrt(-dom.q(o))
    basis = [e0]
    for e in np.eye(3):
        w = e.copy()
        for f in basis:
            w = w - (w @ Q @ f) / (f @ Q @ f) * f
        qw = w @ Q @ w
        if qw > 1e-9:
            basis.append(w / np.sqrt(qw))
        if len(basis) == 3:
            break
    return np.column_stack([basis[1], basis[2], basis[0]])


def _on_hyperboloid(dom, X, o):
    X = X / np.sqrt(-dom.q(X))[:, None]
    return X * np.sign(-dom.q(X, o))[:, None]


def liouville_pool(neighbours: OrbitBall, n: int, rng, radius: Optional[float] = None):
    """Unit vectors with Liouville law restricted to the Dirichlet cell, as (feet, directions).

    Feet are uniform by area in the hyperbolic ball of the given radius about
    the basepoint and kept when inside the cell; directions are uniform.
    Vectors live on the hyperboloid q = -1 of the disk form.
    """
    dom = neighbours.domain
    if not (isinstance(dom, Ellipsoid) and dom.dim == 3):
        raise DensityError("entropy pools need the disk")
    o = neighbours.basepoint
    F = dirichlet_polygon(neighbours)
    E = _hyperboloid_frame(dom, o)
    if radius is None:
        radius = cell_radius(neighbours) + 1e-6
    feet, dirs = [], []
    got = 0
    while got < n:
        k = 2 * (n - got) + 64
        r = np.arccosh(1 + rng.uniform(size=k) * (np.cosh(radius) - 1))
        a = rng.uniform(0, 2 * np.pi, size=k)
        phi = rng.uniform(0, 2 * np.pi, size=k)
        x = np.column_stack([np.sinh(r) * np.cos(a), np.sinh(r) * np.sin(a), np.cosh(r)])
        er = np.column_stack([np.cosh(r) * np.cos(a), np.cosh(r) * np.sin(a), np.sinh(r)])
        ea = np.column_stack([-np.sin(a), np.cos(a), np.zeros(k)])
        u = np.cos(phi)[:, None] * er + np.sin(phi)[:, None] * ea
        X, U = x @ E.T, u @ E.T
        keep = np.all(X @ F.T <= 0, axis=1)
        feet.append(X[keep]); dirs.append(U[keep])
        got += int(keep.sum())
    return np.concatenate(feet)[:n], np.concatenate(dirs)[:n]


def cell_radius(neighbours: OrbitBall) -> float:
    """Largest distance from the basepoint to a vertex of the linear Dirichlet cell."""
    dom = neighbours.domain
    F = dirichlet_polygon(neighbours)
    i, j = np.triu_indices(len(F), 1)
    V = np.cross(F[i], F[j])
    V = V[np.abs(V @ dom.chart) > 1e-12]
    V = V / (V @ dom.chart)[:, None]
    V = V[np.all(V @ F.T <= 1e-9 * np.abs(V).max(axis=1, keepdims=True), axis=1)]
    if not len(V) or not np.all(dom.inside(V)):
        raise DensityError("Dirichlet cell is not compact")
    o = neighbours.basepoint
    return float(dom.pair_distances(np.broadcast_to(o, V.shape), V).max())


def pool_from_samples(samples: BMSamples, reducer: Reducer):
    """Dirichlet-reduced BM sample vectors as hyperboloid (feet, directions)."""
    dom = samples.domain
    o = reducer.ball.basepoint
    X, _, ETA = reducer.vectors(samples.xi, samples.eta, samples.s)
    X = _on_hyperboloid(dom, X, o)
    ETA = ETA * np.sign(-dom.q(ETA, o))[:, None]
    U = ETA / (-dom.q(X, ETA))[:, None] - X
    return X, U


@numba.njit(cache=True)
def _angle_bin(Einv, p, nbins):
    a0 = Einv[0, 0] * p[0] + Einv[0, 1] * p[1] + Einv[0, 2] * p[2]
    a1 = Einv[1, 0] * p[0] + Einv[1, 1] * p[1] + Einv[1, 2] * p[2]
    k = int(np.floor((np.arctan2(a1, a0) + np.pi) / (2 * np.pi) * nbins))
    return k % nbins


@numba.njit(cache=True)
def _qdiff(Q, a, b):
    acc = 0.0
    for i in range(3):
        di = a[i] - b[i]
        for j in range(3):
            acc += di * Q[i, j] * (a[j] - b[j])
    return acc


@numba.njit(cache=True)
def _greedy_kernel(X, P, start, mats, Q, Einv, o_h, nbins, thresh, foot_keep, ratio,
                   Xs, Ps, nxt, head, n_store, accepted, processed):
    """Sequential greedy packing; stops at the end of the chunk, on the ratio rule or when storage may overflow."""
    cap = Xs.shape[0]
    G = mats.shape[0]
    gx = np.empty(3)
    gp = np.empty(3)
    k = start
    while k < X.shape[0]:
        if ratio > 0 and processed >= ratio * max(accepted, 1):
            break
        if n_store + G > cap:
            break
        x = X[k]
        p = P[k]
        b = _angle_bin(Einv, p, nbins)
        hit = False
        for db in (-1, 0, 1):
            c = head[(b + db) % nbins]
            while c >= 0:
                if _qdiff(Q, Ps[c], p) < thresh and _qdiff(Q, Xs[c], x) < thresh:
                    hit = True
                    break
                c = nxt[c]
            if hit:
                break
        processed += 1
        k += 1
        if hit:
            continue
        accepted += 1
        for g in range(G):
            for i in range(3):
                sx = 0.0
                sp = 0.0
                for j in range(3):
                    sx += mats[g, i, j] * x[j]
                    sp += mats[g, i, j] * p[j]
                gx[i] = sx
                gp[i] = sp
            qo = 0.0
            for i in range(3):
                for j in range(3):
                    qo += gx[i] * Q[i, j] * o_h[j]
            if np.arccosh(max(-qo, 1.0)) > foot_keep:
                continue
            bb = _angle_bin(Einv, gp, nbins)
            for i in range(3):
                Xs[n_store, i] = gx[i]
                Ps[n_store, i] = gp[i]
            nxt[n_store] = head[bb]
            head[bb] = n_store
            n_store += 1
    return k, n_store, accepted, processed


def separated_count(neighbours: OrbitBall, pool, t: float, eps: float, rng=None, ratio: float = 20.0,
                    chunk: int = 20000, max_pool: int = 20_000_000) -> dict:
    """Greedy eps-separated packing under the Bowen metric up to time t + 1.

    On the disk the distance between two geodesics is convex in time, so
    the Bowen distance is the larger of the two footpoint distances at times
    0 and t + 1.  Separation on the quotient is tested against every
    neighbour translate of the accepted vectors; the time-(t + 1) points are
    bucketed by their angle about the basepoint so only adjacent buckets are
    compared.

    ``pool`` is a (feet, dirs) pair or a callable (n, rng) -> (feet, dirs)
    drawing fresh vectors.  Candidates are streamed until ``ratio`` times
    the accepted count has been examined, which fixes the saturation level
    of the greedy packing independently of its size.
    """
    dom = neighbours.domain
    o = neighbours.basepoint
    T = t + 1.0
    E = _hyperboloid_frame(dom, o)
    Einv = np.linalg.inv(E)
    Q = np.ascontiguousarray(dom.form, dtype=float)
    o_h = E[:, 2].copy()
    if callable(pool):
        draw = pool
        fixed = None
    else:
        fixed = (np.asarray(pool[0], dtype=float), np.asarray(pool[1], dtype=float))
        if len(fixed[0]) < 1:
            raise DensityError("sample too small")
    # radius of the cell as seen in the pool
    probe = fixed[0] if fixed is not None else draw(4096, np.random.default_rng(0))[0]
    rmax = float(np.arccosh(np.maximum(-dom.q(probe, o_h), 1.0)).max())
    reach = 2 * rmax + eps
    gs = np.flatnonzero(neighbours.dist <= reach + 1e-9)
    if neighbours.completeness_radius < reach:
        warnings.warn("neighbour ball incomplete for the entropy packing", stacklevel=2)
    mats = neighbours.matrices[gs]
    # orient every translate to keep the upper sheet
    mats = mats * np.sign(-(np.einsum("nij,j->ni", mats, o_h) @ Q @ o_h))[:, None, None]
    mats = np.ascontiguousarray(mats)
    r_end = T - rmax - eps
    width = 2 * np.arcsin(min(1.0, np.sinh(eps / 2) / np.sinh(r_end))) if r_end > 0 else 2 * np.pi
    nbins = max(1, int(2 * np.pi / width))
    thresh = 4 * np.sinh(eps / 2) ** 2  # q(x - y) = 4 sinh^2(d / 2) on the hyperboloid
    cap = 1 << 16
    Xs, Ps = np.empty((cap, 3)), np.empty((cap, 3))
    nxt = np.full(cap, -1, dtype=np.int64)
    head = np.full(nbins, -1, dtype=np.int64)
    n_store = accepted = processed = 0
    stop = False
    while not stop:
        if fixed is not None:
            if processed >= len(fixed[0]):
                break
            feet, dirs = fixed[0][processed:], fixed[1][processed:]
        else:
            if processed >= max_pool:
                warnings.warn("pool limit reached before the saturation rule", stacklevel=2)
                break
            feet, dirs = draw(chunk, rng)
        P = feet * np.cosh(T) + dirs * np.sinh(T)
        k = 0
        while k < len(feet):
            k, n_store, accepted, processed = _greedy_kernel(
                feet, P, k, mats, Q, Einv, o_h, nbins, thresh, rmax + eps, ratio,
                Xs, Ps, nxt, head, n_store, accepted, processed)
            if ratio > 0 and processed >= ratio * max(accepted, 1):
                stop = True
                break
            if k < len(feet):  # storage full
                cap *= 2
                Xs = np.concatenate([Xs, np.empty_like(Xs)])
                Ps = np.concatenate([Ps, np.empty_like(Ps)])
                nxt = np.concatenate([nxt, np.full(len(nxt), -1, dtype=np.int64)])
    return {"count": int(accepted), "processed": int(processed), "translates": int(len(gs)),
            "saturated": bool(ratio > 0 and processed >= ratio * max(accepted, 1))}


def entropy_estimate(neighbours: OrbitBall, pool, t: float, eps: float, rng=None, dt: float = 2.0,
                     ratio: float = 20.0) -> dict:
    """log N / t at times t - dt and t, and the growth rate between them.

    N is the greedy eps-separated count (see ``separated_count``); the growth
    rate (log N(t) - log N(t - dt)) / dt cancels the eps-dependent prefactor
    and is reported as the estimate.
    """
    if not callable(pool) and len(pool[0]) < 100:
        raise DensityError("sample too small")
    t0 = t - dt
    if t0 <= 0:
        raise DensityError("need t > dt")
    rng = np.random.default_rng(0) if rng is None else rng
    a = separated_count(neighbours, pool, t0, eps, rng, ratio)
    b = separated_count(neighbours, pool, t, eps, rng, ratio)
    n0, n1 = a["count"], b["count"]
    return {
        "t": (float(t0), float(t)),
        "count": (n0, n1),
        "log_ratio": (float(np.log(n0) / t0), float(np.log(n1) / t)),
        "estimate": float((np.log(n1) - np.log(n0)) / dt),
        "processed": (a["processed"], b["processed"]),
        "saturated": bool(a["saturated"] and b["saturated"]),
    }


def neighbour_ball(presentation, domain, o, eps: float = 0.0, radius: Optional[float] = None,
                   max_depth: int = 24) -> OrbitBall:
    """Smallest word ball holding every g with d(o, g o) <= 2 * radius + eps.

    Those are all the translates that can move a point within ``radius`` of
    the basepoint to within eps of another such point.  ``radius`` defaults
    to the radius of the Dirichlet cell; when the cell is not compact and no
    radius is given (or the domain is not a disk) the generators and their
    inverses are used.
    """
    ball = orbit(presentation, domain, o, 1)
    if radius is None and not (isinstance(domain, Ellipsoid) and domain.dim == 3):
        return ball
    for L in range(2, max_depth + 1):
        try:
            need = 2 * (cell_radius(ball) if radius is None else radius) + eps
        except DensityError:
            return ball
        if ball.completeness_radius >= need:
            return ball
        ball = orbit(presentation, domain, o, L)
    warnings.warn("neighbour ball depth limit reached", stacklevel=2)
    return ball
