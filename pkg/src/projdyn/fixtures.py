"""Built-in group fixtures and the JSON fixture format."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .domain import ConvexDomain, DomainError, Simplex, disk, domain_from_json, domain_to_json
from .groups import GroupError, GroupPresentation, check_automorphisms
from .projective import ProjectiveError


class FixtureError(ValueError):
    pass


@dataclass
class Fixture:
    name: str
    presentation: GroupPresentation
    domain: ConvexDomain
    basepoint: np.ndarray
    cocompact: bool = False


def boost(s: float, angle: float = 0.0) -> np.ndarray:
    """Hyperbolic translation of length s along the diameter at ``angle``."""
    c, sn = np.cos(angle), np.sin(angle)
    R = np.array([[c, -sn, 0], [sn, c, 0], [0, 0, 1.0]])
    B = np.array([[np.cosh(s), 0, np.sinh(s)], [0, 1, 0], [np.sinh(s), 0, np.cosh(s)]])
    return R @ B @ R.T


def rotation(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])


def disk_schottky(s: float = 2.4, gap: float = 0.0) -> Fixture:
    """Two boosts along orthogonal diameters, lengths s and s + gap.

    Ping-pong needs s >= 2 asinh(1), about 1.763, for the four half-plane
    regions to be disjoint.
    """
    if min(s, s + gap) < 2 * np.arcsinh(1.0):
        raise FixtureError("translation lengths too short for ping-pong")
    pres = GroupPresentation.from_matrices([boost(s), boost(s + gap, np.pi / 2)], ["a", "b"], free=True)
    D = disk()
    return Fixture(f"disk-schottky:s={s},gap={gap}", pres, D, D.interior_point.copy())


def cyclic(boost_length: float = 1.0) -> Fixture:
    pres = GroupPresentation.from_matrices([boost(boost_length)], ["a"], free=True)
    D = disk()
    return Fixture(f"cyclic:boost={boost_length}", pres, D, D.interior_point.copy())


def _lorentz_frame(G: np.ndarray, v0: np.ndarray) -> np.ndarray:
    """Columns f1, f2, f0 with E^T G E = diag(1, 1, -1) and f0 parallel to v0."""
    f0 = v0 / np.sqrt(-(v0 @ G @ v0))
    basis = [f0]
    for e in np.eye(3):
        w = e.copy()
        for f in basis:
            w = w - (w @ G @ f) / (f @ G @ f) * f
        q = w @ G @ w
        if q > 1e-9:
            basis.append(w / np.sqrt(q))
        if len(basis) == 3:
            break
    return np.column_stack([basis[1], basis[2], basis[0]])


def triangle_reflection(p: int = 4, q: int = 4, r: int = 4) -> Fixture:
    """Reflections in the sides of a hyperbolic triangle with angles pi/p, pi/q, pi/r.

    Built from the Gram matrix of the side normals, then conjugated so the
    incentre sits at the origin of the disk.
    """
    if 1 / p + 1 / q + 1 / r >= 1:
        raise FixtureError("angles do not give a hyperbolic triangle")
    m = {(0, 1): r, (1, 2): p, (0, 2): q}
    G = np.eye(3)
    for (i, j), mij in m.items():
        G[i, j] = G[j, i] = -np.cos(np.pi / mij)
    refl = []
    for i in range(3):
        S = np.eye(3)
        S[i, :] -= 2 * G[i, :]  # s_i(e_j) = e_j - 2 G_ij e_i, columns are images
        refl.append(S)
    v0 = -np.linalg.solve(G, np.ones(3))
    E = _lorentz_frame(G, v0)
    Einv = np.linalg.inv(E)
    gens = [Einv @ S @ E for S in refl]
    pres = GroupPresentation.from_matrices(gens, ["r", "s", "t"], free=False)
    D = disk()
    return Fixture(f"triangle-reflection:{p},{q},{r}", pres, D, D.interior_point.copy(), cocompact=True)


def simplex_lattice() -> Fixture:
    pres = GroupPresentation.from_matrices([np.diag([4.0, 2, 1]), np.diag([2.0, 4, 1])], ["a", "b"], free=False)
    S = Simplex()
    return Fixture("simplex-lattice", pres, S, S.lift(np.ones(3)))


def _parse_params(text: str) -> dict:
    out = {}
    for part in filter(None, text.split(",")):
        if "=" not in part:
            raise FixtureError(f"bad fixture parameter {part!r}")
        k, v = part.split("=", 1)
        out[k.strip()] = float(v)
    return out


def builtin(name: str) -> Fixture:
    """Gallery lookup: ``disk-schottky[:s=..,gap=..]``, ``triangle-reflection[:p,q,r]``,
    ``simplex-lattice`` or ``cyclic[:boost=..]``."""
    base, _, params = name.partition(":")
    if base == "disk-schottky":
        return disk_schottky(**_parse_params(params))
    if base == "cyclic":
        kw = _parse_params(params)
        return cyclic(kw.get("boost", 1.0))
    if base == "triangle-reflection":
        pqr = [int(x) for x in params.split(",")] if params else [4, 4, 4]
        return triangle_reflection(*pqr)
    if base == "simplex-lattice":
        return simplex_lattice()
    raise FixtureError(f"unknown builtin fixture {name!r}")


def fixture_from_json(data: dict, name: str = "json") -> Fixture:
    if not isinstance(data, dict):
        raise FixtureError("fixture: expected a JSON object")
    gens = data.get("generators")
    if not isinstance(gens, list) or not gens:
        raise FixtureError("generators: expected a non-empty list")
    mats, labels = [], []
    for k, g in enumerate(gens):
        where = f"generators[{k}]"
        if not isinstance(g, dict) or "matrix" not in g:
            raise FixtureError(f"{where}: missing field 'matrix'")
        try:
            m = np.array(g["matrix"], dtype=float)
        except (TypeError, ValueError) as exc:
            raise FixtureError(f"{where}.matrix: not a numeric matrix") from exc
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise FixtureError(f"{where}.matrix: not square")
        if abs(np.linalg.det(m)) < 1e-12:
            raise FixtureError(f"{where}.matrix: singular matrix")
        mats.append(m)
        labels.append(str(g.get("label", chr(ord("a") + k))))
    if len({m.shape for m in mats}) != 1:
        raise FixtureError("generators: matrices of different sizes")
    free = data.get("free", False)
    if not isinstance(free, bool):
        raise FixtureError("free: expected true or false")
    try:
        pres = GroupPresentation.from_matrices(mats, labels, free=free)
    except (GroupError, ProjectiveError) as exc:
        raise FixtureError(f"generators: {exc}") from exc
    try:
        domain = domain_from_json(data["domain"]) if "domain" in data else disk(mats[0].shape[0])
    except DomainError as exc:
        raise FixtureError(f"domain: {exc}") from exc
    base = np.asarray(data.get("basepoint", domain.interior_point), dtype=float)
    try:
        check_automorphisms(pres, domain)
        base = domain.lift(base)
    except DomainError as exc:
        raise FixtureError(f"generators: {exc}") from exc
    if not domain.inside(base):
        raise FixtureError("basepoint: not in the domain")
    return Fixture(name, pres, domain, base, bool(data.get("cocompact", False)))


def load_fixture(spec: str) -> Fixture:
    """A builtin name or the path of a JSON fixture file."""
    if spec.endswith(".json"):
        try:
            with open(spec) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FixtureError(f"{spec}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
        except OSError as exc:
            raise FixtureError(f"{spec}: {exc.strerror}") from exc
        return fixture_from_json(data, spec)
    return builtin(spec)


def fixture_to_json(fx: Fixture) -> dict:
    pres = fx.presentation
    # only the generators that are not someone else's added inverse
    seen, gens = set(), []
    for i, (m, lab) in enumerate(zip(pres.generators, pres.labels)):
        if i in seen:
            continue
        seen.add(pres.inverse[i])
        gens.append({"label": lab, "matrix": m.tolist()})
    return {
        "generators": gens,
        "free": pres.free,
        "domain": domain_to_json(fx.domain),
        "basepoint": fx.basepoint.tolist(),
        "cocompact": fx.cocompact,
    }
