"""Command line front-end: census, verify, sample, density and entropy reports.

Every table is a CSV whose first line is a ``#`` comment carrying the hash
of the run configuration; the same seed and configuration give the same
bytes.  Figures are written next to the tables.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import plotting
from .checks import fixture_checks, run_suite
from .density import (
    DensityError,
    Reducer,
    bm_sampler,
    build_density,
    cell_radius,
    constant,
    default_radius,
    entropy_estimate,
    equidistribution_report,
    equidistribution_trend,
    foot_halfplane,
    liouville_pool,
    mixing_correlation,
    neighbour_ball,
    pool_from_samples,
    shadow_lemma_report,
    smooth_ball,
    write_samples_jsonl,
)
from .domain import Ellipsoid
from .fixtures import FixtureError, load_fixture
from .groups import (
    RANK_ONE,
    GroupError,
    census_completeness,
    conjugacy_classes,
    count_table,
    counting_rate,
    critical_exponent,
    dirichlet_polygon,
    divergence_diagnostic,
    orbit,
)

log = logging.getLogger("projdyn")


@dataclass
class RunConfig:
    command: str
    fixture: str = "disk-schottky"
    depth: int = 8
    seed: int = 0
    out: str = "out"
    tgrid: Optional[str] = None
    radius: Optional[float] = None
    epsilon: float = 0.3
    time: float = 8.0
    samples: int = 20000

    def hash(self) -> str:
        data = {k: v for k, v in asdict(self).items() if k != "out"}
        return hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()[:16]

    def rng(self, stream: int = 0):
        return np.random.default_rng([self.seed, stream])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.10g}"
    if isinstance(v, (list, tuple)):
        return " ".join(_fmt(x) for x in v)
    return str(v)


def write_csv(path, rows, cfg: RunConfig, columns=None):
    columns = columns or (list(rows[0]) if rows else [])
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={cfg.hash()} command={cfg.command}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])
    return path


def write_json(path, data, cfg: RunConfig):
    payload = {"config_hash": cfg.hash(), "config": asdict(cfg), **data}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    return path


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serialisable: {type(o).__name__}")


def parse_grid(text: Optional[str], default) -> np.ndarray:
    """``a,b,c`` or ``start:stop:num``."""
    if not text:
        return np.asarray(default, dtype=float)
    if ":" in text:
        a, b, n = text.split(":")
        return np.linspace(float(a), float(b), int(n))
    return np.array([float(x) for x in text.split(",") if x.strip()])


def _outdir(cfg) -> Path:
    p = Path(cfg.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _delta(ball) -> Optional[dict]:
    try:
        return critical_exponent(ball)
    except GroupError as exc:
        log.warning("critical exponent unavailable: %s", exc)
        return None


def _sub_ball(ball, depth):
    """View of the elements of word length <= depth (for partial Poincare sums)."""
    keep = ball.lengths <= depth
    return argparse.Namespace(dist=ball.dist[keep], depth=depth)


def _classes(fx, ball):
    strategy = "free_cyclic" if fx.presentation.free else "charpoly_merge"
    return conjugacy_classes(ball, fx.domain, strategy), strategy


def _default_tgrid(classes, depth):
    top = census_completeness(classes, depth)
    ells = [c.ell for c in classes if c.ell > 0]
    if not ells:
        return np.array([1.0])
    top = min(top, max(ells)) if np.isfinite(top) else max(ells)
    return np.linspace(max(min(ells), top / 8), top, 8)


# -- pipelines -----------------------------------------------------------------------------


def cmd_census(cfg: RunConfig) -> dict:
    """Orbit growth, critical exponent and conjugacy-class census."""
    out = _outdir(cfg)
    fx = load_fixture(cfg.fixture)
    ball = orbit(fx.presentation, fx.domain, fx.basepoint, cfg.depth)
    fit = _delta(ball)
    dh = fit["delta_hat"] if fit else None
    classes, strategy = _classes(fx, ball)
    T_grid = parse_grid(cfg.tgrid, _default_tgrid(classes, cfg.depth))
    table = count_table(classes, T_grid, dh)
    write_csv(out / "census.csv", table, cfg)
    write_csv(out / "classes.csv", [
        {"word": fx.presentation.word_label(c.representative.word), "ell": c.ell, "kind": c.kind,
         "multiplicity": c.multiplicity, "word_length": c.word_length} for c in classes], cfg)
    summary = {"fixture": fx.name, "elements": len(ball), "classes": len(classes), "strategy": strategy,
               "completeness_radius": ball.completeness_radius,
               "census_completeness": census_completeness(classes, cfg.depth),
               "kinds": {k: sum(c.kind == k for c in classes) for k in sorted({c.kind for c in classes})}}
    if fit:
        summary.update(delta_hat=fit["delta_hat"], stderr=fit["stderr"], delta_kappa=fit["delta_kappa"],
                       stderr_kappa=fit["stderr_kappa"], window=fit["window"])
        depths = sorted({max(1, cfg.depth - 2), max(1, cfg.depth - 1), cfg.depth})
        summary["divergence"] = divergence_diagnostic([_sub_ball(ball, d) for d in depths], dh)
        rows = [r for r in table if r["T"] >= 3 and r["total"] > 0]
        if len(rows) >= 3:
            summary["counting_rate"] = counting_rate(rows)
    write_json(out / "delta.json", summary, cfg)
    plotting.plot_census(table, dh, out / "census.png")
    plotting.plot_orbit_growth(ball.dist, fit, out / "orbit_growth.png")
    return {"table": table, "summary": summary}


def cmd_verify(cfg: RunConfig) -> dict:
    """Numerical identity checks with PASS/FAIL per check."""
    out = _outdir(cfg)
    results: list = [r.as_dict() for r in run_suite(cfg.seed)]
    try:
        fx = load_fixture(cfg.fixture)
        results += [r.as_dict() for r in fixture_checks(fx, cfg.seed)]
    except FixtureError as exc:
        results.append({"name": "fixture", "error": str(exc), "pass": False})
    write_json(out / "verify.json", {"checks": results, "all_pass": all(r["pass"] for r in results)}, cfg)
    return {"checks": results}


def _density(cfg, fx):
    ball = orbit(fx.presentation, fx.domain, fx.basepoint, cfg.depth)
    fit = _delta(ball)
    if fit is None:
        raise DensityError("critical exponent needs a deeper ball")
    return ball, fit, build_density(ball, delta_hat=fit["delta_hat"])


def cmd_density(cfg: RunConfig) -> dict:
    """Patterson density on the orbit ball and its shadow-lemma report."""
    out = _outdir(cfg)
    fx = load_fixture(cfg.fixture)
    ball, fit, nu = _density(cfg, fx)
    R = cfg.radius if cfg.radius is not None else default_radius(ball)
    rep = shadow_lemma_report(nu, R=R, delta_hat=fit["delta_hat"])
    words = [fx.presentation.word_label(ball.words[c]) for c in nu.carriers]
    A = fx.domain.affine(nu.directions)
    write_csv(out / "density.csv", [
        {"carrier": w, **{f"u{k}": a[k] for k in range(A.shape[1])}, "weight": x}
        for w, a, x in zip(words, A, nu.weights)], cfg)
    write_csv(out / "shadows.csv", [
        {"distance": d, "mass": m, "ratio": r} for d, m, r in zip(rep.dist, rep.mass, rep.ratio)], cfg)
    summary = {"fixture": fx.name, "s": nu.s, "delta_hat": fit["delta_hat"], "atoms": len(nu.weights),
               "R": R, "shadows": rep.summary}
    write_json(out / "density.json", summary, cfg)
    plotting.plot_shadows(rep, out / "shadows.png")
    if fx.domain.dim == 3:
        plotting.plot_atoms(fx.domain, nu.directions, nu.weights, out / "atoms.png")
    return {"summary": summary, "report": rep}


def _observables(fx):
    dom = fx.domain
    return {"smooth_ball": smooth_ball(dom, np.full(dom.dim - 1, 0.2), 0.5),
            "half_plane": foot_halfplane(dom, np.ones(dom.dim - 1)),
            "constant": constant()}


def cmd_sample(cfg: RunConfig) -> dict:
    """Bowen-Margulis samples, mixing curve and equidistribution table."""
    out = _outdir(cfg)
    fx = load_fixture(cfg.fixture)
    ball, fit, nu = _density(cfg, fx)
    dh = fit["delta_hat"]
    nb = neighbour_ball(fx.presentation, fx.domain, fx.basepoint)
    cell = dirichlet_polygon(nb) if isinstance(fx.domain, Ellipsoid) else None
    S = bm_sampler(nu, dh, cfg.samples, cfg.rng(1), cell=cell)
    write_samples_jsonl(out / "samples.jsonl", S, {
        "config_hash": cfg.hash(), "fixture": fx.name, "mode": S.mode, "n": len(S), "ess": S.ess,
        "delta_hat": dh})
    result = {"samples": len(S), "ess": S.ess}
    if not len(S):
        write_csv(out / "mixing_curve.csv", [], cfg, ["t", "C", "se", "mA", "mB", "gap"])
        write_csv(out / "equidistribution.csv", [], cfg, ["observable", "T"])
        return result
    red = Reducer(nb)
    obs = _observables(fx)
    A = obs["half_plane"]
    mixing = mixing_correlation(S, A, A, np.linspace(0, cfg.time, 9), red)
    write_csv(out / "mixing_curve.csv", mixing, cfg)
    plotting.plot_mixing(mixing, out / "mixing.png")
    classes, _ = _classes(fx, ball)
    r1 = [c.ell for c in classes if c.kind == RANK_ONE]
    if len(r1) >= 5:
        default = np.linspace(np.sort(r1)[4], min(census_completeness(classes, cfg.depth), max(r1)), 4)
        T_grid = parse_grid(cfg.tgrid, default)
        rows = equidistribution_report(classes, S, T_grid, obs, red, rng=cfg.rng(2))
        write_csv(out / "equidistribution.csv", rows, cfg)
        plotting.plot_equidistribution(rows, out / "equidistribution.png")
        result["equidistribution_trend"] = equidistribution_trend(rows)
    else:
        log.warning("fewer than five rank-one classes; equidistribution skipped")
        write_csv(out / "equidistribution.csv", [], cfg, ["observable", "T"])
    result["mixing"] = mixing
    return result


def cmd_entropy(cfg: RunConfig) -> dict:
    """Separated-set entropy estimate under the geodesic flow."""
    out = _outdir(cfg)
    fx = load_fixture(cfg.fixture)
    if not (isinstance(fx.domain, Ellipsoid) and fx.domain.dim == 3):
        raise DensityError("the entropy estimator needs a disk fixture")
    ball = orbit(fx.presentation, fx.domain, fx.basepoint, cfg.depth)
    fit = _delta(ball)
    nb = neighbour_ball(fx.presentation, fx.domain, fx.basepoint, cfg.epsilon)
    try:
        cell_radius(nb)
        pool = lambda n, rng: liouville_pool(nb, n, rng)  # noqa: E731
        source = "liouville"
    except DensityError:
        if fit is None:
            raise
        nu = build_density(ball, delta_hat=fit["delta_hat"])
        S = bm_sampler(nu, fit["delta_hat"], cfg.samples, cfg.rng(1), cell=dirichlet_polygon(nb))
        pool = pool_from_samples(S, Reducer(nb))
        o_h = fx.basepoint / np.sqrt(-fx.domain.q(fx.basepoint))
        rmax = float(np.arccosh(np.maximum(-fx.domain.q(pool[0], o_h), 1.0)).max())
        nb = neighbour_ball(fx.presentation, fx.domain, fx.basepoint, cfg.epsilon, radius=rmax)
        source = "bowen-margulis"
    res = entropy_estimate(nb, pool, cfg.time, cfg.epsilon, cfg.rng(3))
    rows = [{"t": t, "count": n, "log_count_over_t": lr} for t, n, lr in zip(res["t"], res["count"], res["log_ratio"])]
    write_csv(out / "entropy.csv", rows, cfg)
    summary = {"fixture": fx.name, "pool": source, "epsilon": cfg.epsilon, **res,
               "delta_hat": fit["delta_hat"] if fit else None}
    write_json(out / "entropy.json", summary, cfg)
    plotting.plot_entropy(res, fit["delta_hat"] if fit else None, out / "entropy.png")
    return summary


COMMANDS = {"census": cmd_census, "verify": cmd_verify, "sample": cmd_sample, "density": cmd_density,
            "entropy": cmd_entropy}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--fixture", default="disk-schottky", help="builtin name or JSON fixture path")
    common.add_argument("--depth", type=int, default=8, help="word length of the orbit ball")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--tgrid", default=None, help="thresholds: a,b,c or start:stop:num")
    common.add_argument("--radius", type=float, default=None, help="shadow radius R")
    common.add_argument("--epsilon", type=float, default=0.3, help="separation scale")
    common.add_argument("--time", type=float, default=8.0, help="flow time (entropy t, mixing t_max)")
    common.add_argument("--samples", type=int, default=20000, help="Bowen-Margulis sample count")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="projdyn", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=fn.__doc__ or name)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if not args.verbose:
        warnings.simplefilter("ignore", RuntimeWarning)
    kw = {k: v for k, v in vars(args).items() if k != "verbose"}
    cfg = RunConfig(**kw)
    try:
        result = COMMANDS[cfg.command](cfg)
    except (FixtureError, GroupError, DensityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if cfg.command == "verify":
        for r in result["checks"]:
            tag = "PASS" if r["pass"] else "FAIL"
            detail = r.get("error") or f"residual {r['residual']:.3g} <= {r['threshold']:g}"
            print(f"{tag} {r['name']}: {detail}")
        return 0 if all(r["pass"] for r in result["checks"]) else 1
    print(f"wrote {cfg.command} outputs to {cfg.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
