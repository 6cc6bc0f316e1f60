"""Command-line front end: ``netmfg run <scenario>`` and ``netmfg verify <dir>``.

Exit codes: 0 success, 2 unreadable input (scenario or artifacts), 3 invalid
scenario, 4 solver failure, 5 a hard invariant failed.  Every non-zero exit
of ``run`` leaves an ``error.json`` record in the output directory.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
import warnings
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .continuity import (balance_residual, edge_balance_residual, flux_csv, total_mass_drift,
                         vertex_flux)
from .costs import build_mfg_costs, trajectory_cost
from .envelope import EnvelopeProblem, envelope_value, verify_envelope_lemma
from .errors import ConfigurationError, DomainError, InfeasibleError, SolverError
from .geometry import NetPoint
from .hamiltonian import HamiltonianEval
from .hj import (ValueField, control_grid, dpp_residual, grid_dpp_residual, random_probes,
                 solve_value, value_bounds_check, viscosity_residual)
from .mfg import (TrajectoryMeasure, exploitability, fictitious_play, freeze, normalize_atoms,
                  support_differentiability, wasserstein1)
from .scenario import ScenarioParseError, load_scenario
from .trajectory import (Synthesizer, Trajectory, euler_lagrange_residual, lipschitz_bound_check,
                         transversality_residual)

logger = logging.getLogger("netmfg")

EXIT_OK, EXIT_PARSE, EXIT_INVALID, EXIT_SOLVER, EXIT_INVARIANT = 0, 2, 3, 4, 5

# Constant in the O(dt + dx) tolerances reported for off-grid checks.
RATE_CONSTANT = 5.0


class ArtifactError(Exception):
    """Missing or unreadable artifacts."""


def _f(x) -> str:
    return f"{float(x):.17g}"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")


def _metric(value, anchor, tol=None, ok=None, hard=False, compare="le"):
    if ok is None:
        if tol is None:
            ok = True
        elif value is None:
            ok = True
        else:
            ok = bool(value <= tol) if compare == "le" else bool(value == tol)
    return {"value": value, "tolerance": tol, "pass": bool(ok), "hard": hard, "anchor": anchor}


def _point_cols(p: NetPoint):
    if p.is_vertex:
        return f"VERTEX:{p.vertex}", "0"
    return str(p.edge), _f(p.s)


def _parse_point(edge_id: str, arc: str) -> NetPoint:
    if edge_id.startswith("VERTEX:"):
        return NetPoint.at_vertex(int(edge_id.split(":", 1)[1]))
    return NetPoint.on_edge(int(edge_id), float(arc))


# -- artifact writers -----------------------------------------------------


def write_value_field(path: Path, vf: ValueField) -> None:
    """Rows ordered by slice, then edge, then node along the edge."""
    grid = vf.grid
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["edge_id", "arc_coord", "time", "u", "Du"])
        for n, t in enumerate(grid.times):
            for i in range(vf.geometry.n_edges):
                U = vf.edge_values(n, i)
                D = vf.slopes(n, i)
                for s, uu, dd in zip(grid.s[i], U, D):
                    w.writerow([i, _f(s), _f(t), _f(uu), _f(dd)])


def read_value_field(path: Path, grid) -> np.ndarray:
    u = np.full((grid.n_steps + 1, grid.n_nodes), np.nan)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ArtifactError(str(exc)) from None
    if not rows or rows[0] != ["edge_id", "arc_coord", "time", "u", "Du"]:
        raise ArtifactError("value_field.csv has an unexpected header")
    body = rows[1:]
    g = grid.geometry
    expected = (grid.n_steps + 1) * sum(len(s) for s in grid.s)
    if len(body) != expected:
        raise ArtifactError(f"value_field.csv has {len(body)} rows, expected {expected}")
    r = 0
    conflicts = 0
    for n in range(grid.n_steps + 1):
        for i in range(g.n_edges):
            for k, j in enumerate(grid.node_index[i]):
                val = float(body[r][3])
                if not np.isnan(u[n, j]) and u[n, j] != val:
                    conflicts += 1
                u[n, j] = val
                r += 1
    if conflicts:
        raise ArtifactError(f"value_field.csv gives {conflicts} inconsistent vertex values")
    return u


def write_measure(out: Path, mu: TrajectoryMeasure, g) -> None:
    tdir = out / "trajectories"
    tdir.mkdir(exist_ok=True)
    with open(out / "particles.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["particle", "origin", "weight", "weight_exact", "file"])
        for k, ((wt, tr), o) in enumerate(zip(mu.particles, mu.origins)):
            name = f"trajectories/particle_{k:04d}.csv"
            tr.to_csv(out / name, g)
            w.writerow([k, o, _f(wt), str(wt), name])
    mdir = out / "marginals"
    mdir.mkdir(exist_ok=True)
    for n, atoms in enumerate(mu.marginals()):
        with open(mdir / f"slice_{n:04d}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["edge_id", "arc_coord", "weight", "weight_exact"])
            for p, wt in atoms:
                e, s = _point_cols(p)
                w.writerow([e, s, _f(wt), str(wt)])


def read_measure(out: Path, g, dt: float) -> TrajectoryMeasure:
    try:
        with open(out / "particles.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        parts, origins = [], []
        for row in rows:
            with open(out / row["file"], newline="") as fh:
                trows = list(csv.DictReader(fh))
            pts = [g.canonicalize(_parse_point(r["edge_id"], r["arc_coord"])) for r in trows]
            parts.append((Fraction(row["weight_exact"]), Trajectory(0, dt, pts)))
            origins.append(int(row["origin"]))
    except (OSError, KeyError, ValueError) as exc:
        raise ArtifactError(f"cannot read particles: {exc}") from None
    return TrajectoryMeasure(parts, origins)


def read_marginals(out: Path, n_slices: int):
    res = []
    for n in range(n_slices):
        path = out / "marginals" / f"slice_{n:04d}.csv"
        try:
            with open(path, newline="") as fh:
                rows = list(csv.DictReader(fh))
        except OSError as exc:
            raise ArtifactError(str(exc)) from None
        res.append([(_parse_point(r["edge_id"], r["arc_coord"]), float(r["weight"]), Fraction(r["weight_exact"]))
                    for r in rows])
    return res


# -- pipeline ---------------------------------------------------------------


def _solver_kwargs(sc, threads):
    s = sc.solver
    return {"V": s["V"], "n_controls": s["n_controls"], "threads": threads}


def _default_eps(sc) -> float | None:
    g, grid = sc.geometry, sc.grid
    eps = sc.outputs["flux_eps"]
    if eps is not None:
        return eps
    half = min((0.5 * e.length for e in g.edges if e.finite), default=math.inf)
    eps = min(max(4 * grid.dx, 0.2), half)
    return eps if eps >= 2 * grid.dx else None


def _control_pipeline(sc, threads):
    g, grid = sc.geometry, sc.grid
    vf = solve_value(g, grid, sc.cost, **_solver_kwargs(sc, threads))
    synth = Synthesizer(vf)
    atoms = normalize_atoms(g, sc.atoms)
    # Snap initial atoms to the grid, as the synthesis does.
    parts = []
    for p, w in atoms:
        if not grid.on_grid(p):
            warnings.warn(f"initial atom {p} snapped to the grid")
            p = grid.snap(p)
        parts.append((w, synth.run(p, 0)))
    mu = TrajectoryMeasure(parts, list(range(len(parts))))
    return vf, sc.cost, mu, {}


def _mfg_pipeline(sc, threads):
    g, grid = sc.geometry, sc.grid
    atoms = []
    for p, w in sc.atoms:
        if not grid.on_grid(p):
            warnings.warn(f"initial atom {p} snapped to the grid")
            p = grid.snap(p)
        atoms.append((p, w))
    kw = _solver_kwargs(sc, threads)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = fictitious_play(sc.family, atoms, grid, max_iter=sc.solver["max_iter"], tol=sc.solver["tol"],
                              prune=sc.solver["prune"], **kw)
    mu = res.measure
    fr = freeze(sc.family, mu, grid, **kw)
    e, extra = exploitability(sc.family, mu, grid, frozen=fr, detail=True)
    diag = {
        "fictitious_play": {
            "converged": res.converged, "iterations": res.iterations,
            "exploitability": res.exploitability, "value_gap": res.value_gap,
            "sup_d1_step": res.d1_steps, "particles": res.particles,
            "pruned_mass": res.pruned_mass, "returned_iteration": res.best_iteration,
            "warnings": [str(w.message) for w in caught],
        },
        "final_exploitability": e, "final_value_gap": extra["value_gap"],
        "support_differentiability": support_differentiability(fr.vf, mu.marginals()),
    }
    return fr.vf, fr.cost, mu, diag


def compute_metrics(sc, vf, cost, mu, diag) -> tuple[dict, dict, list]:
    g, grid = sc.geometry, sc.grid
    tol_rate = RATE_CONSTANT * (grid.dt + grid.dx)
    m = {}
    term = max(float(np.max(np.abs(vf.u[-1, grid.node_index[i]] - cost.terminal_edge_values(i, grid.s[i]))))
               for i in range(g.n_edges))
    m["terminal_consistency"] = _metric(term, "value equals the terminal cost at the final time", 0.0,
                                        hard=True, compare="eq")
    near = max(float(np.max(np.abs(vf.u[-2, grid.node_index[i]] - cost.terminal_edge_values(i, grid.s[i]))))
               for i in range(g.n_edges))
    m["terminal_approach"] = _metric(near, "value tends to the terminal cost as t approaches T (one step before T)")
    m["dpp_grid_residual"] = _metric(grid_dpp_residual(vf), "dynamic programming principle at grid nodes",
                                     0.0, hard=True, compare="eq")
    rng = np.random.default_rng(sc.seed)
    probes = random_probes(vf, sc.outputs["probes"], rng)
    m["dpp_offgrid_residual"] = _metric(dpp_residual(vf, probes),
                                        "dynamic programming principle at off-grid points", tol_rate)
    b = value_bounds_check(vf)
    m["value_lower_bound"] = _metric(None, "value bounded below by -C0 (T - t) + min g", ok=b["lower_ok"], hard=True)
    m["value_upper_bound"] = _metric(None, "value bounded above by the stay-put cost", ok=b["upper_ok"], hard=True)
    he = HamiltonianEval(cost, vf.V)
    vr = viscosity_residual(vf, he)
    m["viscosity_interior"] = _metric(vr["interior_max"], "Hamilton-Jacobi equation on edges where u is smooth",
                                      tol_rate)
    m["viscosity_vertex"] = _metric(vr["vertex_max"], "vertex Hamilton-Jacobi condition with H_0", tol_rate)

    trajs = [tr for _, tr in mu.particles]
    lb = lipschitz_bound_check(trajs, g, vf.V)
    m["max_speed"] = _metric(lb["max_speed"], "optimal trajectories are Lipschitz with constant V", vf.V, hard=True)
    m["solver_max_speed"] = _metric(vf.max_speed_used, "no saturation of the control grid", vf.V, hard=True,
                                    ok=vf.max_speed_used < vf.V)
    el = [euler_lagrange_residual(tr, cost) for tr in trajs]
    el_max = max((r["max_abs"] for r in el), default=0.0)
    if sc.mode == "control":
        m["euler_lagrange"] = _metric(el_max, "Euler-Lagrange equation on interior arcs", 10 * grid.dt)
    else:
        # Frozen mean field costs are bilinear in (x, t), so d/dy l jumps across cells.
        m["euler_lagrange"] = _metric(el_max, "Euler-Lagrange equation on interior arcs (report only: "
                                      "density-dependent costs are piecewise bilinear)")
    tv = [transversality_residual(tr, cost) for tr in trajs]
    tv = [x for x in tv if x is not None]
    m["transversality"] = _metric(max(tv) if tv else None, "transversality condition at the final time", tol_rate)
    gaps = []
    for _, tr in mu.particles:
        gaps.append(abs(trajectory_cost(cost, tr) - vf.value(tr.points[0], 0.0)))
    m["trajectory_cost_gap"] = _metric(max(gaps), "cost of the synthesised trajectory equals the value", tol_rate)

    m["mass_drift"] = _metric(total_mass_drift(mu), "marginals are probability measures", 0.0, hard=True,
                              compare="eq")
    series = []
    eps = _default_eps(sc)
    bal, disc = 0.0, 0.0
    for v in range(g.n_vertices):
        if eps is None:
            break
        fs = vertex_flux(mu, grid, v, eps)
        series.append(fs)
        bal = max(bal, balance_residual(mu, fs, exact=True))
        for d in fs.discrepancy().values():
            disc = max(disc, d["time_l1"])
    m["vertex_balance"] = _metric(bal, "vertex mass balance d/dt m(vertex) + sum_i q_i = 0 (counting fluxes)",
                                  0.0, hard=True, compare="eq")
    m["edge_balance"] = _metric(edge_balance_residual(mu, g, grid.dt), "edge mass changes equal the vertex fluxes",
                                0.0, hard=True, compare="eq")
    m["flux_discrepancy"] = _metric(disc, "mollified flux approaches the counting flux (time-integrated cumulative difference)",
                                    RATE_CONSTANT * ((eps or 0.0) + grid.dt))
    margs = mu.marginals()
    d1 = max((wasserstein1(g, a, b) for a, b in zip(margs[:-1], margs[1:])), default=0.0)
    m["marginal_time_lipschitz"] = _metric(d1, "d1(m(t), m(t + dt)) <= V dt", vf.V * grid.dt + 1e-12, hard=True)
    if sc.mode == "mfg":
        fp = diag["fictitious_play"]
        m["exploitability"] = _metric(diag["final_exploitability"], "support of the measure consists of optimal "
                                      "trajectories", sc.solver["tol"], ok=fp["converged"] or
                                      diag["final_exploitability"] <= sc.solver["tol"])

    env = {}
    if sc.outputs["envelope"]:
        A = sc.solver["A_max"] or vf.V
        s_grid = np.linspace(0.0, grid.T, 21)
        worst = 0.0
        for v in range(g.n_vertices):
            ep = EnvelopeProblem(cost, v, A_max=A, n_ray=sc.solver["n_ray"])
            rep = verify_envelope_lemma(ep, s_grid, alphas=[np.zeros(ep.N)], lsc_levels=2)
            env[str(v)] = {"max_violation_at_zero": rep["max_violation_i"], "ray_step": rep["ray_step"],
                           "lsc_violations": rep["lsc_violations"], "A_max": A, "n_ray": ep.n_ray,
                           "samples": [{"s": float(s), "value": envelope_value(ep, np.zeros(ep.N), s),
                                        "waiting_cost": ep.waiting_cost(s)} for s in s_grid[::5]]}
            worst = max(worst, rep["max_violation_i"] / max(ep.step ** 2, 1e-300))
        m["envelope_identity"] = _metric(max(r["max_violation_at_zero"] for r in env.values()),
                                         "vertex envelope at zero velocity equals the waiting cost",
                                         min(r["ray_step"] for r in env.values()) ** 2)
    diag = dict(diag)
    diag["viscosity"] = vr
    diag["euler_lagrange"] = [{"particle": k, **r} for k, r in enumerate(el)]
    diag["V"] = vf.V
    diag["n_controls"] = int(vf.controls.size)
    return m, {"metrics": m, "diagnostics": diag, "envelope": env}, series


def run_scenario(path, out: Path, seed: int | None = None, threads: int = 1) -> int:
    out.mkdir(parents=True, exist_ok=True)
    for stale in ("error.json",):
        if (out / stale).exists():
            (out / stale).unlink()
    try:
        sc, raw = load_scenario(path)
    except ScenarioParseError as exc:
        return _fail(out, EXIT_PARSE, "parse_error", str(exc))
    except (ConfigurationError, DomainError) as exc:
        return _fail(out, EXIT_INVALID, "validation_error", str(exc))
    if seed is not None:
        sc.seed = seed
    try:
        if sc.mode == "control":
            vf, cost, mu, diag = _control_pipeline(sc, threads)
        else:
            vf, cost, mu, diag = _mfg_pipeline(sc, threads)
    except (ConfigurationError, DomainError, InfeasibleError) as exc:
        return _fail(out, EXIT_INVALID, "validation_error", str(exc))
    except SolverError as exc:
        return _fail(out, EXIT_SOLVER, "solver_error", str(exc))
    metrics, bundle, series = compute_metrics(sc, vf, cost, mu, diag)

    (out / "scenario.toml").write_bytes(raw)
    if sc.outputs["value_field"]:
        write_value_field(out / "value_field.csv", vf)
    write_measure(out, mu, sc.geometry)
    flux_csv(out / "flux.csv", series)
    _write_json(out / "envelope.json", bundle["envelope"])
    _write_json(out / "metrics.json", metrics)
    _write_json(out / "diagnostics.json", bundle["diagnostics"])
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name not in ("manifest.json", "error.json"))
    manifest = {
        "format": 1, "package_version": __version__, "scenario": sc.name, "mode": sc.mode, "seed": sc.seed,
        "scenario_sha256": hashlib.sha256(raw).hexdigest(), "V": vf.V, "n_controls": int(vf.controls.size),
        "value_field": sc.outputs["value_field"],
        "files": {str(p.relative_to(out)): _sha256(p) for p in files},
    }
    _write_json(out / "manifest.json", manifest)
    failed = sorted(k for k, v in metrics.items() if v["hard"] and not v["pass"])
    if failed:
        return _fail(out, EXIT_INVARIANT, "invariant_failure", "hard invariants failed: " + ", ".join(failed),
                     {"failed": failed})
    return EXIT_OK


def _fail(out: Path, code: int, kind: str, message: str, extra=None) -> int:
    rec = {"error": kind, "exit_code": code, "message": message}
    if extra:
        rec.update(extra)
    _write_json(out / "error.json", rec)
    print(f"netmfg: {kind}: {message}", file=sys.stderr)
    return code


def verify_dir(out: Path) -> tuple[int, dict]:
    """Recompute the hard checks from persisted artifacts."""
    report = {}
    try:
        manifest = json.loads((out / "manifest.json").read_text())
        raw = (out / "scenario.toml").read_bytes()
    except (OSError, ValueError) as exc:
        return EXIT_PARSE, {"error": f"missing or corrupt manifest/scenario: {exc}"}
    bad = []
    for name, digest in manifest.get("files", {}).items():
        p = out / name
        if not p.is_file():
            return EXIT_PARSE, {"error": f"missing artifact {name}"}
        if _sha256(p) != digest:
            bad.append(name)
    report["artifact_hashes"] = {"pass": not bad, "mismatched": bad}
    report["scenario_hash"] = {"pass": hashlib.sha256(raw).hexdigest() == manifest.get("scenario_sha256")}
    tmp = out / "scenario.toml"
    try:
        sc, _ = load_scenario(tmp)
    except (ScenarioParseError, ConfigurationError, DomainError) as exc:
        return EXIT_PARSE, {"error": f"stored scenario is invalid: {exc}"}
    g, grid = sc.geometry, sc.grid
    try:
        mu = read_measure(out, g, grid.dt)
        margs = read_marginals(out, grid.n_steps + 1)
    except (ArtifactError, DomainError) as exc:
        return EXIT_PARSE, {"error": str(exc)}
    mass = max(abs(sum((w for _, _, w in atoms), Fraction(0)) - 1) for atoms in margs)
    report["mass"] = {"pass": mass == 0, "max_drift": float(mass)}
    push = [[(p, w) for p, w in m] for m in mu.marginals()]
    same = all(len(a) == len(b) and all(g.same_point(p, q) and w == x for (p, w), (q, _, x) in zip(a, b))
               for a, b in zip(push, margs))
    report["marginals_match_particles"] = {"pass": bool(same)}
    bal = 0.0
    for v in range(g.n_vertices):
        from .continuity import counting_flux, vertex_mass
        q = counting_flux(mu, g, v, grid.dt)
        for n in range(grid.n_steps):
            r = vertex_mass(mu, v, n + 1) - vertex_mass(mu, v, n) + Fraction(grid.dt) * sum(x[n] for x in q.values())
            bal = max(bal, abs(float(r)))
    report["vertex_balance"] = {"pass": bal == 0.0, "max_residual": bal}
    if manifest.get("value_field", True):
        try:
            u = read_value_field(out / "value_field.csv", grid)
        except ArtifactError as exc:
            return EXIT_PARSE, {"error": str(exc)}
        if sc.mode == "control":
            cost = sc.cost
        else:
            cost = build_mfg_costs(sc.family, [[(p, w) for p, w, _ in m] for m in margs], grid)
        V = float(manifest["V"])
        vf = ValueField(grid, cost, V, control_grid(V, int(manifest["n_controls"])), u)
        term = max(float(np.max(np.abs(u[-1, grid.node_index[i]] - cost.terminal_edge_values(i, grid.s[i]))))
                   for i in range(g.n_edges))
        report["terminal_consistency"] = {"pass": term == 0.0, "max_abs": term}
        dpp = grid_dpp_residual(vf)
        report["dpp_grid_residual"] = {"pass": dpp == 0.0, "max_abs": dpp}
        b = value_bounds_check(vf)
        report["value_bounds"] = {"pass": b["lower_ok"] and b["upper_ok"], **b}
    ok = all(v["pass"] for v in report.values())
    report["ok"] = ok
    return (EXIT_OK if ok else EXIT_INVARIANT), report


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="netmfg", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="solve a scenario and write artifacts")
    r.add_argument("scenario")
    r.add_argument("--out", help="artifact directory (default: $NETMFG_OUT/<name> or ./netmfg_out/<name>)")
    r.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    r.add_argument("--threads", type=int, default=1, help="worker threads for the value solver")
    v = sub.add_parser("verify", help="recheck an artifact directory")
    v.add_argument("directory")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.cmd == "run":
        if args.threads < 1:
            ap.error("--threads must be at least 1")
        if args.out:
            out = Path(args.out)
        else:
            root = Path(os.environ.get("NETMFG_OUT", "netmfg_out"))
            out = root / Path(args.scenario).stem
        code = run_scenario(args.scenario, out, seed=args.seed, threads=args.threads)
        if code == EXIT_OK:
            print(f"artifacts written to {out}")
        return code
    code, report = verify_dir(Path(args.directory))
    print(json.dumps(report, indent=2, sort_keys=True))
    return code


if __name__ == "__main__":
    sys.exit(main())
