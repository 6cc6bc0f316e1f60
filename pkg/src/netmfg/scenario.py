"""Scenario files: TOML schema, validation and construction of model objects.

A scenario is a single TOML document.  Top-level keys:

``name``, ``mode`` (``"control"`` or ``"mfg"``), ``seed``; tables
``network``, ``grid``, ``solver``, ``costs`` (control mode) or ``mfg``
(mfg mode), ``outputs`` and an array of tables ``m0``.  See
``scenarios/README.md`` for the full schema.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .costs import AffineOuter, CostModel, Kernel, MfgCostFamily, Poly, PowerCost, TimeProfile
from .errors import ConfigurationError, DomainError
from .geometry import NetPoint, NetworkGeometry
from .grid import SpaceTimeGrid


class ScenarioParseError(Exception):
    """The file cannot be read or is not valid TOML."""


_TOP = {"name", "mode", "seed", "network", "grid", "solver", "costs", "mfg", "outputs", "m0", "description"}


def _table(d, key, required=True):
    if key not in d:
        if required:
            raise ConfigurationError(f"missing table [{key}]")
        return {}
    v = d[key]
    if not isinstance(v, dict):
        raise ConfigurationError(f"[{key}] must be a table")
    return v


def _num(d, key, default=None, positive=False, allow_none=False):
    if key not in d:
        if default is None and not allow_none:
            raise ConfigurationError(f"missing number '{key}'")
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigurationError(f"'{key}' must be a number, got {v!r}")
    v = float(v)
    if not math.isfinite(v):
        raise ConfigurationError(f"'{key}' must be finite")
    if positive and not v > 0:
        raise ConfigurationError(f"'{key}' must be positive, got {v}")
    return v


def _check_keys(d, allowed, where):
    extra = set(d) - set(allowed)
    if extra:
        raise ConfigurationError(f"unknown keys in {where}: {sorted(extra)}")


def _poly(v, where):
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return Poly(float(v))
    if isinstance(v, list) and v and all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in v):
        return Poly(tuple(float(c) for c in v))
    if isinstance(v, dict):
        _check_keys(v, {"coeffs", "t"}, where)
        base = _poly(v.get("coeffs", 0.0), where)
        return Poly(base.coeffs, _num(v, "t", 0.0))
    raise ConfigurationError(f"{where}: expected a number, a coefficient list or {{coeffs, t}}")


def _kernel(v, where):
    if v is None:
        return Kernel("zero")
    if not isinstance(v, dict):
        raise ConfigurationError(f"{where}: kernel must be a table")
    _check_keys(v, {"kind", "radius"}, where)
    kind = v.get("kind", "zero")
    if kind not in ("zero", "bump", "hat"):
        raise ConfigurationError(f"{where}: unknown kernel kind {kind!r}")
    return Kernel(kind, _num(v, "radius", 1.0, positive=True))


def _outer(v, where):
    if v is None:
        return AffineOuter(Poly(0.0), 0.0)
    if not isinstance(v, dict):
        raise ConfigurationError(f"{where}: outer function must be a table")
    _check_keys(v, {"base", "slope"}, where)
    return AffineOuter(_poly(v.get("base", 0.0), where), _num(v, "slope", 0.0))


def _profile(v, where):
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return TimeProfile(float(v))
    if not isinstance(v, dict):
        raise ConfigurationError(f"{where}: expected a number or {{const, slope, jumps}}")
    _check_keys(v, {"const", "slope", "jumps"}, where)
    jumps = v.get("jumps", [])
    try:
        jumps = tuple((float(t), float(d)) for t, d in jumps)
    except (TypeError, ValueError):
        raise ConfigurationError(f"{where}: jumps must be [time, delta] pairs") from None
    return TimeProfile(_num(v, "const", 0.0), _num(v, "slope", 0.0), jumps)


def _point(d, g, where):
    if "vertex" in d:
        _check_keys(d, {"vertex", "weight", "t"}, where)
        return NetPoint.at_vertex(int(d["vertex"]))
    _check_keys(d, {"edge", "s", "weight", "t"}, where)
    if "edge" not in d or "s" not in d:
        raise ConfigurationError(f"{where}: a point needs 'vertex' or 'edge' and 's'")
    return NetPoint.on_edge(int(d["edge"]), _num(d, "s"))


@dataclass
class Scenario:
    name: str
    mode: str
    seed: int
    geometry: NetworkGeometry
    grid: SpaceTimeGrid
    solver: dict
    atoms: list
    outputs: dict
    cost: CostModel | None = None
    family: MfgCostFamily | None = None
    raw: dict = field(default_factory=dict)


def parse_text(text: str) -> dict:
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioParseError(f"invalid TOML: {exc}") from None


def load_scenario(path) -> tuple[Scenario, bytes]:
    """Read and validate a scenario; returns it with the raw file bytes."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise ScenarioParseError(f"cannot read {path}: {exc}") from None
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError:
        raise ScenarioParseError("scenario is not UTF-8 text") from None
    return build_scenario(parse_text(text)), data


def build_network(net: dict) -> NetworkGeometry:
    if "junction" in net:
        _check_keys(net, {"junction"}, "[network]")
        return NetworkGeometry.junction(int(net["junction"]))
    _check_keys(net, {"vertices", "edges"}, "[network]")
    edges = []
    for k, e in enumerate(net.get("edges", [])):
        if not isinstance(e, dict):
            raise ConfigurationError("network edges must be tables")
        _check_keys(e, {"tail", "head", "length"}, f"edge {k}")
        head = e.get("head")
        length = _num(e, "length", math.inf if head is None else None)
        edges.append((int(e["tail"]), None if head is None else int(head), length))
    return NetworkGeometry(int(net.get("vertices", 1)), edges)


def build_scenario(d: dict) -> Scenario:
    """Validate a parsed document and construct every model object; all
    module preconditions are checked before any computation starts."""
    try:
        return _build(d)
    except (DomainError, ConfigurationError):
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigurationError(f"invalid scenario: {exc}") from None


def _build(d: dict) -> Scenario:
    _check_keys(d, _TOP, "scenario")
    name = d.get("name", "scenario")
    if not isinstance(name, str) or not name or any(c in name for c in "/\\"):
        raise ConfigurationError("'name' must be a plain non-empty string")
    mode = d.get("mode", "control")
    if mode not in ("control", "mfg"):
        raise ConfigurationError(f"mode must be 'control' or 'mfg', got {mode!r}")
    seed = d.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigurationError("seed must be a nonnegative integer")

    g = build_network(_table(d, "network"))
    gr = _table(d, "grid")
    _check_keys(gr, {"dx", "dt", "T", "truncation"}, "[grid]")
    grid = SpaceTimeGrid(g, _num(gr, "dx", positive=True), _num(gr, "dt", positive=True),
                         _num(gr, "T", positive=True), _num(gr, "truncation", allow_none=True))

    sv = _table(d, "solver", required=False)
    _check_keys(sv, {"V", "n_controls", "threads", "tol", "max_iter", "prune", "A_max", "n_ray"}, "[solver]")
    solver = {
        "V": _num(sv, "V", allow_none=True),
        "n_controls": int(sv.get("n_controls", 1025)),
        "threads": int(sv.get("threads", 1)),
        "tol": _num(sv, "tol", 1e-3, positive=True),
        "max_iter": int(sv.get("max_iter", 200)),
        "prune": _num(sv, "prune", 1e-8, positive=True),
        "A_max": _num(sv, "A_max", allow_none=True),
        "n_ray": int(sv.get("n_ray", 2 ** 10 + 1)),
    }
    if solver["n_controls"] < 3 or solver["threads"] < 1 or solver["max_iter"] < 1:
        raise ConfigurationError("n_controls >= 3, threads >= 1 and max_iter >= 1 are required")

    out = _table(d, "outputs", required=False)
    _check_keys(out, {"flux_eps", "envelope", "probes", "value_field"}, "[outputs]")
    outputs = {
        "flux_eps": _num(out, "flux_eps", allow_none=True),
        "envelope": bool(out.get("envelope", True)),
        "probes": int(out.get("probes", 1000)),
        "value_field": bool(out.get("value_field", True)),
    }

    m0 = d.get("m0")
    if not isinstance(m0, list) or not m0:
        raise ConfigurationError("at least one [[m0]] atom is required")
    atoms = []
    for k, a in enumerate(m0):
        if not isinstance(a, dict):
            raise ConfigurationError("[[m0]] entries must be tables")
        p = g.canonicalize(_point(a, g, f"m0 atom {k}"))
        if not p.is_vertex and p.s > grid.edge_extent(p.edge):
            raise ConfigurationError(f"m0 atom {k} lies beyond the truncation radius")
        atoms.append((p, _num(a, "weight", 1.0)))
    if any(w < 0 for _, w in atoms) or sum(w for _, w in atoms) <= 0:
        raise ConfigurationError("m0 weights must be nonnegative with positive total")

    sc = Scenario(name, mode, seed, g, grid, solver, atoms, outputs, raw=d)
    if mode == "control":
        if "mfg" in d:
            raise ConfigurationError("[mfg] is only allowed in mfg mode")
        sc.cost = _build_costs(_table(d, "costs"), g, grid)
        chk = [c.check_assumptions(grid.edge_extent(i), grid.T) for i, c in enumerate(sc.cost.edge_costs)
               if hasattr(c, "check_assumptions")]
        if not all(c["holds"] for c in chk):
            raise ConfigurationError("running costs violate the coercivity bound")
    else:
        if "costs" in d:
            raise ConfigurationError("[costs] is only allowed in control mode")
        sc.family = _build_family(_table(d, "mfg"), g, grid)
    if outputs["flux_eps"] is not None and outputs["flux_eps"] < 2 * grid.dx * (1 - 1e-12):
        raise ConfigurationError("flux_eps must be at least twice dx")
    return sc


def _build_costs(c: dict, g: NetworkGeometry, grid: SpaceTimeGrid) -> CostModel:
    _check_keys(c, {"p", "edge", "vertex"}, "[costs]")
    p = _num(c, "p", 2.0)
    if not p > 1:
        raise ConfigurationError("the speed exponent p must exceed 1")
    edges = c.get("edge", [])
    if len(edges) != g.n_edges:
        raise ConfigurationError(f"need {g.n_edges} [[costs.edge]] tables, got {len(edges)}")
    ecosts, terminal = [], []
    for k, e in enumerate(edges):
        _check_keys(e, {"kappa", "lambda", "terminal", "kappa_min"}, f"costs.edge {k}")
        kappa = _poly(e.get("kappa", 1.0), f"costs.edge {k} kappa")
        lam = _poly(e.get("lambda", 0.0), f"costs.edge {k} lambda")
        kmin = _num(e, "kappa_min", allow_none=True)
        const = len(kappa.coeffs) == 1 and kappa.t_coef == 0
        if not const and kmin is None:
            kmin = kappa.bounds(grid.edge_extent(k), grid.T)[0]
        ecosts.append(PowerCost(kappa.coeffs[0] if const else kappa, lam, p=p,
                                kappa_min=kmin))
        terminal.append(_poly(e.get("terminal", 0.0), f"costs.edge {k} terminal"))
    vcosts, vterm = {}, {}
    for k, v in enumerate(c.get("vertex", [])):
        _check_keys(v, {"id", "running", "terminal"}, f"costs.vertex {k}")
        vid = int(v["id"])
        if "running" in v:
            vcosts[vid] = _profile(v["running"], f"costs.vertex {k} running")
        if "terminal" in v:
            vterm[vid] = _num(v, "terminal")
    return CostModel(g, ecosts, vcosts, terminal, vterm)


def _build_family(m: dict, g: NetworkGeometry, grid: SpaceTimeGrid) -> MfgCostFamily:
    _check_keys(m, {"p", "edge", "vertex", "terminal_kernel"}, "[mfg]")
    p = _num(m, "p", 2.0)
    if not p > 1:
        raise ConfigurationError("the speed exponent p must exceed 1")
    edges = m.get("edge", [])
    if len(edges) != g.n_edges:
        raise ConfigurationError(f"need {g.n_edges} [[mfg.edge]] tables, got {len(edges)}")
    h1, h2, k1, k2, term, tslope = [], [], [], [], [], []
    for k, e in enumerate(edges):
        where = f"mfg.edge {k}"
        _check_keys(e, {"h1", "h2", "kernel1", "kernel2", "terminal", "terminal_slope"}, where)
        h1.append(_outer(e.get("h1", {"base": 1.0}), where))
        h2.append(_outer(e.get("h2"), where))
        k1.append(_kernel(e.get("kernel1"), where))
        k2.append(_kernel(e.get("kernel2"), where))
        term.append(_poly(e.get("terminal", 0.0), where))
        tslope.append(_num(e, "terminal_slope", 0.0))
        if h1[-1].slope < 0:
            raise ConfigurationError(f"{where}: h1 slope must be nonnegative to keep the speed cost coercive")
        kmin = h1[-1].base.bounds(grid.edge_extent(k), grid.T)[0]
        if not kmin > 0:
            raise ConfigurationError(f"{where}: h1 must be positive")
    vouter, vkern, vterm = {}, {}, {}
    for k, v in enumerate(m.get("vertex", [])):
        where = f"mfg.vertex {k}"
        _check_keys(v, {"id", "outer", "kernel", "terminal"}, where)
        vid = int(v["id"])
        if "outer" in v:
            vouter[vid] = _outer(v["outer"], where)
            vkern[vid] = _kernel(v.get("kernel"), where)
        if "terminal" in v:
            vterm[vid] = _num(v, "terminal")
    return MfgCostFamily(g, h1, h2, k1, k2, p=p, vertex_outer=vouter, vertex_kernel=vkern,
                         terminal_edge=term, terminal_vertex=vterm,
                         terminal_kernel=_kernel(m.get("terminal_kernel"), "[mfg]"), terminal_slope=tslope)
