"""Scenario files: loading, dimensional validation and structure building.

Scenarios are TOML documents. The schema is documented in README.md; in
short, the top-level keys are ``name``, ``seed`` and ``hamiltonian`` and the
tables are ``measurands``, ``units.<system>``, ``chart``, ``structure``,
``observables``, ``integration``, ``checks`` (array of tables) and
``outputs``.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import expr as ex
from .bundle import Factor, base_product
from .contact import ContactForm, canonical_contact, contact_to_jacobi, jet_chart
from .errors import ConfigError, DimensionMismatch, ParseError, UnresolvedReference
from .fields import BivectorField, ChartDomain, ScalarField, VectorField, parse_field
from .jacobi import LichnerowiczPair, certify
from .measurand import Dimension, MeasurandSpace, UnitSystem, format_dimension, parse_dimension
from .relations import product_jacobi

STRUCTURE_KINDS = ("none", "explicit", "contact_form", "canonical_contact", "product")


@dataclass
class Observable:
    name: str
    source: str
    field: ScalarField
    dim: Dimension


@dataclass
class Scenario:
    path: Path
    name: str
    seed: int
    space: MeasurandSpace
    units: dict
    chart: ChartDomain
    coord_dims: dict
    structure: dict
    observables: dict
    hamiltonian: str
    integration: dict | None
    checks: list
    outputs: dict
    raw: dict = field(repr=False, default_factory=dict)

    @property
    def H(self) -> Observable:
        return self.observables[self.hamiltonian]


def _table(doc, key, required=True, where="scenario"):
    if key not in doc:
        if required:
            raise UnresolvedReference(f"{where}: missing required key {key!r}")
        return None
    return doc[key]


def load_units(doc: dict, where="scenario") -> tuple[MeasurandSpace, dict]:
    m = _table(doc, "measurands", where=where)
    base = _table(m, "base", where=f"{where}: [measurands]")
    try:
        space = MeasurandSpace(tuple(base))
    except ValueError as e:
        raise ConfigError(f"{where}: [measurands]: {e}") from None
    units = {}
    for name, u in (doc.get("units") or {}).items():
        try:
            units[name] = UnitSystem(space, tuple(u["scales"]), tuple(u.get("names", ())), name)
        except (KeyError, ValueError) as e:
            raise ConfigError(f"{where}: [units.{name}]: {e}") from None
    return space, units


def read_toml(path) -> dict:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"scenario file {str(path)!r} not found") from None
    except tomllib.TOMLDecodeError as e:
        raise ParseError(f"{path}: {e}") from None


def _parse_dim(src, space, where):
    try:
        return parse_dimension(src, space)
    except ParseError as e:
        raise ParseError(f"{where}: bad dimension {src!r}: {e}") from None


def _chart_from(doc, structure, path):
    ch = doc.get("chart") or {}
    kind = structure.get("kind", "none")
    if kind == "canonical_contact":
        base_names = structure.get("base")
        if base_names is None:
            n = int(structure.get("n", 1))
            base_names = ["q"] if n == 1 else [f"q{i + 1}" for i in range(n)]
        chart = jet_chart(ChartDomain(tuple(base_names)))
        if "coords" in ch and tuple(ch["coords"]) != chart.coord_names:
            raise ConfigError(
                f"{path}: [chart] coords {ch['coords']} differ from the jet chart {list(chart.coord_names)}"
            )
        return chart
    if kind == "product":
        return None  # built with the structure
    coords = _table(ch, "coords", where=f"{path}: [chart]")
    bounds = ch.get("bounds")
    b = None
    if bounds:
        inf = float("inf")
        unknown = set(bounds) - set(coords)
        if unknown:
            raise UnresolvedReference(f"{path}: [chart] bounds for unknown coordinates {sorted(unknown)}")
        b = tuple(tuple(bounds.get(c, (-inf, inf))) for c in coords)
    try:
        return ChartDomain(tuple(coords), b)
    except ValueError as e:
        raise ConfigError(f"{path}: [chart]: {e}") from None


def load_scenario(path) -> Scenario:
    path = Path(path)
    doc = read_toml(path)
    where = str(path)
    space, units = load_units(doc, where)
    structure = dict(doc.get("structure") or {"kind": "none"})
    kind = structure.setdefault("kind", "none")
    if kind not in STRUCTURE_KINDS:
        raise ConfigError(f"{where}: unknown structure kind {kind!r}; expected one of {STRUCTURE_KINDS}")
    chart = _chart_from(doc, structure, where)
    if kind == "product":
        structure["_pair"] = _build_product(structure, path)
        chart = structure["_pair"].chart
    dims_src = (doc.get("chart") or {}).get("dims", {})
    unknown = set(dims_src) - set(chart.coord_names)
    if unknown:
        raise UnresolvedReference(f"{where}: [chart.dims] names unknown coordinates {sorted(unknown)}")
    coord_dims = {
        c: _parse_dim(dims_src.get(c, ""), space, f"{where}: coordinate {c!r}") for c in chart.coord_names
    }
    observables = {}
    for name, spec in (doc.get("observables") or {}).items():
        if isinstance(spec, str):
            spec = {"expr": spec}
        src = _table(spec, "expr", where=f"{where}: observable {name!r}")
        try:
            f = parse_field(src, chart, annotations=True)
        except ParseError as e:
            raise type(e)(f"observable {name!r}: {e}") from None
        dim = _parse_dim(spec.get("dim", ""), space, f"observable {name!r}")
        observables[name] = Observable(name, src, f, dim)
    hamiltonian = _table(doc, "hamiltonian", where=where)
    if hamiltonian not in observables:
        raise UnresolvedReference(f"{where}: hamiltonian {hamiltonian!r} is not a declared observable")
    integration = doc.get("integration")
    if integration is not None and kind == "none":
        raise ConfigError(f"{where}: integration requested without a structure")
    seed = int(doc.get("seed", 0))
    if not 0 <= seed < 2**64:
        raise ConfigError(f"{where}: seed must be an unsigned 64-bit integer")
    return Scenario(
        path=path,
        name=str(doc.get("name", path.stem)),
        seed=seed,
        space=space,
        units=units,
        chart=chart,
        coord_dims=coord_dims,
        structure=structure,
        observables=observables,
        hamiltonian=hamiltonian,
        integration=integration,
        checks=list(doc.get("checks") or []),
        outputs=dict(doc.get("outputs") or {}),
        raw=doc,
    )


# ---------------------------------------------------------------- dimensions

_OPS = {ex.Add: "+", ex.Sub: "-", ex.Mul: "*", ex.Div: "/", ex.Neg: "neg", ex.Pow: "^"}


def _label(node):
    if isinstance(node, ex.Func):
        lab = node.args[0]
    elif isinstance(node, ex.Var):
        lab = node.name
    elif isinstance(node, ex.Const):
        lab = "const"
    else:
        lab = _OPS.get(type(node), type(node).__name__)
    return f"{lab}@{node.pos}" if node.pos is not None else lab


def synthesize_dimension(node: ex.Node, dims: list, space: MeasurandSpace, path: str = "") -> Dimension:
    """Dimension of a parsed tree under the homogeneity rules (raises on violations)."""
    here = f"{path}/{_label(node)}" if path else _label(node)
    zero = space.dimensionless()
    if isinstance(node, ex.Const):
        if node.dim is None:
            return zero
        return _parse_dim(node.dim, space, here)
    if isinstance(node, ex.Var):
        return dims[node.index]
    if isinstance(node, ex.Func):
        d = synthesize_dimension(node.args[1], dims, space, here)
        if not d.is_dimensionless:
            raise DimensionMismatch(
                f"{here}: argument of {node.args[0]} must be dimensionless, found [{format_dimension(d)}]",
                here, zero, d,
            )
        return zero
    if isinstance(node, ex.Neg):
        return synthesize_dimension(node.args[0], dims, space, here)
    if isinstance(node, ex.Pow):
        return synthesize_dimension(node.args[0], dims, space, here) ** node.args[1]
    a = synthesize_dimension(node.args[0], dims, space, here)
    b = synthesize_dimension(node.args[1], dims, space, here)
    if isinstance(node, (ex.Add, ex.Sub)):
        if a != b:
            raise DimensionMismatch(
                f"{here}: cannot {'add' if isinstance(node, ex.Add) else 'subtract'} "
                f"[{format_dimension(a)}] and [{format_dimension(b)}]",
                here, a, b,
            )
        return a
    if isinstance(node, ex.Mul):
        return a * b
    if isinstance(node, ex.Div):
        return a / b
    raise ConfigError(f"{here}: unsupported node in an observable")


def validate_dimensions(s: Scenario) -> dict:
    """Synthesized dimension of every observable; raises DimensionMismatch on the first failure."""
    dims = [s.coord_dims[c] for c in s.chart.coord_names]
    out = {}
    for name, obs in s.observables.items():
        root = f"observables.{name}"
        found = synthesize_dimension(obs.field.node, dims, s.space, root)
        if found != obs.dim:
            raise DimensionMismatch(
                f"{root}: declared [{format_dimension(obs.dim)}] but the expression has "
                f"[{format_dimension(found)}]",
                root, obs.dim, found,
            )
        out[name] = found
    return out


# ---------------------------------------------------------------- structures


def _explicit_pair(structure, chart, where):
    names = chart.coord_names
    upper = {}
    for key, src in (structure.get("pi") or {}).items():
        parts = [p.strip() for p in key.split(",")]
        if len(parts) != 2 or any(p not in names for p in parts):
            raise UnresolvedReference(f"{where}: bad pi component key {key!r}")
        i, j = (names.index(p) for p in parts)
        upper[(i, j)] = parse_field(src, chart)
    R = structure.get("R") or ["0"] * chart.n
    if len(R) != chart.n:
        raise ConfigError(f"{where}: R needs {chart.n} components")
    try:
        pi = BivectorField(chart, upper)
    except ValueError as e:
        raise ConfigError(f"{where}: {e}") from None
    return LichnerowiczPair(chart, pi, VectorField.parse(chart, R))


def _build_product(structure, path):
    parts = []
    for key in ("first", "second"):
        sub = _table(structure, key, where=f"{path}: [structure]")
        sub_path = (path.parent / sub) if not os.path.isabs(sub) else Path(sub)
        s = load_scenario(sub_path)
        pair, _ = build_pair(s)
        if pair is None:
            raise ConfigError(f"{sub_path}: product factors need a structure")
        parts.append(pair)
    if structure.get("opposite_second", False):
        parts[1] = parts[1].opposite()
    P = base_product(parts[0].chart, parts[1].chart, branch=int(structure.get("branch", 1)), on_clash="suffix")
    return product_jacobi(parts[0], parts[1], P)


def build_pair(s: Scenario, samples=None):
    """(pair, certification report) at the scenario's tolerance; (None, None) for kind 'none'."""
    st = s.structure
    kind = st["kind"]
    tol = float(st.get("certify_tol", 1e-9))
    X = samples if samples is not None else s.chart.sample(int(st.get("samples", 100)), s.seed)
    where = f"{s.path}: [structure]"
    if kind == "none":
        return None, None
    if kind == "explicit":
        pair = _explicit_pair(st, s.chart, where)
    elif kind == "contact_form":
        theta = _table(st, "theta", where=where)
        pair = contact_to_jacobi(ContactForm(s.chart, theta, seed=s.seed), X, tol, s.seed)
    elif kind == "canonical_contact":
        _, pair = canonical_contact(s.chart.base, seed=s.seed)
    else:
        pair = st["_pair"]
    pair, rep = certify(pair, X, tol, s.seed)
    rep.check = "structure_certification"
    return pair, rep


def parse_factor(spec: dict, source: ChartDomain, target: ChartDomain, where="factor", seed=0) -> Factor:
    """A factor from ``{ b = [...], beta = "...", inverse = [...] }``."""
    try:
        b = [parse_field(x, source) for x in spec["b"]]
        beta = parse_field(str(spec.get("beta", "1")), source)
        inv = spec.get("inverse")
        inverse = None if inv is None else [parse_field(x, target) for x in inv]
    except KeyError as e:
        raise UnresolvedReference(f"{where}: missing key {e}") from None
    return Factor(b, beta, source, target, inverse=inverse, seed=seed)


def bundled_scenario(name: str) -> Path:
    """Path of a scenario shipped with the package, e.g. ``bundled_scenario("damped_oscillator")``."""
    from importlib.resources import files

    p = Path(str(files("dimmech") / "scenarios" / f"{name}.toml"))
    if not p.exists():
        raise ConfigError(f"no bundled scenario named {name!r}")
    return p
