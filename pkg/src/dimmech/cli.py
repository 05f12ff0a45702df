"""Command-line entry point: ``dimmech run | check | convert``."""
from __future__ import annotations

import argparse
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .bundle import Derivation, base_product
from .contact import JetChart, check_bracket_relations
from .dynamics import FlowProblem, integrate_flow, monitor_energy
from .errors import (
    ConfigError,
    DimensionMismatch,
    DimmechError,
    LeftDomain,
    StepUnderflow,
    UnresolvedReference,
)
from .fields import parse_field
from .jacobi import CertificationReport, check_jacobi_pair
from .measurand import MeasurandSpace, TypedNumber, UnitSystem, convert, format_dimension, parse_dimension
from .relations import (
    coisotropic_check,
    jacobi_map_check,
    jet_lift_graph_check,
    jet_lift_graph_samples,
    product_jacobi,
)
from .scenario import Scenario, build_pair, load_scenario, load_units, parse_factor, read_toml, validate_dimensions

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2

# Built-in unit registry for `convert` over length, mass and time.
MECHANICS = MeasurandSpace(("L", "M", "T"))
BUILTIN_UNITS = {
    "SI": UnitSystem(MECHANICS, (1.0, 1.0, 1.0), ("m", "kg", "s"), "SI"),
    "CGS": UnitSystem(MECHANICS, (0.01, 0.001, 1.0), ("cm", "g", "s"), "CGS"),
    "imperial": UnitSystem(MECHANICS, (0.3048, 0.45359237, 1.0), ("ft", "lb", "s"), "imperial"),
}


def _dim_text(d):
    return format_dimension(d) or "1"


def _block(title, body):
    return f"[{title}]\n{body}"


def _resolve(s: Scenario, src, chart):
    """An observable name or a raw expression, as a field on ``chart``."""
    if src in s.observables and s.observables[src].field.chart == chart:
        return s.observables[src].field
    return parse_field(src, chart)


def _section_pairs(s, chk, chart, where):
    pairs = chk.get("sections")
    if not pairs:
        raise UnresolvedReference(f"{where}: needs a non-empty 'sections' list of pairs")
    out = []
    for pair in pairs:
        if len(pair) != 2:
            raise ConfigError(f"{where}: sections must be pairs")
        named = [x for x in pair if x in s.observables]
        if len(named) == 2 and s.observables[pair[0]].dim != s.observables[pair[1]].dim:
            raise ConfigError(f"{where}: brackets are restricted to observables of the same dimension")
        out.append(tuple(_resolve(s, x, chart) for x in pair))
    return out


def _derivation(spec, chart, where):
    try:
        return Derivation.parse(chart, spec["X"], str(spec.get("f", "0")))
    except (KeyError, TypeError):
        raise ConfigError(f"{where}: derivations are written {{ X = [...], f = \"...\" }}") from None


def _canonical_only(s, where):
    if s.structure["kind"] != "canonical_contact" or not isinstance(s.chart, JetChart):
        raise ConfigError(f"{where}: this check needs a canonical_contact structure")
    return s.chart


def run_check(s: Scenario, pair, chk: dict, index: int, seed: int) -> CertificationReport:
    kind = chk.get("kind")
    where = f"checks[{index}] ({kind})"
    if "tol" not in chk:
        raise UnresolvedReference(f"{where}: missing 'tol'")
    tol = float(chk["tol"])
    count = int(chk.get("samples", 100))
    cseed = seed + index
    if kind == "jacobi_pair":
        return check_jacobi_pair(pair, s.chart.sample(count, cseed), tol, cseed)
    if kind == "bracket_relations":
        jc = _canonical_only(s, where)
        base = jc.base
        a = _derivation(chk.get("a", {}), base, where)
        b = _derivation(chk.get("b", {}), base, where)
        sec = parse_field(str(chk.get("s", "1")), base)
        r = parse_field(str(chk.get("r", "1")), base)
        return check_bracket_relations(pair, a, b, sec, r, jc.sample(count, cseed), tol, cseed)
    if kind == "coisotropic":
        cons = [_resolve(s, c, s.chart) for c in chk.get("constraints", [])]
        tests = [_resolve(s, c, s.chart) for c in chk.get("test_sections", ["1"])]
        points = chk.get("points")
        if not cons or not points:
            raise UnresolvedReference(f"{where}: needs 'constraints' and 'points'")
        return coisotropic_check(pair, cons, np.array(points, dtype=float), tests, tol, cseed)
    if kind == "jacobi_map":
        F = parse_factor(chk.get("factor", {}), s.chart, s.chart, where, cseed)
        pairs = _section_pairs(s, chk, s.chart, where)
        return jacobi_map_check(F, pair, pair, pairs, s.chart.sample(count, cseed), tol, cseed)
    if kind == "jet_lift_graph":
        jc = _canonical_only(s, where)
        P = base_product(jc, jc, on_clash="suffix")
        Jp = product_jacobi(pair, pair.opposite(), P)
        F = parse_factor(chk.get("factor", {}), jc.base, jc.base, where, cseed)
        X = jet_lift_graph_samples(F, Jp, count, cseed)
        return jet_lift_graph_check(F, Jp, X, tol, cseed)
    raise ConfigError(f"{where}: unknown check kind {kind!r}")


def _header(s: Scenario, seed: int, dims: dict) -> str:
    lines = [
        f"scenario = {s.name}",
        f"source = {s.path.name}",
        f"seed = {seed}",
        f"chart = {', '.join(s.chart.coord_names)}",
        f"structure = {s.structure['kind']}",
        f"hamiltonian = {s.hamiltonian}",
        f"hamiltonian.dim = {_dim_text(dims[s.hamiltonian])}",
    ]
    lines += [f"observable.{k}.dim = {_dim_text(v)}" for k, v in dims.items()]
    return "\n".join(lines) + "\n"


def execute(path, out_dir=None, dry_run=False, seed=None, certify_only=False):
    """Load and run one scenario file. Returns (exit code, report text)."""
    try:
        s = load_scenario(path)
    except DimmechError as e:
        return EXIT_CONFIG, _error_text(path, e)
    if seed is not None:
        s.seed = seed
    return run_scenario(s, out_dir, dry_run, certify_only)


def run_scenario(s: Scenario, out_dir=None, dry_run=False, certify_only=False):
    """Validate, certify, check and integrate. Returns (exit code, report text)."""
    try:
        dims = validate_dimensions(s)
        blocks = [_block("scenario", _header(s, s.seed, dims))]
        X = s.chart.sample(int(s.structure.get("samples", 100)), s.seed)
        pair, rep = build_pair(s, X)
        ok = True
        if pair is not None:
            blocks.append(_block("structure", rep.to_text()))
            ok = rep.passed
        energy_checks = []
        for i, chk in enumerate(s.checks):
            if chk.get("kind") == "energy":
                energy_checks.append(chk)
                continue
            if pair is None:
                raise ConfigError(f"checks[{i}]: checks need a structure")
            rep = run_check(s, pair, chk, i + 1, s.seed)
            blocks.append(_block(f"check {i + 1}", rep.to_text()))
            ok = ok and rep.passed
        run_flow = s.integration is not None and not (dry_run or certify_only)
        if energy_checks and not run_flow:
            blocks.append(_block("energy", "status = skipped (no integration)\n"))
        if run_flow:
            flow_ok, flow_blocks, traj = _flow(s, pair, energy_checks)
            blocks += flow_blocks
            ok = ok and flow_ok
            if traj is not None and out_dir is not None:
                target = Path(out_dir) / s.outputs.get("trajectory", f"{s.path.stem}.csv")
                target.parent.mkdir(parents=True, exist_ok=True)
                traj.to_csv(target)
        blocks.append(_block("result", f"status = {'pass' if ok else 'fail'}\n"))
        text = "\n".join(blocks)
        if out_dir is not None:
            target = Path(out_dir) / s.outputs.get("report", f"{s.path.stem}_report.txt")
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_text(text, encoding="utf-8")
        return (EXIT_OK if ok else EXIT_FAILED), text
    except DimmechError as e:
        return EXIT_CONFIG, _error_text(s.path, e)


def _error_text(path, e):
    lines = [f"source = {Path(path).name}", f"error = {type(e).__name__}", f"message = {e}"]
    if isinstance(e, DimensionMismatch):
        lines += [f"path = {e.path}", f"expected = {_dim_text(e.expected)}", f"found = {_dim_text(e.found)}"]
    return _block("error", "\n".join(lines) + "\n")


def _flow(s, pair, energy_checks):
    if not pair.certified:
        return False, [_block("integration", "status = skipped (structure not certified)\n")], None
    cfg = s.integration
    try:
        prob = FlowProblem(
            pair,
            s.H.field,
            cfg["x0"],
            tuple(cfg["t_span"]),
            float(cfg["step"]),
            cfg.get("method", "rk4"),
            float(cfg.get("rtol", 1e-8)),
            float(cfg.get("atol", 1e-10)),
        )
    except KeyError as e:
        raise UnresolvedReference(f"[integration]: missing key {e}") from None
    except ValueError as e:
        raise ConfigError(f"[integration]: {e}") from None
    try:
        traj = integrate_flow(prob)
    except (LeftDomain, StepUnderflow) as e:
        return False, [_block("integration", f"status = failed\nerror = {type(e).__name__}\nmessage = {e}\n")], None
    body = f"method = {prob.method}\nstep = {prob.step!r}\nsteps = {traj.info['steps']}\n"
    body += f"final_state = {', '.join(repr(float(v)) for v in traj.states[-1])}\nstatus = pass\n"
    blocks = [_block("integration", body)]
    ok = True
    for chk in energy_checks:
        summ = monitor_energy(traj, pair, s.H.field)
        pt = float(chk.get("pointwise_tol", 1e-12))
        dt = float(chk.get("drift_tol", 1e-5))
        passed = summ.pointwise_max < pt and summ.drift_max < dt
        ok = ok and passed
        text = f"pointwise_tol = {pt!r}\ndrift_tol = {dt!r}\n" + summ.to_text()
        blocks.append(_block("energy", text + f"status = {'pass' if passed else 'fail'}\n"))
    return ok, blocks, traj


def _run_one(args):
    path, out, dry, seed, certify_only = args
    return execute(path, out, dry, seed, certify_only)


def cmd_run(ns, certify_only=False) -> int:
    files = ns.scenario
    out = getattr(ns, "out", None)
    jobs = []
    for f in files:
        target = out
        if out is not None and len(files) > 1:
            target = str(Path(out) / Path(f).stem)
        jobs.append((f, target, getattr(ns, "dry_run", False), ns.seed, certify_only))
    n = max(1, int(getattr(ns, "jobs", 1) or 1))
    if n > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(n, len(jobs))) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    for code, text in results:
        sys.stdout.write(text + "\n")
    return max(code for code, _ in results)


def cmd_convert(ns) -> int:
    try:
        if ns.units:
            space, systems = load_units(read_toml(ns.units), ns.units)
        else:
            space, systems = MECHANICS, BUILTIN_UNITS
        for name in (ns.src, ns.dst):
            if name not in systems:
                raise UnresolvedReference(f"unknown unit system {name!r}; known: {', '.join(sorted(systems))}")
        dim = parse_dimension(ns.dim, space)
        res = convert(TypedNumber(float(ns.value), dim), systems[ns.src], systems[ns.dst])
    except (DimmechError, ValueError) as e:
        sys.stderr.write(f"error: {e}\n")
        return EXIT_CONFIG
    sys.stdout.write(f"{res.magnitude!r} [{_dim_text(dim)}]\n")
    return EXIT_OK


def _u64(text):
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dimmech", description="Dimensioned contact Hamiltonian mechanics.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="validate, certify and integrate scenarios")
    r.add_argument("scenario", nargs="+")
    r.add_argument("--out", help="directory for the CSV and report files")
    r.add_argument("--dry-run", action="store_true", help="validate and certify without integrating")
    r.add_argument("--jobs", type=int, default=1, help="run independent scenarios concurrently")
    r.add_argument("--seed", type=_u64, help="override the scenario's sampling seed")

    c = sub.add_parser("check", help="certifications only")
    c.add_argument("scenario", nargs="+")
    c.add_argument("--out")
    c.add_argument("--seed", type=_u64)

    v = sub.add_parser("convert", help="convert a value between unit systems")
    v.add_argument("value")
    v.add_argument("dim", help="dimension expression, e.g. L/T^2")
    v.add_argument("--from", dest="src", required=True)
    v.add_argument("--to", dest="dst", required=True)
    v.add_argument("--units", help="TOML file with [measurands] and [units.*] tables")
    # let negative values in exponent notation through as positionals
    v._negative_number_matcher = re.compile(r"^-(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?$")
    return p


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    if ns.command == "run":
        return cmd_run(ns)
    if ns.command == "check":
        return cmd_run(ns, certify_only=True)
    return cmd_convert(ns)


if __name__ == "__main__":
    sys.exit(main())
