import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dimmech import MeasurandSpace, TypedNumber, bundled_scenario, load_scenario, validate_dimensions
from dimmech import expr as ex
from dimmech.cli import execute, main
from dimmech.errors import ConfigError, DimensionMismatch, ParseError, UnresolvedReference
from dimmech.parser import parse_expression
from dimmech.scenario import synthesize_dimension

from oracles import damped_q

THERMO_HEAD = """
hamiltonian = "U"
[measurands]
base = ["P", "V", "N", "T"]
[chart]
coords = ["P", "V", "N", "q"]
dims = { P = "P", V = "V", N = "N" }
[structure]
kind = "none"
"""


def write(tmp_path, body, name="s.toml"):
    p = tmp_path / name
    p.write_text(body)
    return p


def thermo(tmp_path, observables):
    lines = "\n".join(f'{k} = {{ expr = "{e}", dim = "{d}" }}' for k, (e, d) in observables.items())
    return write(tmp_path, THERMO_HEAD + "[observables]\n" + lines + "\n")


# -- loading

def test_bundled_damped_oscillator_loads():
    s = load_scenario(bundled_scenario("damped_oscillator"))
    assert s.hamiltonian == "H" and s.chart.coord_names == ("q", "p", "z")
    assert s.integration["step"] == 1e-3


def test_missing_hamiltonian(tmp_path):
    body = THERMO_HEAD.replace('hamiltonian = "U"', "") + '[observables]\nU = { expr = "P", dim = "P" }\n'
    with pytest.raises(UnresolvedReference):
        load_scenario(write(tmp_path, body))
    body = THERMO_HEAD.replace('"U"', '"W"') + '[observables]\nU = { expr = "P", dim = "P" }\n'
    with pytest.raises(UnresolvedReference):
        load_scenario(write(tmp_path, body))


def test_malformed_dimension_names_the_observable(tmp_path):
    with pytest.raises(ParseError, match="U"):
        load_scenario(thermo(tmp_path, {"U": ("P*V/N", "P**V")}))
    with pytest.raises(ParseError, match="W"):
        load_scenario(thermo(tmp_path, {"U": ("P", "P"), "W": ("P +", "P")}))


def test_unknown_structure_kind(tmp_path):
    with pytest.raises(ConfigError):
        load_scenario(write(tmp_path, THERMO_HEAD.replace('"none"', '"magic"') + '[observables]\nU = "P"\n'))


# -- dimensions

def test_energy_type_passes(tmp_path):
    dims = validate_dimensions(load_scenario(thermo(tmp_path, {"U": ("P*V/N", "P*V/N")})))
    assert dims["U"].exponents == (1, 1, -1, 0)


def test_inhomogeneous_sum_is_located(tmp_path):
    s = load_scenario(thermo(tmp_path, {"U": ("P*V/N", "P*V/N"), "bad": ("2*(P + V)", "P")}))
    with pytest.raises(DimensionMismatch) as e:
        validate_dimensions(s)
    assert e.value.path == "observables.bad/*@1/+@5"
    assert (e.value.expected.exponents, e.value.found.exponents) == ((1, 0, 0, 0), (0, 1, 0, 0))


def test_transcendental_arguments(tmp_path):
    validate_dimensions(load_scenario(thermo(tmp_path, {"U": ("sin(q)", "")})))
    with pytest.raises(DimensionMismatch, match="sin"):
        validate_dimensions(load_scenario(thermo(tmp_path, {"U": ("sin(P)", "")})))
    validate_dimensions(load_scenario(thermo(tmp_path, {"U": ("exp(P/P)", "")})))


def test_declared_dimension_must_match(tmp_path):
    with pytest.raises(DimensionMismatch, match="declared"):
        validate_dimensions(load_scenario(thermo(tmp_path, {"U": ("P*V", "P")})))


def test_annotated_constants(tmp_path):
    validate_dimensions(load_scenario(thermo(tmp_path, {"U": ('P + const(101325, \\"P\\")', "P")})))
    with pytest.raises(DimensionMismatch):
        validate_dimensions(load_scenario(thermo(tmp_path, {"U": ("P + 101325", "P")})))


SPACE = MeasurandSpace(("A", "B"))
VAR_DIMS = [SPACE.parse(d) for d in ("A", "B", "A/B", "")]
_leaf = st.sampled_from(["x0", "x1", "x2", "x3", "2", "0.5"])


def _combine(c):
    return (
        st.tuples(c, st.sampled_from(["+", "-", "*", "/"]), c).map(lambda t: f"({t[0]} {t[1]} {t[2]})")
        | st.tuples(c, st.integers(-2, 3)).map(lambda t: f"({t[0]})^{t[1]}")
        | c.map(lambda t: f"exp({t})")
    )


def _typed(node, vals):
    if isinstance(node, ex.Const):
        return TypedNumber(node.value, SPACE.dimensionless())
    if isinstance(node, ex.Var):
        return vals[node.index]
    if isinstance(node, ex.Func):
        a = _typed(node.args[1], vals)
        assert a.dim.is_dimensionless
        return TypedNumber(float(np.exp(np.clip(a.magnitude, -50, 50))), a.dim)
    if isinstance(node, ex.Neg):
        return -_typed(node.args[0], vals)
    if isinstance(node, ex.Pow):
        return _typed(node.args[0], vals) ** node.args[1]
    a, b = _typed(node.args[0], vals), _typed(node.args[1], vals)
    return {ex.Add: a.__add__, ex.Sub: a.__sub__, ex.Mul: a.__mul__, ex.Div: a.__truediv__}[type(node)](b)


@settings(max_examples=300, deadline=None)
@given(st.recursive(_leaf, _combine, max_leaves=6))
def test_accepted_expressions_have_one_dimension(src):
    """Soundness: whatever the synthesizer accepts evaluates under typed arithmetic to that dimension."""
    node = parse_expression(src, ["x0", "x1", "x2", "x3"])
    try:
        d = synthesize_dimension(node, VAR_DIMS, SPACE)
    except DimensionMismatch:
        return
    vals = [TypedNumber(1.3 + i, dim) for i, dim in enumerate(VAR_DIMS)]
    try:
        got = _typed(node, vals)
    except (ZeroDivisionError, OverflowError, ValueError, ArithmeticError):
        return
    assert got.dim == d


# -- running

def test_damped_run_end_to_end(tmp_path):
    code, text = execute(bundled_scenario("damped_oscillator"), tmp_path)
    assert code == 0, text
    csv = tmp_path / "damped_oscillator.csv"
    data = np.loadtxt(csv, delimiter=",", skiprows=1)
    assert np.max(np.abs(data[:, 1] - damped_q(data[:, 0]))) < 1e-6
    report = (tmp_path / "damped_oscillator_report.txt").read_text()
    assert "check = structure_certification" in report and report.endswith("[result]\nstatus = pass\n")
    assert "seed = 0" in report


def test_broken_pair_fails(tmp_path):
    code, text = execute(bundled_scenario("broken_jacobi"), tmp_path)
    assert code == 1
    assert "status = fail" in text and "residual.schouten_plus_2_wedge" in text


def test_dry_run_skips_integration(tmp_path):
    code, text = execute(bundled_scenario("damped_oscillator"), tmp_path, dry_run=True)
    assert code == 0
    assert "[integration]" not in text and not (tmp_path / "damped_oscillator.csv").exists()
    assert "status = skipped (no integration)" in text


def test_outputs_are_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    execute(bundled_scenario("damped_oscillator"), a)
    execute(bundled_scenario("damped_oscillator"), b)
    for name in ("damped_oscillator.csv", "damped_oscillator_report.txt"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_seed_override_is_recorded():
    _, text = execute(bundled_scenario("jet_lift"), seed=12345)
    assert "seed = 12345" in text and "seed = 12346" in text


@pytest.mark.parametrize(
    "name, code", [("thermodynamic", 0), ("inhomogeneous_sum", 2), ("jet_lift", 0), ("product", 0)]
)
def test_bundled_scenarios(name, code):
    got, text = execute(bundled_scenario(name))
    assert got == code, text


def test_config_errors_exit_2(tmp_path):
    bad_check = THERMO_HEAD.replace('"none"', '"canonical_contact"\nbase = ["q"]').replace(
        '[chart]\ncoords = ["P", "V", "N", "q"]\ndims = { P = "P", V = "V", N = "N" }\n', ""
    )
    p = write(tmp_path, bad_check + '[observables]\nU = "p"\n[[checks]]\nkind = "nope"\ntol = 1\n')
    code, text = execute(p)
    assert code == 2 and "unknown check kind" in text
    p = write(tmp_path, "not toml [", "broken.toml")
    assert execute(p)[0] == 2
    assert execute(tmp_path / "missing.toml")[0] == 2


def test_bracket_checks_need_equal_dimensions(tmp_path):
    body = (
        'hamiltonian = "H"\n[measurands]\nbase = ["L"]\n[chart]\ncoords = ["q", "p", "z"]\n'
        'dims = { q = "L", p = "L^-1" }\n[structure]\nkind = "contact_form"\ntheta = ["p", "0", "-1"]\n'
        '[observables]\nH = { expr = "q*p", dim = "" }\nX = { expr = "q", dim = "L" }\n'
        '[[checks]]\nkind = "jacobi_map"\ntol = 1e-9\nsamples = 20\n'
        'factor = { b = ["q", "p", "z"], beta = "1", inverse = ["q", "p", "z"] }\nsections = [["H", "X"]]\n'
    )
    code, text = execute(write(tmp_path, body))
    assert code == 2 and "same dimension" in text
    code, text = execute(write(tmp_path, body.replace('[["H", "X"]]', '[["H", "H"], ["X", "q"]]')))
    assert code == 0, text


# -- command line

def test_main_run_and_jobs(tmp_path, capsys):
    files = [str(bundled_scenario(n)) for n in ("thermodynamic", "jet_lift")]
    assert main(["run", *files, "--out", str(tmp_path), "--jobs", "2"]) == 0
    out = capsys.readouterr().out
    assert out.index("scenario = thermodynamic") < out.index("scenario = jet_lift")
    assert (tmp_path / "thermodynamic" / "thermodynamic_report.txt").exists()
    assert main(["check", str(bundled_scenario("broken_jacobi"))]) == 1
    assert main(["run", files[0], str(bundled_scenario("inhomogeneous_sum"))]) == 2


@pytest.mark.parametrize("value", [1.0, -3.7e5, 2.2e-9, 123.456])
@pytest.mark.parametrize("dim", ["L", "M*L^2/T^2", "T^-1", ""])
def test_convert_roundtrip(value, dim, capsys):
    assert main(["convert", repr(value), dim, "--from", "SI", "--to", "imperial"]) == 0
    there = float(capsys.readouterr().out.split()[0])
    assert main(["convert", repr(there), dim, "--from", "imperial", "--to", "SI"]) == 0
    back = float(capsys.readouterr().out.split()[0])
    assert abs(back - value) <= 1e-12 * abs(value)


def test_convert_with_unit_file(capsys):
    path = str(bundled_scenario("thermodynamic"))
    assert main(["convert", "2", "P*V", "--from", "lab", "--to", "SI", "--units", path]) == 0
    assert float(capsys.readouterr().out.split()[0]) == pytest.approx(2 * 101325.0 * 0.001)
    assert main(["convert", "2", "P", "--from", "lab", "--to", "nowhere", "--units", path]) == 2
    assert main(["convert", "2", "Q", "--from", "SI", "--to", "CGS"]) == 2


def test_console_script():
    out = subprocess.run(
        [sys.executable, "-m", "dimmech.cli", "convert", "1", "L", "--from", "SI", "--to", "CGS"],
        capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "100.0 [L]"


@pytest.mark.parametrize("value", ["-3.7e-05", "-1E+3", "-.5", "-2"])
def test_convert_negative_values(value, capsys):
    assert main(["convert", value, "L", "--from", "SI", "--to", "CGS"]) == 0
    assert float(capsys.readouterr().out.split()[0]) == pytest.approx(100 * float(value), rel=1e-15)
