import json

import numpy as np
import pytest

from cop_place.grid import (
    CaseParseError,
    Grid,
    GridValidationError,
    Line,
    build_admittance,
    build_constant_matrices,
    load_case,
    parse_case,
)
from cop_place.measurements import block_slices, eval_f

CASE_TEXT = """
function mpc = tiny
mpc.baseMVA = 100;
mpc.bus = [
  1 3 0 0 0 0 1 1 0 135 1 1.05 0.95;
  2 1 0 0 0 0 1 1 0 135 1 1.05 0.95;
  5 1 0 0 0 0 1 1 0 135 1 1.05 0.95;  % non-contiguous id
];
mpc.branch = [
  1 2 0.01 0.1 0.02 0 0 0 0 0 1 -360 360;
  2 5 0.02 0.2 0.00 0 0 0 0 0 1 -360 360;
  1 2 0.01 0.1 0.00 0 0 0 0 0 1 -360 360;  % parallel circuit
  1 5 0.05 0.5 0.00 0 0 0 0 0 0 -360 360;  % out of service
];
"""


def test_two_bus_series_admittance(two_bus):
    assert two_bus.n_buses == 2 and two_bus.n_lines == 1
    y = two_bus.lines[0].series_admittance
    assert y == pytest.approx(0.9901 - 9.9010j, abs=1e-4)
    Y = build_admittance(two_bus)
    np.testing.assert_allclose(Y, [[y, -y], [-y, y]])


def test_admittance_rows_sum_to_shunts():
    grid = parse_case(CASE_TEXT)
    Y = build_admittance(grid)
    np.testing.assert_allclose(Y, Y.T)
    shunt = np.zeros(3, dtype=complex)
    for ln in grid.lines:
        shunt[ln.from_bus] += ln.shunt_admittance
        shunt[ln.to_bus] += ln.shunt_admittance
    np.testing.assert_allclose(Y.sum(axis=1), shunt, atol=1e-12)


def test_matpower_parsing_details():
    grid = parse_case(CASE_TEXT)
    assert grid.bus_ids == (1, 2, 5)
    assert grid.n_lines == 2  # parallel merged, out-of-service dropped
    y12 = grid.line(0, 1)
    assert y12.series_admittance == pytest.approx(2 / complex(0.01, 0.1))
    assert y12.shunt_admittance == pytest.approx(0.01j)


@pytest.mark.parametrize("name,n,lines", [("ieee14", 14, 20), ("ieee30", 30, 41), ("ieee118", 118, 179)])
def test_builtin_cases(name, n, lines):
    grid = load_case(name)
    assert (grid.n_buses, grid.n_lines) == (n, lines)
    assert grid.is_connected()


def test_json_round_trip(ieee14):
    doc = json.dumps(ieee14.to_json())
    again = parse_case(doc)
    np.testing.assert_allclose(build_admittance(again), build_admittance(ieee14))
    assert again.bus_ids == ieee14.bus_ids


def test_json_rx_form():
    doc = {"name": "t", "n_buses": 3, "lines": [{"from": 1, "to": 2, "r": 0.0, "x": 0.5}, {"from": 2, "to": 3, "y": [1.0, -4.0]}]}
    grid = parse_case(json.dumps(doc))
    assert grid.line(0, 1).series_admittance == pytest.approx(-2j)
    assert grid.line(1, 2).series_admittance == pytest.approx(1 - 4j)


@pytest.mark.parametrize(
    "text,match",
    [
        ("mpc.branch = [1 2 0.1 0.1 0];", "mpc.bus"),
        ("mpc.bus = [1 3; 2 1];", "mpc.branch"),
        ("mpc.bus = [1 3; 2 1];\nmpc.branch = [1 2 0.1];", "at least 5"),
        ("mpc.bus = [1 3; 2 1];\nmpc.branch = [1 7 0.1 0.1 0];", "unknown bus 7"),
        ("mpc.bus = [1 3; 2 1];\nmpc.branch = [1 2 0 0 0];", "zero impedance"),
        ('{"n_buses": 2, "lines": [{"from": 1}]}', "line entry #0"),
        ('{"n_buses": 2', "JSON|Expecting|delimiter"),
    ],
)
def test_parse_errors(text, match):
    with pytest.raises(CaseParseError, match=match):
        parse_case(text)


def test_parse_error_reports_line_number():
    text = "mpc.bus = [\n1 3;\n2 1;\n];\nmpc.branch = [\n1 2 0.1 0.1 0;\n1 9 0.1 0.1 0;\n];"
    with pytest.raises(CaseParseError) as info:
        parse_case(text)
    assert info.value.lineno == 7


def test_disconnected_grid_rejected():
    text = '{"n_buses": 3, "lines": [{"from": 1, "to": 2, "r": 0, "x": 0.1}]}'
    with pytest.raises(GridValidationError, match="disconnected"):
        parse_case(text)


def test_grid_invariants():
    with pytest.raises(GridValidationError):
        Grid(2, (Line(0, 0, 1j),))
    with pytest.raises(GridValidationError):
        Grid(2, (Line(0, 1, 1j), Line(0, 1, 2j)))
    with pytest.raises(GridValidationError):
        Grid(0, ())


def test_directed_lines_order(ieee14):
    d = ieee14.directed_lines
    assert list(d) == sorted(d)
    assert len(d) == 2 * ieee14.n_lines


def test_flat_profile_carries_no_power(two_bus, mats2):
    z = eval_f(np.array([1.0, 1.0, 0.0, 0.0]), mats2)
    inj = z[block_slices(two_bus)["injection"]]
    np.testing.assert_allclose(inj, 0.0, atol=1e-12)


def test_line_flow_matches_polar_form(two_bus, mats2):
    v = np.array([1.0, 0.95, 0.0, -0.05])
    z = eval_f(v, mats2)
    fl = z[block_slices(two_bus)["flow"]]
    Vn, Vm = complex(v[0], v[2]), complex(v[1], v[3])
    y = two_bus.lines[0].series_admittance
    g, b = y.real, y.imag
    th = np.angle(Vn) - np.angle(Vm)
    P = g * abs(Vn) ** 2 - abs(Vn) * abs(Vm) * (g * np.cos(th) + b * np.sin(th))
    Q = -b * abs(Vn) ** 2 - abs(Vn) * abs(Vm) * (g * np.sin(th) - b * np.cos(th))
    # directed line 0 is (bus 1 -> bus 2); P rows precede Q rows
    assert fl[0] == pytest.approx(P, rel=1e-12)
    assert fl[2] == pytest.approx(Q, rel=1e-12)


def test_injection_block_matches_complex_power(ieee14, mats14, rng):
    v = np.concatenate([1 + 0.05 * rng.standard_normal(14), 0.05 * rng.standard_normal(14)])
    V = v[:14] + 1j * v[14:]
    Y = build_admittance(ieee14)
    S = V * np.conj(Y @ V)
    inj = eval_f(v, mats14)[block_slices(ieee14)["injection"]]
    np.testing.assert_allclose(inj, np.concatenate([S.real, S.imag]), rtol=1e-10, atol=1e-10)


def test_constant_matrix_shapes(mats14, ieee14):
    N = ieee14.n_buses
    assert len(mats14.N_P) == N and len(mats14.E_P) == 2 * ieee14.n_lines
    assert all(A.shape == (2 * N, 2 * N) for A in mats14.quadratic_forms)
    for n in range(N):
        assert mats14.H_I[n].shape == (len(ieee14.neighbors[n]), 2 * N)
    assert build_constant_matrices(ieee14).dim == 2 * N
