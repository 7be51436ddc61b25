import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cop_place.grid import load_case
from cop_place.measurements import (
    MeasurementEnsemble,
    Placement,
    Sigmas,
    apply_mask,
    block_slices,
    eval_f,
    eval_jacobian,
    flat_state,
    noise_std,
    random_true_state,
    sample_scada,
    scada_site_count,
    selection_mask,
    synthesize_measurements,
)


def _phasors(v):
    N = v.size // 2
    return v[:N] + 1j * v[N:]


def test_ensemble_length(ieee14, mats14):
    N, L = ieee14.n_buses, ieee14.n_lines
    z = eval_f(flat_state(N), mats14)
    assert z.size == 2 * (2 * N + 4 * L)
    sl = block_slices(ieee14)
    assert sl["flow"].stop == z.size


def test_current_block_matches_pi_model(ieee14, mats14, rng):
    v = random_true_state(14, rng)
    V = _phasors(v)
    cur = eval_f(v, mats14)[block_slices(ieee14)["current"]]
    D = len(ieee14.directed_lines)
    expect = []
    for n, m in ieee14.directed_lines:
        ln = ieee14.line(n, m)
        expect.append(ln.series_admittance * (V[n] - V[m]) + ln.shunt_admittance * V[n])
    expect = np.array(expect)
    np.testing.assert_allclose(cur[:D], expect.real, atol=1e-12)
    np.testing.assert_allclose(cur[D:], expect.imag, atol=1e-12)


def test_flow_block_is_conjugate_product(ieee14, mats14, rng):
    v = random_true_state(14, rng)
    V = _phasors(v)
    z = eval_f(v, mats14)
    sl = block_slices(ieee14)
    D = len(ieee14.directed_lines)
    cur = z[sl["current"]]
    I = cur[:D] + 1j * cur[D:]
    S = np.array([V[n] for n, _ in ieee14.directed_lines]) * np.conj(I)
    fl = z[sl["flow"]]
    np.testing.assert_allclose(fl, np.concatenate([S.real, S.imag]), atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_jacobian_matches_finite_differences(seed):
    grid = load_case("ieee14")
    from cop_place.grid import build_constant_matrices

    mats = build_constant_matrices(grid)
    rng = np.random.default_rng(seed)
    v = random_true_state(14, rng)
    J = eval_jacobian(v, mats)
    h = 1e-6
    E = np.eye(v.size)
    fd = np.column_stack([(eval_f(v + h * E[i], mats) - eval_f(v - h * E[i], mats)) / (2 * h) for i in range(v.size)])
    np.testing.assert_allclose(J, fd, atol=1e-7)


def test_quadratic_block_is_half_jacobian_product(mats14, rng):
    # f_P(v) = v^T A v / 2 so J(v) v = 2 f(v) on the quadratic rows
    v = random_true_state(14, rng)
    z = eval_f(v, mats14)
    Jv = eval_jacobian(v, mats14) @ v
    q = slice(block_slices(mats14.grid)["injection"].start, None)
    np.testing.assert_allclose(Jv[q], 2 * z[q], atol=1e-12)
    lin = slice(0, q.start)
    np.testing.assert_allclose(Jv[lin], z[lin], atol=1e-12)


def test_selection_mask(ieee14):
    pmu = np.zeros(14)
    pmu[[0, 5]] = 1
    inj = np.zeros(14)
    inj[3] = 1
    p = Placement.build(ieee14, pmu=pmu, injections=inj)
    mask = selection_mask(p, ieee14)
    sl = block_slices(ieee14)
    assert mask[sl["voltage"]].sum() == 4
    deg = len(ieee14.neighbors[0]) + len(ieee14.neighbors[5])
    assert mask[sl["current"]].sum() == 2 * deg
    assert mask[sl["injection"]].sum() == 2
    assert mask[sl["flow"]].sum() == 0


def test_apply_mask_zeroes_and_scales():
    x = np.arange(4.0)
    out = apply_mask(x, np.array([1, 0, 1, 0], bool), 0.5)
    np.testing.assert_allclose(out, [0, 0, 4, 0])
    with pytest.raises(ValueError):
        apply_mask(np.ones(3), np.ones(4, bool), 1.0)


def test_placement_validation(ieee14):
    with pytest.raises(ValueError, match="0 or 1"):
        Placement.build(ieee14, pmu=np.full(14, 2))
    with pytest.raises(ValueError, match="shape"):
        Placement.build(ieee14, pmu=np.ones(3))
    F = np.zeros((14, 14))
    F[0, 1] = 1
    p = Placement.build(ieee14, flows=F)
    np.testing.assert_array_equal(p.flows_matrix(ieee14), F)
    F[0, 13] = 1  # no such line
    with pytest.raises(ValueError, match="off the existing"):
        Placement.build(ieee14, flows=F)


@pytest.mark.parametrize("name", ["ieee14", "ieee30", "ieee118"])
def test_scada_site_count(name):
    grid = load_case(name)
    N, L = grid.n_buses, grid.n_lines
    c = scada_site_count(grid, 0.15)
    assert c["sites"] == math.ceil(0.15 * (2 * N + 4 * L))
    inj, fl = sample_scada(grid, 0.15, 3)
    assert inj.sum() + fl.sum() == c["sites"]
    assert scada_site_count(grid, 1.0)["sites"] == N + 2 * L


def test_sample_scada_deterministic(ieee14):
    a = sample_scada(ieee14, 0.15, 7)
    b = sample_scada(ieee14, 0.15, 7)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    with pytest.raises(ValueError):
        sample_scada(ieee14, 1.5, 0)


def test_synthesized_noise_statistics(mats14):
    v = flat_state(14)
    sig = Sigmas.uniform(0.02)
    z = np.stack([synthesize_measurements(v, mats14, sig, seed=s).z for s in range(400)])
    resid = z - eval_f(v, mats14)
    assert resid.std() == pytest.approx(0.02, rel=0.05)
    m = synthesize_measurements(v, mats14, sig, seed=1)
    assert isinstance(m, MeasurementEnsemble)
    np.testing.assert_allclose(m.covariance, 4e-4)


def test_noise_std_blocks(ieee14):
    sig = Sigmas(1.0, 2.0, 3.0, 4.0)
    std = noise_std(ieee14, sig)
    sl = block_slices(ieee14)
    for name, val in zip(("voltage", "current", "injection", "flow"), (1, 2, 3, 4)):
        assert np.all(std[sl[name]] == val)
    with pytest.raises(ValueError):
        Sigmas(0.0)


def test_random_true_state_bounds(rng):
    v = random_true_state(50, rng)
    V = _phasors(v)
    assert np.all(np.abs(np.abs(V) - 1) <= 0.05 + 1e-12)
    assert np.all(np.abs(np.angle(V)) <= 0.1 + 1e-12)


def test_measurement_csv_rfc4180(mats14):
    m = synthesize_measurements(flat_state(14), mats14, seed=0)
    text = m.to_csv()
    lines = text.split("\r\n")
    assert lines[0].startswith("index,block,quantity")
    assert lines[-1] == ""
    assert len(lines) - 2 == m.z.size
    with pytest.raises(ValueError):
        eval_f(np.ones(3), mats14)
