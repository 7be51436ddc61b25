import io

import numpy as np
import pytest

from cop_place.sdp import LmiBlock, LmiProgram, LowRank, read_sdpa, solve, write_sdpa


def min_eig_program(A):
    d = A.shape[0]
    return LmiProgram(objective=np.array([1.0]), blocks=[LmiBlock(A, {0: -np.eye(d)})])


@pytest.mark.parametrize("seed", range(10))
def test_recovers_lambda_min(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(2, 57))
    B = rng.standard_normal((d, d))
    A = (B + B.T) / 2
    sol = solve(min_eig_program(A))
    assert sol.status == "optimal"
    assert sol.objective == pytest.approx(np.linalg.eigvalsh(A)[0], abs=1e-6)
    assert sol.bound >= sol.objective


def test_two_by_two_correlation_bound():
    # max x s.t. [[1, x], [x, 1]] >= 0 has optimum x = 1
    E = np.array([[0.0, 1.0], [1.0, 0.0]])
    prog = LmiProgram(objective=np.array([1.0]), blocks=[LmiBlock(np.eye(2), {0: E})])
    sol = solve(prog)
    assert sol.status == "optimal"
    assert sol.objective == pytest.approx(1.0, abs=1e-6)


def test_linear_constraints_and_bounds():
    # max y0 + y1 with y0 + 2 y1 <= 2, 0 <= y <= 1.5, plus a harmless LMI
    prog = LmiProgram(
        objective=np.array([1.0, 1.0]),
        blocks=[LmiBlock(np.eye(2) * 10, {0: -np.eye(2), 1: -np.eye(2)})],
        G=np.array([[1.0, 2.0]]),
        h=np.array([2.0]),
        lower=np.zeros(2),
        upper=np.full(2, 1.5),
    )
    sol = solve(prog)
    assert sol.status == "optimal"
    assert sol.objective == pytest.approx(1.75, abs=1e-6)
    np.testing.assert_allclose(sol.y, [1.5, 0.25], atol=1e-5)


def test_infeasible_reports_block():
    prog = LmiProgram(
        objective=np.array([1.0]),
        blocks=[LmiBlock(np.array([[-1.0]]), {0: np.array([[1.0]])})],
        upper=np.array([0.5]),
    )
    sol = solve(prog)
    assert sol.status == "infeasible"
    assert sol.violated_block == 0


def test_unbounded():
    prog = LmiProgram(objective=np.array([1.0]), blocks=[LmiBlock(np.eye(2), {0: np.eye(2)})])
    assert solve(prog).status == "unbounded"


def test_low_rank_coefficients_match_dense(rng):
    d, p = 6, 3
    dense, low = {}, {}
    for i in range(p):
        a, b = rng.standard_normal((d, 1)), rng.standard_normal((d, 1))
        lr = LowRank.from_pair(a, b)
        np.testing.assert_allclose(lr.toarray(), a @ b.T + b @ a.T, atol=1e-12)
        dense[i], low[i] = lr.toarray(), lr
    c = np.ones(p)
    box = dict(lower=-np.ones(p), upper=np.ones(p))
    s1 = solve(LmiProgram(c, [LmiBlock(5 * np.eye(d), dense)], **box))
    s2 = solve(LmiProgram(c, [LmiBlock(5 * np.eye(d), low)], **box))
    assert s1.objective == pytest.approx(s2.objective, abs=1e-6)
    lr = LowRank.from_dense(dense[0])
    np.testing.assert_allclose(lr.toarray(), dense[0], atol=1e-12)


def test_program_validation():
    with pytest.raises(ValueError, match="not symmetric"):
        LmiProgram(np.ones(1), [LmiBlock(np.eye(2), {0: np.array([[0.0, 1.0], [0.0, 0.0]])})])
    with pytest.raises(ValueError, match="outside"):
        LmiProgram(np.ones(1), [LmiBlock(np.eye(2), {3: np.eye(2)})])
    with pytest.raises(ValueError, match="row count"):
        LmiProgram(np.ones(1), [], G=np.ones((2, 1)), h=np.ones(1))


def test_sdpa_round_trip(rng):
    B = rng.standard_normal((4, 4))
    prog = LmiProgram(
        objective=np.array([1.0, -0.5]),
        blocks=[LmiBlock(B + B.T + 10 * np.eye(4), {0: -np.eye(4), 1: np.diag([1.0, 0, 0, 2.0])})],
        G=np.array([[1.0, 1.0]]),
        h=np.array([3.0]),
        lower=np.array([-2.0, 0.0]),
    )
    buf = io.StringIO()
    write_sdpa(prog, buf)
    again = read_sdpa(io.StringIO(buf.getvalue()))
    y = np.array([0.3, 0.7])
    np.testing.assert_allclose(again.blocks[0].evaluate(y), prog.blocks[0].evaluate(y), atol=1e-14)
    G1, h1 = prog.linear_system()
    G2, h2 = again.linear_system()
    np.testing.assert_allclose(G2, G1)
    np.testing.assert_allclose(h2, h1)
    assert solve(again).objective == pytest.approx(solve(prog).objective, abs=1e-7)


def test_matches_cvxpy_on_random_lmis():
    cp = pytest.importorskip("cvxpy")
    rng = np.random.default_rng(4)
    p, d = 3, 5
    coeffs = {}
    for i in range(p):
        B = rng.standard_normal((d, d))
        coeffs[i] = B + B.T
    c = rng.standard_normal(p)
    prog = LmiProgram(c, [LmiBlock(np.eye(d), coeffs)], lower=-np.ones(p), upper=np.ones(p))
    ours = solve(prog, gap_tol=1e-9)

    y = cp.Variable(p)
    F = np.eye(d) + sum(y[i] * coeffs[i] for i in range(p))
    problem = cp.Problem(cp.Maximize(c @ y), [(F + F.T) / 2 >> 0, y >= -1, y <= 1])
    problem.solve(solver="CLARABEL")
    assert ours.objective == pytest.approx(problem.value, abs=1e-6)
