import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unpctl.lp import LinearProgram, LpFormatError, LpStatus, _to_standard_form, dump_lp, load_lp, solve_lp


def vertex_oracle(c, A_ub, b_ub, A_eq=None, b_eq=None):
    """Minimum of c'x over {A_ub x <= b_ub, A_eq x = b_eq, x >= 0} by basic-solution enumeration."""
    n = c.size
    G = np.vstack([A_ub, -np.eye(n)])
    h = np.concatenate([b_ub, np.zeros(n)])
    E = np.zeros((0, n)) if A_eq is None else A_eq
    f = np.zeros(0) if b_eq is None else b_eq
    k = n - E.shape[0]
    best = np.inf
    subsets = np.array(list(itertools.combinations(range(G.shape[0]), k)), dtype=int).reshape(-1, k)
    M = np.concatenate([np.broadcast_to(E, (len(subsets),) + E.shape), G[subsets]], axis=1)
    rhs = np.concatenate([np.broadcast_to(f, (len(subsets), f.size)), h[subsets]], axis=1)
    ok = np.abs(np.linalg.det(M)) > 1e-9
    X = np.linalg.solve(M[ok], rhs[ok][..., None])[..., 0]
    feas = np.all(X @ G.T <= h + 1e-9, axis=1)
    if E.shape[0]:
        feas &= np.all(np.abs(X @ E.T - f) <= 1e-9, axis=1)
    if feas.any():
        best = float((X[feas] @ c).min())
    return best


def random_lp(rng):
    n = int(rng.integers(2, 9))
    m = int(rng.integers(1, 7))
    k_eq = int(rng.integers(0, min(2, n - 1) + 1))
    A = rng.normal(size=(m, n))
    x0 = rng.uniform(0, 1, n)
    b = A @ x0 + rng.uniform(0, 1, m)
    A = np.vstack([A, np.ones((1, n))])            # keeps the region bounded
    b = np.append(b, x0.sum() + rng.uniform(0.5, 2))
    Aeq = rng.normal(size=(k_eq, n)) if k_eq else None
    beq = Aeq @ x0 if k_eq else None
    c = rng.normal(size=n)
    return c, A, b, Aeq, beq


def test_single_bound():
    sol = solve_lp(LinearProgram(c=[1.0], A_ub=[[-1.0]], b_ub=[-1.0]))
    assert sol.status is LpStatus.OPTIMAL
    assert sol.v == pytest.approx([1.0])
    assert sol.objective == pytest.approx(1.0)


def test_textbook_edge():
    sol = solve_lp(LinearProgram(c=[-1.0, -1.0], A_ub=[[1.0, 1.0]], b_ub=[1.0]))
    assert sol.status is LpStatus.OPTIMAL
    assert sol.objective == pytest.approx(-1.0)
    assert sol.v.sum() == pytest.approx(1.0)


def test_vertex_enumeration_oracle_200():
    rng = np.random.default_rng(12345)
    worst = 0.0
    for _ in range(200):
        c, A, b, Aeq, beq = random_lp(rng)
        ref = vertex_oracle(c, A, b, Aeq, beq)
        sol = solve_lp(LinearProgram(c=c, A_ub=A, b_ub=b, A_eq=Aeq, b_eq=beq))
        assert sol.status is LpStatus.OPTIMAL
        rel = abs(sol.objective - ref) / max(1.0, abs(ref))
        worst = max(worst, rel)
        assert sol.primal_residual <= 1e-8
        assert sol.cs_residual <= 1e-6
    assert worst <= 1e-8


def test_infeasible_has_farkas_certificate():
    lp = LinearProgram(c=[1.0, 1.0], A_ub=[[1.0, 1.0], [-1.0, -1.0]], b_ub=[1.0, -2.0])
    sol = solve_lp(lp)
    assert sol.status is LpStatus.INFEASIBLE
    sf = _to_standard_form(lp)
    y = sol.farkas
    assert sf.b @ y > 0
    assert (sf.A.T @ y).max() <= 1e-6 * abs(sf.b @ y)
    assert sol.farkas_residual <= 1e-6


def test_unbounded_has_ray():
    lp = LinearProgram(c=[-1.0, 0.0], A_ub=[[1.0, -1.0]], b_ub=[1.0])
    sol = solve_lp(lp)
    assert sol.status is LpStatus.UNBOUNDED
    d = sol.ray
    assert lp.c @ d < 0
    assert np.all(lp.A_ub @ d <= 1e-12)
    assert np.all(d >= -1e-12)


def test_free_and_upper_bounded_variables():
    # min x - y, -1 <= x free below? x in [-2, inf), y <= 3 only, x + y = 1
    lp = LinearProgram(c=[1.0, -1.0], A_eq=[[1.0, 1.0]], b_eq=[1.0], lb=[-2.0, -np.inf], ub=[np.inf, 3.0])
    sol = solve_lp(lp)
    assert sol.status is LpStatus.OPTIMAL
    assert sol.v == pytest.approx([-2.0, 3.0])


def test_fully_free_variable():
    lp = LinearProgram(c=[1.0], A_ub=[[-1.0]], b_ub=[5.0], lb=[-np.inf])
    sol = solve_lp(lp)
    assert sol.v == pytest.approx([-5.0])


def test_inverted_bounds_infeasible():
    sol = solve_lp(LinearProgram(c=[1.0], lb=[2.0], ub=[1.0]))
    assert sol.status is LpStatus.INFEASIBLE


def test_iteration_limit():
    rng = np.random.default_rng(3)
    c, A, b, _, _ = random_lp(rng)
    sol = solve_lp(LinearProgram(c=c, A_ub=A, b_ub=b), max_iters=0)
    assert sol.status in (LpStatus.ITER_LIMIT, LpStatus.OPTIMAL)
    if sol.status is LpStatus.OPTIMAL:
        assert sol.iterations == 0


def test_redundant_equalities():
    lp = LinearProgram(c=[1.0, 2.0], A_eq=[[1.0, 1.0], [2.0, 2.0]], b_eq=[1.0, 2.0])
    sol = solve_lp(lp)
    assert sol.status is LpStatus.OPTIMAL
    assert sol.v == pytest.approx([1.0, 0.0])


def test_deterministic():
    rng = np.random.default_rng(9)
    c, A, b, Aeq, beq = random_lp(rng)
    lp = LinearProgram(c=c, A_ub=A, b_ub=b, A_eq=Aeq, b_eq=beq)
    s1, s2 = solve_lp(lp), solve_lp(lp)
    assert np.array_equal(s1.v, s2.v) and s1.iterations == s2.iterations


def test_shape_validation():
    with pytest.raises(LpFormatError):
        LinearProgram(c=[1.0, 2.0], A_ub=[[1.0]], b_ub=[1.0])
    with pytest.raises(LpFormatError):
        LinearProgram(c=[np.nan])


def test_dump_roundtrip(tmp_path):
    rng = np.random.default_rng(5)
    c, A, b, Aeq, beq = random_lp(rng)
    lp = LinearProgram(c=c, A_ub=A, b_ub=b, A_eq=Aeq, b_eq=beq, ub=np.full(c.size, 7.0))
    p = tmp_path / "lp.txt"
    dump_lp(lp, p)
    back = load_lp(p)
    for name in ("c", "A_eq", "b_eq", "A_ub", "b_ub", "lb", "ub"):
        assert np.array_equal(getattr(lp, name), getattr(back, name)), name
    assert "[A_ub]" in p.read_text()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
def test_invariant_to_row_scaling(seed, k):
    rng = np.random.default_rng(seed)
    c, A, b, _, _ = random_lp(rng)
    base = solve_lp(LinearProgram(c=c, A_ub=A, b_ub=b))
    scaled = solve_lp(LinearProgram(c=c, A_ub=A * k, b_ub=b * k))
    assert scaled.objective == pytest.approx(base.objective, rel=1e-8, abs=1e-9)
