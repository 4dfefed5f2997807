import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unpctl.attacker import conf_prob_uniform_box
from unpctl.distribution import (ConfigurationError, CovarianceBounds, DiscreteDistribution, MomentModel,
                                 Monotonicity, SphericalGrid, build_distribution_lp, cartesian_to_spherical, compute_cov_bounds,
                                 orthogonal_reduction, piece_exact_moment, piece_moment_bounds, solve_optimal_distribution,
                                 solve_distribution_lp, spherical_to_cartesian, tail_radius)
from unpctl.lti import LtiSystem

BENCH = LtiSystem.double_integrator_2d()


# -- covariance bounds ---------------------------------------------------------------

def test_cov_bounds_benchmark():
    cb = compute_cov_bounds(0.5 * np.eye(2), [0.5, 0.5])
    assert np.allclose(cb.upper, np.diag([0.125, 0.125]))
    assert np.allclose(cb.lower, 0.0)


def test_cov_bounds_identity():
    cb = compute_cov_bounds(np.eye(3), [1, 1, 1])
    assert np.allclose(cb.upper, np.eye(3)) and np.allclose(cb.lower, 0)


def test_cov_bounds_mixed_signs():
    cb = compute_cov_bounds([[1, -1], [1, 1]], [1, 1])
    assert np.allclose(cb.upper, [[2, 1], [1, 2]])
    assert np.allclose(cb.lower, [[0, -1], [-1, 0]])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_cov_bounds_contain_every_admissible_covariance(seed):
    rng = np.random.default_rng(seed)
    m, p = rng.integers(1, 4), rng.integers(1, 4)
    B1 = rng.normal(size=(m, p))
    caps = rng.uniform(0, 2, p)
    cb = compute_cov_bounds(B1, caps)
    # any independent inputs with var <= caps give B1 diag(v) B1'
    v = caps * rng.uniform(0, 1, p)
    S = B1 @ np.diag(v) @ B1.T
    assert np.all(S <= cb.upper + 1e-12) and np.all(S >= cb.lower - 1e-12)


def test_cov_bounds_reject_negative_caps():
    with pytest.raises(ConfigurationError):
        compute_cov_bounds(np.eye(2), [-1, 1])


def test_bounds_check_rejects_negative_diagonal():
    with pytest.raises(ConfigurationError, match="negative diagonal"):
        CovarianceBounds(np.zeros((2, 2)), np.diag([-0.1, 1.0])).check()


def test_tail_radius():
    assert tail_radius([0.125, 0.125]) == pytest.approx(2.5)
    assert tail_radius([1.0], factor=3) == pytest.approx(3.0)


# -- coordinates -----------------------------------------------------------------

@settings(max_examples=100, deadline=None)
@given(st.integers(2, 5), st.integers(0, 2**32 - 1))
def test_spherical_roundtrip(d, seed):
    x = np.random.default_rng(seed).normal(size=d)
    ang, r = cartesian_to_spherical(x)
    assert r == pytest.approx(np.linalg.norm(x))
    assert np.all(ang[:-1] >= 0) and np.all(ang[:-1] <= np.pi)
    assert 0 <= ang[-1] < 2 * np.pi
    assert np.allclose(spherical_to_cartesian(ang, r), x)


def test_zero_vector_angles():
    ang, r = cartesian_to_spherical(np.zeros(3))
    assert r == 0 and np.all(ang == 0)


# -- grid ---------------------------------------------------------------------------

def test_grid_benchmark():
    g = SphericalGrid.build(2, (1,), 26, 2.5, 0.2)
    assert g.delta_r == pytest.approx(0.1) and g.k_alpha == 2 and g.n_radial == 26
    assert g.n_radial * g.delta_r >= g.a


def test_grid_adjusts_for_small_alpha():
    g = SphericalGrid.build(2, (1,), 26, 2.5, 0.05)
    assert g.k_alpha == 1 and g.n_radial == 50 and g.note


def test_grid_rejects_odd_full_turn_count():
    with pytest.raises(ConfigurationError):
        SphericalGrid.build(2, (3,), 10, 1.0, 0.5)


def test_grid_rejects_non_multiple_alpha():
    with pytest.raises(ConfigurationError):
        SphericalGrid(dim=2, n_angles=(1,), n_radial=10, delta_r=0.1, a=1.0, alpha=0.25, k_alpha=2)


@pytest.mark.parametrize("d,n_angles", [(1, ()), (2, (1,)), (2, (4,)), (3, (2, 4)), (3, (3, 2)), (4, (2, 1, 2))])
def test_volumes_sum_to_ball(d, n_angles):
    g = SphericalGrid.build(d, n_angles, 5, 1.0, 0.4)
    R = g.n_radial * g.delta_r
    ball = math.pi ** (d / 2) / math.gamma(d / 2 + 1) * R ** d
    assert g.volumes.sum() == pytest.approx(ball, rel=1e-12)


@pytest.mark.parametrize("d,n_angles", [(2, (4,)), (3, (2, 4)), (3, (3, 2)), (4, (3, 2, 2))])
def test_antipode_contains_negated_points(d, n_angles):
    g = SphericalGrid.build(d, n_angles, 3, 1.0, 0.5)
    rng = np.random.default_rng(0)
    for pc in g.pieces():
        lo, hi, r0, r1 = g.piece_box(pc)
        ang = lo + rng.uniform(0.05, 0.95, lo.size) * (hi - lo)
        r = r0 + 0.5 * (r1 - r0)
        x = spherical_to_cartesian(ang, r)
        ang2, _ = cartesian_to_spherical(-x)
        ap = g.antipode(pc)
        lo2, hi2, _, _ = g.piece_box(ap)
        assert np.all(ang2 >= lo2 - 1e-12) and np.all(ang2 <= hi2 + 1e-12), (pc, ap)
        assert g.antipode(ap) == pc


# -- piece moments ------------------------------------------------------------------

@pytest.mark.parametrize("d,n_angles", [(2, (4,)), (3, (2, 4)), (3, (3, 2))])
def test_moment_bounds_enclose_sampled_values(d, n_angles):
    g = SphericalGrid.build(d, n_angles, 3, 1.0, 0.5)
    rng = np.random.default_rng(1)
    for pc in g.pieces():
        lo, hi, r0, r1 = g.piece_box(pc)
        ang = lo + rng.uniform(0, 1, (20000, lo.size)) * (hi - lo)
        r = r0 + rng.uniform(0, 1, 20000) * (r1 - r0)
        X = spherical_to_cartesian(ang, r)
        for i, j in itertools.combinations_with_replacement(range(1, d + 1), 2):
            mlo, mhi = piece_moment_bounds(g, pc, i, j)
            v = X[:, i - 1] * X[:, j - 1]
            assert v.min() >= mlo - 1e-12 and v.max() <= mhi + 1e-12
            # the bracket is tight: sampled extremes come close
            span = max(mhi - mlo, 1e-12)
            assert (v.min() - mlo) / span < 0.1 and (mhi - v.max()) / span < 0.1


def test_moment_bound_d3_example():
    g = SphericalGrid.build(3, (2, 2), 2, 1.0, 0.5)
    # theta1 theta2 = 0.5 r^2 sin(2 phi1) cos(phi2); piece (1,1,k): phi1 in [0, pi/2], phi2 in [0, pi]
    lo, hi = piece_moment_bounds(g, (1, 1, 2), 1, 2)
    assert hi == pytest.approx(0.5 * 1.0 ** 2)
    assert lo == pytest.approx(-0.5)


def test_exact_moment_matches_monte_carlo():
    g = SphericalGrid.build(3, (2, 2), 3, 1.0, 0.5)
    rng = np.random.default_rng(2)
    pc = (1, 2, 2)
    lo, hi, r0, r1 = g.piece_box(pc)
    pts = rng.uniform(-r1, r1, (400000, 3))
    ang, r = cartesian_to_spherical(pts)
    inside = (r >= r0) & (r <= r1) & np.all((ang >= lo) & (ang <= hi), axis=1)
    X = pts[inside]
    for i, j in [(1, 1), (1, 3), (2, 3), (3, 3)]:
        mc = np.mean(X[:, i - 1] * X[:, j - 1])
        se = np.std(X[:, i - 1] * X[:, j - 1]) / np.sqrt(len(X))
        assert abs(piece_exact_moment(g, pc, i, j) - mc) < 5 * se


# -- the LP -------------------------------------------------------------------------

def test_benchmark_lp_size():
    g = SphericalGrid.build(2, (1,), 26, 2.5, 0.2)
    lp, lay = build_distribution_lp(g, compute_cov_bounds(BENCH.B1, [0.5, 0.5]))
    assert lay.n_pieces == 26 and lp.n_vars == 26 + 78


@pytest.mark.parametrize("alpha,expected", [(0.1, 0.0168), (0.2, 0.0672), (0.4, 0.2689), (0.8, 0.7786)])
def test_benchmark_objectives_density_mode(alpha, expected):
    d = solve_optimal_distribution(BENCH, [0.5, 0.5], alpha, monotonicity="density")
    assert d.objective == pytest.approx(expected, abs=1e-4)
    d.validate()


@pytest.mark.parametrize("mono", ["literal", "density"])
@pytest.mark.parametrize("moments", ["bracket", "exact"])
def test_solution_invariants(mono, moments):
    d = solve_optimal_distribution(BENCH, [0.5, 0.5], 0.4, monotonicity=mono, moments=moments)
    d.validate()
    assert d.p.min() >= 0 and d.p.sum() == pytest.approx(1, abs=1e-9)
    for (i, j), S in d.sigma_pieces.items():
        tot = S.sum()
        assert d.bounds.lower[i - 1, j - 1] - 1e-9 <= tot <= d.bounds.upper[i - 1, j - 1] + 1e-9


def test_objective_monotone_in_alpha_on_fixed_grid():
    g_args = dict(dim=2, n_angles=(1,), n_radial=26, a=2.6)
    bounds = compute_cov_bounds(BENCH.B1, [0.5, 0.5])
    vals = []
    for k in range(1, 12):
        g = SphericalGrid(delta_r=0.1, alpha=0.1 * k, k_alpha=k, **g_args)
        vals.append(solve_distribution_lp(g, bounds).objective)
    assert all(b >= a - 1e-9 for a, b in zip(vals, vals[1:]))


def _toy_oracle(mono, n=1500):
    """Exhaustive simplex grid for 3 shells, d=2, one angular piece.

    With a diagonal upper bound s*I and zero lower bound the moment variables
    are feasible iff sum_k r_{k-1}^2 p_k <= tr(upper); see the test module.
    """
    dr, s = 0.3, 0.1
    r_lo = np.array([0.0, dr, 2 * dr])
    vols = np.array([1.0, 3.0, 5.0])
    i, j = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
    keep = i + j <= n
    p1, p2 = i[keep] / n, j[keep] / n
    p3 = 1 - p1 - p2
    P = np.stack([p1, p2, p3], axis=1)
    ok = P @ (r_lo ** 2) <= 2 * s + 1e-12
    if mono == "literal":
        ok &= (p2 <= p1 + 1e-12) & (p3 <= p2 + 1e-12)
    else:
        dens = P / vols
        ok &= (dens[:, 1] <= dens[:, 0] + 1e-12) & (dens[:, 2] <= dens[:, 1] + 1e-12)
    return float(p1[ok].min())


@pytest.mark.parametrize("mono", ["literal", "density"])
def test_three_shell_toy_matches_simplex_grid(mono):
    g = SphericalGrid(dim=2, n_angles=(1,), n_radial=3, delta_r=0.3, a=0.9, alpha=0.3, k_alpha=1)
    bounds = CovarianceBounds(np.zeros((2, 2)), 0.1 * np.eye(2))
    d = solve_distribution_lp(g, bounds, monotonicity=mono)
    assert d.objective == pytest.approx(_toy_oracle(mono), abs=1e-3)


def test_objective_below_uniform_box_for_small_alpha():
    # alpha <= sqrt(3) min sigma, diagonal tight upper bound
    sig2 = 0.125
    for alpha in (0.1, 0.2, 0.4):
        d = solve_optimal_distribution(BENCH, [0.5, 0.5], alpha, monotonicity="density")
        g = d.grid
        surface = d.p[..., g.k_alpha - 1].sum()   # mass of the shell touching the alpha sphere
        assert d.objective <= conf_prob_uniform_box([math.sqrt(sig2)] * 2, alpha) + 2 * surface


def test_infeasible_bounds_name_the_constraint():
    g = SphericalGrid(dim=2, n_angles=(1,), n_radial=3, delta_r=0.3, a=0.9, alpha=0.3, k_alpha=1)
    # demand a negative covariance total below anything the grid can hold
    bounds = CovarianceBounds(np.array([[0.0, -5.0], [-5.0, 0.0]]), np.array([[0.1, -4.0], [-4.0, 0.1]]))
    with pytest.raises(ConfigurationError, match="infeasible; binding rows: moment 12"):
        solve_distribution_lp(g, bounds)


def test_degenerate_zero_caps():
    d = solve_optimal_distribution(BENCH, [0.0, 0.0], 0.2)
    assert d.degenerate and d.ball_mass() == 1.0


def test_one_dimensional_problem():
    d = solve_optimal_distribution([[1.0]], [1.0], 0.5, n_radial=20)
    d.validate()
    assert 0 < d.objective < 1


def test_three_dimensional_problem():
    d = solve_optimal_distribution(np.eye(3), [0.1, 0.1, 0.1], 0.3, n_angles=(2, 2), n_radial=8)
    d.validate()
    # ball mass cannot beat the volume fraction of a density capped by the covariance budget
    assert 0 < d.objective < 0.5


# -- reduction -----------------------------------------------------------------------

def test_orthogonal_reduction_rank_one():
    T1, T11, b = orthogonal_reduction([[1.0], [0.0]])
    assert b == 1
    assert np.allclose(T1 @ T1.T, np.eye(2))
    assert np.allclose(T11, [[1.0, 0.0]])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_reduction_spans_range(seed):
    rng = np.random.default_rng(seed)
    m, r = 3, int(rng.integers(1, 3))
    B1 = rng.normal(size=(m, r)) @ rng.normal(size=(r, 3))
    T1, T11, b = orthogonal_reduction(B1)
    assert b == r
    assert np.allclose(T1 @ T1.T, np.eye(m))
    assert np.allclose(T1[b:] @ B1, 0, atol=1e-9)


def test_reduced_solve_records_reduction():
    B1 = np.array([[1.0, 0.0], [1.0, 0.0]])
    d = solve_optimal_distribution(B1, [0.5, 0.5], 0.2, n_radial=10)
    assert d.reduction is not None and d.reduction.b == 1 and d.dim == 1 and d.output_dim == 2
    d.validate()


# -- serialisation --------------------------------------------------------------------

def test_json_roundtrip_and_determinism():
    d = solve_optimal_distribution(BENCH, [0.5, 0.5], 0.2)
    text = d.to_json()
    back = DiscreteDistribution.from_json(text)
    assert np.array_equal(back.p, d.p)
    assert back.grid == d.grid
    assert back.to_json() == text
    assert solve_optimal_distribution(BENCH, [0.5, 0.5], 0.2).to_json() == text


def test_json_roundtrip_reduced():
    d = solve_optimal_distribution([[1.0, 0.0], [1.0, 0.0]], [0.5, 0.5], 0.2, n_radial=10)
    back = DiscreteDistribution.from_json(d.to_json())
    assert np.allclose(back.reduction.T1, d.reduction.T1) and back.reduction.b == 1


def test_from_json_rejects_other_documents():
    with pytest.raises(ConfigurationError):
        DiscreteDistribution.from_json('{"format": "x", "version": 1}')
