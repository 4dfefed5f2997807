"""Optimal output-noise distributions on a hyperspherical grid.

The ball probability ``P(||theta|| <= alpha)`` is minimised over piecewise
distributions: the ball of radius ``a`` is cut into pieces in hyperspherical
coordinates, each piece carries a probability mass and its contributions to
the second moments of theta, and the shape/moment requirements become linear
constraints.  When ``rank(C B) < m`` the problem is posed in the rotated
coordinates ``theta+ = T1 theta`` of dimension ``rank(C B)``.
"""

from __future__ import annotations

import enum
import itertools
import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .lp import LinearProgram, LpSolution, LpStatus, solve_lp

FORMAT_VERSION = 1


class ConfigurationError(ValueError):
    """Inconsistent bounds, grid or LP set-up."""


class Monotonicity(str, enum.Enum):
    LITERAL = "literal"   # p(.., k+1) <= p(.., k)
    DENSITY = "density"   # p/vol non-increasing along each ray


class MomentModel(str, enum.Enum):
    BRACKET = "bracket"   # piece moments bracketed by their extremes over the piece
    EXACT = "exact"       # piece moments of a density uniform over the piece


# -- covariance bounds -------------------------------------------------------

@dataclass(frozen=True)
class CovarianceBounds:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_2d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_2d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.shape[0] != lo.shape[1]:
            raise ConfigurationError(f"bound matrices must be square and equal-shaped: {lo.shape}, {hi.shape}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.upper.shape[0]

    @property
    def sigma2(self) -> np.ndarray:
        """Per-axis variance caps (diagonal of the upper bound)."""
        return np.diag(self.upper).copy()

    def check(self) -> None:
        if np.any(np.diag(self.upper) < 0):
            bad = int(np.flatnonzero(np.diag(self.upper) < 0)[0])
            raise ConfigurationError(f"upper covariance bound has negative diagonal entry [{bad},{bad}]")
        viol = np.argwhere(self.lower > self.upper + 1e-15)
        if viol.size:
            i, j = viol[0]
            raise ConfigurationError(
                f"covariance lower bound exceeds upper bound at [{i},{j}]: "
                f"{self.lower[i, j]:.6g} > {self.upper[i, j]:.6g}")


def compute_cov_bounds(B1, sigma_u2) -> CovarianceBounds:
    """Element-wise bounds on cov(B1 u_e) for independent u_e components with
    var(u_e,l) <= sigma_u2[l]."""
    B1 = np.atleast_2d(np.asarray(B1, dtype=float))
    s = np.asarray(sigma_u2, dtype=float).reshape(-1)
    if s.size != B1.shape[1]:
        raise ConfigurationError(f"sigma_u2 has {s.size} entries, B1 has {B1.shape[1]} columns")
    if np.any(s < 0):
        raise ConfigurationError("sigma_u2 must be non-negative")
    prod = B1[:, None, :] * B1[None, :, :]  # b_il b_jl
    upper = (np.maximum(prod, 0.0) * s).sum(axis=2)
    lower = -(np.maximum(-prod, 0.0) * s).sum(axis=2)
    return CovarianceBounds(lower=lower, upper=upper)


def tail_radius(sigma2, factor: float = 5.0) -> float:
    """Truncation radius ``factor * sqrt(sum sigma_i^2)``.

    By Markov's inequality the mass outside is at most ``1 / factor**2``.
    """
    s = np.asarray(sigma2, dtype=float)
    if np.any(s < 0):
        raise ConfigurationError("variances must be non-negative")
    return float(factor * math.sqrt(float(s.sum())))


# -- coordinates -------------------------------------------------------------

def spherical_to_cartesian(angles, r) -> np.ndarray:
    """Map hyperspherical ``(phi_1..phi_{d-1}, r)`` to Cartesian ``R^d``.

    Batched: ``angles`` of shape ``(..., d-1)`` and ``r`` of shape ``(...)``.
    """
    angles = np.asarray(angles, dtype=float)
    r = np.asarray(r, dtype=float)
    d = angles.shape[-1] + 1
    out = np.empty(angles.shape[:-1] + (d,))
    sin_prod = np.ones(angles.shape[:-1])
    for i in range(d - 1):
        out[..., i] = sin_prod * np.cos(angles[..., i])
        sin_prod = sin_prod * np.sin(angles[..., i])
    out[..., d - 1] = sin_prod
    return out * r[..., None]


def cartesian_to_spherical(point):
    """Inverse of :func:`spherical_to_cartesian` for ``d >= 2``.

    The first ``d-2`` angles land in ``[0, pi]``, the last in ``[0, 2 pi)``.
    The zero vector maps to all-zero angles.
    """
    x = np.asarray(point, dtype=float)
    d = x.shape[-1]
    if d < 2:
        raise ValueError("hyperspherical angles need d >= 2")
    r = np.linalg.norm(x, axis=-1)
    angles = np.zeros(x.shape[:-1] + (d - 1,))
    # tail norms ||x[i+1:]||
    tails = np.sqrt(np.cumsum((x[..., ::-1] ** 2), axis=-1))[..., ::-1]
    for i in range(d - 2):
        angles[..., i] = np.arctan2(tails[..., i + 1], x[..., i])
    angles[..., d - 2] = np.mod(np.arctan2(x[..., d - 1], x[..., d - 2]), 2 * np.pi)
    zero = r == 0
    if np.any(zero):
        angles[zero] = 0.0
    return angles, r


def _sin_power_integral(k: int, lo: float, hi: float) -> float:
    """Integral of sin(x)**k over [lo, hi]."""
    if k == 0:
        return hi - lo
    if k == 1:
        return math.cos(lo) - math.cos(hi)
    term = (-math.sin(hi) ** (k - 1) * math.cos(hi) + math.sin(lo) ** (k - 1) * math.cos(lo)) / k
    return term + (k - 1) / k * _sin_power_integral(k - 2, lo, hi)


# -- grid --------------------------------------------------------------------

@dataclass(frozen=True)
class SphericalGrid:
    dim: int
    n_angles: tuple
    n_radial: int
    delta_r: float
    a: float
    alpha: float
    k_alpha: int
    note: str = ""

    def __post_init__(self):
        object.__setattr__(self, "n_angles", tuple(int(n) for n in self.n_angles))
        d = self.dim
        if d < 1:
            raise ConfigurationError("grid dimension must be >= 1")
        if len(self.n_angles) != d - 1:
            raise ConfigurationError(f"need {d - 1} angular counts for d={d}, got {len(self.n_angles)}")
        if any(n < 1 for n in self.n_angles) or self.n_radial < 1:
            raise ConfigurationError("piece counts must be positive")
        if d >= 2 and self.n_angles[-1] != 1 and self.n_angles[-1] % 2:
            raise ConfigurationError(
                f"the [0, 2pi) angle needs 1 or an even number of pieces, got {self.n_angles[-1]}")
        if not (self.delta_r > 0 and self.a > 0 and self.alpha > 0):
            raise ConfigurationError("delta_r, a and alpha must be positive")
        if self.n_radial * self.delta_r < self.a * (1 - 1e-12):
            raise ConfigurationError(
                f"grid radius {self.n_radial * self.delta_r:.6g} does not cover a = {self.a:.6g}")
        if abs(self.k_alpha * self.delta_r - self.alpha) > 1e-12 * max(1.0, self.alpha):
            raise ConfigurationError("alpha must be an integer multiple of delta_r")
        if self.k_alpha > self.n_radial:
            raise ConfigurationError("alpha lies outside the grid")

    @classmethod
    def build(cls, dim: int, n_angles, n_radial: int, a: float, alpha: float) -> "SphericalGrid":
        """Choose ``delta_r = alpha / k`` with the largest ``k`` such that
        ``n_radial * delta_r >= a``; grow ``n_radial`` when that is impossible."""
        if a <= 0 or alpha <= 0:
            raise ConfigurationError("a and alpha must be positive")
        k = int(math.floor(alpha * n_radial / a * (1 + 1e-12)))
        note = ""
        if k < 1:
            k = 1
            new_n = int(math.ceil(a / alpha * (1 - 1e-12)))
            note = f"n_radial raised from {n_radial} to {new_n} so that alpha is a shell boundary"
            n_radial = new_n
        dr = alpha / k
        if k > n_radial:
            note = f"n_radial raised from {n_radial} to {k} to contain the alpha-ball"
            n_radial = k
        return cls(dim=dim, n_angles=tuple(n_angles), n_radial=n_radial, delta_r=dr,
                   a=a, alpha=alpha, k_alpha=k, note=note)

    # piece bookkeeping ------------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.n_angles + (self.n_radial,)

    @property
    def n_pieces(self) -> int:
        return int(np.prod(self.shape))

    def angle_span(self, i: int) -> float:
        """Range of angle ``i`` (0-based)."""
        return 2 * np.pi if i == self.dim - 2 else np.pi

    def pieces(self):
        """1-based index tuples ``(k_1, ..., k_d)`` in storage order."""
        return list(itertools.product(*[range(1, n + 1) for n in self.shape]))

    def flat_index(self, piece) -> int:
        return int(np.ravel_multi_index(tuple(k - 1 for k in piece), self.shape))

    def piece_box(self, piece):
        """(angle_lo, angle_hi, r_lo, r_hi) of a 1-based piece index."""
        ks = list(piece)
        lo = np.array([(k - 1) * self.angle_span(i) / n for i, (k, n) in enumerate(zip(ks[:-1], self.n_angles))])
        hi = np.array([k * self.angle_span(i) / n for i, (k, n) in enumerate(zip(ks[:-1], self.n_angles))])
        kr = ks[-1]
        return lo, hi, (kr - 1) * self.delta_r, kr * self.delta_r

    def antipode(self, piece) -> tuple:
        """Piece containing -theta for theta in ``piece``."""
        ks = list(piece)
        out = []
        for i, (k, n) in enumerate(zip(ks[:-1], self.n_angles)):
            if i == self.dim - 2:
                out.append(k if n == 1 else (k - 1 + n // 2) % n + 1)
            else:
                out.append(n - k + 1)
        out.append(ks[-1])
        return tuple(out)

    def piece_volume(self, piece) -> float:
        lo, hi, r0, r1 = self.piece_box(piece)
        d = self.dim
        if d == 1:
            return 2.0 * (r1 - r0)
        vol = (r1 ** d - r0 ** d) / d
        for i in range(d - 1):
            vol *= _sin_power_integral(d - 2 - i, lo[i], hi[i])
        return vol

    @cached_property
    def volumes(self) -> np.ndarray:
        return np.array([self.piece_volume(pc) for pc in self.pieces()]).reshape(self.shape)

    @cached_property
    def radial_index(self) -> np.ndarray:
        """1-based radial index of each flat piece."""
        return np.array([pc[-1] for pc in self.pieces()])

    def to_dict(self) -> dict:
        return {"dim": self.dim, "n_angles": list(self.n_angles), "n_radial": self.n_radial,
                "delta_r": self.delta_r, "a": self.a, "alpha": self.alpha, "k_alpha": self.k_alpha,
                "note": self.note}

    @classmethod
    def from_dict(cls, d: dict) -> "SphericalGrid":
        return cls(dim=d["dim"], n_angles=tuple(d["n_angles"]), n_radial=d["n_radial"],
                   delta_r=d["delta_r"], a=d["a"], alpha=d["alpha"], k_alpha=d["k_alpha"],
                   note=d.get("note", ""))


# -- per-piece moments -------------------------------------------------------

def _direction_factors(d: int, i: int):
    """Per-angle factors of the i-th (0-based) direction cosine: 'sin', 'cos' or None."""
    facs = [None] * (d - 1)
    for l in range(min(i, d - 1)):
        facs[l] = "sin"
    if i < d - 1:
        facs[i] = "cos"
    return facs


def _factor_fn(f1, f2):
    def one(name, x):
        if name is None:
            return np.ones_like(x)
        return np.sin(x) if name == "sin" else np.cos(x)
    return lambda x: one(f1, x) * one(f2, x)


def _factor_range(fn, lo: float, hi: float):
    # every factor is sin^a cos^b with a + b <= 2, so its critical points are
    # multiples of pi/4; together with the endpoints they give the exact range
    k0 = math.ceil(lo / (np.pi / 4) - 1e-12)
    k1 = math.floor(hi / (np.pi / 4) + 1e-12)
    cand = [lo, hi] + [k * np.pi / 4 for k in range(k0, k1 + 1) if lo <= k * np.pi / 4 <= hi]
    vals = fn(np.array(cand))
    return float(vals.min()), float(vals.max())


def _interval_mul(x, y):
    prods = [x[0] * y[0], x[0] * y[1], x[1] * y[0], x[1] * y[1]]
    return min(prods), max(prods)


def piece_moment_bounds(grid: SphericalGrid, piece, i: int, j: int):
    """Min and max of ``theta_i theta_j`` over a closed piece (1-based i, j)."""
    d = grid.dim
    if not (1 <= i <= j <= d):
        raise ValueError(f"need 1 <= i <= j <= {d}, got i={i}, j={j}")
    lo, hi, r0, r1 = grid.piece_box(piece)
    rng_r = (r0 * r0, r1 * r1)
    if d == 1:
        return rng_r
    fi = _direction_factors(d, i - 1)
    fj = _direction_factors(d, j - 1)
    g = (1.0, 1.0)
    for l in range(d - 1):
        if fi[l] is None and fj[l] is None:
            continue
        g = _interval_mul(g, _factor_range(_factor_fn(fi[l], fj[l]), lo[l], hi[l]))
    if i == j:
        g = (max(g[0], 0.0), g[1])
    return _interval_mul(rng_r, g)


_GL_X, _GL_W = np.polynomial.legendre.leggauss(48)


def piece_exact_moment(grid: SphericalGrid, piece, i: int, j: int) -> float:
    """E[theta_i theta_j] for theta uniform over the piece (1-based i, j)."""
    d = grid.dim
    lo, hi, r0, r1 = grid.piece_box(piece)
    if d == 1:
        return (r1 ** 3 - r0 ** 3) / (3 * (r1 - r0))
    radial = d / (d + 2) * (r1 ** (d + 2) - r0 ** (d + 2)) / (r1 ** d - r0 ** d)
    fi = _direction_factors(d, i - 1)
    fj = _direction_factors(d, j - 1)
    ang = 1.0
    for l in range(d - 1):
        x = 0.5 * (hi[l] - lo[l]) * _GL_X + 0.5 * (hi[l] + lo[l])
        w = 0.5 * (hi[l] - lo[l]) * _GL_W
        wt = np.sin(x) ** (d - 2 - l)
        ang *= float(np.sum(w * wt * _factor_fn(fi[l], fj[l])(x)) / np.sum(w * wt))
    return radial * ang


# -- the linear program ------------------------------------------------------

@dataclass
class DistributionLpLayout:
    """Variable and row bookkeeping for a discretised distribution LP."""

    grid: SphericalGrid
    pairs: list                  # (i, j), 1-based, i <= j
    row_labels_ub: list = field(default_factory=list)
    row_labels_eq: list = field(default_factory=list)

    @property
    def n_pieces(self) -> int:
        return self.grid.n_pieces

    @property
    def n_vars(self) -> int:
        return self.n_pieces * (1 + len(self.pairs))

    def p_index(self, flat: int) -> int:
        return flat

    def sigma_index(self, pair_idx: int, flat: int) -> int:
        return self.n_pieces * (1 + pair_idx) + flat


class _Rows:
    def __init__(self, n):
        self.n = n
        self.rows, self.rhs, self.labels = [], [], []

    def add(self, coeffs: dict, rhs: float, label: str):
        row = np.zeros(self.n)
        for k, v in coeffs.items():
            row[k] += v
        self.rows.append(row)
        self.rhs.append(rhs)
        self.labels.append(label)

    def matrix(self):
        return (np.array(self.rows) if self.rows else np.zeros((0, self.n)), np.array(self.rhs))


def build_distribution_lp(grid: SphericalGrid, bounds: CovarianceBounds,
             monotonicity: Monotonicity | str = Monotonicity.DENSITY,
             moments: MomentModel | str = MomentModel.BRACKET):
    """Assemble the LP; returns ``(LinearProgram, DistributionLpLayout)``.

    Variables are the piece masses followed by one block of piece moment
    contributions per ``(i, j)`` with ``i <= j``.  The objective is the mass
    of the pieces inside the alpha-ball.
    """
    monotonicity = Monotonicity(monotonicity)
    moments = MomentModel(moments)
    bounds.check()
    d = grid.dim
    if bounds.dim != d:
        raise ConfigurationError(f"bounds are {bounds.dim}-dimensional, grid is {d}-dimensional")
    pairs = [(i, j) for i in range(1, d + 1) for j in range(i, d + 1)]
    lay = DistributionLpLayout(grid=grid, pairs=pairs)
    n = lay.n_vars
    pieces = grid.pieces()
    P = grid.n_pieces
    ub = _Rows(n)
    eq = _Rows(n)

    c = np.zeros(n)
    c[:P] = (grid.radial_index <= grid.k_alpha).astype(float)

    lb = np.full(n, -np.inf)
    ubd = np.full(n, np.inf)
    lb[:P] = 0.0
    ubd[:P] = 1.0
    for q, (i, j) in enumerate(pairs):
        if i == j:
            lb[P * (1 + q):P * (2 + q)] = 0.0

    eq.add({k: 1.0 for k in range(P)}, 1.0, "total probability")

    diag_q = [q for q, (i, j) in enumerate(pairs) if i == j]
    for pc in pieces:
        f = grid.flat_index(pc)
        lo_b, hi_b, r0, r1 = grid.piece_box(pc)
        for q, (i, j) in enumerate(pairs):
            s = lay.sigma_index(q, f)
            if moments is MomentModel.EXACT:
                eq.add({s: 1.0, f: -piece_exact_moment(grid, pc, i, j)}, 0.0,
                       f"exact moment {i}{j} piece {pc}")
                continue
            mlo, mhi = piece_moment_bounds(grid, pc, i, j)
            ub.add({f: mlo, s: -1.0}, 0.0, f"moment {i}{j} >= min piece {pc}")
            ub.add({s: 1.0, f: -mhi}, 0.0, f"moment {i}{j} <= max piece {pc}")
        if moments is MomentModel.BRACKET:
            # sum_i theta_i^2 = r^2, so the diagonal contributions share one radial bracket
            tr = {lay.sigma_index(q, f): 1.0 for q in diag_q}
            ub.add({**{k: -1.0 for k in tr}, f: r0 * r0}, 0.0, f"radial moment >= min piece {pc}")
            ub.add({**tr, f: -r1 * r1}, 0.0, f"radial moment <= max piece {pc}")

    seen = set()
    for pc in pieces:
        ap = grid.antipode(pc)
        key = tuple(sorted([pc, ap]))
        if ap == pc or key in seen:
            continue
        seen.add(key)
        eq.add({grid.flat_index(pc): 1.0, grid.flat_index(ap): -1.0}, 0.0, f"symmetry {pc}~{ap}")

    for q, (i, j) in enumerate(pairs):
        coeffs = {lay.sigma_index(q, f): 1.0 for f in range(P)}
        ub.add(coeffs, float(bounds.upper[i - 1, j - 1]), f"covariance [{i},{j}] <= upper bound")
        ub.add({k: -1.0 for k in coeffs}, -float(bounds.lower[i - 1, j - 1]),
               f"covariance [{i},{j}] >= lower bound")

    vols = grid.volumes.reshape(-1)
    for pc in pieces:
        if pc[-1] == grid.n_radial:
            continue
        f0 = grid.flat_index(pc)
        f1 = grid.flat_index(pc[:-1] + (pc[-1] + 1,))
        if monotonicity is Monotonicity.LITERAL:
            ub.add({f1: 1.0, f0: -1.0}, 0.0, f"radial monotonicity {pc}")
        else:
            v0, v1 = vols[f0], vols[f1]
            s = max(v0, v1)
            ub.add({f1: v0 / s, f0: -v1 / s}, 0.0, f"radial density monotonicity {pc}")

    A_ub, b_ub = ub.matrix()
    A_eq, b_eq = eq.matrix()
    lay.row_labels_ub = ub.labels
    lay.row_labels_eq = eq.labels
    return LinearProgram(c=c, A_eq=A_eq, b_eq=b_eq, A_ub=A_ub, b_ub=b_ub, lb=lb, ub=ubd), lay


# -- reduction ---------------------------------------------------------------

@dataclass(frozen=True)
class Reduction:
    T1: np.ndarray    # m x m orthogonal
    b: int

    @property
    def T11(self) -> np.ndarray:
        return self.T1[:self.b]

    @property
    def T21(self) -> np.ndarray:
        return self.T1[self.b:]

    @property
    def m(self) -> int:
        return self.T1.shape[0]


def orthogonal_reduction(B1, rtol: float = 1e-10):
    """Orthogonal ``T1`` whose first ``b`` rows span range(B1); returns (T1, T11, b)."""
    B1 = np.atleast_2d(np.asarray(B1, dtype=float))
    U, S, _ = np.linalg.svd(B1, full_matrices=True)
    b = int(np.sum(S > rtol * S[0])) if S.size and S[0] > 0 else 0
    T1 = U.T.copy()
    for k in range(T1.shape[0]):
        if T1[k, np.argmax(np.abs(T1[k]))] < 0:
            T1[k] = -T1[k]
    return T1, T1[:b].copy(), b


# -- solved distribution -----------------------------------------------------

@dataclass
class DiscreteDistribution:
    grid: SphericalGrid | None
    p: np.ndarray                   # shape grid.shape
    sigma_pieces: dict              # (i, j) -> array of grid.shape
    bounds: CovarianceBounds
    reduction: Reduction | None = None
    monotonicity: Monotonicity = Monotonicity.DENSITY
    moments: MomentModel = MomentModel.BRACKET
    objective: float = float("nan")
    degenerate: bool = False

    @property
    def dim(self) -> int:
        return self.bounds.dim

    @property
    def output_dim(self) -> int:
        return self.reduction.m if self.reduction is not None else self.dim

    def ball_mass(self) -> float:
        """Probability mass of the pieces inside the alpha-ball."""
        if self.degenerate:
            return 1.0
        mask = (self.grid.radial_index <= self.grid.k_alpha).reshape(self.grid.shape)
        return float(self.p[mask].sum())

    def representative_radius2(self) -> np.ndarray:
        tr = sum(self.sigma_pieces[(i, i)] for i in range(1, self.dim + 1))
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.p > 0, tr / np.where(self.p > 0, self.p, 1.0), 0.0)

    def validate(self, tol: float = 1e-9) -> None:
        """Raise ``ConfigurationError`` if a structural invariant fails."""
        if self.degenerate:
            return
        g = self.grid
        if np.any(self.p < -tol) or abs(self.p.sum() - 1) > tol:
            raise ConfigurationError("piece probabilities are not a distribution")
        flat = self.p.reshape(-1)
        for pc in g.pieces():
            if abs(flat[g.flat_index(pc)] - flat[g.flat_index(g.antipode(pc))]) > tol:
                raise ConfigurationError(f"antipodal symmetry fails at {pc}")
        if self.monotonicity is Monotonicity.LITERAL:
            dens = self.p
        else:
            dens = self.p / g.volumes
        scale = np.abs(dens).max()
        if np.any(np.diff(dens, axis=-1) > tol * max(1.0, scale)):
            raise ConfigurationError("radial monotonicity fails")
        if self.moments is MomentModel.BRACKET:
            for (i, j), S in self.sigma_pieces.items():
                Sf = S.reshape(-1)
                for pc in g.pieces():
                    f = g.flat_index(pc)
                    lo, hi = piece_moment_bounds(g, pc, i, j)
                    if not (lo * flat[f] - tol <= Sf[f] <= hi * flat[f] + tol):
                        raise ConfigurationError(f"moment bracket {i}{j} fails at {pc}")

    # serialisation ----------------------------------------------------------

    def to_dict(self) -> dict:
        out = {
            "format": "unpctl.distribution",
            "version": FORMAT_VERSION,
            "degenerate": self.degenerate,
            "monotonicity": self.monotonicity.value,
            "moments": self.moments.value,
            "objective": self.objective,
            "bounds": {"lower": self.bounds.lower.tolist(), "upper": self.bounds.upper.tolist()},
            "grid": None if self.grid is None else self.grid.to_dict(),
            "p": self.p.reshape(-1).tolist(),
            "sigma": {f"{i},{j}": S.reshape(-1).tolist() for (i, j), S in sorted(self.sigma_pieces.items())},
            "reduction": None if self.reduction is None else {"T1": self.reduction.T1.tolist(),
                                                              "b": self.reduction.b},
        }
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "DiscreteDistribution":
        if d.get("format") != "unpctl.distribution" or d.get("version") != FORMAT_VERSION:
            raise ConfigurationError("not a version-1 unpctl distribution document")
        grid = None if d["grid"] is None else SphericalGrid.from_dict(d["grid"])
        shape = grid.shape if grid is not None else (1,)
        sigma = {tuple(int(t) for t in k.split(",")): np.array(v).reshape(shape) for k, v in d["sigma"].items()}
        red = None
        if d["reduction"] is not None:
            red = Reduction(T1=np.array(d["reduction"]["T1"]), b=int(d["reduction"]["b"]))
        return cls(grid=grid, p=np.array(d["p"]).reshape(shape), sigma_pieces=sigma,
                   bounds=CovarianceBounds(np.array(d["bounds"]["lower"]), np.array(d["bounds"]["upper"])),
                   reduction=red, monotonicity=Monotonicity(d["monotonicity"]),
                   moments=MomentModel(d["moments"]), objective=d["objective"],
                   degenerate=d["degenerate"])

    @classmethod
    def from_json(cls, text: str) -> "DiscreteDistribution":
        return cls.from_dict(json.loads(text))


def _describe_infeasibility(sol: LpSolution, lp: LinearProgram, lay: DistributionLpLayout) -> str:
    if sol.farkas is None:
        return sol.message
    # standard-form rows are: equalities, inequalities, then bound rows
    n_eq, n_ub = lp.b_eq.size, lp.b_ub.size
    y = np.abs(sol.farkas)
    labels = lay.row_labels_eq + lay.row_labels_ub
    y = y[:n_eq + n_ub]
    order = np.argsort(-y, kind="stable")
    named = [labels[k] for k in order[:3] if y[k] > 1e-9 * y.max()]
    return "; ".join(named) if named else sol.message


def solve_distribution_lp(grid: SphericalGrid, bounds: CovarianceBounds,
             monotonicity: Monotonicity | str = Monotonicity.DENSITY,
             moments: MomentModel | str = MomentModel.BRACKET,
             reduction: Reduction | None = None) -> DiscreteDistribution:
    lp, lay = build_distribution_lp(grid, bounds, monotonicity, moments)
    sol = solve_lp(lp)
    if sol.status is LpStatus.INFEASIBLE:
        raise ConfigurationError("distribution LP is infeasible; binding rows: "
                                 + _describe_infeasibility(sol, lp, lay))
    if sol.status is not LpStatus.OPTIMAL:
        raise ConfigurationError(f"distribution LP not solved: {sol.status.value} ({sol.message})")
    P = grid.n_pieces
    p = np.clip(sol.v[:P], 0.0, None)
    p = p / p.sum()
    sigma = {pair: sol.v[lay.sigma_index(q, 0):lay.sigma_index(q, 0) + P].reshape(grid.shape).copy()
             for q, pair in enumerate(lay.pairs)}
    return DiscreteDistribution(grid=grid, p=p.reshape(grid.shape), sigma_pieces=sigma, bounds=bounds,
                                reduction=reduction, monotonicity=Monotonicity(monotonicity),
                                moments=MomentModel(moments), objective=sol.objective)


def solve_optimal_distribution(B1, sigma_u2, alpha: float, *, n_angles=None, n_radial: int = 26,
                               a: float | None = None, tail_factor: float = 5.0,
                               monotonicity: Monotonicity | str = Monotonicity.DENSITY,
                               moments: MomentModel | str = MomentModel.BRACKET) -> DiscreteDistribution:
    """Solve for the ball-probability-minimising distribution of theta = B1 u_e.

    ``B1`` may also be an :class:`~unpctl.lti.LtiSystem`.  Full-rank ``B1``
    is solved in the output space directly; otherwise the problem is posed
    in the first ``rank(B1)`` rotated coordinates and the rotation is stored
    on the result.
    """
    if hasattr(B1, "B1"):
        B1 = B1.B1
    B1 = np.atleast_2d(np.asarray(B1, dtype=float))
    if alpha <= 0:
        raise ConfigurationError("alpha must be positive")
    m = B1.shape[0]
    bounds = compute_cov_bounds(B1, sigma_u2)
    T1, _, b = orthogonal_reduction(B1)
    red = None
    if b < m:
        red = Reduction(T1=T1, b=b)
        lo = (T1 @ bounds.lower @ T1.T)[:b, :b]
        hi = (T1 @ bounds.upper @ T1.T)[:b, :b]
        bounds_d = CovarianceBounds(lo, hi)
    else:
        bounds_d = bounds
    d = b
    if d == 0 or np.all(np.diag(bounds_d.upper) <= 0):
        return DiscreteDistribution(grid=None, p=np.ones(1), sigma_pieces={}, bounds=bounds_d,
                                    reduction=red, monotonicity=Monotonicity(monotonicity),
                                    moments=MomentModel(moments), objective=1.0, degenerate=True)
    if a is None:
        a = tail_radius(np.diag(bounds_d.upper), tail_factor)
    if n_angles is None:
        n_angles = (1,) * (d - 1)
    grid = SphericalGrid.build(d, n_angles, n_radial, a, alpha)
    return solve_distribution_lp(grid, bounds_d, monotonicity, moments, reduction=red)
