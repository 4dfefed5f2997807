"""Sampling theta from solved or baseline distributions and mapping it back to u_e."""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .distribution import (DiscreteDistribution, Reduction, compute_cov_bounds, orthogonal_reduction,
                           piece_exact_moment, solve_optimal_distribution, spherical_to_cartesian)
from .lti import LtiSystem


class SourceKind(str, enum.Enum):
    SOLVED = "optimal"
    GAUSSIAN = "gaussian"
    LAPLACE = "laplace"
    UNIFORM_BOX = "uniform"
    NONE = "none"


class IntraPiece(str, enum.Enum):
    VOLUME = "volume"        # uniform over the piece's Cartesian volume
    REPPOINT = "reppoint"    # +-sqrt(Sigma_ii / p) per axis, independent signs


class ConsistencyError(ValueError):
    """theta is not reachable through B1 (rank or reduction mismatch)."""


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based Philox stream keyed by a 64-bit seed and optional sub-stream ids."""
    if not (0 <= seed < 2**64):
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, stream)])))


@dataclass(frozen=True)
class NoiseSource:
    kind: SourceKind
    dim: int
    dist: DiscreteDistribution | None = None
    intra: IntraPiece = IntraPiece.REPPOINT
    cov: np.ndarray | None = None       # Gaussian covariance
    scale: np.ndarray | None = None     # Laplace per-axis b
    sigma: np.ndarray | None = None     # uniform-box per-axis standard deviation
    reduction: Reduction | None = None  # theta = T11^T theta+ when set
    seed: int | None = None

    def __post_init__(self):
        if self.kind is SourceKind.SOLVED:
            if self.dist is None:
                raise ValueError("solved source needs a distribution")
            if not self.dist.degenerate:
                vols = self.dist.grid.volumes
                if np.any((self.dist.p > 0) & (vols <= 0)):
                    raise ValueError("a piece with positive mass has zero volume")
        if self.kind is SourceKind.LAPLACE and np.any(np.asarray(self.scale) < 0):
            raise ValueError("Laplace scale must be non-negative")
        if self.kind is SourceKind.UNIFORM_BOX and np.any(np.asarray(self.sigma) < 0):
            raise ValueError("uniform sigma must be non-negative")

    @property
    def sample_dim(self) -> int:
        """Dimension of the raw draws (b for reduced sources)."""
        if self.reduction is not None:
            return self.reduction.b
        return self.dim

    @classmethod
    def solved(cls, dist: DiscreteDistribution, intra: IntraPiece | str = IntraPiece.REPPOINT, seed=None):
        return cls(SourceKind.SOLVED, dist.output_dim, dist=dist, intra=IntraPiece(intra),
                   reduction=dist.reduction, seed=seed)

    @classmethod
    def gaussian(cls, cov, reduction=None, seed=None):
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        m = reduction.m if reduction is not None else cov.shape[0]
        return cls(SourceKind.GAUSSIAN, m, cov=cov, reduction=reduction, seed=seed)

    @classmethod
    def laplace(cls, scale, reduction=None, seed=None):
        scale = np.asarray(scale, dtype=float).reshape(-1)
        m = reduction.m if reduction is not None else scale.size
        return cls(SourceKind.LAPLACE, m, scale=scale, reduction=reduction, seed=seed)

    @classmethod
    def laplace_matching(cls, variances, reduction=None, seed=None):
        """Laplace with 2 b^2 equal to the given per-axis variances."""
        return cls.laplace(np.sqrt(np.asarray(variances, dtype=float) / 2.0), reduction, seed)

    @classmethod
    def uniform_box(cls, sigma, reduction=None, seed=None):
        sigma = np.asarray(sigma, dtype=float).reshape(-1)
        m = reduction.m if reduction is not None else sigma.size
        return cls(SourceKind.UNIFORM_BOX, m, sigma=sigma, reduction=reduction, seed=seed)

    @classmethod
    def none(cls, m: int):
        return cls(SourceKind.NONE, m)

    def rng(self, *stream) -> np.random.Generator:
        if self.seed is None:
            raise ValueError("source has no seed; pass an explicit generator")
        return make_rng(self.seed, *stream)


# -- intra-piece samplers ----------------------------------------------------

def _sample_sin_power(rng, k: int, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Draw from density proportional to sin(x)**k on [lo, hi] (vectorised)."""
    u = rng.random(lo.shape)
    if k == 0:
        return lo + u * (hi - lo)
    if k == 1:
        c0, c1 = np.cos(lo), np.cos(hi)
        return np.arccos(np.clip(c0 - u * (c0 - c1), -1.0, 1.0))
    # rejection against the interval maximum of sin^k
    peak = np.where((lo <= np.pi / 2) & (hi >= np.pi / 2), 1.0,
                    np.maximum(np.sin(lo), np.sin(hi)) ** k)
    out = np.empty(lo.shape)
    todo = np.arange(lo.size)
    while todo.size:
        x = lo[todo] + rng.random(todo.size) * (hi[todo] - lo[todo])
        ok = rng.random(todo.size) * peak[todo] <= np.sin(x) ** k
        out[todo[ok]] = x[ok]
        todo = todo[~ok]
    return out


def _sample_solved(src: NoiseSource, rng, size: int) -> np.ndarray:
    dist = src.dist
    d = dist.dim
    if dist.degenerate:
        return np.zeros((size, d))
    g = dist.grid
    p = dist.p.reshape(-1)
    cdf = np.cumsum(p)
    flat = np.minimum(np.searchsorted(cdf, rng.random(size) * cdf[-1], side="right"), p.size - 1)
    idx = np.array(np.unravel_index(flat, g.shape)).T + 1  # 1-based
    if src.intra is IntraPiece.REPPOINT:
        pf = np.where(p[flat] > 0, p[flat], 1.0)
        mag = np.stack([np.sqrt(np.maximum(dist.sigma_pieces[(i, i)].reshape(-1)[flat], 0.0) / pf)
                        for i in range(1, d + 1)], axis=1)
        signs = np.where(rng.random((size, d)) < 0.5, -1.0, 1.0)
        return mag * signs
    kr = idx[:, -1]
    r0 = (kr - 1) * g.delta_r
    r1 = kr * g.delta_r
    r = (r0 ** d + rng.random(size) * (r1 ** d - r0 ** d)) ** (1.0 / d)
    if d == 1:
        return (r * np.where(rng.random(size) < 0.5, -1.0, 1.0))[:, None]
    angles = np.empty((size, d - 1))
    for l in range(d - 1):
        span = g.angle_span(l)
        n = g.n_angles[l]
        lo = (idx[:, l] - 1) * span / n
        hi = idx[:, l] * span / n
        angles[:, l] = _sample_sin_power(rng, d - 2 - l, lo, hi)
    return spherical_to_cartesian(angles, r)


def sample_theta_raw(src: NoiseSource, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Draws in the source's own coordinates (theta+ for reduced sources)."""
    n = 1 if size is None else int(size)
    k = src.sample_dim
    if src.kind is SourceKind.SOLVED:
        out = _sample_solved(src, rng, n)
    elif src.kind is SourceKind.GAUSSIAN:
        w, V = np.linalg.eigh(src.cov)
        L = V * np.sqrt(np.clip(w, 0.0, None))
        out = rng.standard_normal((n, k)) @ L.T
    elif src.kind is SourceKind.LAPLACE:
        out = rng.laplace(0.0, 1.0, (n, k)) * src.scale
    elif src.kind is SourceKind.UNIFORM_BOX:
        h = math.sqrt(3.0) * src.sigma
        out = (2.0 * rng.random((n, k)) - 1.0) * h
    else:
        out = np.zeros((n, k))
    return out[0] if size is None else out


def reconstruct(theta_raw, reduction: Reduction | None) -> np.ndarray:
    """theta = T11^T theta+ (identity without a reduction)."""
    theta_raw = np.asarray(theta_raw, dtype=float)
    if reduction is None:
        return theta_raw
    return theta_raw @ reduction.T11


def sample_theta(src: NoiseSource, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Output-space draws of theta (length m)."""
    return reconstruct(sample_theta_raw(src, rng, size), src.reduction)


def theta_covariance(src: NoiseSource) -> np.ndarray:
    """Exact covariance of the output-space draws of a source."""
    k = src.sample_dim
    if src.kind is SourceKind.GAUSSIAN:
        C = np.array(src.cov, dtype=float)
    elif src.kind is SourceKind.LAPLACE:
        C = np.diag(2.0 * src.scale ** 2)
    elif src.kind is SourceKind.UNIFORM_BOX:
        C = np.diag(src.sigma ** 2)
    elif src.kind is SourceKind.NONE:
        C = np.zeros((k, k))
    else:
        dist = src.dist
        C = np.zeros((k, k))
        if not dist.degenerate:
            g = dist.grid
            p = dist.p.reshape(-1)
            if src.intra is IntraPiece.REPPOINT:
                # independent signs kill every cross term
                for i in range(1, k + 1):
                    C[i - 1, i - 1] = float(dist.sigma_pieces[(i, i)].sum())
            else:
                pieces = g.pieces()
                for i in range(1, k + 1):
                    for j in range(i, k + 1):
                        v = sum(p[f] * piece_exact_moment(g, pc, i, j) for f, pc in enumerate(pieces) if p[f] > 0)
                        C[i - 1, j - 1] = C[j - 1, i - 1] = v
    if src.reduction is not None:
        T = src.reduction.T11
        C = T.T @ C @ T
    return C


# -- theta -> u_e -----------------------------------------------------------

def _pinv_solve(M: np.ndarray, rhs: np.ndarray, rtol: float = 1e-10) -> np.ndarray:
    # least-norm solution via SVD; equals (M^T M)^+ M^T rhs
    U, S, Vt = np.linalg.svd(M, full_matrices=False)
    keep = S > rtol * (S[0] if S.size else 0.0)
    Sinv = np.where(keep, 1.0 / np.where(keep, S, 1.0), 0.0)
    return (rhs @ U) * Sinv @ Vt


def compute_extra_input(B1, theta, reduction: Reduction | None = None, tol: float = 1e-9) -> np.ndarray:
    """Solve B1 u_e = theta for u_e.

    With a reduction, ``theta`` is the rotated draw theta+ of length ``m`` (its
    last ``m - b`` entries must vanish) or of length ``b``.
    """
    B1 = np.atleast_2d(np.asarray(B1, dtype=float))
    theta = np.asarray(theta, dtype=float)
    m = B1.shape[0]
    if reduction is None:
        if theta.shape[-1] != m:
            raise ConsistencyError(f"theta must have length {m}, got {theta.shape[-1]}")
        u = _pinv_solve(B1, theta)
        target = theta
    else:
        b = reduction.b
        if theta.shape[-1] == m:
            tail = theta[..., b:]
            if np.any(np.abs(tail) > tol):
                raise ConsistencyError(f"reduced theta+ has non-zero trailing entries (max {np.abs(tail).max():.3g})")
            theta = theta[..., :b]
        elif theta.shape[-1] != b:
            raise ConsistencyError(f"theta+ must have length {b} or {m}")
        M = reduction.T11 @ B1
        u = _pinv_solve(M, theta)
        target = theta @ reduction.T11
    res = np.linalg.norm(u @ B1.T - target, axis=-1)
    lim = tol * (1.0 + np.linalg.norm(target, axis=-1))
    if np.any(res > lim):
        raise ConsistencyError(f"B1 u_e misses theta by {np.max(res):.3g}; theta is not in range(B1)")
    return u


# -- solve, sample, invert ---------------------------------------------------

@lru_cache(maxsize=64)
def _cached_solve(B1_bytes: bytes, shape: tuple, sigma: tuple, alpha: float, mono: str, moments: str):
    B1 = np.frombuffer(B1_bytes, dtype=float).reshape(shape)
    return solve_optimal_distribution(B1, np.array(sigma), alpha, monotonicity=mono, moments=moments)


def baseline_source(kind: SourceKind | str, B1, sigma_u2, seed=None) -> NoiseSource:
    """Baseline with per-axis variances from the diagonal of the covariance upper bound.

    For rank-deficient ``B1`` the baseline lives in the reduced coordinates.
    """
    kind = SourceKind(kind)
    B1 = np.atleast_2d(np.asarray(B1, dtype=float))
    m = B1.shape[0]
    bounds = compute_cov_bounds(B1, sigma_u2)
    T1, _, b = orthogonal_reduction(B1)
    red = None
    var = np.diag(bounds.upper)
    if b < m:
        red = Reduction(T1=T1, b=b)
        var = np.diag(T1 @ bounds.upper @ T1.T)[:b]
    if kind is SourceKind.GAUSSIAN:
        return NoiseSource.gaussian(np.diag(var), red, seed)
    if kind is SourceKind.LAPLACE:
        return NoiseSource.laplace_matching(var, red, seed)
    if kind is SourceKind.UNIFORM_BOX:
        return NoiseSource.uniform_box(np.sqrt(var), red, seed)
    if kind is SourceKind.NONE:
        return NoiseSource.none(m)
    raise ValueError(f"{kind} is not a baseline")


def generate_unpredictable_input(sys: LtiSystem, sigma_u2, alpha: float, kind: SourceKind | str,
                                 rng: np.random.Generator, size: int | None = None,
                                 intra: IntraPiece | str = IntraPiece.REPPOINT,
                                 monotonicity: str = "density", moments: str = "bracket") -> np.ndarray:
    """Draw u_e: solve (or reuse) the distribution, sample theta, invert B1."""
    kind = SourceKind(kind)
    B1 = np.ascontiguousarray(sys.B1, dtype=float)
    if kind is SourceKind.SOLVED:
        dist = _cached_solve(B1.tobytes(), B1.shape, tuple(np.asarray(sigma_u2, dtype=float).reshape(-1)),
                             float(alpha), str(monotonicity), str(moments))
        src = NoiseSource.solved(dist, intra)
    else:
        src = baseline_source(kind, B1, sigma_u2)
    raw = sample_theta_raw(src, rng, size)
    return compute_extra_input(B1, raw, src.reduction)


def dump_samples_csv(path, theta, u_e) -> None:
    theta = np.atleast_2d(theta)
    u_e = np.atleast_2d(u_e)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"theta{i + 1}" for i in range(theta.shape[1])] + [f"u_e{i + 1}" for i in range(u_e.shape[1])])
        for t, u in zip(theta, u_e):
            w.writerow([repr(float(v)) for v in t] + [repr(float(v)) for v in u])
