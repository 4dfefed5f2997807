"""Nominal controllers and the cost of adding unpredictable input.

Finite-horizon LQR with the extra quadratic cost caused by u_e, and
multi-agent consensus/formation control whose long-run degradation is a
discrete Lyapunov solve.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import block_diag

from .distribution import compute_cov_bounds
from .lti import LtiSystem, ShapeError


class InfeasibleError(RuntimeError):
    def __init__(self, step: int, detail: str):
        super().__init__(f"state box violated at step {step}: {detail}")
        self.step = step


class DivergentError(ArithmeticError):
    def __init__(self, radius: float):
        super().__init__(f"collective dynamics not asymptotically stable (spectral radius {radius:.12g})")
        self.radius = radius


@dataclass(frozen=True)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float).reshape(-1)
        hi = np.asarray(self.hi, dtype=float).reshape(-1)
        if lo.shape != hi.shape:
            raise ShapeError("box bounds must have equal length")
        if np.any(lo > hi):
            raise ValueError("empty box")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def unbounded(cls, n: int) -> "Box":
        return cls(np.full(n, -np.inf), np.full(n, np.inf))

    def contains(self, v, tol=0.0) -> bool:
        v = np.asarray(v)
        return bool(np.all(v >= self.lo - tol) and np.all(v <= self.hi + tol))

    def clamp(self, v) -> np.ndarray:
        return np.clip(v, self.lo, self.hi)


def _check_factor(M, name, strict):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if not np.allclose(M, M.T, atol=1e-12):
        raise ValueError(f"{name} must be symmetric")
    if strict:
        try:
            np.linalg.cholesky(M)
        except np.linalg.LinAlgError:
            raise ValueError(f"{name} must be positive definite") from None
    elif M.size and np.linalg.eigvalsh(M).min() < -1e-12:
        raise ValueError(f"{name} must be positive semidefinite")
    return M


@dataclass
class LqrCost:
    """sum_{k=0}^{horizon} 0.5 x'Q_k x + q_k'x + 0.5 u'R_k u.

    ``Q``, ``q`` and ``R`` are either one matrix/vector for every step or a
    list of ``horizon + 1`` of them.
    """

    Q: object
    q: object
    R: object
    horizon: int
    x_box: Box | None = None
    u_box: Box | None = None
    ue_box: Box | None = None

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        T = self.horizon + 1
        self.Q = self._expand(self.Q, T, "Q", lambda M, nm: _check_factor(M, nm, False))
        self.R = self._expand(self.R, T, "R", lambda M, nm: _check_factor(M, nm, True))
        self.q = self._expand(self.q, T, "q", lambda v, nm: np.asarray(v, dtype=float).reshape(-1), vec=True)

    @staticmethod
    def _expand(v, T, name, check, vec=False):
        arr = np.asarray(v, dtype=float) if not isinstance(v, list) else None
        if arr is not None and arr.ndim == (1 if vec else 2):
            return [check(arr, name)] * T
        seq = list(v)
        if len(seq) != T:
            raise ShapeError(f"{name} needs {T} entries, got {len(seq)}")
        return [check(s, f"{name}[{k}]") for k, s in enumerate(seq)]

    @classmethod
    def tracking(cls, Q, R, x_target, horizon: int, terminal_weight: float | None = None, **boxes):
        """0.5 (x - x_t)'Q (x - x_t) per step (constant dropped), optional heavier terminal weight."""
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        xt = np.asarray(x_target, dtype=float)
        Qs = [Q] * (horizon + 1)
        if terminal_weight is not None:
            Qs[-1] = terminal_weight * np.eye(Q.shape[0])
        qs = [-Qk @ xt for Qk in Qs]
        return cls(Qs, qs, R, horizon, **boxes)

    def noise_budget_ok(self, sigma_u, lam: float = 10.0) -> bool:
        """Chebyshev sizing: lambda * sigma_u must lie in the u_e budget box."""
        if self.ue_box is None:
            return True
        s = lam * np.asarray(sigma_u, dtype=float)
        return self.ue_box.contains(s) and self.ue_box.contains(-s)


@dataclass
class LqrSolution:
    u: np.ndarray          # (horizon + 1, p); the last input does not affect the cost
    x: np.ndarray          # (horizon + 2, n)
    cost: float
    gains: list
    feedforward: list
    clamped_steps: list = field(default_factory=list)


def riccati_gains(sys: LtiSystem, cost: LqrCost):
    """Backward recursion for V_k(x) = 0.5 x'P_k x + s_k'x; returns (K, k_ff) with u = -K x - k_ff."""
    A, B = sys.A, sys.B
    T = cost.horizon
    P = cost.Q[T]
    s = cost.q[T]
    Ks = [None] * (T + 1)
    ks = [None] * (T + 1)
    Ks[T] = np.zeros((sys.p, sys.n))
    ks[T] = np.zeros(sys.p)
    for k in range(T - 1, -1, -1):
        H = cost.R[k] + B.T @ P @ B
        K = np.linalg.solve(H, B.T @ P @ A)
        kff = np.linalg.solve(H, B.T @ s)
        Acl = A - B @ K
        s = cost.q[k] + Acl.T @ s
        P = cost.Q[k] + A.T @ P @ Acl
        P = 0.5 * (P + P.T)
        Ks[k], ks[k] = K, kff
    return Ks, ks


def lqr_cost_value(cost: LqrCost, x, u) -> float:
    return float(sum(0.5 * x[k] @ cost.Q[k] @ x[k] + cost.q[k] @ x[k] + 0.5 * u[k] @ cost.R[k] @ u[k]
                     for k in range(cost.horizon + 1)))


def solve_lqr(sys: LtiSystem, cost: LqrCost, x0) -> LqrSolution:
    """Riccati feedback, clamped to the input box, checked against the state box."""
    Ks, ks = riccati_gains(sys, cost)
    T = cost.horizon
    x = np.zeros((T + 2, sys.n))
    u = np.zeros((T + 1, sys.p))
    x[0] = np.asarray(x0, dtype=float)
    clamped = []
    for k in range(T + 1):
        uk = -Ks[k] @ x[k] - ks[k]
        if cost.u_box is not None:
            c = cost.u_box.clamp(uk)
            if not np.array_equal(c, uk):
                clamped.append(k)
            uk = c
        u[k] = uk
        if cost.x_box is not None and not cost.x_box.contains(x[k], 1e-12):
            raise InfeasibleError(k, f"x = {x[k].tolist()}")
        x[k + 1] = sys.A @ x[k] + sys.B @ uk
    return LqrSolution(u=u, x=x, cost=lqr_cost_value(cost, x, u), gains=Ks, feedforward=ks,
                       clamped_steps=clamped)


# -- moments and extra cost --------------------------------------------------

@dataclass
class StateMoments:
    mu: np.ndarray
    Sigma_x: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        S = np.atleast_2d(np.asarray(self.Sigma_x, dtype=float))
        if S.shape != (self.mu.size, self.mu.size):
            raise ShapeError(f"Sigma_x must be {self.mu.size}x{self.mu.size}")
        if not np.allclose(S, S.T, atol=1e-9) or (S.size and np.linalg.eigvalsh(0.5 * (S + S.T)).min() < -1e-9):
            raise ValueError("Sigma_x must be symmetric PSD")
        self.Sigma_x = 0.5 * (S + S.T)


def state_noise_cov(sys: LtiSystem, Sigma_u) -> np.ndarray:
    """Lift an input-noise covariance to the state: B Sigma_u B'."""
    return sys.B @ np.atleast_2d(Sigma_u) @ sys.B.T


def propagate_moments(sys: LtiSystem, m0: StateMoments, u, Sigma_theta) -> StateMoments:
    """mu <- A mu + B u, Sigma_x <- A Sigma_x A' + Sigma_theta (state-space noise covariance)."""
    St = np.atleast_2d(np.asarray(Sigma_theta, dtype=float))
    if St.shape != (sys.n, sys.n):
        raise ShapeError(f"Sigma_theta must be {sys.n}x{sys.n}, got {St.shape}")
    u = np.asarray(u, dtype=float)
    if u.shape != (sys.p,):
        raise ShapeError(f"u must have length {sys.p}")
    mu = sys.A @ m0.mu + sys.B @ u
    S = sys.A @ m0.Sigma_x @ sys.A.T + St
    return StateMoments(mu, 0.5 * (S + S.T))


def extra_cost(Sigma_x, Sigma_u_noise, Q, R) -> float:
    """0.5 tr(Sigma_x Q) + 0.5 tr(Sigma_u R)."""
    Sx, Su = np.atleast_2d(Sigma_x), np.atleast_2d(Sigma_u_noise)
    Q, R = np.atleast_2d(Q), np.atleast_2d(R)
    if Sx.shape != Q.shape or Su.shape != R.shape:
        raise ShapeError("covariance and weight shapes differ")
    return 0.5 * float(np.trace(Sx @ Q)) + 0.5 * float(np.trace(Su @ R))


def tradeoff_lqr_objective(sigma_u, w1, w2, R, Q, B1, squared=False) -> float:
    s = np.asarray(sigma_u, dtype=float)
    R = np.atleast_2d(R)
    Q = np.atleast_2d(Q)
    out_var = np.diag(compute_cov_bounds(B1, s * s).upper).sum()
    lin = s * s if squared else s
    return float(-w2 * out_var + 0.5 * w1 * np.sum((np.diag(R) + np.diag(Q)[:s.size]) * lin))


def tradeoff_lqr(w1, w2, R, Q, sigma_u_caps, B1, squared: bool = False) -> np.ndarray:
    """Per-input noise levels balancing extra cost against output variance.

    The objective is separable and concave (or linear in sigma^2 when
    ``squared``) in each coordinate, so every optimum sits at 0 or at the cap.
    Ties go to 0.
    """
    caps = np.asarray(sigma_u_caps, dtype=float).reshape(-1)
    if np.any(caps < 0) or w1 < 0 or w2 < 0:
        raise ValueError("caps and weights must be non-negative")
    B1 = np.atleast_2d(np.asarray(B1, dtype=float))
    col = np.sum(B1 * B1, axis=0)   # output variance per unit input variance
    R, Q = np.atleast_2d(R), np.atleast_2d(Q)
    lin = np.diag(R) + np.diag(Q)[:caps.size]
    out = np.zeros_like(caps)
    for i, c in enumerate(caps):
        at_cap = -w2 * col[i] * c * c + 0.5 * w1 * lin[i] * (c * c if squared else c)
        out[i] = c if at_cap < 0 else 0.0
    return out


# -- cooperative control -----------------------------------------------------

@dataclass
class CoopNetwork:
    adjacency: np.ndarray
    A_sys: np.ndarray
    B: np.ndarray
    K: np.ndarray
    gammas: np.ndarray | None = None
    offsets: np.ndarray | None = None   # (N, k): first k state coordinates of each agent
    pinning: np.ndarray | None = None   # per-agent weight pulling agent i to reference + offset
    reference: np.ndarray | None = None

    def __post_init__(self):
        Ad = np.atleast_2d(np.asarray(self.adjacency, dtype=float))
        N = Ad.shape[0]
        if Ad.shape != (N, N) or not np.all(np.isin(Ad, (0.0, 1.0))):
            raise ValueError("adjacency must be a square 0/1 matrix")
        self.adjacency = Ad
        self.A_sys = np.atleast_2d(np.asarray(self.A_sys, dtype=float))
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        self.K = np.atleast_2d(np.asarray(self.K, dtype=float))
        n = self.A_sys.shape[0]
        if self.B.shape[0] != n or self.K.shape != (self.B.shape[1], n):
            raise ShapeError("A_sys, B and K do not line up")
        d = self.degrees
        self.gammas = 1.0 / (2.0 * (1.0 + d)) if self.gammas is None else np.asarray(self.gammas, dtype=float)
        if self.gammas.shape != (N,) or np.any(self.gammas <= 0):
            raise ValueError("need one positive gain per agent")
        off = np.zeros((N, n))
        if self.offsets is not None:
            o = np.atleast_2d(np.asarray(self.offsets, dtype=float))
            if o.shape[0] != N or o.shape[1] > n:
                raise ShapeError(f"offsets must be (N, <= {n})")
            off[:, :o.shape[1]] = o
        self.offsets = off
        self.pinning = np.zeros(N) if self.pinning is None else np.asarray(self.pinning, dtype=float)
        self.reference = np.zeros(n) if self.reference is None else np.asarray(self.reference, dtype=float)

    @property
    def N(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n(self) -> int:
        return self.A_sys.shape[0]

    @property
    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    @property
    def laplacian(self) -> np.ndarray:
        return np.diag(self.degrees) - self.adjacency

    def target(self) -> np.ndarray:
        """Stacked formation target: offsets around the pinned reference."""
        return (self.offsets + self.reference).reshape(-1)


@dataclass
class Divergent:
    radius: float


@dataclass
class CollectiveSystem:
    A_c: np.ndarray
    Lambda: np.ndarray
    radius: float
    Sigma_c_star: object = None   # ndarray or Divergent


def collective_matrix(net: CoopNetwork) -> np.ndarray:
    """(I_N (x) A_sys) - Gamma ((L + diag(pinning)) (x) B K)."""
    Lg = net.laplacian + np.diag(net.pinning)
    G = np.kron(np.diag(net.gammas), np.eye(net.n))
    return np.kron(np.eye(net.N), net.A_sys) - G @ np.kron(Lg, net.B @ net.K)


def spectral_radius(M) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(M)))) if np.size(M) else 0.0


def solve_discrete_lyapunov(A_c, Lambda, margin: float = 1e-9):
    """Sigma = A Sigma A' + Lambda via the vectorised linear system, or ``Divergent``."""
    A = np.atleast_2d(np.asarray(A_c, dtype=float))
    Lam = np.atleast_2d(np.asarray(Lambda, dtype=float))
    if Lam.size and np.linalg.eigvalsh(0.5 * (Lam + Lam.T)).min() < -1e-12:
        raise ValueError("Lambda must be PSD")
    rho = spectral_radius(A)
    if rho >= 1.0 - margin:
        return Divergent(rho)
    n = A.shape[0]
    M = np.eye(n * n) - np.kron(A, A)
    S = np.linalg.solve(M, Lam.reshape(-1)).reshape(n, n)
    S = 0.5 * (S + S.T)
    res = np.linalg.norm(S - A @ S @ A.T - Lam)
    if res > 1e-10 * (1.0 + np.linalg.norm(Lam)):
        raise ArithmeticError(f"Lyapunov residual {res:.3g} too large")
    return S


def lyapunov_residual(A_c, Sigma, Lambda) -> float:
    return float(np.linalg.norm(Sigma - A_c @ Sigma @ A_c.T - Lambda))


def build_collective(net: CoopNetwork, agent_covs=None) -> CollectiveSystem:
    """Assemble A_c and, when per-agent state noise covariances are given, Sigma_c*."""
    A_c = collective_matrix(net)
    rho = spectral_radius(A_c)
    if agent_covs is None:
        Lam = np.zeros((net.N * net.n,) * 2)
    else:
        covs = [np.atleast_2d(np.asarray(c, dtype=float)) for c in agent_covs]
        if len(covs) != net.N or any(c.shape != (net.n, net.n) for c in covs):
            raise ShapeError(f"need {net.N} covariances of shape {net.n}x{net.n}")
        Lam = block_diag(*covs)
    S = solve_discrete_lyapunov(A_c, Lam)
    return CollectiveSystem(A_c=A_c, Lambda=Lam, radius=rho, Sigma_c_star=S)


def coop_degradation(Sigma_c_star, Q):
    """0.5 tr(Sigma_c* Q); a ``Divergent`` input is passed through."""
    if isinstance(Sigma_c_star, Divergent):
        return Sigma_c_star
    return 0.5 * float(np.trace(np.asarray(Sigma_c_star) @ np.atleast_2d(Q)))


def consensus_input(net: CoopNetwork, i: int, states) -> np.ndarray:
    """u_i = gamma_i K [sum_j a_ij ((x_j - D_j) - (x_i - D_i)) + g_i (ref - (x_i - D_i))]."""
    X = np.atleast_2d(np.asarray(states, dtype=float)) - net.offsets
    e = net.adjacency[i] @ (X - X[i]) + net.pinning[i] * (net.reference - X[i])
    return net.gammas[i] * (net.K @ e)


def consensus_step(net: CoopNetwork, states, theta=None) -> np.ndarray:
    """Advance every agent one synchronous step; ``theta`` is (N, n) state noise."""
    X = np.atleast_2d(np.asarray(states, dtype=float))
    U = np.stack([consensus_input(net, i, X) for i in range(net.N)])
    nxt = X @ net.A_sys.T + U @ net.B.T
    return nxt if theta is None else nxt + theta


def formation_cost(net: CoopNetwork, states, Q=None) -> float:
    """0.5 e'Q e with e the stacked deviation from the formation target."""
    e = np.asarray(states, dtype=float).reshape(-1) - net.target()
    Q = np.eye(e.size) if Q is None else np.atleast_2d(Q)
    return 0.5 * float(e @ Q @ e)


def _coop_coeffs(net, R, Q):
    A_c = collective_matrix(net)
    P = solve_discrete_lyapunov(A_c.T, np.atleast_2d(Q))   # adjoint: tr(Sigma* Q) = tr(Lambda P)
    if isinstance(P, Divergent):
        raise DivergentError(P.radius)
    n, p = net.n, net.B.shape[1]
    G = np.zeros((net.N, p))
    for j in range(net.N):
        Pj = P[j * n:(j + 1) * n, j * n:(j + 1) * n]
        G[j] = np.einsum("il,ij,jl->l", net.B, Pj, net.B)
    return G, np.diag(np.atleast_2d(R))


def tradeoff_coop_objective(sigma, w1, w2, w3, net: CoopNetwork, R, Q) -> float:
    """(w1/2) tr(Sigma_c* Q) + (w2/2) sum_j tr(Sigma_u^j R) - w3 sum sigma, evaluated directly."""
    s = np.atleast_2d(np.asarray(sigma, dtype=float))
    covs = [net.B @ np.diag(sj * sj) @ net.B.T for sj in s]
    col = build_collective(net, covs)
    if isinstance(col.Sigma_c_star, Divergent):
        raise DivergentError(col.radius)
    R = np.atleast_2d(R)
    return float(0.5 * w1 * np.trace(col.Sigma_c_star @ np.atleast_2d(Q))
                 + 0.5 * w2 * sum(np.trace(np.diag(sj * sj) @ R) for sj in s) - w3 * s.sum())


def tradeoff_coop(w1, w2, w3, net: CoopNetwork, R, Q, caps, tol: float = 1e-10, max_sweeps: int = 100):
    """Coordinate descent over per-agent input noise levels (N, p).

    Each coordinate's restriction is ``a s^2 - w3 s + const`` with ``a`` from the
    adjoint Lyapunov solution, so the 1-D minimiser over ``[0, cap]`` is the
    better of both endpoints and the clipped stationary point.
    """
    caps = np.atleast_2d(np.asarray(caps, dtype=float))
    if caps.shape != (net.N, net.B.shape[1]):
        raise ShapeError(f"caps must be {net.N}x{net.B.shape[1]}")
    if np.any(caps < 0) or min(w1, w2, w3) < 0:
        raise ValueError("caps and weights must be non-negative")
    G, rdiag = _coop_coeffs(net, R, Q)
    a = 0.5 * w1 * G + 0.5 * w2 * rdiag[None, :]
    s = np.zeros_like(caps)

    def f1(j, l, v):
        return a[j, l] * v * v - w3 * v

    total = float(np.sum(a * s * s) - w3 * s.sum())
    for _ in range(max_sweeps):
        for j in range(net.N):
            for l in range(caps.shape[1]):
                cands = [0.0, caps[j, l]]
                if a[j, l] > 0:
                    cands.append(min(max(w3 / (2 * a[j, l]), 0.0), caps[j, l]))
                vals = [f1(j, l, v) for v in cands]
                s[j, l] = cands[int(np.argmin(vals))]
        new = float(np.sum(a * s * s) - w3 * s.sum())
        if total - new < tol:
            break
        total = new
    return s


# -- presets -------------------------------------------------------------------

FORMATION_ADJACENCY = np.array([[0, 0, 0, 0, 1],
                                [1, 0, 1, 0, 1],
                                [0, 1, 0, 1, 0],
                                [0, 0, 0, 0, 1],
                                [0, 0, 0, 0, 0]], dtype=float)
FORMATION_OFFSETS = np.array([[-2.0, 2.0], [-4.0, 0.0], [-3.0, -1.5], [-1.0, -1.5], [0.0, 0.0]])
FORMATION_START = np.array([[2.0, 1.0], [-5.0, 3.0], [-4.0, -3.0], [1.0, -3.0], [0.0, 0.0]])


def formation_preset(pin_root: bool = True) -> CoopNetwork:
    """Five planar single-integrator agents; agent 5 listens to nobody.

    Pinning agent 5 to its own start makes the collective matrix Schur
    without changing the noiseless trajectory.
    """
    pin = np.array([0, 0, 0, 0, 1.0]) if pin_root else None
    return CoopNetwork(adjacency=FORMATION_ADJACENCY, A_sys=np.eye(2), B=np.eye(2), K=np.eye(2),
                       offsets=FORMATION_OFFSETS, pinning=pin, reference=FORMATION_START[4])
