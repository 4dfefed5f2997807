"""One-step output-prediction attacker and Monte Carlo unpredictability metrics."""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, stats

from .lti import LtiSystem, one_step_error
from .noise import NoiseSource, compute_extra_input, make_rng, sample_theta_raw


class AttackerMode(str, enum.Enum):
    EXACT = "exact"      # posterior estimate equals the true state
    KALMAN = "kalman"    # unbiased random estimate error


class EstimatorError(ArithmeticError):
    pass


def _check_psd(M, name, tol=1e-9):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1] or not np.allclose(M, M.T, atol=1e-12, rtol=0):
        raise ValueError(f"{name} must be symmetric")
    if M.size and np.linalg.eigvalsh(M).min() < -tol:
        raise ValueError(f"{name} must be positive semidefinite")
    return M


@dataclass(frozen=True)
class KalmanConfig:
    Q_proc: np.ndarray
    R_meas: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "Q_proc", _check_psd(self.Q_proc, "Q_proc"))
        object.__setattr__(self, "R_meas", _check_psd(self.R_meas, "R_meas"))

    @classmethod
    def default(cls, sys: LtiSystem, meas_var: float = 0.01, proc_var: float = 0.0):
        return cls(Q_proc=proc_var * np.eye(sys.n), R_meas=meas_var * np.eye(sys.m))


@dataclass
class AttackerState:
    x_hat: np.ndarray
    P: np.ndarray
    mode: AttackerMode = AttackerMode.KALMAN

    def __post_init__(self):
        self.x_hat = np.asarray(self.x_hat, dtype=float)
        self.P = np.atleast_2d(np.asarray(self.P, dtype=float))
        if self.P.shape != (self.x_hat.size, self.x_hat.size):
            raise ValueError(f"P must be {self.x_hat.size}x{self.x_hat.size}")
        if self.mode is AttackerMode.KALMAN:
            self.P = 0.5 * (self.P + self.P.T)
            if np.linalg.eigvalsh(self.P).min() < -1e-9:
                raise EstimatorError("estimate covariance lost positive semidefiniteness")


def initial_attacker_state(sys: LtiSystem, y0, mode: AttackerMode | str = AttackerMode.KALMAN,
                           P0=None) -> AttackerState:
    """Lift the first measurement through pinv(C) (unmeasured states start at zero), P(0) = I."""
    mode = AttackerMode(mode)
    x0 = np.linalg.pinv(sys.C) @ np.asarray(y0, dtype=float)
    P0 = np.eye(sys.n) if P0 is None else P0
    return AttackerState(x_hat=x0, P=np.asarray(P0, dtype=float), mode=mode)


def attacker_step(att: AttackerState, sys: LtiSystem, cfg: KalmanConfig | None = None, y_meas=None,
                  u_hat=None, x_true=None) -> AttackerState:
    """Advance the attacker's estimate by one sample.

    Exact mode copies ``x_true``.  Kalman mode predicts with ``A`` and
    ``B u_hat`` and then updates with ``y_meas``.
    """
    if att.mode is AttackerMode.EXACT:
        if x_true is None:
            raise ValueError("exact-state attacker needs the true state")
        return AttackerState(np.array(x_true, dtype=float), np.zeros((sys.n, sys.n)), AttackerMode.EXACT)
    if cfg is None or y_meas is None:
        raise ValueError("Kalman attacker needs a config and a measurement")
    u_hat = np.zeros(sys.p) if u_hat is None else np.asarray(u_hat, dtype=float)
    A, B, C = sys.A, sys.B, sys.C
    x_pred = A @ att.x_hat + B @ u_hat
    P_pred = A @ att.P @ A.T + cfg.Q_proc
    S = C @ P_pred @ C.T + cfg.R_meas
    cond = np.linalg.cond(S)
    if not np.isfinite(cond) or cond > 1e12:
        raise EstimatorError(f"innovation covariance is singular (condition number {cond:.3g})")
    K = np.linalg.solve(S, C @ P_pred).T
    x_new = x_pred + K @ (np.asarray(y_meas, dtype=float) - C @ x_pred)
    IKC = np.eye(sys.n) - K @ C
    # Joseph form keeps P symmetric PSD under round-off
    P_new = IKC @ P_pred @ IKC.T + K @ cfg.R_meas @ K.T
    return AttackerState(x_new, P_new, AttackerMode.KALMAN)


def optimal_input_prediction(mode, u_true) -> np.ndarray:
    """The defender's worst case: the attacker predicts the nominal input exactly."""
    return np.array(u_true, dtype=float, copy=True)


# -- metrics -----------------------------------------------------------------

@dataclass(frozen=True)
class AttackerSpec:
    """How the attacker's one-step prediction is formed in Monte Carlo episodes.

    ``estimate_cov`` is the covariance of ``x - x_hat`` (zero for the exact
    attacker).  ``u_hat_rule`` is ``"nominal"`` (u_hat = u) or ``"zero"``;
    ``u_hat_offset`` is added on top, for worst-case sweeps.
    """

    mode: AttackerMode = AttackerMode.EXACT
    estimate_cov: np.ndarray | None = None
    u_hat_rule: str = "nominal"
    u_hat_offset: np.ndarray | None = None

    def __post_init__(self):
        if self.u_hat_rule not in ("nominal", "zero"):
            raise ValueError(f"u_hat_rule must be 'nominal' or 'zero', got {self.u_hat_rule!r}")
        if self.estimate_cov is not None:
            object.__setattr__(self, "estimate_cov", _check_psd(self.estimate_cov, "estimate_cov"))


@dataclass
class UnpredictabilityMetrics:
    variance_metric: float
    conf_prob: dict
    sample_count: int
    std_err: dict = field(default_factory=dict)   # "variance" and each alpha


def _shard(sys, src, att, alphas, x, u, seed, stream, shard, n):
    rng = make_rng(seed, *stream, shard)
    raw = sample_theta_raw(src, rng, n)
    u_e = compute_extra_input(sys.B1, raw, src.reduction)
    xs = np.broadcast_to(x, (n, sys.n))
    if att.mode is AttackerMode.KALMAN and att.estimate_cov is not None:
        w, V = np.linalg.eigh(att.estimate_cov)
        eps = rng.standard_normal((n, sys.n)) @ (V * np.sqrt(np.clip(w, 0, None))).T
        x_hat = xs - eps
    else:
        x_hat = xs
    u_hat = np.broadcast_to(u if att.u_hat_rule == "nominal" else np.zeros(sys.p), (n, sys.p))
    if att.u_hat_offset is not None:
        u_hat = u_hat + np.asarray(att.u_hat_offset, dtype=float)
    rec = one_step_error(sys, xs, x_hat, np.broadcast_to(u, (n, sys.p)), u_hat, u_e)
    S = np.einsum("ij,ij->i", rec.eps_y, rec.eps_y)
    counts = [int(np.count_nonzero(S <= a * a)) for a in alphas]
    return math.fsum(S), math.fsum(S * S), counts


def estimate_metrics(sys: LtiSystem, source: NoiseSource, attacker: AttackerSpec, alphas, n_samples: int,
                     seed: int, x=None, u=None, shard_size: int = 1 << 17,
                     workers: int = 1, stream: tuple = ()) -> UnpredictabilityMetrics:
    """Monte Carlo estimate of E||eps_y||^2 and P(||eps_y||^2 <= alpha^2).

    Episodes are split into shards with independent streams keyed by
    ``(seed, *stream, shard)``, so the result does not depend on ``workers``.
    """
    alphas = [float(a) for a in alphas]
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    if not alphas or any(a <= 0 for a in alphas) or alphas != sorted(alphas):
        raise ValueError("alphas must be non-empty, positive and ascending")
    x = np.zeros(sys.n) if x is None else np.asarray(x, dtype=float)
    u = np.zeros(sys.p) if u is None else np.asarray(u, dtype=float)
    sizes = [shard_size] * (n_samples // shard_size)
    if n_samples % shard_size:
        sizes.append(n_samples % shard_size)
    jobs = [(sys, source, attacker, alphas, x, u, seed, tuple(stream), k, n) for k, n in enumerate(sizes)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(lambda a: _shard(*a), jobs))
    else:
        parts = [_shard(*a) for a in jobs]
    N = n_samples
    s1 = math.fsum(p[0] for p in parts)
    s2 = math.fsum(p[1] for p in parts)
    mean = s1 / N
    var = max(s2 / N - mean * mean, 0.0)
    se = {"variance": math.sqrt(var / N)}
    conf = {}
    for j, a in enumerate(alphas):
        c = sum(p[2][j] for p in parts) / N
        conf[a] = c
        se[a] = math.sqrt(c * (1 - c) / N)
    return UnpredictabilityMetrics(variance_metric=mean, conf_prob=conf, sample_count=N, std_err=se)


# -- closed-form oracles -------------------------------------------------------

def conf_prob_gaussian_isotropic(sigma2: float, alpha: float, m: int) -> float:
    """P(||z||^2 <= alpha^2) for z ~ N(0, sigma2 I_m)."""
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    return float(stats.chi2.cdf(alpha * alpha / sigma2, df=m))


def _disk_rect_area(alpha: float, h1: float, h2: float) -> float:
    """Area of {x^2 + y^2 <= alpha^2} within [0, h1] x [0, h2] (first quadrant)."""
    if alpha <= 0:
        return 0.0

    def F(x):  # integral of sqrt(alpha^2 - t^2) from 0 to x
        x = min(x, alpha)
        return 0.5 * (x * math.sqrt(max(alpha * alpha - x * x, 0.0)) + alpha * alpha * math.asin(x / alpha))

    # y-extent is min(h2, sqrt(alpha^2 - x^2)); switch point where the circle meets y = h2
    xs = math.sqrt(max(alpha * alpha - h2 * h2, 0.0))
    x_end = min(h1, alpha)
    x_sw = min(xs, x_end)
    return h2 * x_sw + (F(x_end) - F(x_sw))


def conf_prob_uniform_box(sigmas, alpha: float) -> float:
    """P(||z|| <= alpha) for z uniform on the box prod [-sqrt(3) s_i, sqrt(3) s_i]."""
    h = math.sqrt(3.0) * np.asarray(sigmas, dtype=float).reshape(-1)
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if np.any(h <= 0):
        raise ValueError("all sigmas must be positive")
    if alpha * alpha >= float(np.sum(h * h)):
        return 1.0
    m = h.size
    if m == 1:
        return min(alpha, h[0]) / h[0]
    if m == 2:
        return _disk_rect_area(alpha, h[0], h[1]) / (h[0] * h[1])

    # fraction of the positive orthant box inside the ball, integrating out the
    # last two axes exactly and the rest numerically
    def inner(rad2, depth):
        if rad2 <= 0:
            return 0.0
        if depth == m - 2:
            return _disk_rect_area(math.sqrt(rad2), h[-2], h[-1]) / (h[-2] * h[-1])
        top = min(h[depth], math.sqrt(rad2))
        val, _ = integrate.quad(lambda t: inner(rad2 - t * t, depth + 1), 0.0, top,
                                epsrel=1e-10, epsabs=1e-13, limit=200)
        return val / h[depth]

    return float(inner(alpha * alpha, 0))
