"""Discrete LTI plant with an additive unpredictable input.

All vector arguments may be a single vector or a stack of row vectors
(shape ``(N, dim)``); results keep the same leading shape, which lets the
Monte Carlo code push a million episodes through one call.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    """Raised when matrix or vector dimensions do not line up."""


def _as_matrix(M, name: str) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2:
        raise ShapeError(f"{name} must be a matrix, got shape {M.shape}")
    return M


def _check_vec(v, length: int, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim == 0 or v.ndim > 2 or v.shape[-1] != length:
        raise ShapeError(f"{name} must have trailing length {length}, got shape {v.shape}")
    return v


@dataclass(frozen=True)
class LtiSystem:
    """x(k+1) = A x(k) + B u(k),  y(k) = C x(k)."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        B = _as_matrix(self.B, "B")
        C = _as_matrix(self.C, "C")
        n = A.shape[0]
        if A.shape != (n, n):
            raise ShapeError(f"A must be square, got {A.shape}")
        if B.shape[0] != n:
            raise ShapeError(f"B must have {n} rows, got {B.shape}")
        if C.shape[1] != n:
            raise ShapeError(f"C must have {n} columns, got {C.shape}")
        m = C.shape[0]
        if not (n >= m >= 1):
            raise ShapeError(f"need n >= m >= 1, got n={n}, m={m}")
        for name, M in (("A", A), ("B", B), ("C", C)):
            M.setflags(write=False)
            object.__setattr__(self, name, M)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def p(self) -> int:
        return self.B.shape[1]

    @property
    def m(self) -> int:
        return self.C.shape[0]

    @property
    def B1(self) -> np.ndarray:
        """Output-space input map C B; theta = B1 u_e."""
        return self.C @ self.B

    @classmethod
    def double_integrator_2d(cls, Ts: float = 1.0) -> "LtiSystem":
        """Planar second-order integrator: positions observed, accelerations as inputs."""
        A = np.array([[1, 0, Ts, 0],
                      [0, 1, 0, Ts],
                      [0, 0, 1, 0],
                      [0, 0, 0, 1]], dtype=float)
        B = np.array([[0.5 * Ts**2, 0],
                      [0, 0.5 * Ts**2],
                      [Ts, 0],
                      [0, Ts]], dtype=float)
        C = np.array([[1, 0, 0, 0],
                      [0, 1, 0, 0]], dtype=float)
        return cls(A, B, C)


@dataclass
class PlantState:
    x: np.ndarray
    k: int = 0  # logging only; the dynamics are time invariant


@dataclass(frozen=True)
class PredictionRecord:
    y: np.ndarray
    y_hat: np.ndarray
    eps_y: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "eps_y", np.asarray(self.y) - np.asarray(self.y_hat))


def step(sys: LtiSystem, x, u, u_e=None) -> np.ndarray:
    """Advance one step: A x + B (u + u_e)."""
    x = _check_vec(x, sys.n, "x")
    u = _check_vec(u, sys.p, "u")
    if u_e is None:
        u_e = np.zeros(sys.p)
    u_e = _check_vec(u_e, sys.p, "u_e")
    return x @ sys.A.T + (u + u_e) @ sys.B.T


def output(sys: LtiSystem, x) -> np.ndarray:
    x = _check_vec(x, sys.n, "x")
    return x @ sys.C.T


def predict_output(sys: LtiSystem, x_hat, u_hat) -> np.ndarray:
    """Attacker's one-step-ahead output prediction C (A x_hat + B u_hat)."""
    x_hat = _check_vec(x_hat, sys.n, "x_hat")
    u_hat = _check_vec(u_hat, sys.p, "u_hat")
    return (x_hat @ sys.A.T + u_hat @ sys.B.T) @ sys.C.T


def error_decomposition(sys: LtiSystem, dx, du, u_e) -> np.ndarray:
    """C A dx + B1 du + B1 u_e, with dx = x - x_hat and du = u - u_hat."""
    dx = _check_vec(dx, sys.n, "dx")
    du = _check_vec(du, sys.p, "du")
    u_e = _check_vec(u_e, sys.p, "u_e")
    B1 = sys.B1
    return dx @ (sys.C @ sys.A).T + (du + u_e) @ B1.T


def one_step_error(sys: LtiSystem, x, x_hat, u, u_hat, u_e) -> PredictionRecord:
    """Simulate the true next output and subtract the attacker's prediction.

    Agrees with :func:`error_decomposition` up to round-off.
    """
    y = output(sys, step(sys, x, u, u_e))
    return PredictionRecord(y=y, y_hat=predict_output(sys, x_hat, u_hat))
