"""Dense two-phase primal simplex.

Problems are given in the general form

    min  c^T v
    s.t. A_eq v  = b_eq
         A_ub v <= b_ub
         lb <= v <= ub          (entries of lb / ub may be -inf / +inf)

and are converted to standard form ``A z = b, z >= 0`` before solving.
Rows and columns are equilibrated first; all tolerances refer to the
scaled problem.  Pivoting follows Bland's rule, so runs are deterministic
and cannot cycle.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class LpStatus(enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    ITER_LIMIT = "IterLimit"


class LpFormatError(ValueError):
    pass


def _mat(M, ncols: int) -> np.ndarray:
    if M is None:
        return np.zeros((0, ncols))
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return np.zeros((0, ncols))
    return M


def _vec(v, n: int) -> np.ndarray:
    if v is None:
        return np.zeros(0)
    return np.asarray(v, dtype=float).reshape(-1)


@dataclass
class LinearProgram:
    c: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).reshape(-1)
        n = self.c.size
        self.A_eq = _mat(self.A_eq, n)
        self.A_ub = _mat(self.A_ub, n)
        self.b_eq = _vec(self.b_eq, n)
        self.b_ub = _vec(self.b_ub, n)
        self.lb = np.zeros(n) if self.lb is None else np.asarray(self.lb, dtype=float).reshape(-1).copy()
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float).reshape(-1).copy()
        if self.A_eq.shape != (self.b_eq.size, n):
            raise LpFormatError(f"A_eq shape {self.A_eq.shape} inconsistent with b_eq ({self.b_eq.size}) / c ({n})")
        if self.A_ub.shape != (self.b_ub.size, n):
            raise LpFormatError(f"A_ub shape {self.A_ub.shape} inconsistent with b_ub ({self.b_ub.size}) / c ({n})")
        if self.lb.size != n or self.ub.size != n:
            raise LpFormatError("bounds must have one entry per variable")
        for name in ("c", "A_eq", "A_ub"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise LpFormatError(f"{name} has non-finite entries")
        if np.any(np.isnan(self.b_eq)) or np.any(np.isnan(self.b_ub)):
            raise LpFormatError("right-hand sides contain NaN")
        if np.any(self.lb == np.inf) or np.any(self.ub == -np.inf):
            raise LpFormatError("lb = +inf or ub = -inf is not a valid bound")

    @property
    def n_vars(self) -> int:
        return self.c.size

    @property
    def n_rows(self) -> int:
        return self.b_eq.size + self.b_ub.size


@dataclass
class LpSolution:
    v: np.ndarray | None
    objective: float
    status: LpStatus
    iterations: int = 0
    primal_residual: float = float("nan")
    cs_residual: float = float("nan")
    dual_residual: float = float("nan")
    # standard-form Farkas vector y (A^T y <= 0, b^T y > 0) when infeasible
    farkas: np.ndarray | None = None
    farkas_residual: float = float("nan")
    # improving direction in the original variables when unbounded
    ray: np.ndarray | None = None
    message: str = ""


@dataclass
class _StandardForm:
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    T: np.ndarray   # v = v0 + T z[:n_struct]
    v0: np.ndarray
    n_struct: int


def _to_standard_form(lp: LinearProgram) -> _StandardForm:
    n = lp.n_vars
    cols = []         # columns of T (one per structural z variable)
    v0 = np.zeros(n)
    bound_rows = []   # (z index, width)
    for j in range(n):
        lo, hi = lp.lb[j], lp.ub[j]
        e = np.zeros(n)
        e[j] = 1.0
        if np.isfinite(lo):
            v0[j] = lo
            cols.append(e)
            if np.isfinite(hi):
                # hi < lo gives a negative width, which phase 1 reports as infeasible
                bound_rows.append((len(cols) - 1, hi - lo))
        elif np.isfinite(hi):
            v0[j] = hi
            cols.append(-e)
        else:
            cols.append(e)
            cols.append(-e)
    T = np.array(cols).T if cols else np.zeros((n, 0))
    nz = T.shape[1]

    Aeq = lp.A_eq @ T
    beq = lp.b_eq - lp.A_eq @ v0
    Aub = lp.A_ub @ T
    bub = lp.b_ub - lp.A_ub @ v0
    Abd = np.zeros((len(bound_rows), nz))
    bbd = np.zeros(len(bound_rows))
    for i, (zj, width) in enumerate(bound_rows):
        Abd[i, zj] = 1.0
        bbd[i] = width
    n_slack = Aub.shape[0] + Abd.shape[0]
    A = np.zeros((Aeq.shape[0] + n_slack, nz + n_slack))
    A[:Aeq.shape[0], :nz] = Aeq
    A[Aeq.shape[0]:Aeq.shape[0] + Aub.shape[0], :nz] = Aub
    A[Aeq.shape[0] + Aub.shape[0]:, :nz] = Abd
    A[Aeq.shape[0]:, nz:] = np.eye(n_slack)
    b = np.concatenate([beq, bub, bbd])
    c = np.concatenate([T.T @ lp.c, np.zeros(n_slack)])
    return _StandardForm(A=A, b=b, c=c, T=T, v0=v0, n_struct=nz)


def _equilibrate(A: np.ndarray, passes: int = 4):
    """Alternate row/column max-norm scaling; returns (row_scale, col_scale)."""
    M, N = A.shape
    r = np.ones(M)
    s = np.ones(N)
    W = np.abs(A)
    for _ in range(passes):
        rm = (W * s).max(axis=1, initial=0.0) * r
        rfac = np.where(rm > 0, 1.0 / np.where(rm > 0, rm, 1.0), 1.0)
        r *= rfac
        cm = (W * r[:, None]).max(axis=0, initial=0.0) * s
        cfac = np.where(cm > 0, 1.0 / np.where(cm > 0, cm, 1.0), 1.0)
        s *= cfac
    return r, s


class _Tableau:
    """Constraint rows ``[A | b]`` plus a reduced-cost row ``[d | -z]``."""

    def __init__(self, A, b, basis):
        M, N = A.shape
        self.T = np.zeros((M + 1, N + 1))
        self.T[:M, :N] = A
        self.T[:M, N] = b
        self.basis = list(basis)
        self.iterations = 0

    @property
    def M(self):
        return self.T.shape[0] - 1

    def set_costs(self, cost):
        N = self.T.shape[1] - 1
        row = np.zeros(N + 1)
        row[:N] = cost
        for r, j in enumerate(self.basis):
            if cost[j] != 0.0:
                row -= cost[j] * self.T[r]
        self.T[-1] = row

    def pivot(self, r, j):
        T = self.T
        prow = T[r] / T[r, j]
        T -= np.outer(T[:, j], prow)
        T[r] = prow
        self.basis[r] = j
        self.iterations += 1

    def run(self, allowed: np.ndarray, tol: float, max_pivots: int):
        """Bland's rule; returns 'optimal', 'unbounded' (with column) or 'limit'."""
        T = self.T
        while True:
            d = T[-1, :-1]
            cand = np.flatnonzero((d < -tol) & allowed)
            if cand.size == 0:
                return "optimal", None
            if self.iterations >= max_pivots:
                return "limit", None
            j = int(cand[0])
            col = T[:-1, j]
            pos = np.flatnonzero(col > tol)
            if pos.size == 0:
                return "unbounded", j
            ratios = np.maximum(T[pos, -1], 0.0) / col[pos]
            best = ratios.min()
            ties = pos[ratios <= best + tol * max(1.0, abs(best))]
            r = int(min(ties, key=lambda i: self.basis[i]))
            self.pivot(r, j)


def solve_lp(lp: LinearProgram, max_iters: int | None = None, tol: float = 1e-9) -> LpSolution:
    """Solve ``lp``; see the module docstring for the accepted form."""
    sf = _to_standard_form(lp)
    A, b, c = sf.A, sf.b, sf.c
    M, N = A.shape
    if max_iters is None:
        max_iters = 50 * (M + N)

    rs, cs = _equilibrate(A)
    As = A * rs[:, None] * cs[None, :]
    bs = b * rs
    cscale = np.abs(c * cs).max(initial=0.0)
    cscale = 1.0 if cscale == 0 else cscale
    ccs = c * cs / cscale
    flip = np.where(bs < 0, -1.0, 1.0)
    As = As * flip[:, None]
    bs = bs * flip

    # initial basis: unit columns where available, artificials elsewhere
    basis = [-1] * M
    for j in range(N):
        col = As[:, j]
        nz = np.flatnonzero(col != 0)
        if nz.size == 1 and col[nz[0]] > 0 and basis[nz[0]] == -1:
            r = nz[0]
            basis[r] = j
    art_rows = [r for r in range(M) if basis[r] == -1]
    n_art = len(art_rows)
    Afull = np.zeros((M, N + n_art))
    Afull[:, :N] = As
    for k, r in enumerate(art_rows):
        Afull[r, N + k] = 1.0
        basis[r] = N + k
    nf = np.ones(M)
    for r in range(M):
        j = basis[r]
        if j < N:
            # scale rows so the starting basis is the identity
            nf[r] = 1.0 / As[r, j]
    Afull[:, :N] *= nf[:, None]
    bfull = bs * nf

    tab = _Tableau(Afull, bfull, basis)
    phase1_cost = np.zeros(N + n_art)
    phase1_cost[N:] = 1.0
    allowed = np.ones(N + n_art, dtype=bool)
    keep = list(range(M))
    if n_art:
        tab.set_costs(phase1_cost)
        status, _ = tab.run(allowed, tol, max_iters)
        if status == "limit":
            return LpSolution(None, float("nan"), LpStatus.ITER_LIMIT, tab.iterations,
                              message="iteration limit in phase 1")
        infeas = -tab.T[-1, -1]
        feas_tol = 1e-9 * max(1.0, np.abs(bfull).max(initial=0.0))
        if infeas > feas_tol:
            y = _basis_duals(Afull, tab.basis, phase1_cost)
            # y certifies Afull z = bfull infeasible; map back to A z = b
            y_std = y * nf * flip * rs
            norm = float(b @ y_std)
            resid = max(0.0, float((A.T @ y_std).max(initial=0.0)))
            return LpSolution(None, float("nan"), LpStatus.INFEASIBLE, tab.iterations,
                              farkas=y_std, farkas_residual=resid / max(abs(norm), 1e-300),
                              message=f"phase-1 infeasibility {infeas:.3e}")
        redundant = []
        for r in range(tab.M):
            if tab.basis[r] >= N:
                row = tab.T[r, :N]
                cand = np.flatnonzero(np.abs(row) > 1e-7)
                if cand.size:
                    tab.pivot(r, int(cand[np.argmax(np.abs(row[cand]))]))
                else:
                    redundant.append(r)
        keep = [r for r in range(M) if r not in redundant]
        tab.T = tab.T[keep + [tab.M]]
        tab.basis = [tab.basis[r] for r in keep]
        tab.T = np.delete(tab.T, np.s_[N:N + n_art], axis=1)
    As_k = As[keep]
    bs_k = bs[keep]

    tab.set_costs(ccs)
    allowed = np.ones(N, dtype=bool)
    status, j_enter = tab.run(allowed, tol, max_iters)
    if status == "limit":
        return LpSolution(None, float("nan"), LpStatus.ITER_LIMIT, tab.iterations,
                          message="iteration limit in phase 2")
    if status == "unbounded":
        d = np.zeros(N)
        d[j_enter] = 1.0
        for r, jb in enumerate(tab.basis):
            d[jb] = -tab.T[r, j_enter]
        dz = (d * cs)[:sf.n_struct]
        ray = sf.T @ dz
        return LpSolution(None, -np.inf, LpStatus.UNBOUNDED, tab.iterations, ray=ray,
                          message="improving ray found")

    # recompute the vertex from the final basis for accuracy
    B = As_k[:, tab.basis]
    zs = np.zeros(N)
    if len(tab.basis):
        xb = np.linalg.solve(B, bs_k) if B.shape[0] == B.shape[1] else np.linalg.lstsq(B, bs_k, rcond=None)[0]
        zs[tab.basis] = np.maximum(xb, 0.0)
        y = np.linalg.solve(B.T, ccs[tab.basis])
    else:
        y = np.zeros(0)
    dred = ccs - As_k.T @ y
    scale_b = max(1.0, np.abs(bs_k).max(initial=0.0))
    primal_res = float(np.abs(As_k @ zs - bs_k).max(initial=0.0)) / scale_b
    cs_res = float(np.abs(zs * dred).max(initial=0.0))
    dual_res = float(max(0.0, -dred.min(initial=0.0)))

    z = zs * cs
    v = sf.v0 + sf.T @ z[:sf.n_struct]
    return LpSolution(v=v, objective=float(lp.c @ v), status=LpStatus.OPTIMAL,
                      iterations=tab.iterations, primal_residual=primal_res,
                      cs_residual=cs_res, dual_residual=dual_res)


def _basis_duals(A, basis, cost):
    B = A[:, basis]
    return np.linalg.solve(B.T, cost[basis])


# -- plain-text dump ---------------------------------------------------------

_SECTIONS = ("c", "A_eq", "b_eq", "A_ub", "b_ub", "lb", "ub")


def dump_lp(lp: LinearProgram, path) -> None:
    """Write one whitespace-delimited section per matrix/vector."""
    lines = [f"# LP n_vars={lp.n_vars} n_eq={lp.b_eq.size} n_ub={lp.b_ub.size}"]
    for name in _SECTIONS:
        val = getattr(lp, name)
        lines.append(f"[{name}]")
        if val.ndim == 1:
            if val.size:
                lines.append(" ".join(repr(float(x)) for x in val))
        else:
            for row in val:
                lines.append(" ".join(repr(float(x)) for x in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_lp(path) -> LinearProgram:
    data: dict[str, list[list[float]]] = {}
    cur = None
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            cur = line[1:-1]
            if cur not in _SECTIONS:
                raise LpFormatError(f"unknown section {cur!r}")
            data[cur] = []
            continue
        if cur is None:
            raise LpFormatError("data before first section header")
        data[cur].append([float(tok) for tok in line.split()])
    c = np.array(data["c"][0]) if data.get("c") else np.zeros(0)
    n = c.size

    def vec(name):
        rows = data.get(name) or []
        return np.array(rows[0]) if rows else np.zeros(0)

    def mat(name):
        rows = data.get(name) or []
        return np.array(rows) if rows else np.zeros((0, n))

    return LinearProgram(c=c, A_eq=mat("A_eq"), b_eq=vec("b_eq"), A_ub=mat("A_ub"),
                         b_ub=vec("b_ub"), lb=vec("lb"), ub=vec("ub"))
