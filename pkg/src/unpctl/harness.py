"""Experiment runners behind the CLI: comparison table, LQR and formation runs."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .attacker import (AttackerMode, AttackerSpec, KalmanConfig, attacker_step, conf_prob_gaussian_isotropic,
                       conf_prob_uniform_box, estimate_metrics, initial_attacker_state)
from .controllers import (FORMATION_START, Box, CoopNetwork, Divergent, DivergentError, LqrCost, build_collective,
                          consensus_step, coop_degradation, formation_cost, formation_preset, riccati_gains,
                          solve_lqr)
from .distribution import compute_cov_bounds, orthogonal_reduction, solve_optimal_distribution
from .lti import LtiSystem
from .noise import (NoiseSource, SourceKind, baseline_source, compute_extra_input, make_rng,
                    sample_theta_raw, theta_covariance)
from .config import config_hash

log = logging.getLogger("unpctl")

ROW_NAMES = {"optimal": "OptimalPDF", "uniform": "Uniform", "gaussian": "Gaussian", "laplace": "Laplace",
             "none": "NoRandom"}


@dataclass
class Table:
    header: list
    rows: list = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header)
        for r in self.rows:
            w.writerow([_cell(v) for v in r])
        return buf.getvalue()


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def smooth3(S) -> np.ndarray:
    """Centred 3-point mean; the two edge samples are dropped (NaN)."""
    S = np.asarray(S, dtype=float)
    out = np.full_like(S, np.nan)
    if S.size >= 3:
        out[1:-1] = (S[:-2] + S[1:-1] + S[2:]) / 3.0
    return out


def build_system(cfg: dict) -> LtiSystem:
    s = cfg["system"]
    if "preset" in s:
        return LtiSystem.double_integrator_2d(s.get("Ts", 1.0))
    return LtiSystem(np.array(s["A"]), np.array(s["B"]), np.array(s["C"]))


def _grid_kwargs(cfg):
    g = cfg["noise"]["grid"]
    kw = {"n_radial": g.get("n_radial", 26), "tail_factor": g.get("tail_factor", 5.0)}
    if "n_angles" in g:
        kw["n_angles"] = tuple(g["n_angles"])
    if "a" in g:
        kw["a"] = g["a"]
    return kw


def solve_for(cfg, sys, alpha, sigma_u2=None, monotonicity=None):
    n = cfg["noise"]
    s2 = n["sigma_u2"] if sigma_u2 is None else sigma_u2
    return solve_optimal_distribution(sys.B1, s2, alpha, monotonicity=monotonicity or n["monotonicity"],
                                      moments=n["moments"], **_grid_kwargs(cfg))


def attacker_spec(cfg, sys) -> AttackerSpec:
    a = cfg["attacker"]
    mode = AttackerMode(a["mode"])
    cov = a["estimate_var"] * np.eye(sys.n) if mode is AttackerMode.KALMAN and a["estimate_var"] > 0 else None
    return AttackerSpec(mode=mode, estimate_cov=cov, u_hat_rule=a["u_hat"])


# -- compare ---------------------------------------------------------------------

def run_compare(cfg: dict):
    """Distribution comparison table; returns (main table, optimal-row sensitivity table)."""
    sys = build_system(cfg)
    n = cfg["noise"]
    alphas = n["alphas"]
    seed = n["seed"]
    N = cfg["run"]["n_samples"]
    h = config_hash(cfg)
    att = attacker_spec(cfg, sys)
    B1 = sys.B1
    bounds = compute_cov_bounds(B1, n["sigma_u2"])
    _, _, b = orthogonal_reduction(B1)
    diag = np.diag(bounds.upper)
    header = ["source", "E_S", "E_S_se"]
    header += [f"P_{a:g}" for a in alphas] + [f"P_{a:g}_se" for a in alphas]
    header += [f"oracle_P_{a:g}" for a in alphas] + ["seed", "n_samples", "config_hash"]
    table = Table(header)
    for si, kind in enumerate(n["sources"]):
        kind = SourceKind(kind)
        if kind is SourceKind.SOLVED:
            es, es_se2, ps, pse = [], [], [], []
            for ai, a in enumerate(alphas):
                src = NoiseSource.solved(solve_for(cfg, sys, a), n["intra"])
                m = estimate_metrics(sys, src, att, [a], N, seed, stream=(si, ai))
                es.append(m.variance_metric)
                es_se2.append(m.std_err["variance"] ** 2)
                ps.append(m.conf_prob[a])
                pse.append(m.std_err[a])
            E, Ese = float(np.mean(es)), float(np.sqrt(np.sum(es_se2)) / len(es))
        else:
            src = baseline_source(kind, B1, n["sigma_u2"])
            m = estimate_metrics(sys, src, att, alphas, N, seed, stream=(si, 0))
            E, Ese = m.variance_metric, m.std_err["variance"]
            ps = [m.conf_prob[a] for a in alphas]
            pse = [m.std_err[a] for a in alphas]
        oracle = [""] * len(alphas)
        exact = att.mode is AttackerMode.EXACT and b == sys.m
        if exact and kind is SourceKind.GAUSSIAN and np.allclose(diag, diag[0]) and np.allclose(
                bounds.upper, np.diag(diag)):
            oracle = [conf_prob_gaussian_isotropic(diag[0], a, sys.m) for a in alphas]
        elif exact and kind is SourceKind.UNIFORM_BOX and np.all(diag > 0):
            oracle = [conf_prob_uniform_box(np.sqrt(diag), a) for a in alphas]
        elif kind is SourceKind.NONE and att.mode is AttackerMode.EXACT:
            oracle = [1.0] * len(alphas)
        table.rows.append([ROW_NAMES[kind.value], E, Ese, *ps, *pse, *oracle, seed, N, h])

    sens = Table(["monotonicity", "intra", "alpha", "lp_objective", "P", "P_se", "E_S", "E_S_se",
                  "seed", "n_samples", "config_hash"])
    if "optimal" in n["sources"]:
        for mi, mono in enumerate(["literal", "density"]):
            for ai, a in enumerate(alphas):
                dist = solve_for(cfg, sys, a, monotonicity=mono)
                for ii, intra in enumerate(["volume", "reppoint"]):
                    m = estimate_metrics(sys, NoiseSource.solved(dist, intra), att, [a], N, seed,
                                         stream=(100 + mi, ai, ii))
                    sens.rows.append([mono, intra, float(a), dist.objective, m.conf_prob[a], m.std_err[a],
                                      m.variance_metric, m.std_err["variance"], seed, N, h])
    return table, sens


# -- LQR simulation ------------------------------------------------------------

def lqr_cost_from(cfg, sys) -> tuple:
    c = cfg.get("controller") or {"type": "lqr"}
    if c["type"] != "lqr":
        raise ValueError("simulate needs an lqr controller block")
    horizon = c.get("horizon", cfg["run"]["horizon"])
    x0 = np.array(c.get("x0", [0.0] * sys.n), dtype=float)
    target = np.array(c.get("target", [20.0, 20.0, 0.0, 0.0][:sys.n] + [0.0] * max(0, sys.n - 4)), dtype=float)
    Q = np.array(c.get("Q", (0.01 * np.eye(sys.n)).tolist()))
    R = np.array(c.get("R", np.eye(sys.p).tolist()))
    boxes = {}
    if "u_box" in c:
        boxes["u_box"] = Box(*c["u_box"])
    if "x_box" in c:
        boxes["x_box"] = Box(*c["x_box"])
    cost = LqrCost.tracking(Q, R, target, horizon, terminal_weight=c.get("terminal_weight", 1e6), **boxes)
    return cost, x0, target


@dataclass
class SimulationResult:
    clean: np.ndarray
    noisy: list            # per cov scale: (episodes, T+2, n) trajectories
    errors: list           # per cov scale: (episodes, T+1) S(k) = ||eps_y(k+1)||^2
    scales: list
    target: np.ndarray


def run_simulate(cfg: dict) -> SimulationResult:
    sys = build_system(cfg)
    cost, x0, target = lqr_cost_from(cfg, sys)
    n = cfg["noise"]
    a = cfg["attacker"]
    seed = n["seed"]
    kind = SourceKind(n["kind"])
    T = cost.horizon
    episodes = cfg["run"]["episodes"]
    Ks, ks = riccati_gains(sys, cost)
    clean = solve_lqr(sys, cost, x0).x
    kcfg = KalmanConfig(Q_proc=a["filter_proc_var"] * sys.B @ sys.B.T, R_meas=a["filter_meas_var"] * np.eye(sys.m))
    mode = AttackerMode(a["mode"])
    noisy_all, err_all = [], []
    scales = cfg["run"]["cov_scales"]
    for ci, c in enumerate(scales):
        s2 = [c * v for v in n["sigma_u2"]]
        if kind is SourceKind.SOLVED:
            src = NoiseSource.solved(solve_for(cfg, sys, n["alphas"][0], sigma_u2=s2), n["intra"])
        else:
            src = baseline_source(kind, sys.B1, s2)
        X = np.zeros((episodes, T + 2, sys.n))
        S = np.zeros((episodes, T + 1))
        for e in range(episodes):
            rng = make_rng(seed, 7, ci, e)
            ue = compute_extra_input(sys.B1, sample_theta_raw(src, rng, T + 1), src.reduction)
            meas = rng.standard_normal((T + 2, sys.m)) * np.sqrt(a["meas_var"])
            x = x0.copy()
            X[e, 0] = x
            att = initial_attacker_state(sys, sys.C @ x + meas[0], mode)
            if mode is AttackerMode.EXACT:
                att = attacker_step(att, sys, x_true=x)
            for k in range(T + 1):
                u = -Ks[k] @ x - ks[k]
                if cost.u_box is not None:
                    u = cost.u_box.clamp(u)
                u_hat = u if a["u_hat"] == "nominal" else np.zeros(sys.p)
                y_hat = sys.C @ (sys.A @ att.x_hat + sys.B @ u_hat)
                x = sys.A @ x + sys.B @ (u + ue[k])
                y = sys.C @ x
                S[e, k] = float(np.sum((y - y_hat) ** 2))
                if mode is AttackerMode.EXACT:
                    att = attacker_step(att, sys, x_true=x)
                else:
                    att = attacker_step(att, sys, kcfg, y_meas=y + meas[k + 1], u_hat=u_hat)
                X[e, k + 1] = x
        noisy_all.append(X)
        err_all.append(S)
    return SimulationResult(clean=clean, noisy=noisy_all, errors=err_all, scales=scales, target=target)


def simulate_tables(cfg, res: SimulationResult):
    h = config_hash(cfg)
    seed = cfg["noise"]["seed"]
    eps = res.noisy[0].shape[0]
    n = res.clean.shape[1]
    path = Table(["k"] + [f"clean_x{i + 1}" for i in range(n)] + [f"noisy_x{i + 1}" for i in range(n)]
                 + ["seed", "config_hash"])
    last = res.noisy[-1][0]
    for k in range(res.clean.shape[0]):
        path.rows.append([k, *map(float, res.clean[k]), *map(float, last[k]), seed, h])
    err = Table(["k"] + [f"S_scale{c:g}" for c in res.scales] + [f"S_smooth_scale{c:g}" for c in res.scales]
                + ["seed", "episodes", "config_hash"])
    means = [S.mean(axis=0) for S in res.errors]
    sm = [smooth3(m) for m in means]
    for k in range(means[0].size):
        err.rows.append([k, *[float(m[k]) for m in means],
                         *["" if np.isnan(s[k]) else float(s[k]) for s in sm], seed, eps, h])
    summ = Table(["cov_scale", "mean_smoothed_S", "se", "seed", "episodes", "config_hash"])
    for c, S in zip(res.scales, res.errors):
        per_ep = np.nanmean(np.apply_along_axis(smooth3, 1, S), axis=1)
        summ.rows.append([float(c), float(per_ep.mean()), float(per_ep.std(ddof=1) / np.sqrt(eps)) if eps > 1 else 0.0,
                          seed, eps, h])
    return path, err, summ


# -- formation ---------------------------------------------------------------------

def network_from(cfg) -> tuple:
    c = cfg.get("controller") or {"type": "cooperative", "preset": "formation5"}
    if c["type"] != "cooperative":
        raise ValueError("formation needs a cooperative controller block")
    if "weights" in c:
        log.warning("controller.weights is not used by any cost in this tool; ignoring it")
    if "adjacency" in c:
        start = np.array(c["start"], dtype=float)
        net = CoopNetwork(adjacency=np.array(c["adjacency"]), A_sys=np.eye(start.shape[1]), B=np.eye(start.shape[1]),
                          K=np.eye(start.shape[1]), offsets=np.array(c.get("offsets", np.zeros_like(start))),
                          pinning=None, reference=None)
        if c.get("pin_root", True):
            roots = np.flatnonzero(net.degrees == 0)
            net.pinning[roots] = 1.0
            if roots.size:
                net.reference = start[roots[0]] - net.offsets[roots[0]]
        return net, start
    return formation_preset(c.get("pin_root", True)), FORMATION_START.copy()


@dataclass
class FormationResult:
    clean: np.ndarray        # (steps+1, N, n)
    noisy: np.ndarray
    J_clean: np.ndarray
    J_noisy: np.ndarray
    dJ_star: float
    sweep: list              # (scale, tr_sigma, dJ_star, dJ_mc)


def run_formation(cfg: dict, steps: int | None = None) -> FormationResult:
    net, start = network_from(cfg)
    n = cfg["noise"]
    seed = n["seed"]
    steps = steps or cfg["run"].get("steps") or 10000
    kind = SourceKind(n["kind"])
    agent = LtiSystem(net.A_sys, net.B, np.eye(net.n))

    def source(scale):
        s2 = [scale * v for v in n["sigma_u2"]]
        if kind is SourceKind.SOLVED:
            return NoiseSource.solved(solve_for(cfg, agent, n["alphas"][0], sigma_u2=s2), n["intra"])
        return baseline_source(kind, agent.B1, s2)

    def run(src, stream):
        rng = make_rng(seed, 11, *stream)
        th = sample_theta_raw(src, rng, steps * net.N)
        ue = compute_extra_input(agent.B1, th, src.reduction).reshape(steps, net.N, -1)
        X = np.zeros((steps + 1, net.N, net.n))
        Xc = np.zeros_like(X)
        X[0] = Xc[0] = start
        for k in range(steps):
            X[k + 1] = consensus_step(net, X[k], ue[k] @ net.B.T)
            Xc[k + 1] = consensus_step(net, Xc[k])
        J = np.array([formation_cost(net, x) for x in X])
        Jc = np.array([formation_cost(net, x) for x in Xc])
        return X, Xc, J, Jc

    sweep = []
    result = None
    for ci, c in enumerate(cfg["run"]["cov_scales"]):
        src = source(c)
        cov = net.B @ theta_covariance(src) @ net.B.T
        col = build_collective(net, [cov] * net.N)
        dJ = coop_degradation(col.Sigma_c_star, np.eye(net.N * net.n))
        if isinstance(dJ, Divergent):
            raise DivergentError(dJ.radius)
        X, Xc, J, Jc = run(src, (ci,))
        dJ_mc = float(np.mean(J[1:] - Jc[1:]))
        sweep.append((float(c), float(np.trace(cov)), dJ, dJ_mc))
        if ci == len(cfg["run"]["cov_scales"]) - 1:
            result = FormationResult(Xc, X, Jc, J, dJ, sweep)
    return result


def formation_tables(cfg, res: FormationResult):
    h = config_hash(cfg)
    seed = cfg["noise"]["seed"]
    steps = res.clean.shape[0] - 1
    N, n = res.clean.shape[1:]
    agents = Table(["k", "agent"] + [f"clean_x{i + 1}" for i in range(n)] + [f"noisy_x{i + 1}" for i in range(n)]
                   + ["seed", "config_hash"])
    for k in range(steps + 1):
        for i in range(N):
            agents.rows.append([k, i + 1, *map(float, res.clean[k, i]), *map(float, res.noisy[k, i]), seed, h])
    deg = Table(["k", "J_clean", "J_noisy", "dJ_running", "dJ_star", "seed", "steps", "config_hash"])
    diff = res.J_noisy - res.J_clean
    running = np.concatenate([[0.0], np.cumsum(diff[1:]) / np.arange(1, steps + 1)])
    for k in range(steps + 1):
        deg.rows.append([k, float(res.J_clean[k]), float(res.J_noisy[k]), float(running[k]), res.dJ_star,
                         seed, steps, h])
    sw = Table(["cov_scale", "trace_Lambda_agent", "dJ_star", "dJ_mc", "seed", "steps", "config_hash"])
    for row in res.sweep:
        sw.rows.append([*row, seed, steps, h])
    return agents, deg, sw


def provenance() -> dict:
    return {"tool": "unpctl", "version": __version__}
