"""Command line entry point: ``unpctl {solve-dist,compare,simulate,formation} <config>``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness, svg
from .attacker import EstimatorError
from .config import ConfigError, config_hash, load_config
from .controllers import DivergentError, InfeasibleError
from .distribution import ConfigurationError
from .noise import ConsistencyError

log = logging.getLogger("unpctl")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    log.info("wrote %s", path)


def _apply_overrides(cfg: dict, args) -> dict:
    if args.seed is not None:
        if not (0 <= args.seed < 2**64):
            raise ConfigError("--seed must be a 64-bit unsigned integer")
        cfg["noise"]["seed"] = args.seed
    if args.samples is not None:
        if args.samples < 1:
            raise ConfigError("--samples must be positive")
        cfg["run"]["n_samples"] = args.samples
    if args.out_dir is not None:
        cfg["run"]["out_dir"] = args.out_dir
    if args.mono is not None:
        cfg["noise"]["monotonicity"] = args.mono
    if args.intra is not None:
        cfg["noise"]["intra"] = args.intra
    return cfg


def cmd_solve_dist(cfg: dict) -> None:
    out = Path(cfg["run"]["out_dir"])
    sys_ = harness.build_system(cfg)
    for a in cfg["noise"]["alphas"]:
        dist = harness.solve_for(cfg, sys_, a)
        doc = dist.to_dict()
        doc["provenance"] = {**harness.provenance(), "config_hash": config_hash(cfg)}
        _write(out / f"distribution_alpha{a:g}.json", json.dumps(doc, indent=1, sort_keys=True) + "\n")
        if dist.degenerate:
            log.warning("degenerate distribution (point mass at the origin) for alpha=%g", a)
            continue
        if dist.grid.note:
            log.warning(dist.grid.note)
        g = dist.grid
        if g.dim == 2:
            radii = np.arange(g.n_radial + 1) * g.delta_r
            edges = np.linspace(0.0, 2 * np.pi, g.n_angles[0] + 1)
            heights = dist.p / g.volumes  # piecewise-constant density
            _write(out / f"distribution_alpha{a:g}.svg",
                   svg.polar_heatmap(radii, edges, heights, title=f"density of theta, alpha={a:g}"))
        log.info("alpha=%g: LP objective %.6f", a, dist.objective)


def cmd_compare(cfg: dict) -> None:
    out = Path(cfg["run"]["out_dir"])
    table, sens = harness.run_compare(cfg)
    _write(out / "compare.csv", table.to_csv())
    if sens.rows:
        _write(out / "compare_sensitivity.csv", sens.to_csv())


def cmd_simulate(cfg: dict) -> None:
    out = Path(cfg["run"]["out_dir"])
    res = harness.run_simulate(cfg)
    path, err, summ = harness.simulate_tables(cfg, res)
    _write(out / "simulate_path.csv", path.to_csv())
    _write(out / "simulate_errors.csv", err.to_csv())
    _write(out / "simulate_summary.csv", summ.to_csv())
    last = res.noisy[-1][0]
    _write(out / "simulate_path.svg", svg.line_plot(
        [("noiseless", res.clean[:, 0], res.clean[:, 1]), ("with unpredictable input", last[:, 0], last[:, 1])],
        title="agent path", equal_aspect=True))
    k = np.arange(res.errors[0].shape[1])
    _write(out / "simulate_errors.svg", svg.line_plot(
        [(f"scale {c:g}", k, harness.smooth3(S.mean(axis=0))) for c, S in zip(res.scales, res.errors)],
        title="smoothed squared prediction error"))


def cmd_formation(cfg: dict) -> None:
    out = Path(cfg["run"]["out_dir"])
    res = harness.run_formation(cfg)
    agents, deg, sw = harness.formation_tables(cfg, res)
    _write(out / "formation_agents.csv", agents.to_csv())
    _write(out / "formation_degradation.csv", deg.to_csv())
    _write(out / "formation_sweep.csv", sw.to_csv())
    series = []
    for i in range(res.clean.shape[1]):
        series.append((f"agent {i + 1}", res.clean[:, i, 0], res.clean[:, i, 1]))
    _write(out / "formation_clean.svg", svg.line_plot(series, title="formation without noise", equal_aspect=True))
    k = np.arange(res.J_noisy.size)
    diff = res.J_noisy - res.J_clean
    running = np.concatenate([[0.0], np.cumsum(diff[1:]) / np.arange(1, k.size)])
    _write(out / "formation_degradation.svg", svg.line_plot(
        [("running dJ", k, running), ("dJ*", k, np.full(k.size, res.dJ_star))], title="performance degradation"))


COMMANDS = {"solve-dist": cmd_solve_dist, "compare": cmd_compare, "simulate": cmd_simulate,
            "formation": cmd_formation}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="unpctl", description="Unpredictable-control experiments.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", help="scenario JSON file")
        p.add_argument("--seed", type=int)
        p.add_argument("--samples", type=int)
        p.add_argument("--out-dir")
        p.add_argument("--mono", choices=["literal", "density"])
        p.add_argument("--intra", choices=["volume", "reppoint"])
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        COMMANDS[args.command](cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigurationError, ConsistencyError, InfeasibleError, DivergentError, EstimatorError,
            ArithmeticError, np.linalg.LinAlgError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        # shape or consistency problems discovered while building objects from the config
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
