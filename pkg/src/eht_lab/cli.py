"""Command-line experiment runner.

    eht-lab {analyze|simulate|verify|sweep} <config> [--out DIR] [--seed N] [--threads N]

Exit codes: 0 success (warnings allowed), 2 config error, 3 state space over
the cap (``EHT_STATE_CAP`` overrides the default of 10**6), 4 a hard
invariant failed.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import chain_analysis as ca
from .belief_space import CapacityError, StateSpace, dedupe_rows
from .config import ConfigError, ExperimentConfig, load_config
from .dynamics import Dynamics, initial_state, occupancy, write_ndjson, write_summary_csv
from .game_core import epsilon_ne_gap, product_of_marginals
from .hypothesis_testing import (
    TestConfig,
    TestsNeverNeeded,
    estimate_error_rates,
    sample_size_report,
)
from .rng import make_rng
from .verification import (
    check_assumption1,
    check_assumption2,
    check_simple_condition,
    verify_lipschitz,
    verify_prop2_constructive,
)

EXIT_OK, EXIT_CONFIG, EXIT_CAPACITY, EXIT_INVARIANT = 0, 2, 3, 4


class Context:
    """Objects shared by every subcommand for one config."""

    def __init__(self, cfg: ExperimentConfig, seed: int | None = None):
        self.cfg = cfg
        self.game = cfg.build_game()
        self.run = cfg.run_config(seed=seed)
        p = cfg.parameters
        self.space = StateSpace(self.game, p.M, p.sigma, distance_mode=p.distance_mode)
        self.transforms = self.run.transforms
        self.z_dagger = ca.consistent_states(self.space, p.tau)
        self.graph = None
        self.z_star = np.array([], dtype=int)
        if self.z_dagger.size:
            self.graph = ca.build_resistance_graph(self.space, p.tau, self.transforms, self.run.test_probs)
            self.z_star = ca.stochastically_stable_set(self.graph)

    def stationary(self, xi: float) -> np.ndarray:
        return ca.stationary_distribution(ca.idealized_transition_matrix(self.space, self.run, xi))


def _state_rows(ctx: Context):
    sp, game = ctx.space, ctx.game
    values = sp.node_values(ctx.transforms)
    realized = ca.realized_node_values(sp, ctx.transforms)
    consistent = sp.consistent_mask(ctx.cfg.parameters.tau)
    zs = set(ctx.z_star.tolist())
    rows = []
    for z in range(len(sp)):
        state = sp[z]
        rows.append({
            "index": z,
            "beliefs": [[list(m) for m in b.counts] for b in state.beliefs],
            "strategies": [s.tolist() for s in state.strategies],
            "distances": sp.distances[z].tolist(),
            "consistent": bool(consistent[z]),
            "node_value": float(values[z]),
            "realized_node_value": float(realized[z]),
            "epsilon_gap": epsilon_ne_gap(game, state.strategies),
            "in_Z_star": z in zs,
        })
    return rows


def analyze_config(cfg: ExperimentConfig, seed: int | None = None) -> dict:
    ctx = Context(cfg, seed)
    report = {
        "name": cfg.name,
        "state_count": len(ctx.space),
        "consistent": ctx.z_dagger.tolist(),
        "warnings": [],
    }
    rows = _state_rows(ctx)
    report["states"] = rows
    if ctx.graph is None:
        report["warnings"].append("no consistent states at this tau; nothing is selected")
        report.update(Z_star=[], potentials={}, refinement=None, mu_by_xi={})
        return report
    g = ctx.graph
    closed = ca.stochastic_potential_closed_form(g)
    potentials = {"closed_form": dict(zip(map(str, g.nodes.tolist()), closed.tolist()))}
    if g.size <= ca.BRUTE_FORCE_LIMIT:
        potentials["bruteforce"] = dict(zip(map(str, g.nodes.tolist()), ca.stochastic_potentials(g.weights, "bruteforce").tolist()))
    elif g.size <= 300:
        potentials["arborescence"] = dict(zip(map(str, g.nodes.tolist()), ca.stochastic_potentials(g.weights, "arborescence").tolist()))
    cor = ca.corollary_selection(ctx.space, g, ctx.transforms, ctx.z_star)
    mu_by_xi = {}
    for xi in cfg.xi_grid():
        mu = ctx.stationary(xi)
        mu_by_xi[repr(xi)] = {"Z_star": ca.mass_on(mu, ctx.z_star), "Z_dagger": ca.mass_on(mu, ctx.z_dagger)}
    slopes = ca.perturbation_slope_check(ctx.space, ctx.run)
    report.update(
        node_values=dict(zip(map(str, g.nodes.tolist()), g.node_values.tolist())),
        Z_star=ctx.z_star.tolist(),
        potentials=potentials,
        refinement=cor.__dict__,
        mu_by_xi=mu_by_xi,
        slope_checks={
            "entries": len(slopes),
            "max_rel_error": max((s.rel_error for s in slopes), default=0.0),
        },
    )
    return report


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def cmd_analyze(cfg: ExperimentConfig, out: Path, args) -> int:
    report = analyze_config(cfg, args.seed)
    out.mkdir(parents=True, exist_ok=True)
    formats = set(cfg.outputs.formats)
    if "json" in formats:
        _write_json(out / "analysis.json", report)
    if "csv" in formats:
        with open(out / "states.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "consistent", "in_Z_star", "node_value", "realized_node_value",
                        "epsilon_gap", "beliefs", "strategies"])
            for r in report["states"]:
                w.writerow([r["index"], int(r["consistent"]), int(r["in_Z_star"]), r["node_value"],
                            r["realized_node_value"], r["epsilon_gap"], json.dumps(r["beliefs"]),
                            json.dumps(r["strategies"])])
    print(f"{cfg.name}: {report['state_count']} states, {len(report['consistent'])} consistent")
    for z in report["Z_star"]:
        r = report["states"][z]
        print(f"  Z* state {z}: strategies {np.round(r['strategies'], 4).tolist()} node value {r['node_value']:.6g}")
    if report.get("refinement"):
        print(f"  refinement case: {report['refinement']['case']}")
    for w in report["warnings"]:
        print(f"  warning: {w}")
    return EXIT_OK


def _simulate_one(dyn: Dynamics, mu, cfg: ExperimentConfig, seed: int, replication: int):
    init_rng = make_rng(seed, replication, 1)
    start = initial_state(cfg.run.initial, dyn.space, init_rng, mu)
    return start, dyn.run(start, cfg.run.epochs, make_rng(seed, replication))


def simulate_config(cfg: ExperimentConfig, seed: int | None = None, threads: int = 1) -> dict:
    ctx = Context(cfg, seed)
    seed = ctx.run.seed
    dyn = Dynamics(ctx.game, ctx.run, ctx.space)
    mu = ctx.stationary(ctx.run.xi)
    mu_star = ca.mass_on(mu, ctx.z_star)
    reps = range(cfg.run.replications)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(lambda r: _simulate_one(dyn, mu, cfg, seed, r), reps))
    rows = []
    for r, (start, traj) in zip(reps, results):
        occ = occupancy(traj, ctx.z_star) if traj else float("nan")
        occ_d = occupancy(traj, ctx.z_dagger) if traj else float("nan")
        rows.append({
            "replication": r, "initial_state": start, "epochs": len(traj),
            "occupancy_Z_star": occ, "occupancy_Z_dagger": occ_d,
            "mu_Z_star": mu_star, "abs_diff": abs(occ - mu_star),
            "agree": bool(abs(occ - mu_star) <= 0.05),
        })
    return {
        "ctx": ctx, "results": results, "rows": rows, "mu_Z_star": mu_star,
        "epoch_length": dyn.epoch_length,
        "majority_agree": sum(r["agree"] for r in rows) > len(rows) / 2,
    }


def cmd_simulate(cfg: ExperimentConfig, out: Path, args) -> int:
    res = simulate_config(cfg, args.seed, args.threads)
    ctx = res["ctx"]
    out.mkdir(parents=True, exist_ok=True)
    formats = set(cfg.outputs.formats)
    for r, (_, traj) in enumerate(res["results"]):
        if "ndjson" in formats:
            write_ndjson(out / f"trajectory_{r}.ndjson", traj)
        if "csv" in formats:
            write_summary_csv(out / f"summary_{r}.csv", traj, ctx.z_dagger, ctx.z_star)
    with open(out / "occupancy.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(res["rows"][0].keys()))
        w.writeheader()
        w.writerows(res["rows"])
    print(f"{cfg.name}: xi={ctx.run.xi} epochs={cfg.run.epochs} epoch_length={res['epoch_length']}")
    for row in res["rows"]:
        print(f"  replication {row['replication']}: occupancy(Z*)={row['occupancy_Z_star']:.4f} "
              f"mu(Z*)={row['mu_Z_star']:.4f} agree={'yes' if row['agree'] else 'no'}")
    print(f"  majority agreement: {'yes' if res['majority_agree'] else 'no'}")
    return EXIT_OK


def _calibration_pairs(ctx: Context, limit: int = 4):
    """(player, belief product, true product, consistent?) pairs from the Br image."""
    sp, game, tau = ctx.space, ctx.game, ctx.cfg.parameters.tau
    images = [dedupe_rows(p.responses) for p in sp.players]
    cons, incons = [], []
    for i in range(game.player_count):
        opp = game.opponents(i)
        for combo in np.indices([len(images[j]) for j in opp]).reshape(len(opp), -1).T:
            truth = product_of_marginals([images[j][k] for j, k in zip(opp, combo)])
            for b in sp.players[i].products:
                d = float(np.linalg.norm(b - truth))
                (cons if d <= tau else incons).append((i, b, truth, d))
    incons.sort(key=lambda x: x[3])
    return cons[:limit], incons[:limit]


def verify_config(cfg: ExperimentConfig, seed: int | None = None) -> dict:
    ctx = Context(cfg, seed)
    p, game, sp = cfg.parameters, ctx.game, ctx.space
    hard, warn = {}, {}
    details = {}

    cert = check_assumption1(game, p.epsilon, p.sigma, p.tau, p.M)
    warn["parameter_bounds"] = cert.passed
    details["parameter_bounds"] = cert.to_dict()
    construction = verify_prop2_constructive(game, p.epsilon, p.sigma, p.tau, p.M, p.distance_mode)
    warn["consistent_state_construction"] = construction.passed
    details["consistent_state_construction"] = construction.to_dict()
    destab = check_assumption2(sp, p.tau)
    warn["destabilizing_beliefs"] = destab.passed
    details["destabilizing_beliefs"] = destab.to_dict()
    simple = check_simple_condition(sp, p.tau)
    warn["br_image_condition"] = simple.passed
    details["br_image_condition"] = simple.to_dict()

    ratio = verify_lipschitz(game, p.sigma, 10_000, seed=ctx.run.seed)
    hard["lipschitz"] = ratio <= 1 + 1e-6
    details["lipschitz_max_ratio"] = ratio

    row_err = max(
        ca.idealized_transition_matrix(sp, ctx.run, xi).row_sum_error() for xi in cfg.xi_grid()
    )
    P0 = ca.unperturbed_matrix(sp, p.tau, ctx.run.test_probs, ctx.run.resampler)
    row_err = max(row_err, P0.row_sum_error(), float(np.max(np.abs(P0.matrix.sum(axis=1) - 1))))
    hard["row_sums"] = row_err < 1e-10
    details["row_sum_max_error"] = row_err

    classes = ca.recurrent_classes(P0)
    singletons = sorted([[int(z)] for z in ctx.z_dagger])
    same = classes == singletons
    details["recurrent_classes"] = classes
    (hard if destab.passed else warn)["recurrent_classes_are_consistent_singletons"] = same

    if ctx.graph is not None:
        g = ctx.graph
        closed = ca.stochastic_potential_closed_form(g)
        method = "bruteforce" if g.size <= ca.BRUTE_FORCE_LIMIT else "arborescence"
        other = ca.stochastic_potentials(g.weights, method)
        hard["potential_oracle"] = bool(np.allclose(other, closed, rtol=0, atol=1e-9))
        by_phi = g.nodes[np.flatnonzero(np.abs(other - other.min()) <= ca.TIE_TOL)]
        hard["argmin_potential_equals_argmax_value"] = sorted(by_phi.tolist()) == sorted(ctx.z_star.tolist())
        details["potentials"] = {"closed_form": closed.tolist(), method: other.tolist()}
    else:
        warn["consistent_states_exist"] = False

    alpha = 0.05
    try:
        ss = sample_size_report(game, p.M, p.sigma, p.tau, alpha, max_T=ctx.run.max_epoch_length)
        cons, incons = _calibration_pairs(ctx)
        cal = []
        for k, (i, b, truth, d) in enumerate(cons + incons):
            est = estimate_error_rates(b, truth, TestConfig(p.tau, alpha, ss.sample_size),
                                       cfg.run.calibration_trials, seed=ctx.run.seed + k)
            cal.append({"player": i, "distance": d, "T": ss.sample_size, **est.__dict__,
                        "ok": est.rate <= alpha + est.halfwidth})
        ok = all(c["ok"] for c in cal)
        (warn if ss.capped else hard)["test_calibration"] = ok
        details["calibration"] = cal
    except TestsNeverNeeded as exc:
        warn["test_calibration"] = True
        details["calibration"] = str(exc)

    return {"name": cfg.name, "hard": hard, "warnings": warn, "details": details,
            "passed": all(hard.values())}


def cmd_verify(cfg: ExperimentConfig, out: Path, args) -> int:
    rep = verify_config(cfg, args.seed)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "verification.json", rep)
    print(f"{cfg.name}: verification")
    for k, v in rep["hard"].items():
        print(f"  [hard] {k:<45} {'PASS' if v else 'FAIL'}")
    for k, v in rep["warnings"].items():
        print(f"  [warn] {k:<45} {'pass' if v else 'WARNING'}")
    return EXIT_OK if rep["passed"] else EXIT_INVARIANT


def _local_slope_error(ctx: Context, xi_a: float, xi_b: float) -> float:
    R = ca.edge_resistances(ctx.space, ctx.cfg.parameters.tau, ctx.transforms, ctx.run.test_probs)
    mask = np.isfinite(R) & (R > 0)
    if not mask.any():
        return 0.0
    Pa = ca.idealized_transition_matrix(ctx.space, ctx.run, xi_a).matrix[mask]
    Pb = ca.idealized_transition_matrix(ctx.space, ctx.run, xi_b).matrix[mask]
    slope = (np.log(Pb) - np.log(Pa)) / (math.log(xi_b) - math.log(xi_a))
    return float(np.max(np.abs(slope - R[mask]) / R[mask]))


def sweep_config(cfg: ExperimentConfig, seed: int | None = None, threads: int = 1) -> list[dict]:
    grid = cfg.run.xi_grid
    if not grid or len(grid) < 2:
        raise ConfigError("/run/xi_grid", "a sweep needs at least two xi values")
    ctx = Context(cfg, seed)

    def cell(k):
        xi = grid[k]
        mu = ctx.stationary(xi)
        row = {
            "xi": xi,
            "mu_z_star": ca.mass_on(mu, ctx.z_star),
            "mu_z_dagger": ca.mass_on(mu, ctx.z_dagger),
            "occupancy": "",
            "slope_max_rel_err": "" if k == 0 else _local_slope_error(ctx, grid[k - 1], xi),
        }
        if cfg.run.simulate_in_sweep:
            dyn = Dynamics(ctx.game, ctx.run.with_xi(xi), ctx.space)
            start = initial_state(cfg.run.initial, ctx.space, make_rng(ctx.run.seed, k, 1), mu)
            traj = dyn.run(start, cfg.run.epochs, make_rng(ctx.run.seed, k))
            row["occupancy"] = occupancy(traj, ctx.z_star) if traj else ""
        return row

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        return list(pool.map(cell, range(len(grid))))


def cmd_sweep(cfg: ExperimentConfig, out: Path, args) -> int:
    rows = sweep_config(cfg, args.seed, args.threads)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        w.writeheader()
        w.writerows(rows)
    print(f"{cfg.name}: sweep over {len(rows)} xi values")
    for r in rows:
        print(f"  xi={r['xi']:<8g} mu(Z*)={r['mu_z_star']:.6f} mu(Z+)={r['mu_z_dagger']:.6f}")
    return EXIT_OK


COMMANDS = {"analyze": cmd_analyze, "simulate": cmd_simulate, "verify": cmd_verify, "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eht-lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", help="config path, or the name of a packaged config")
        p.add_argument("--out", default=None, help="output directory (default: from the config)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--threads", type=int, default=1, help="worker threads for replications and sweeps")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        out = Path(args.out if args.out else cfg.outputs.directory)
        return COMMANDS[args.command](cfg, out, args)
    except ConfigError as exc:
        print(f"config error at {exc.pointer or '/'}: {exc.message}", file=sys.stderr)
        return EXIT_CONFIG
    except CapacityError as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY


if __name__ == "__main__":
    sys.exit(main())
