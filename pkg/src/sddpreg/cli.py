"""Command-line entry points: solve-det, solve-stoch, bench, gen-data, oracle.

Configs are a single JSON document with sections problem | algorithm |
stopping | output. Artifacts (bounds trace CSV, report JSON, problem
JSON, optional per-stage cut CSVs) are written atomically: a truncated
file never survives a killed run.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import portfolio
from .cuts import write_cuts_csv
from .errors import SddpregError
from .oracle import solve_extensive_risk_averse, solve_extensive_risk_neutral
from .reddp import SolveReport, parse_variant, run_deterministic
from .risk import RiskSpec, expectation, mean_avar
from .sddp import FixedIterations, GapStopping, StochasticConfig, run_sddp
from .stage import stage_model_to_dict
from .tree import lattice_to_dict

log = logging.getLogger("sddpreg")

BOUNDS_HEADER = "iteration,lower_bound,upper_bound,gap_pct,forward_ms,backward_ms,cum_ms"


# -- atomic artifact writing -------------------------------------------------


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def write_json_atomic(path: Path, doc) -> None:
    _write_atomic(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def config_digest(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


# -- config parsing -----------------------------------------------------------


def _risk_from_cfg(cfg: dict | None) -> RiskSpec:
    if not cfg or cfg.get("kind", "expectation") == "expectation":
        return expectation()
    if cfg["kind"] == "mean_avar":
        return mean_avar(float(cfg["lambda"]), float(cfg["alpha"]))
    raise ValueError(f"unknown risk kind {cfg['kind']!r}")


def build_problem(problem_cfg: dict) -> portfolio.BuiltProblem:
    kind = problem_cfg.get("kind", "portfolio_direct")
    pcfg = dict(problem_cfg.get("portfolio", {}))
    if "initial_holdings" not in pcfg and "budget" in pcfg:
        n = int(pcfg.get("n_assets", 6))
        holdings = [0.0] * n + [float(pcfg.pop("budget"))]
        pcfg["initial_holdings"] = holdings
    params = portfolio.PortfolioParams(
        n_assets=int(pcfg.get("n_assets", 6)),
        horizon=int(pcfg.get("horizon", 48)),
        initial_holdings=pcfg.get("initial_holdings"),
        sell_cost=pcfg.get("sell_cost", 0.01),
        buy_cost=pcfg.get("buy_cost", 0.01),
        position_limit=pcfg.get("position_limit", 0.2),
        cash_return=float(pcfg.get("cash_return", 1.002)),
        impact_cost=pcfg.get("impact_cost", 0.0),
        maximize=bool(pcfg.get("maximize", True)),
    )
    rcfg = problem_cfg.get("returns", {})
    source = rcfg.get("source", "synthetic")
    if source == "synthetic":
        scen = portfolio.generate_synthetic_returns(
            seed=int(rcfg.get("seed", 0)),
            n=params.n_assets,
            T=params.horizon,
            M=int(rcfg.get("M", 1)),
            drift=float(rcfg.get("drift", 0.005)),
            vol=float(rcfg.get("vol", 0.05)),
            cash_return=params.cash_return,
        )
    elif source == "csv":
        scen = portfolio.load_returns_csv(
            rcfg["path"],
            horizon=params.horizon,
            atoms_per_stage=rcfg.get("M"),
            seed=rcfg.get("seed"),
            cash_return=params.cash_return,
        )
    else:
        raise ValueError(f"unknown returns source {source!r}")
    risk = _risk_from_cfg(problem_cfg.get("risk"))
    if kind == "portfolio_direct":
        return portfolio.build_direct_cost_models(params, scen, risk)
    if kind == "portfolio_impact":
        return portfolio.build_market_impact_models(params, scen, risk)
    raise ValueError(f"unknown problem kind {kind!r}")


def problem_to_dict(built: portfolio.BuiltProblem) -> dict:
    p = built.params
    return {
        "kind": built.kind,
        "sense": built.sense,
        "value_scale": built.value_scale,
        "portfolio": {
            "n_assets": p.n_assets,
            "horizon": p.horizon,
            "initial_holdings": [float(v) for v in p.initial_holdings],
            "sell_cost": [float(v) for v in p.sell_cost],
            "buy_cost": [float(v) for v in p.buy_cost],
            "position_limit": [float(v) for v in p.position_limit],
            "cash_return": p.cash_return,
            "impact_cost": [float(v) for v in p.impact_cost],
            "maximize": p.maximize,
        },
        "risk": {
            "kind": built.risk_spec.kind,
            "lambda": built.risk_spec.lam,
            "alpha": built.risk_spec.alpha,
        },
        "x0": [float(v) for v in built.x0],
        "initial_bounds": [float(v) for v in built.initial_bounds],
        "lattice": lattice_to_dict(built.lattice),
        "stage_models": [stage_model_to_dict(m) for m in built.stage_models],
    }


# -- artifact writers ---------------------------------------------------------


def bounds_csv_text(report: SolveReport, scale: float) -> str:
    out = io.StringIO()
    w = csv.writer(out)
    w.writerow(BOUNDS_HEADER.split(","))
    cum = 0.0
    for rec in report.records:
        lb, ub = report.reported_bounds(rec)
        lb, ub = lb * scale, ub * scale
        if math.isnan(ub) or math.isnan(lb) or ub == 0.0:
            gap_pct = float("nan")
        else:
            gap_pct = 100.0 * (ub - lb) / abs(ub)
        cum += rec.forward_ms + rec.backward_ms
        w.writerow(
            [
                rec.iteration,
                repr(lb),
                repr(ub),
                repr(gap_pct),
                f"{rec.forward_ms:.3f}",
                f"{rec.backward_ms:.3f}",
                f"{cum:.3f}",
            ]
        )
    return out.getvalue()


def report_to_dict(report: SolveReport, scale: float, cfg: dict) -> dict:
    rec = report.records[-1]
    lb, ub = report.reported_bounds(rec)
    doc = {
        "variant": report.variant,
        "seed": report.seed,
        "termination": report.termination,
        "iterations": report.iterations,
        "final_lower_bound": lb * scale,
        "final_upper_bound": ub * scale,
        "cut_counts": {str(t): c for t, c in sorted(report.cut_counts.items())},
        "config_digest": config_digest(cfg),
        "notes": report.notes,
    }
    if report.simulation is not None:
        sim = report.simulation
        doc["policy_simulation"] = {
            "n_sim": int(sim.values.size),
            "mean": sim.reported_mean() * scale,
            "stderr": sim.stderr * scale,
            "confidence": sim.confidence,
            "one_sided_bound": sim.reported_bound() * scale,
        }
    return doc


def write_artifacts(out_dir: Path, report: SolveReport, built, cfg: dict) -> None:
    scale = built.value_scale
    _write_atomic(out_dir / "bounds.csv", bounds_csv_text(report, scale))
    write_json_atomic(out_dir / "report.json", report_to_dict(report, scale, cfg))
    write_json_atomic(out_dir / "problem.json", problem_to_dict(built))
    if cfg.get("output", {}).get("cuts", False):
        for t, pool in sorted(report.pools.items()):
            if len(pool):
                write_cuts_csv(pool, out_dir / f"cuts_stage_{t}.csv")


# -- subcommands ---------------------------------------------------------------


def _load_config(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _out_dir(cfg: dict, cli_out: str | None) -> Path:
    out = cli_out or cfg.get("output", {}).get("dir", "out")
    return Path(out)


def cmd_solve_det(args) -> int:
    cfg = _load_config(args.config)
    stochastic, scheme = parse_variant(cfg["algorithm"]["variant"])
    if stochastic:
        raise ValueError("solve-det expects a deterministic variant (DDP/REDDP-*)")
    built = build_problem(cfg["problem"])
    if any(built.lattice.atoms(t) != 1 for t in range(1, built.horizon + 1)):
        raise ValueError("solve-det needs a deterministic instance (one atom per stage)")
    stopping = cfg.get("stopping", {})
    report = run_deterministic(
        built.stage_models,
        built.x0,
        scheme,
        epsilon=float(stopping.get("epsilon", 1e-6)),
        max_iter=int(cfg["algorithm"].get("max_iter", 500)),
        lower_bounds=built.initial_bounds,
        realizations=built.realizations(),
        sense=built.sense,
        relative=bool(stopping.get("relative", True)),
        variant=cfg["algorithm"]["variant"],
    )
    out = _out_dir(cfg, args.out)
    write_artifacts(out, report, built, cfg)
    print(f"{report.variant}: {report.termination} after {report.iterations} iterations")
    return 0 if report.termination == "gap" else 2


def _stochastic_config(cfg: dict, scheme) -> StochasticConfig:
    alg = cfg.get("algorithm", {})
    stopping_cfg = cfg.get("stopping", {"mode": "gap"})
    if stopping_cfg.get("mode", "gap") == "gap":
        stopping = GapStopping(
            threshold=float(stopping_cfg.get("threshold", 0.05)),
            n_sim=int(stopping_cfg.get("n_sim", 500)),
            confidence=float(stopping_cfg.get("confidence", 0.95)),
        )
    else:
        stopping = FixedIterations(int(stopping_cfg.get("iterations", 50)))
    return StochasticConfig(
        scheme=scheme,
        stopping=stopping,
        paths_per_iteration=int(alg.get("paths_per_iteration", 1)),
        seed=int(alg.get("seed", 0)),
        max_iter=int(alg.get("max_iter", 500)),
        simulate_every=int(alg.get("simulate_every", 1)),
    )


def cmd_solve_stoch(args) -> int:
    cfg = _load_config(args.config)
    stochastic, scheme = parse_variant(cfg["algorithm"]["variant"])
    if not stochastic:
        raise ValueError("solve-stoch expects a stochastic variant (SDDP/SDDP-REG-*)")
    built = build_problem(cfg["problem"])
    config = _stochastic_config(cfg, scheme)
    report = run_sddp(
        built.lattice,
        built.stage_models,
        built.risk_spec,
        config,
        x0=built.x0,
        lower_bounds=built.initial_bounds,
        sense=built.sense,
        variant=cfg["algorithm"]["variant"],
    )
    out = _out_dir(cfg, args.out)
    write_artifacts(out, report, built, cfg)
    if report.simulation is not None:
        sim = report.simulation
        write_json_atomic(
            out / "policy_simulation.json",
            {
                "n_sim": int(sim.values.size),
                "confidence": sim.confidence,
                "mean": sim.reported_mean() * built.value_scale,
                "one_sided_bound": sim.reported_bound() * built.value_scale,
                "stderr": sim.stderr * built.value_scale,
            },
        )
    print(f"{report.variant}: {report.termination} after {report.iterations} iterations")
    return 0 if report.termination in ("gap", "iteration_budget") else 2


def _bench_row(row: dict) -> dict:
    name, variant, cfg = row["instance"], row["variant"], row["config"]
    out = {"instance": name, "variant": variant}
    try:
        stochastic, scheme = parse_variant(variant)
        built = build_problem(cfg["problem"])
        t0 = time.perf_counter()
        if stochastic:
            report = run_sddp(
                built.lattice,
                built.stage_models,
                built.risk_spec,
                _stochastic_config(cfg, scheme),
                x0=built.x0,
                lower_bounds=built.initial_bounds,
                sense=built.sense,
                variant=variant,
            )
        else:
            stopping = cfg.get("stopping", {})
            report = run_deterministic(
                built.stage_models,
                built.x0,
                scheme,
                epsilon=float(stopping.get("epsilon", 1e-6)),
                max_iter=int(cfg.get("algorithm", {}).get("max_iter", 500)),
                lower_bounds=built.initial_bounds,
                realizations=built.realizations(),
                sense=built.sense,
                relative=bool(stopping.get("relative", True)),
                variant=variant,
            )
        wall_ms = 1e3 * (time.perf_counter() - t0)
        rec = report.records[-1]
        lb, ub = report.reported_bounds(rec)
        gap = float("nan") if (math.isnan(ub) or ub == 0) else (ub - lb) / abs(ub)
        out.update(
            status="ok",
            iterations=report.iterations,
            wall_ms=round(wall_ms, 3),
            final_gap=gap,
        )
    except (SddpregError, ValueError, KeyError) as exc:
        log.error("bench row %s/%s failed: %s", name, variant, exc)
        out.update(status="error", iterations="", wall_ms="", final_gap="")
    return out


def cmd_bench(args) -> int:
    with open(args.suite) as fh:
        suite = json.load(fh)
    rows = []
    instances = {inst["name"]: inst for inst in suite.get("instances", [])}
    pairs = suite.get("pairs")
    if pairs is None:
        pairs = [
            (inst["name"], variant)
            for inst in suite.get("instances", [])
            for variant in suite.get("variants", [])
        ]
    for name, variant in pairs:
        inst = instances[name]
        cfg = {k: inst[k] for k in ("problem", "stopping", "algorithm") if k in inst}
        rows.append({"instance": name, "variant": variant, "config": cfg})

    if args.jobs > 1 and rows:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_bench_row, rows))
    else:
        results = [_bench_row(r) for r in rows]

    baselines = {}
    for r in results:
        if r["variant"] in ("DDP", "SDDP") and r["status"] == "ok":
            baselines[r["instance"]] = r
    for r in results:
        base = baselines.get(r["instance"])
        if r["status"] == "ok" and base is not None and base is not r:
            r["iter_ratio"] = round(base["iterations"] / max(r["iterations"], 1), 4)
            r["time_ratio"] = round(base["wall_ms"] / max(r["wall_ms"], 1e-9), 4)
        else:
            r["iter_ratio"] = ""
            r["time_ratio"] = ""

    out = io.StringIO()
    w = csv.DictWriter(
        out,
        fieldnames=[
            "instance", "variant", "status", "iterations",
            "wall_ms", "final_gap", "iter_ratio", "time_ratio",
        ],
    )
    w.writeheader()
    for r in results:
        w.writerow({k: r.get(k, "") for k in w.fieldnames})
    out_dir = Path(args.out)
    _write_atomic(out_dir / "bench.csv", out.getvalue())
    print(out.getvalue(), end="")
    return 0


def cmd_gen_data(args) -> int:
    if args.vol < 0:
        raise ValueError("vol must be >= 0")
    out = Path(args.out)
    scen = portfolio.generate_synthetic_returns(
        seed=args.seed, n=args.n, T=args.T, M=args.M, drift=args.drift, vol=args.vol
    )
    # historical-style series reusable by load_returns_csv: M monthly rows
    rng = np.random.default_rng([args.seed, 1])
    rows = np.exp(
        args.drift - 0.5 * args.vol**2 + args.vol * rng.standard_normal((args.M, args.n))
    )
    text = ["date," + ",".join(f"asset_{i + 1}" for i in range(args.n))]
    for i, row in enumerate(rows):
        text.append(f"m{i + 1:04d}," + ",".join(repr(float(v)) for v in row))
    _write_atomic(out / "returns.csv", "\n".join(text) + "\n")
    from .portfolio import _lattice  # lattice over stages 1..T

    write_json_atomic(out / "lattice.json", lattice_to_dict(_lattice(scen, args.T)))
    print(f"wrote {out / 'returns.csv'} and {out / 'lattice.json'}")
    return 0


def cmd_oracle(args) -> int:
    cfg = _load_config(args.config)
    built = build_problem(cfg["problem"])
    budget = int(cfg.get("oracle", {}).get("node_budget", 10_000))
    spec = built.risk_spec
    if spec.kind == "mean_avar" and spec.lam > 0 and spec.alpha < 1:
        value = solve_extensive_risk_averse(
            built.lattice, built.stage_models, spec.lam, spec.alpha,
            x0=built.x0, node_budget=budget,
        )
    else:
        value, _ = solve_extensive_risk_neutral(
            built.lattice, built.stage_models, x0=built.x0, node_budget=budget
        )
    reported = -value if built.sense == "max" else value
    reported *= built.value_scale
    out = _out_dir(cfg, args.out)
    write_json_atomic(
        out / "oracle.json",
        {"value": reported, "nodes": built.lattice.node_count(), "kind": built.kind},
    )
    print(f"extensive-form optimum: {reported!r}")
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sddpreg",
        description="Regularized dual dynamic programming for portfolio models",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve-det", help="run DDP or a REDDP variant")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_solve_det)

    p = sub.add_parser("solve-stoch", help="run SDDP or an SDDP-REG variant")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_solve_stoch)

    p = sub.add_parser("bench", help="run an (instance, variant) comparison suite")
    p.add_argument("--suite", required=True)
    p.add_argument("--out", default="out")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gen-data", help="write synthetic returns CSV and lattice JSON")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=6)
    p.add_argument("--T", type=int, default=48)
    p.add_argument("--M", type=int, default=60)
    p.add_argument("--drift", type=float, default=0.005)
    p.add_argument("--vol", type=float, default=0.05)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("oracle", help="solve the extensive form of a small instance")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("SDDP_REG_LOG", "error").upper()
    logging.basicConfig(level=getattr(logging, level, logging.ERROR))
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SddpregError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
