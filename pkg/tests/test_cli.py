import csv
import json
from pathlib import Path

import pytest

from sddpreg.cli import BOUNDS_HEADER, main


def det_config(seed=0, T=3, variant="DDP", max_iter=200, epsilon=1e-6):
    return {
        "problem": {
            "kind": "portfolio_direct",
            "portfolio": {
                "n_assets": 2,
                "horizon": T,
                "budget": 1.0,
                "sell_cost": 0.01,
                "buy_cost": 0.01,
                "position_limit": 0.6,
                "cash_return": 1.002,
            },
            "returns": {"source": "synthetic", "seed": seed, "M": 1, "drift": 0.01, "vol": 0.08},
        },
        "algorithm": {"variant": variant, "max_iter": max_iter},
        "stopping": {"mode": "gap", "epsilon": epsilon, "relative": True},
    }


def stoch_config(seed=0, T=2, variant="SDDP", stopping=None):
    return {
        "problem": {
            "kind": "portfolio_direct",
            "portfolio": {
                "n_assets": 2,
                "horizon": T,
                "budget": 1.0,
                "position_limit": 0.6,
            },
            "returns": {"source": "synthetic", "seed": seed, "M": 3, "drift": 0.01, "vol": 0.08},
        },
        "algorithm": {"variant": variant, "seed": seed, "max_iter": 60},
        "stopping": stopping or {"mode": "gap", "threshold": 0.05, "n_sim": 40},
    }


def write_cfg(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def read_bounds(out_dir):
    with open(Path(out_dir) / "bounds.csv") as fh:
        return list(csv.reader(fh))


def test_solve_det_writes_artifacts(tmp_path):
    cfg = det_config()
    rc = main(["solve-det", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path / "o")])
    assert rc == 0
    rows = read_bounds(tmp_path / "o")
    assert ",".join(rows[0]) == BOUNDS_HEADER
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert report["variant"] == "DDP"
    assert report["termination"] == "gap"
    assert {"seed", "iterations", "final_lower_bound", "final_upper_bound", "config_digest"} <= set(report)
    final = rows[-1]
    assert abs(float(final[1]) - float(final[2])) <= 1e-6 * max(1.0, abs(float(final[2])))
    assert (tmp_path / "o" / "problem.json").exists()


def test_solve_det_unknown_variant_lists_names(tmp_path, capsys):
    cfg = det_config(variant="REDDP-FOO")
    rc = main(["solve-det", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path / "o")])
    assert rc == 1
    err = capsys.readouterr().err
    assert "REDDP-{PREV|AVG}-{REG1-<rho>|REG2}" in err


def test_solve_det_iteration_limit_exit_code(tmp_path):
    cfg = det_config(variant="DDP", max_iter=1, epsilon=1e-12)
    rc = main(["solve-det", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path / "o")])
    assert rc == 2


def test_solve_stoch_gap_stop_and_reproducibility(tmp_path):
    cfg = stoch_config()
    rc = main(["solve-stoch", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path / "a")])
    assert rc == 0
    report = json.loads((tmp_path / "a" / "report.json").read_text())
    assert report["termination"] == "gap"
    assert "policy_simulation" in report
    assert (tmp_path / "a" / "policy_simulation.json").exists()

    rc = main(["solve-stoch", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path / "b")])
    assert rc == 0
    a = read_bounds(tmp_path / "a")
    b = read_bounds(tmp_path / "b")
    # bound columns are bit-identical under the same seed; timings are not
    assert [r[:4] for r in a] == [r[:4] for r in b]


def test_solve_stoch_risk_averse_fixed_budget(tmp_path):
    cfg = stoch_config(variant="SDDP-REG-PREV-REG2",
                       stopping={"mode": "fixed_iterations", "iterations": 5})
    cfg["problem"]["risk"] = {"kind": "mean_avar", "lambda": 0.1, "alpha": 0.1}
    rc = main(["solve-stoch", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path / "o")])
    assert rc == 0
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert report["termination"] == "iteration_budget"
    assert report["iterations"] == 5


def test_bench_suite(tmp_path):
    inst = det_config(seed=3, T=3)
    suite = {
        "instances": [
            {
                "name": "T3-s3",
                "problem": inst["problem"],
                "stopping": inst["stopping"],
                "algorithm": {"max_iter": 200},
            }
        ],
        "variants": ["DDP", "REDDP-PREV-REG2", "REDDP-BAD"],
    }
    spath = tmp_path / "suite.json"
    spath.write_text(json.dumps(suite))
    rc = main(["bench", "--suite", str(spath), "--out", str(tmp_path / "o")])
    assert rc == 0
    with open(tmp_path / "o" / "bench.csv") as fh:
        rows = list(csv.DictReader(fh))
    by_variant = {r["variant"]: r for r in rows}
    assert by_variant["DDP"]["status"] == "ok"
    assert by_variant["REDDP-BAD"]["status"] == "error"
    reg = by_variant["REDDP-PREV-REG2"]
    assert reg["status"] == "ok"
    assert int(reg["iterations"]) <= int(by_variant["DDP"]["iterations"])
    assert float(reg["iter_ratio"]) >= 1.0


def test_bench_empty_suite(tmp_path):
    spath = tmp_path / "suite.json"
    spath.write_text(json.dumps({"instances": [], "variants": []}))
    rc = main(["bench", "--suite", str(spath), "--out", str(tmp_path / "o")])
    assert rc == 0
    text = (tmp_path / "o" / "bench.csv").read_text().strip().splitlines()
    assert len(text) == 1  # header only


def test_gen_data_deterministic(tmp_path):
    args = ["gen-data", "--seed", "7", "--n", "3", "--T", "4", "--M", "5",
            "--drift", "0.004", "--vol", "0.03"]
    rc = main(args + ["--out", str(tmp_path / "a")])
    assert rc == 0
    rc = main(args + ["--out", str(tmp_path / "b")])
    assert rc == 0
    assert (tmp_path / "a" / "returns.csv").read_text() == (tmp_path / "b" / "returns.csv").read_text()
    assert (tmp_path / "a" / "lattice.json").read_text() == (tmp_path / "b" / "lattice.json").read_text()
    lattice = json.loads((tmp_path / "a" / "lattice.json").read_text())
    assert lattice["T"] == 4
    assert len(lattice["stages"][1]["realizations"]) == 5


def test_gen_data_rejects_negative_vol(tmp_path):
    rc = main(["gen-data", "--vol", "-1", "--out", str(tmp_path / "o")])
    assert rc == 1


def test_gen_data_matches_spec_defaults(tmp_path):
    rc = main(["gen-data", "--seed", "1", "--n", "6", "--T", "48", "--M", "60",
               "--out", str(tmp_path / "o")])
    assert rc == 0
    lattice = json.loads((tmp_path / "o" / "lattice.json").read_text())
    assert lattice["T"] == 48
    assert len(lattice["stages"][5]["realizations"]) == 60
    header = (tmp_path / "o" / "returns.csv").read_text().splitlines()[0]
    assert header == "date," + ",".join(f"asset_{i+1}" for i in range(6))


def test_oracle_command(tmp_path):
    cfg = stoch_config(T=2)
    rc = main(["oracle", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path / "o")])
    assert rc == 0
    doc = json.loads((tmp_path / "o" / "oracle.json").read_text())
    assert doc["value"] > 0.9  # maximized wealth near the unit budget
    assert doc["nodes"] == 1 + 3


def test_csv_returns_round_trip_through_solver(tmp_path):
    rc = main(["gen-data", "--seed", "2", "--n", "2", "--T", "2", "--M", "4",
               "--out", str(tmp_path / "d")])
    assert rc == 0
    cfg = stoch_config(T=2)
    cfg["problem"]["returns"] = {
        "source": "csv", "path": str(tmp_path / "d" / "returns.csv"),
    }
    rc = main(["solve-stoch", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path / "o")])
    assert rc == 0
