import json
import subprocess
import sys

import pytest

from isccmarket.baselines import exhaustive_optimal, greedy_allocator
from isccmarket.cli import main
from isccmarket.market import publish_demand, run_round
from isccmarket.neural import params_to_json
from isccmarket.resource_pool import new_pool
from isccmarket.scenario import load_scenario
from test_trainer import oracle_policies


def _bytes(folder):
    return {p.name: p.read_bytes() for p in sorted(folder.iterdir())}


def test_gen_scenario(tmp_path):
    args = ["gen-scenario", "--cavs", "3", "--rsus", "1", "--ncts", "4", "--seed", "7"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    text = (tmp_path / "a" / "scenario.json").read_text()
    assert text == (tmp_path / "b" / "scenario.json").read_text()
    s = load_scenario(text)
    assert (len(s.cavs), len(s.rsus), len(s.ncts)) == (3, 1, 4)
    assert main(["gen-scenario", "--ncts", "0", "--out", str(tmp_path / "c")]) == 0
    assert load_scenario((tmp_path / "c" / "scenario.json").read_text()).ncts == ()


def test_run_matches_library(tiny, tmp_path, capsys):
    assert main(["run", "--scenario", "@tiny3x4", "--allocator", "greedy", "--out", str(tmp_path)]) == 0
    pool, demand = new_pool(tiny), publish_demand(tiny)
    order, contracts = greedy_allocator(tiny, pool, demand)
    ledger = run_round(tiny, pool, demand, order, contracts)[1]
    assert json.loads((tmp_path / "ledger.json").read_text())["net_profit"] == ledger.net_profit
    assert (tmp_path / "ledger.json").read_text() == ledger.to_json()


def test_oracle_command(tiny, tmp_path, capsys):
    assert main(["oracle", "--scenario", "@tiny3x4", "--out", str(tmp_path)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["net"] == exhaustive_optimal(tiny, new_pool(tiny), publish_demand(tiny)).net
    assert main(["run", "--scenario", "@tiny3x4", "--allocator", "oracle", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "ledger.json").read_text())["net_profit"] == doc["net"]


def test_params_override(tmp_path):
    out = tmp_path / "o"
    assert main(["--params", "unit_price=0", "run", "--scenario", "@tiny3x4", "--out", str(out)]) == 0
    assert json.loads((out / "ledger.json").read_text())["gross_income"] == 0.0


@pytest.mark.parametrize("argv", [
    ["run", "--scenario", "missing.json"],
    ["run", "--scenario", "@tiny3x4", "--params", "nonsense"],
    ["run", "--scenario", "@tiny3x4", "--params", "no_such_key=1"],
    ["run", "--scenario", "@tiny3x4", "--allocator", "policy"],
    ["eval", "--distributor", "a.json", "--purchaser", "b.json"],
    ["train", "--config", "missing.json"],
])
def test_usage_errors_exit_2(tmp_path, argv, capsys):
    assert main(argv + ["--out", str(tmp_path)]) == 2
    assert capsys.readouterr().err.startswith("error:")


def test_divergence_exits_3(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"divergence_bound": 1e-9, "hidden": 8}))
    assert main(["train", "--config", str(cfg), "--episodes", "2", "--out", str(tmp_path)]) == 3


def _checkpoints(tmp_path):
    pol = oracle_policies()
    d, p = tmp_path / "d.json", tmp_path / "p.json"
    d.write_text(params_to_json(pol.distributor, "distributor"))
    p.write_text(params_to_json(pol.purchaser, "purchaser"))
    return str(d), str(p)


def test_eval_and_policy_run(tmp_path, capsys):
    d, p = _checkpoints(tmp_path)
    assert main(["eval", "--distributor", d, "--purchaser", p, "--scenario", "@tiny3x4",
                 "--out", str(tmp_path / "e")]) == 0
    rows = (tmp_path / "e" / "metrics.csv").read_text().splitlines()
    assert len(rows) == 2 and float(rows[1].split(",")[3]) == pytest.approx(42.23, abs=1e-9)
    assert main(["eval", "--distributor", d, "--purchaser", p, "--out", str(tmp_path / "empty")]) == 0
    assert (tmp_path / "empty" / "metrics.csv").read_text().count("\n") == 1
    assert main(["run", "--scenario", "@tiny3x4", "--allocator", "policy", "--distributor", d,
                 "--purchaser", p, "--out", str(tmp_path / "r")]) == 0
    # swapped roles do not fit
    assert main(["eval", "--distributor", p, "--purchaser", d, "--scenario", "@tiny3x4",
                 "--out", str(tmp_path / "x")]) == 2


def test_outputs_are_byte_identical(tmp_path):
    d, p = _checkpoints(tmp_path)
    runs = {
        "run": ["run", "--scenario", "@tiny3x4", "--allocator", "random", "--seed", "5"],
        "eval": ["eval", "--distributor", d, "--purchaser", p, "--scenario", "@tiny3x4",
                 "--episodes", "2"],
        "train": ["train", "--episodes", "6", "--seed", "3", "--params", "p_fa=0.1"],
    }
    for name, argv in runs.items():
        assert main(argv + ["--out", str(tmp_path / f"{name}1")]) == 0
        assert main(argv + ["--out", str(tmp_path / f"{name}2")]) == 0
        assert _bytes(tmp_path / f"{name}1") == _bytes(tmp_path / f"{name}2"), name


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "isccmarket", "oracle", "--scenario", "@tiny3x4",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["choices"] == [3, 2, -1, 2]
