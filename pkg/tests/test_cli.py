import json
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from drccp.cli import main, subsystem_seeds

PROBLEMS = Path(__file__).resolve().parents[1] / "problems"


@pytest.fixture
def probs(tmp_path):
    d = tmp_path / "problems"
    shutil.copytree(PROBLEMS, d)
    return d


def run(args, out):
    code = main(list(args) + ["--out", str(out)])
    rep = json.loads((out / "report.json").read_text()) if (out / "report.json").exists() else None
    return code, rep


def strip_timings(rep):
    return {k: v for k, v in rep.items() if k != "timings"}


@pytest.mark.parametrize("method,expected", [("cvar-conic", 1.2), ("inner", 1.2), ("scenario", 1.0)])
def test_solve_toy(probs, tmp_path, method, expected):
    code, rep = run(["solve", "--problem", str(probs / "toy.json"), "--method", method], tmp_path / "o")
    assert code == 0
    assert rep["solution"]["objective"] == pytest.approx(expected, abs=1e-7)
    assert rep["status"] == "optimal" and rep["input_digest"] and rep["seed"] == 0
    assert (tmp_path / "o" / "solution.csv").exists()
    assert (tmp_path / "o" / "worst_case.csv").exists() and (tmp_path / "o" / "worst_case.png").exists()


def test_solve_cutting_writes_trace(probs, tmp_path):
    out = tmp_path / "o"
    code, rep = run(["solve", "--problem", str(probs / "toy_box.json"), "--method", "cutting"], out)
    assert code == 0
    assert rep["solution"]["objective"] == pytest.approx(1.2, abs=1e-4 + 1e-6)
    assert (out / "trace.csv").read_text().startswith("k,M,sigma")
    assert (out / "trace.png").stat().st_size > 0


def test_no_figures(probs, tmp_path):
    out = tmp_path / "o"
    run(["solve", "--problem", str(probs / "toy.json"), "--no-figures"], out)
    assert (out / "worst_case.csv").exists() and not list(out.glob("*.png"))


def test_cutting_incompatible(probs, tmp_path):
    doc = json.loads((probs / "toy_box.json").read_text())
    doc["constraint"] = {"oracle": {"id": "log-sum-exp",
                                    "params": {"W": [[1.0], [-1.0]], "B": [[-1.0], [-1.0]], "e": -1.0}}}
    (probs / "lse.json").write_text(json.dumps(doc))
    code, _ = run(["solve", "--problem", str(probs / "lse.json"), "--method", "cutting"], tmp_path / "o")
    assert code == 5
    code, _ = run(["solve", "--problem", str(probs / "toy.json"), "--method", "cutting"], tmp_path / "o2")
    assert code == 5


def test_infeasible_exit_code(probs, tmp_path):
    code, rep = run(["solve", "--problem", str(probs / "toy.json"), "--method", "inner", "--theta", "10"],
                    tmp_path / "o")
    assert code == 2 and rep["status"] == "infeasible"


def test_input_errors(probs, tmp_path):
    assert main(["solve", "--problem", str(probs / "nope.json"), "--out", str(tmp_path)]) == 4
    (probs / "bad.json").write_text(json.dumps({"objective": [1.0]}))
    assert main(["solve", "--problem", str(probs / "bad.json"), "--out", str(tmp_path)]) == 4
    assert main(["solve", "--problem", str(probs / "toy.json"), "--alpha", "2", "--out", str(tmp_path)]) == 4
    assert not (tmp_path / "report.json").exists()


def test_certify(probs, tmp_path):
    code, rep = run(["certify", "--problem", str(probs / "toy.json"), "--x", "1.5"], tmp_path / "o")
    assert code == 0
    v = rep["verdicts"]
    assert v["DCP"] and v["CDCP"] and v["SCP_0"] and v["SA_delta"]
    assert rep["values"]["DCP"] == pytest.approx(0.2)
    assert rep["certificates"]["dcp"]["worst_case_probability"] == pytest.approx(0.2)
    code, rep = run(["certify", "--problem", str(probs / "toy.json"), "--x", "5"], tmp_path / "o2")
    assert code == 0 and rep["domain"] and not any(rep["verdicts"].values())
    code, rep = run(["certify", "--problem", str(probs / "toy.json"), "--x", "0.5", "--theta", "0"],
                    tmp_path / "o3")
    # theta = 0: half the samples violate, alpha = 0.5
    assert rep["values"]["DCP"] == 0.5 and rep["verdicts"]["DCP"]
    assert main(["certify", "--problem", str(probs / "toy.json"), "--x", "1,2", "--out", str(tmp_path)]) == 4


def test_compare(probs, tmp_path):
    out = tmp_path / "o"
    code, rep = run(["compare", "--problem", str(probs / "toy_box.json"), "--candidates", "1000", "--seed", "7"],
                    out)
    c = rep["comparison"]
    assert code == 0 and c["violation_count"] == 0 and c["candidates"] == 1000
    assert c["delta1"] == pytest.approx(0.5 - 0.1 / 3) and c["delta2"] == pytest.approx(0.2)
    assert len((out / "compare.csv").read_text().splitlines()) == 1001
    assert (out / "compare.png").exists()


def test_compare_edge_cases(probs, tmp_path, capsys):
    code, rep = run(["compare", "--problem", str(probs / "toy_box.json"), "--candidates", "0"], tmp_path / "o")
    assert code == 0 and rep["comparison"]["candidates"] == 0
    assert len((tmp_path / "o" / "compare.csv").read_text().splitlines()) == 1
    code, rep = run(["compare", "--problem", str(probs / "toy_box.json"), "--candidates", "20", "--theta", "50"],
                    tmp_path / "o2")
    assert code == 0 and rep["comparison"]["warnings"]
    assert any("SA_d1" in s for s in rep["comparison"]["skipped"])
    assert "warning" in capsys.readouterr().err


def test_wasserstein(tmp_path):
    (tmp_path / "a.json").write_text(json.dumps({"atoms": [[0.0]], "weights": [1.0]}))
    (tmp_path / "b.csv").write_text("1\n")
    code, rep = run(["wasserstein", "--a", str(tmp_path / "a.json"), "--b", str(tmp_path / "b.csv")],
                    tmp_path / "o")
    assert code == 0 and rep["distance"] == pytest.approx(1.0)
    assert (tmp_path / "o" / "plan.csv").exists()
    assert main(["wasserstein", "--a", str(tmp_path / "zz.csv"), "--b", str(tmp_path / "b.csv"),
                 "--out", str(tmp_path)]) == 4


def test_oracle_check(probs, tmp_path):
    code, rep = run(["oracle-check", "--problem", str(probs / "toy_box.json"), "--count", "50"], tmp_path / "o")
    assert code == 0 and rep["check"]["failures"] == 0 and rep["check"]["points"] == 50


@pytest.mark.parametrize("argv", [
    ["solve", "--method", "cutting"],
    ["compare", "--candidates", "200"],
    ["certify", "--x", "1.3"],
])
def test_reports_are_deterministic(probs, tmp_path, argv):
    argv = argv[:1] + ["--problem", str(probs / "toy_box.json"), "--seed", "3", "--embed-samples"] + argv[1:]
    _, a = run(argv, tmp_path / "a")
    _, b = run(argv, tmp_path / "b")
    assert a["samples"] == [[0.0], [1.0]]
    assert strip_timings(a) == strip_timings(b)
    for name in ("compare.csv", "solution.csv", "certify.csv", "worst_case.csv"):
        if (tmp_path / "a" / name).exists():
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seeds_are_independent():
    s = subsystem_seeds(0)
    assert len(set(s.values())) == len(s)
    assert s == subsystem_seeds(0) and s != subsystem_seeds(1)


def test_console_entry(probs, tmp_path):
    res = subprocess.run([sys.executable, "-m", "drccp.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip()
