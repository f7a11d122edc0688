import json
import subprocess
import sys
from pathlib import Path

import pytest

from superhedge.cli import main, validate_report

ROOT = Path(__file__).resolve().parents[1]
INST = ROOT / "instances"


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_price_spread(capsys):
    for functional in ("P", "D"):
        code, out, _ = run(["price", INST / "spread.json", "--functional", functional], capsys)
        assert code == 0
        rep = json.loads(out)
        validate_report(rep)
        assert rep["value"] == 0.5


def test_price_constrained_and_penalized(capsys):
    code, out, _ = run(["price", INST / "indicator_n20.json", "--functional", "DN", "--N", "1"], capsys)
    assert code == 0
    rep = json.loads(out)
    validate_report(rep)
    assert rep["functional"] == "D^N" and rep["N"] == 1.0 and rep["value"] > 0.99
    code, out, _ = run(["price", INST / "indicator_n20.json", "--functional", "PN", "--N", "1"], capsys)
    assert json.loads(out)["value"] == pytest.approx(rep["value"], abs=1e-6)


def test_output_is_byte_identical(capsys, tmp_path):
    outs = []
    for k in range(2):
        target = tmp_path / f"r{k}.json"
        run(["price", INST / "lookback_t3.json", "--functional", "D", "--out", target], capsys)
        outs.append(target.read_bytes())
    assert outs[0] == outs[1]


def test_exit_codes(capsys, tmp_path):
    code, out, _ = run(["price", INST / "reversed.json", "--functional", "P"], capsys)
    assert code == 2 and json.loads(out)["status"] == "infeasible"
    code, out, _ = run(["price", INST / "reversed.json", "--functional", "D"], capsys)
    assert code == 2 and json.loads(out)["value"] == "-inf"
    bad = tmp_path / "bad.json"
    bad.write_text("{", encoding="utf-8")
    code, _, err = run(["price", bad, "--functional", "P"], capsys)
    assert code == 1 and "instance" in err
    code, _, err = run(["price", INST / "spread.json", "--functional", "DN"], capsys)
    assert code == 1 and "--N" in err
    with pytest.raises(SystemExit) as exc:
        main(["price", str(INST / "spread.json"), "--functional", "XX"])
    assert exc.value.code == 1
    code, _, _ = run(["price", INST / "spread.json", "--functional", "P", "--max-iters", "1"], capsys)
    assert code == 3


@pytest.mark.parametrize(
    "doc,field",
    [
        ({"T": 3, "marginals": [{"support": [1.0], "weights": [1.0]}] * 2, "payoff": {"kind": "lookback"}}, "T"),
        ({"T": 2, "marginals": [{"support": [1.0], "weights": [1.0]}, {"support": [1.0]}], "payoff": {"kind": "lookback"}},
         "marginals[1].weights"),
        ({"T": 2, "marginals": [{"support": [1.0], "weights": [1.0]}] * 2, "payoff": {"kind": "exotic"}}, "payoff.kind"),
        ({"T": 2, "marginals": [{"support": [1.0], "weights": [1.0]}] * 2, "payoff": {"kind": "lookback"},
          "options": {"tol": -1}}, "options.tol"),
        ({"T": 2, "marginals": [{"support": [1.0], "weights": [1.0]}] * 2}, "payoff"),
    ],
)
def test_malformed_fields_are_named(doc, field, capsys, tmp_path):
    path = tmp_path / "inst.json"
    path.write_text(json.dumps(doc), encoding="utf-8")
    code, _, err = run(["price", path, "--functional", "P"], capsys)
    assert code == 1
    assert field in err


def test_sweep(capsys, tmp_path):
    code, out, _ = run(["sweep", INST / "indicator_n20.json", "--Ns", "1", "16", "--to-threshold"], capsys)
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0] == "N,D_N,P_N,gap,D,P"
    assert len(lines) == 4
    last = [float(v) for v in lines[-1].split(",")]
    assert last[0] > 16 and last[3] <= 1e-6 and abs(last[1] - last[4]) <= 1e-6
    code, _, err = run(["sweep", INST / "spread.json", "--Ns", "1", "1"], capsys)
    assert code == 1 and "duplicate" in err
    code, out, _ = run(["sweep", INST / "spread.json", "--Ns", "1", "2", "--format", "json"], capsys)
    assert code == 0 and json.loads(out)["rows"][0]["D_N"] == 0.5


def test_example31(capsys, tmp_path):
    code, out, _ = run(["example31", "closed-form", "--M", "10"], capsys)
    assert code == 0 and json.loads(out)["a1_closed_form"] == 0.025
    code, _, err = run(["example31", "grid", "--M", "3", "--n", "10"], capsys)
    assert code == 1 and "does not divide" in err
    code, out, _ = run(["example31", "grid", "--M", "2", "--n", "10", "--N", "1"], capsys)
    rep = json.loads(out)
    assert code == 0 and rep["expectation"] == pytest.approx(0.8) and rep["best_gain"] == pytest.approx(0.12)
    gp = tmp_path / "gap.dat"
    code, out, _ = run(["example31", "gap", "--n", "10", "20", "--N", "1", "4", "--gnuplot", gp], capsys)
    assert code == 0
    assert out.splitlines()[0] == "n,N,P,D,D_N,P_N,lower_bound_certificate"
    assert len(out.splitlines()) == 5
    assert gp.read_text().startswith("#")


def test_check(capsys):
    code, out, _ = run(["check", INST / "spread.json"], capsys)
    rep = json.loads(out)
    assert code == 0 and rep["martingale_feasible"] and rep["strassen_agrees"]
    code, out, _ = run(["check", INST / "reversed.json"], capsys)
    rep = json.loads(out)
    assert code == 2 and not rep["martingale_feasible"] and rep["strassen_agrees"]


def test_check_unequal_means(capsys, tmp_path):
    path = tmp_path / "m.json"
    path.write_text(json.dumps({"T": 2, "marginals": [{"support": [1.0], "weights": [1.0]},
                                                      {"support": [2.0], "weights": [1.0]}]}), encoding="utf-8")
    code, out, _ = run(["check", path], capsys)
    assert code == 2 and json.loads(out)["convex_order"]["same_mean"] is False


def test_console_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "superhedge", "example31", "closed-form", "--M", "1"],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["a1_numeric"] == 0.25
