import json
import os

import pytest

from relayq import cli
from relayq.errors import GridError


def run_cli(args, capsys):
    code = cli.main(args)
    out = capsys.readouterr()
    return code, out.out, out.err


def parse_csv(text):
    tables = {}
    current = None
    header = None
    for line in text.strip().splitlines():
        if line.startswith("# table: "):
            current = line.split(": ", 1)[1]
            tables[current] = []
            header = None
        elif header is None:
            header = line.split(",")
        else:
            row = dict(zip(header, line.split(",")))
            tables[current].append(row)
    return tables


def test_stability_output(capsys):
    code, out, _ = run_cli(["stability", "--lambda", "0.3", "--a", "0.5"], capsys)
    assert code == 0
    rows = parse_csv(out)["stability"]
    assert rows[0]["verdict"] == "stable"
    assert float(rows[0]["load"]) == pytest.approx(3 / 7, rel=1e-15)
    code, out, _ = run_cli(["stability", "--lambda", "0.5", "--a", "0.5"], capsys)
    rows = parse_csv(out)["stability"]
    assert rows[0]["verdict"] == "unstable"
    assert float(rows[0]["margin"]) == 0.0


def test_usage_errors(capsys):
    # both or neither of --lambda/--rho
    code, _, err = run_cli(["solve", "--lambda", "0.3", "--rho", "0.4", "--a", "0.5"], capsys)
    assert code == 2
    code, _, err = run_cli(["solve", "--a", "0.5"], capsys)
    assert code == 2
    # power series needs a = 1/2
    code, _, err = run_cli(
        ["solve", "--method", "psa", "--lambda", "0.2", "--a", "0.4"], capsys
    )
    assert code == 2
    assert "1/2" in err
    # argparse-level garbage
    assert cli.main(["solve", "--method", "bogus", "--rho", "0.4"]) == 2


def test_stability_exit_code(capsys):
    code, _, err = run_cli(["solve", "--lambda", "0.6", "--a", "0.5"], capsys)
    assert code == 3
    assert "stability" in err


def test_numerical_exit_code(capsys, monkeypatch):
    def boom(*a, **k):
        raise GridError("synthetic numerical failure")

    monkeypatch.setattr(cli.measures, "decay_diagnostics", boom)
    code, _, err = run_cli(["decay", "--rho", "0.4", "--a", "0.5"], capsys)
    assert code == 4
    assert "numerical failure" in err


def test_solve_csv_schema(capsys):
    code, out, _ = run_cli(["solve", "--rho", "0.1", "--a", "0.5"], capsys)
    assert code == 0
    tables = parse_csv(out)
    assert set(tables) == {"measures", "grid"}
    assert list(tables["grid"][0].keys()) == ["k", "l", "prob"]
    assert list(tables["measures"][0].keys()) == ["name", "value", "ci_halfwidth"]
    meas = {r["name"]: r["value"] for r in tables["measures"]}
    assert float(meas["e_sojourn"]) == pytest.approx(1.2222, abs=1e-3)


def test_rho_lambda_equivalence(capsys):
    _, out1, _ = run_cli(["solve", "--rho", "0.1", "--a", "0.5"], capsys)
    _, out2, _ = run_cli(["solve", "--lambda", str(1 / 11), "--a", "0.5"], capsys)
    assert out1 == out2


def test_byte_identical_outputs(tmp_path, capsys):
    args = [
        "simulate", "--lambda", "0.3", "--a", "0.5", "--seed", "7",
        "--warmup", "500", "--slots", "20000", "--reps", "2",
    ]
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    assert cli.main(args + ["--out", str(p1)]) == 0
    assert cli.main(args + ["--out", str(p2)]) == 0
    assert p1.read_bytes() == p2.read_bytes()


def test_json_and_csv_agree(tmp_path):
    args = [
        "simulate", "--lambda", "0.3", "--a", "0.5", "--seed", "7",
        "--warmup", "500", "--slots", "20000", "--reps", "2",
    ]
    pc, pj = tmp_path / "r.csv", tmp_path / "r.json"
    assert cli.main(args + ["--format", "csv", "--out", str(pc)]) == 0
    assert cli.main(args + ["--format", "json", "--out", str(pj)]) == 0
    csv_tables = parse_csv(pc.read_text())
    json_tables = json.loads(pj.read_text())
    for name, rows in json_tables.items():
        for csv_row, json_row in zip(csv_tables[name], rows):
            for key, jval in json_row.items():
                cval = csv_row[key]
                if jval is None:
                    assert cval == ""
                elif isinstance(jval, bool):
                    assert cval == ("true" if jval else "false")
                elif isinstance(jval, float):
                    assert float(cval) == jval  # identical at full precision
                else:
                    assert str(jval) == cval


def test_output_dir_env(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_DIR_ENV, str(tmp_path))
    assert cli.main(["stability", "--rho", "0.4", "--a", "0.5", "--out", "verdict.csv"]) == 0
    assert (tmp_path / "verdict.csv").exists()


def test_compare_command(capsys):
    code, out, _ = run_cli(["compare", "--rho", "0.4", "--a", "0.5"], capsys)
    assert code == 0
    rows = {r["name"]: float(r["value"]) for r in parse_csv(out)["compare"]}
    assert rows["maxnorm_ca_oracle"] < 1e-8
    assert rows["maxnorm_psa_oracle"] < 1e-6
    assert rows["abs_diff_e_sojourn"] < 1e-3


def test_compare_requires_half(capsys):
    code, _, err = run_cli(["compare", "--rho", "0.4", "--a", "0.6"], capsys)
    assert code == 2


def test_decay_command(capsys):
    code, out, _ = run_cli(["decay", "--rho", "0.4", "--a", "0.5"], capsys)
    assert code == 0
    rows = parse_csv(out)["decay"]
    by_name = {}
    for r in rows:
        key = (r["name"], r.get("l", ""))
        by_name[key] = float(r["value"])
    assert by_name[("expected_rho_squared", "")] == pytest.approx(0.16, abs=1e-12)
    for l in ("0", "1", "3"):
        assert by_name[("fixed_l_ratio", l)] == pytest.approx(0.16, abs=1e-4)
    assert by_name[("marginal_min_ratio", "")] == pytest.approx(0.16, abs=1e-4)


def test_vs_single_server_command(capsys):
    code, out, _ = run_cli(["vs-single-server", "--lambda", "0.3"], capsys)
    assert code == 0
    tables = parse_csv(out)
    interval = {r["name"]: float(r["value"]) for r in tables["stability_interval"]}
    assert interval["a_minus"] == pytest.approx(0.18377, abs=5e-6)
    assert interval["a_plus"] == pytest.approx(0.81623, abs=5e-6)
    rows = {float(r["a"]): r for r in tables["vs_single_server"]}
    mid = rows[0.5]
    assert float(mid.get("single_mean_queue")) == pytest.approx(
        float(mid.get("jsrq_mean_total")), abs=1e-6
    )
