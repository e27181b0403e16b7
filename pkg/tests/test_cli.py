import json
import subprocess
import sys

import pytest

from scalekit.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def all_strings(value):
    if isinstance(value, dict):
        return all(all_strings(v) for v in value.values())
    if isinstance(value, list):
        return all(all_strings(v) for v in value)
    return isinstance(value, str)


def test_validate(capsys):
    code, out, _ = run(capsys, "validate", "--model", "example1_sn")
    assert code == 0
    doc = json.loads(out)
    assert doc["status"] == "ok" and doc["dimension"] == 11 and doc["side"] == "SN"
    assert len(doc["manifest"]["inputs"]["example1_sn"]) == 64


def test_validation_exit_code(capsys, tmp_path):
    code, _, err = run(capsys, "validate", "--model", "example2_sn")
    assert code == 2
    assert "error" in err
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert run(capsys, "validate", "--model", str(bad))[0] == 2
    assert run(capsys, "perf", "--model", "example1_sn")[0] == 2
    assert run(capsys, "validate", "--model", "example1_sn", "--param", "nope=1")[0] == 2


def test_numerical_exit_code(capsys):
    # Example 2 at 10 digits: I - Wbar G is too ill-conditioned to factor
    code, _, err = run(capsys, "perf", "--model", "example2_sn", "--param", "f4_theta=0.15",
                       "--barrier", "0.456177", "--digits", "10")
    assert code == 3
    assert "singular" in err


def test_censored_exit_code(capsys):
    code, _, err = run(capsys, "simulate", "--model", "example1_sn", "--barrier", "40",
                       "--paths", "200", "--max-steps", "3")
    assert code == 4
    assert "max_steps" in err


def test_perf_numbers_are_decimal_strings(capsys):
    code, out, _ = run(capsys, "perf", "--model", "example1_sn", "--barrier", "0.456177")
    assert code == 0
    doc = json.loads(out)
    assert all_strings({k: doc[k] for k in ("ARL", "ADD", "PFA", "barrier")})
    assert doc["manifest"]["config"]["barrier"] == "0.456177"
    assert float(doc["ARL"]) > 1
    assert doc["warnings"] == []


def test_perf_csv(capsys):
    code, out, _ = run(capsys, "perf", "--model", "example1_sp", "--barrier", "1", "--format", "csv")
    assert code == 0
    lines = out.splitlines()
    assert lines[0].startswith("# manifest: ")
    assert lines[1] == "# warnings: []"
    assert lines[2] == "measure,value"
    assert [l.split(",")[0] for l in lines[3:]] == ["ARL", "ADD", "PFA"]


def test_scale_csv_header(capsys):
    code, out, _ = run(capsys, "scale", "--model", "example1_sn", "--x", "0:1:3", "--digits", "20")
    assert code == 0
    lines = out.splitlines()
    assert "# precision: 20" in lines and "# n_max: 100" in lines
    assert any(l.startswith("# k_terms: ") for l in lines)
    data = [l for l in lines if not l.startswith("#")]
    assert data[0].split(",")[:2] == ["x", "W[0][0]"]
    assert len(data) == 4 and len(data[1].split(",")) == 1 + 11 * 11


def test_truncation_warning_is_reported(capsys):
    code, out, err = run(capsys, "scale", "--model", "example1_sn", "--x", "3", "--nmax", "5",
                         "--format", "json")
    assert code == 0
    assert json.loads(out)["warnings"]
    assert "warning:" in err


def test_barrier(capsys):
    code, out, _ = run(capsys, "barrier", "--model", "example1_sn", "--beta", "5", "--tol", "1e-6")
    assert code == 0
    doc = json.loads(out)
    assert abs(float(doc["ARL"]) - 5) < 1e-6
    assert doc["trace"]


def test_passage(capsys):
    code, out, _ = run(capsys, "passage", "--model", "example1_sp", "--level", "1.2", "--start", "0.3")
    assert code == 0
    doc = json.loads(out)
    assert len(doc["phase_dist"]) == 11
    assert abs(sum(float(v) for v in doc["phase_dist"][0]) - 1) < 1e-20


def test_rerun_is_byte_identical(capsys, tmp_path):
    argv = ["simulate", "--model", "example1_sn", "--barrier", "0.5", "--paths", "3000", "--seed", "9"]
    a = tmp_path / "a.json"
    assert main(argv + ["--out", str(a)]) == 0
    first = a.read_bytes()
    assert main(argv + ["--out", str(a)]) == 0
    assert a.read_bytes() == first


def test_workers_do_not_change_report(capsys):
    argv = ["simulate", "--model", "example1_sp", "--barrier", "0.5", "--paths", "12000", "--seed", "9"]
    one = run(capsys, *argv)[1]
    assert run(capsys, *argv, "--workers", "2")[1] == one
    assert run(capsys, *argv, "--workers=3")[1] == one


def test_check_equivalence(capsys):
    code, out, _ = run(capsys, "check-equivalence", "--model", "example1_sp", "--barrier", "1",
                       "--paths", "500")
    assert code == 0
    assert json.loads(out)["passed"] is True


@pytest.mark.slow
def test_reproduce_table1_reports_deviations(capsys):
    code, out, err = run(capsys, "reproduce", "1", "--paths", "0")
    assert code == 1
    assert "differ from the published values" in err
    body = [l for l in out.splitlines() if not l.startswith("#")]
    assert body[0].startswith("table,side,epsilon,beta,barrier,measure,analytic,published")
    assert len(body) == 1 + 36


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "scalekit", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip()
