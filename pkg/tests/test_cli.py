import json

import pytest

from zygmra import cli
from zygmra.cli import EXIT_BREACH, EXIT_OK, EXIT_USAGE, Report, RunConfig, main, run


def _run(tmp_path, name, *args):
    out = tmp_path / name
    code = main([*args, "--out", str(out)])
    return code, out.read_text() if out.exists() else ""


@pytest.mark.parametrize("suite", ["haar", "collapse", "paraproduct", "structural"])
def test_verify_suites_pass(tmp_path, suite):
    code, text = _run(tmp_path, f"{suite}.csv", "verify", "--suite", suite, "--trials", "3")
    assert code == EXIT_OK
    assert len(text.splitlines()) > 1


def test_haar_suite_reports_small_residuals(tmp_path):
    code, text = _run(tmp_path, "h.json", "verify", "haar", "--L", "3,3,6", "--trials", "3", "--format", "json")
    data = json.loads(text)
    assert code == EXIT_OK and data["passed"]
    assert all(r["residual"] <= 1e-12 for r in data["rows"])


def test_structural_suite_for_one_complexity(tmp_path):
    code, text = _run(tmp_path, "s.csv", "verify", "--suite", "structural", "--k", "1,1,2", "--trials", "3")
    assert code == EXIT_OK
    header, row = text.splitlines()[:2]
    assert header.startswith("k1,k2,k3,C") and row.startswith("1,1,2,")


def test_replay_is_byte_identical(tmp_path):
    args = ("bench", "commutator", "--L", "2,2,4", "--k", "1,1,2", "--trials", "4", "--seed", "9")
    a = _run(tmp_path, "a.csv", *args)
    b = _run(tmp_path, "b.csv", *args)
    assert a[0] == b[0] == EXIT_OK and a[1] == b[1] and a[1]


def test_aliases_match_long_forms(tmp_path):
    long = _run(tmp_path, "l.csv", "verify", "paraproduct", "--trials", "2")
    short = _run(tmp_path, "s.csv", "paraproduct-check", "--trials", "2")
    assert long == short
    assert _run(tmp_path, "v.csv", "shift", "verify", "--k", "1,0,1", "--trials", "2")[0] == EXIT_OK


def test_usage_errors_exit_two(tmp_path, capsys):
    assert main(["bench", "commutator", "--fixture", "no-such-fixture", "--trials", "2"]) == EXIT_USAGE
    assert "no-such-fixture" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        main(["verify", "--suite", "bogus"])
    assert exc.value.code == EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        main(["verify", "haar", "--L", "3,3,3"])
    assert exc.value.code == EXIT_USAGE
    assert main(["verify", "structural", "--L", "1,1,2", "--k", "3,3,6"]) == EXIT_USAGE


def test_breach_exits_one(monkeypatch):
    def failing(cfg):
        return Report(["x"], [[1.0]], passed=False)

    monkeypatch.setattr(cli, "_suite_haar", failing)
    code, text = run(RunConfig("verify", suite="haar"))
    assert code == EXIT_BREACH and text.startswith("x\n")


def test_report_merge(tmp_path):
    a = _run(tmp_path, "a.csv", "verify", "paraproduct", "--trials", "2")[1]
    b = _run(tmp_path, "b.csv", "verify", "paraproduct", "--trials", "3", "--seed", "1")[1]
    code, merged = _run(tmp_path, "m.csv", "report-merge", str(tmp_path / "a.csv"), str(tmp_path / "b.csv"))
    assert code == EXIT_OK
    assert merged.splitlines() == a.splitlines() + b.splitlines()[1:]
    _run(tmp_path, "a.json", "verify", "paraproduct", "--trials", "2", "--format", "json")
    code, text = _run(tmp_path, "m.json", "report-merge", str(tmp_path / "a.json"), "--format", "json")
    assert code == EXIT_OK and "a.json" in json.loads(text)["reports"]
