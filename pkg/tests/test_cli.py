import json
import math
from pathlib import Path

import pytest

from pmorder import experiments
from pmorder.cli import EXIT_BAD_CONFIG, EXIT_OK, EXIT_RUNTIME, EXIT_VERDICT_FAILED, main
from pmorder.experiments import ConfigError, list_kinds, load_config, run_experiment, validate_config

GOLDEN = Path(__file__).parent / "golden"
KINDS = sorted(p.name for p in GOLDEN.iterdir() if (p / "config.json").exists())


def _close(a, b, path="$"):
    """Structural equality with a relative tolerance on floats."""
    if isinstance(a, float) or isinstance(b, float):
        assert isinstance(a, (int, float)) and isinstance(b, (int, float)), path
        assert math.isclose(a, b, rel_tol=1e-9, abs_tol=1e-12), f"{path}: {a} != {b}"
    elif isinstance(a, dict):
        assert isinstance(b, dict) and sorted(a) == sorted(b), path
        for k in a:
            _close(a[k], b[k], f"{path}.{k}")
    elif isinstance(a, list):
        assert isinstance(b, list) and len(a) == len(b), path
        for i, (x, y) in enumerate(zip(a, b)):
            _close(x, y, f"{path}[{i}]")
    else:
        assert a == b, f"{path}: {a!r} != {b!r}"


def test_every_kind_has_a_golden_file():
    assert KINDS == sorted(list_kinds())


@pytest.mark.parametrize("kind", KINDS)
def test_golden_report(kind, tmp_path):
    d = GOLDEN / kind
    assert main(["run", str(d / "config.json"), "--out", str(tmp_path)]) == EXIT_OK
    got = json.loads((tmp_path / "report.json").read_text())
    want = json.loads((d / "report.json").read_text())
    assert set(got["provenance"]) == {"git_hash", "seed", "timestamp", "version"}
    got["provenance"] = want["provenance"] = {}
    _close(got, want)
    for table in sorted((d / "tables").glob("*.csv")):
        assert (tmp_path / "tables" / table.name).read_bytes() == table.read_bytes(), table.name
    assert sorted(p.name for p in (tmp_path / "tables").iterdir()) == sorted(
        p.name for p in (d / "tables").iterdir()
    )


@pytest.mark.parametrize("kind", ["counterexample", "ordering-sweep", "ring-vs-marginal"])
def test_reports_reproducible(kind):
    cfg = load_config(GOLDEN / kind / "config.json")
    a = run_experiment(cfg, threads=1).to_dict()
    b = run_experiment(cfg, threads=3).to_dict()
    a["provenance"].pop("timestamp")
    b["provenance"].pop("timestamp")
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


def test_seed_override_changes_random_parts(tmp_path):
    cfg = GOLDEN / "ordering-sweep" / "config.json"
    main(["run", str(cfg), "--out", str(tmp_path / "a"), "--seed", "1"])
    main(["run", str(cfg), "--out", str(tmp_path / "b"), "--seed", "2"])
    a = json.loads((tmp_path / "a" / "report.json").read_text())
    b = json.loads((tmp_path / "b" / "report.json").read_text())
    assert a["inputs"]["seed"] == 1 and b["inputs"]["seed"] == 2
    assert a["quantities"] != b["quantities"]


def test_counterexample_report_values(tmp_path):
    assert main(["run", str(GOLDEN / "counterexample" / "config.json"), "--out", str(tmp_path)]) == EXIT_OK
    rep = json.loads((tmp_path / "report.json").read_text())
    q = rep["quantities"]
    assert q["law_1"]["asvar"] == pytest.approx(1.4577, abs=2e-3)
    assert q["law_2"]["asvar"] == pytest.approx(1.5632, abs=2e-3)
    assert q["law_1"]["weight_var"] == pytest.approx(0.1587, abs=2e-4)
    assert q["law_2"]["weight_var"] == pytest.approx(0.1526, abs=2e-4)
    for v in rep["verdicts"]:
        assert {"tol", "oracle", "value", "target"} <= set(v)


def test_averaging_columns_monotone():
    rep = run_experiment(load_config(GOLDEN / "averaging" / "config.json"))
    t = rep.tables["averaging"]
    var = t.header.index("asvar")
    alpha = t.header.index("alpha")
    vals = [r[var] for r in t.rows]
    accs = [r[alpha] for r in t.rows]
    assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))
    assert all(b >= a - 1e-12 for a, b in zip(accs, accs[1:]))


def test_csv_format():
    text = (GOLDEN / "counterexample" / "tables" / "counterexample.csv").read_bytes()
    assert b"\r" not in text and text.endswith(b"\n")
    cells = [c for line in text.decode().splitlines()[1:] for c in line.split(",")]
    assert all(len(c.replace("-", "").replace(".", "").split("e")[0]) <= 13 for c in cells)


# --- config handling and exit codes ------------------------------------------------------


def test_list_kinds(capsys):
    assert main(["list-kinds"]) == EXIT_OK
    assert capsys.readouterr().out.split() == list_kinds()


def test_empty_config_is_schema_error(tmp_path, capsys):
    p = tmp_path / "empty.json"
    p.write_text("")
    assert main(["run", str(p)]) == EXIT_BAD_CONFIG
    assert main(["validate", str(p)]) == EXIT_BAD_CONFIG
    with pytest.raises(ConfigError):
        load_config(p)


@pytest.mark.parametrize(
    "cfg",
    [
        {},
        {"kind": "nope"},
        {"kind": "counterexample", "extra": 1},
        {"kind": "ordering-sweep", "params": {"instances": -3}},
        {"kind": "ordering-sweep", "params": {"bogus": 1}},
        {"kind": "counterexample", "seed": -1},
    ],
)
def test_schema_rejections(cfg, tmp_path):
    with pytest.raises(ConfigError):
        validate_config(cfg)
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg))
    assert main(["validate", str(p)]) == EXIT_BAD_CONFIG


def test_missing_file_and_bad_seed(tmp_path):
    assert main(["run", str(tmp_path / "none.json")]) == EXIT_BAD_CONFIG
    cfg = GOLDEN / "counterexample" / "config.json"
    assert main(["run", str(cfg), "--seed", str(2**64), "--out", str(tmp_path)]) == EXIT_BAD_CONFIG


def test_runtime_error_names_module(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"kind": "ordering-sweep", "params": {"min_states": 5, "max_states": 2}}))
    assert main(["run", str(p), "--out", str(tmp_path / "o")]) == EXIT_RUNTIME
    assert "ordering-sweep failed in pmorder." in capsys.readouterr().err


def test_failed_verdict_exit_code(tmp_path, monkeypatch, capsys):
    def failing(report, params, seed, threads):
        report.check("always_false", False, 1.0, 0.0, 0.0, "test stub")
        report.check("observed_only", False, 1.0, 0.0, 0.0, "test stub", asserted=False)

    monkeypatch.setitem(experiments.KINDS, "counterexample", failing)
    cfg = GOLDEN / "counterexample" / "config.json"
    assert main(["run", str(cfg), "--out", str(tmp_path)]) == EXIT_VERDICT_FAILED
    out = capsys.readouterr().out
    assert "[FAIL] always_false" in out and "[NOTE] observed_only" in out
