import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from twoq import cli
from twoq.chain import exact_stationary_bernoulli
from twoq.cli import PRESETS, main, preset_config, run_config, validate_config
from twoq.verify import scaled_law


def _write(tmp_path, obj, name="cfg.json"):
    p = tmp_path / name
    p.write_text(obj if isinstance(obj, str) else json.dumps(obj, indent=2))
    return str(p)


def _experiment(**over):
    e = {
        "name": "e",
        "chain": "TwoSided",
        "curves": {"name": "two_price"},
        "arrivals": {"family": "Bernoulli", "lambda_star": 0.5, "mu_star": 0.5},
        "schedule": {"rule": {"a": 1.0, "p": -1.0, "b": 1.0, "q": 0.5}, "eta": [10, 100]},
        "regime": 0,
        "method": "exact_closed_form",
    }
    e.update(over)
    return e


def _config(*experiments):
    return {"schema_version": 1, "experiments": list(experiments)}


def _read_tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


# ---------------------------------------------------------------------------
# presets


def test_preset_list(capsys):
    assert main(["preset", "--list"]) == 0
    names = capsys.readouterr().out.split()
    assert names == sorted(PRESETS)
    assert {"prop3.2-sweep", "fig2-laplace-to-hybrid", "prop5.1-case1"} <= set(names)


def test_preset_print_is_valid_config(capsys):
    assert main(["preset", "prop3.2-sweep"]) == 0
    cfg = json.loads(capsys.readouterr().out)
    assert validate_config(cfg).ok


def test_unknown_preset(capsys):
    assert main(["preset", "nope"]) == 1
    assert "unknown preset" in capsys.readouterr().err


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_every_preset_validates(name):
    v = validate_config(preset_config(name))
    assert v.ok, [str(d) for d in v.diagnostics]


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "twoq.cli", "preset", "--list"],
                         capture_output=True, text=True, check=True).stdout
    assert "prop3.2-sweep" in out.split()


# ---------------------------------------------------------------------------
# run


def test_run_is_byte_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "prop3.2-sweep", "--out", str(a)]) == 0
    assert main(["run", "prop3.2-sweep", "--out", str(b)]) == 0
    ta, tb = _read_tree(a), _read_tree(b)
    assert ta == tb
    assert "summary.json" in ta and "critical/residuals.csv" in ta


def test_summary_has_one_verdict_per_experiment(tmp_path):
    assert main(["run", "prop3.2-sweep", "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())["experiments"]
    assert set(summary) == {"quality-driven", "critical", "profit-driven"}
    assert all(s["verdict"] == "ConvergesMonotone" for s in summary.values())
    assert summary["critical"]["regime"] == "Critical"


def test_report_json_schema(tmp_path):
    assert main(["run", _write(tmp_path, _config(_experiment())), "--out", str(tmp_path / "o")]) == 0
    doc = json.loads((tmp_path / "o" / "e" / "report.json").read_text())
    assert doc["schema_version"] == 1 and doc["chain"] == "TwoSidedImbalance"
    assert doc["curves"] == "two_price" and len(doc["distances"]["ByEpsilon"]) == 2


def test_cdf_csv_round_trips_exactly(tmp_path):
    assert main(["run", _write(tmp_path, _config(_experiment())), "--out", str(tmp_path / "o")]) == 0
    with open(tmp_path / "o" / "e" / "cdf_100.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    x = np.array([float(r["x"]) for r in rows])
    c = np.array([float(r["cdf"]) for r in rows])
    step = scaled_law(exact_stationary_bernoulli(0.5, 0.01, 10.0), 0.01)
    ref = step.cdf(x)
    assert np.array_equal(c, ref)
    assert c[0] >= cli.CDF_TAIL_TRIM and c[-2] <= 1 - cli.CDF_TAIL_TRIM


def test_limit_csv_grid(tmp_path):
    assert main(["run", _write(tmp_path, _config(_experiment())), "--out", str(tmp_path / "o")]) == 0
    lines = (tmp_path / "o" / "e" / "limit.csv").read_text().splitlines()
    assert lines[0] == "scaling,x,pdf,cdf"
    assert len(lines) == 1 + cli.LIMIT_GRID_POINTS


def test_outputs_subset(tmp_path):
    cfg = _config(_experiment(outputs=["ks_table"]))
    assert main(["run", _write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 0
    assert sorted(p.name for p in (tmp_path / "o" / "e").iterdir()) == ["ks.csv", "report.json"]


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "env"))
    assert main(["run", _write(tmp_path, _config(_experiment()))]) == 0
    assert (tmp_path / "env" / "e" / "report.json").exists()


def test_knot_curves_config(tmp_path):
    curves = {"knots_c": [[-1, 0.0], [1, -1.0]], "knots_s": [[-1, -1.0], [1, 0.0]], "smoothness": "smooth"}
    e = _experiment(curves=curves, regime=1, method="truncated_solve",
                    schedule={"rule": {"a": 1.0, "p": -1.0, "b": 1.0, "q": 1.0}, "eta": [5, 20]})
    assert main(["run", _write(tmp_path, _config(e)), "--out", str(tmp_path / "o")]) == 0
    doc = json.loads((tmp_path / "o" / "e" / "report.json").read_text())
    assert set(doc["distances"]) == {"ByEpsilon", "ByTau"}


def test_simulate_config(tmp_path):
    e = _experiment(method={"name": "simulate", "n_steps": 100_000, "burn_in": 1000, "seeds": [1, 2]},
                    schedule=[{"epsilon": 0.1, "tau": 2.0, "eta": 1}, {"epsilon": 0.05, "tau": 3.0, "eta": 2}],
                    regime=0.2)
    assert main(["run", _write(tmp_path, _config(e)), "--out", str(tmp_path / "o")]) == 0
    assert (tmp_path / "o" / "e" / "ks.csv").exists()


def test_preset_reference_in_config(tmp_path):
    cfg = _config({"preset": "prop5.1-case1", "name": "mine"}, _experiment())
    v = validate_config(cfg)
    assert v.ok and [e.name for e in v.experiments] == ["mine", "e"]


def test_workers_give_same_bytes(tmp_path):
    assert main(["run", "fig2-laplace-to-hybrid", "--out", str(tmp_path / "a")]) == 0
    assert main(["run", "fig2-laplace-to-hybrid", "--out", str(tmp_path / "b"), "--workers", "2"]) == 0
    assert _read_tree(tmp_path / "a") == _read_tree(tmp_path / "b")


# ---------------------------------------------------------------------------
# validation failures


def test_empty_schedule_is_exit_one(tmp_path, capsys):
    cfg = _config(_experiment(schedule=[]))
    assert main(["run", _write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 1
    assert "experiments[0].schedule: nonempty required" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_invalid_json_reports_line(tmp_path, capsys):
    path = _write(tmp_path, '{\n  "experiments": [\n    {"name": }\n  ]\n}\n')
    assert main(["run", path]) == 1
    assert "line 3" in capsys.readouterr().err


def test_validate_rate_range(tmp_path, capsys):
    e = _experiment(schedule=[{"epsilon": 0.6, "tau": 2.0}], regime=0)
    assert main(["validate", _write(tmp_path, _config(e))]) == 1
    diags = json.loads(capsys.readouterr().out)
    assert diags[0]["level"] == "error"
    assert diags[0]["path"] == "experiments[0].schedule[0]"
    assert "λ*−ε·φ_max" in diags[0]["message"]


def test_validate_clean_preset(capsys):
    assert main(["validate", "prop3.2-sweep"]) == 0
    assert json.loads(capsys.readouterr().out) == []


def test_validate_piecewise_critical_warns_once(tmp_path, capsys):
    curves = {"knots_c": [[-1, 0.0], [1, -1.0]], "knots_s": [[-1, -1.0], [1, 0.0]]}
    e = _experiment(curves=curves, regime=1, method="truncated_solve")
    assert main(["validate", _write(tmp_path, _config(e))]) == 0
    diags = json.loads(capsys.readouterr().out)
    assert len(diags) == 1 and diags[0]["level"] == "warning"
    assert diags[0]["message"].startswith("Condition 2")


@pytest.mark.parametrize("over, path, text", [
    ({"curves": {"name": "zero"}}, "experiments[0].curves", "Condition 1"),
    ({"curves": {"name": "wiggle"}}, "experiments[0].curves.name", "unknown curves"),
    ({"method": "bogus"}, "experiments[0].method", "unknown method"),
    ({"curves": {"name": "tanh"}}, "experiments[0].method", "closed form"),
    ({"regime": -1}, "experiments[0].regime", "nonnegative"),
    ({"chain": "Triple"}, "experiments[0].chain", "TwoSided"),
    ({"outputs": ["pictures"]}, "experiments[0].outputs", "list drawn"),
    ({"arrivals": {"lambda_star": 0.5, "mu_star": 0.4}}, "experiments[0].arrivals", "balanced"),
])
def test_validation_errors_are_located(over, path, text):
    v = validate_config(_config(_experiment(**over)))
    assert not v.ok
    errs = [d for d in v.diagnostics if d.level == "error"]
    assert errs[0].path == path and text in errs[0].message


def test_duplicate_names_rejected():
    v = validate_config(_config(_experiment(), _experiment()))
    assert any("duplicate" in d.message for d in v.diagnostics)


def test_unclassifiable_schedule_needs_regime():
    e = _experiment(schedule={"rule": {"a": 1.0, "p": -1.0, "b": 1.0, "q": 0.9}, "eta": [10, 20, 40]})
    del e["regime"]
    v = validate_config(_config(e))
    assert not v.ok and v.diagnostics[0].path == "experiments[0].regime"


def test_missing_file(tmp_path, capsys):
    assert main(["run", str(tmp_path / "absent.json")]) == 1
    assert "cannot read" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# runtime failure


def test_runtime_failure_is_exit_two(tmp_path, monkeypatch, capsys):
    def boom(*args, **kwargs):
        raise RuntimeError("solver blew up")

    monkeypatch.setattr(cli, "sweep", boom)
    assert main(["run", _write(tmp_path, _config(_experiment())), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "experiment 'e' failed" in err and "solver blew up" in err


def test_run_config_direct(tmp_path):
    assert run_config(_config(_experiment()), tmp_path) == 0
    assert json.loads((tmp_path / "summary.json").read_text())["experiments"]["e"]["regime"] == "QualityDriven"
