import csv
import json

import pytest
from hypothesis import given, settings, strategies as st

from kawasaki_lab import cli
from kawasaki_lab.config import DEFAULTS, ConfigError, load_config, parse_config
from kawasaki_lab.estimators import read_jsonl
from kawasaki_lab.simulator import SimulationError

FREE = """\
# free case, small
model.kernel.family = "gaussian"
model.potential.height = 0.0
initial.kappa = 0.5
initial.low = [-4.0]
initial.high = [4.0]
run.t_max = 0.5
run.query_times = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]
run.replicas = 300
run.base_seed = 7
hierarchy.M = 32
hierarchy.t = 0.2
hierarchy.amplitude = 0.1
verify.checks = ["moments", "fp_residual", "hierarchy_spectral", "combinatorics", "metric_axioms"]
"""


def write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


# configuration files ----------------------------------------------------------------

def test_defaults_validate():
    cfg = parse_config("")
    assert cfg.values == DEFAULTS


def test_parse_dump_parse_identity():
    cfg = parse_config(FREE)
    assert parse_config(cfg.dumps()) == cfg
    assert cfg["run.replicas"] == 300 and cfg["initial.low"] == [-4.0]


@settings(max_examples=60, deadline=None)
@given(kappa=st.floats(0.01, 10), reps=st.integers(1, 10**6), seed=st.integers(0, 2**64 - 1),
       alpha=st.floats(0, 1), height=st.floats(0, 50), fam=st.sampled_from(["gaussian", "laplace"]),
       torus=st.none() | st.floats(0.1, 100))
def test_round_trip_property(kappa, reps, seed, alpha, height, fam, torus):
    cfg = parse_config("").with_overrides(**{
        "initial.kappa": kappa, "run.replicas": reps, "run.base_seed": seed,
        "model.alpha": alpha, "model.potential.height": height, "model.kernel.family": fam,
        "run.torus": torus})
    again = parse_config(cfg.dumps())
    assert again == cfg
    assert again.dumps() == cfg.dumps()


@pytest.mark.parametrize("line,key", [
    ("run.replicas = 0", "run.replicas"),
    ("run.replicas = 2.5", "run.replicas"),
    ("model.alpha = 1.5", "model.alpha"),
    ("model.d = 3", "model.d"),
    ('model.kernel.family = "cauchy"', "model.kernel.family"),
    ("initial.low = [1.0, 2.0]", "initial.low"),
    ("run.query_times = [0.0, 9.0]", "run.query_times"),
    ('hierarchy.closure = "mean_field"', "hierarchy.closure"),
    ('verify.checks = ["everything"]', "verify.checks"),
    ("bogus.key = 1", "bogus.key"),
    ("run.t_max = oops", "run.t_max"),
    ('initial.kind = "fixed"', "initial.file"),
])
def test_validation_names_field(line, key):
    with pytest.raises(ConfigError) as exc:
        parse_config(line)
    assert exc.value.key == key
    assert str(exc.value).startswith(key)


def test_fixed_initial_file_is_relative_to_config(tmp_path):
    (tmp_path / "g0.csv").write_text("x_1\n0.0\n1.5\n")
    p = write(tmp_path, 'initial.kind = "fixed"\ninitial.file = "g0.csv"\n')
    cfg = load_config(p)
    assert len(cfg.source()) == 2
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.cfg")


# commands ----------------------------------------------------------------------------

def test_simulate_artifacts_and_determinism(tmp_path, capsys):
    cfg = write(tmp_path, FREE.replace("run.replicas = 300", "run.replicas = 4"))
    out = tmp_path / "sim"
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(out), "--threads", "2"]) == 0
    names = sorted(p.name for p in out.iterdir())
    assert "manifest.json" in names and "config.cfg" in names and "version.json" in names
    assert sum(n.startswith("events_") for n in names) == 4
    assert sum(n.startswith("snap_") for n in names) == 6
    assert json.loads((out / "version.json").read_text())["threads_requested"] == 2
    assert parse_config((out / "config.cfg").read_text()) == load_config(cfg)
    d1 = json.loads((out / "manifest.json").read_text())["digest"]
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
    assert json.loads((out / "manifest.json").read_text())["digest"] == d1
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(out), "--seed", "8"]) == 0
    assert json.loads((out / "manifest.json").read_text())["digest"] != d1
    assert not list(tmp_path.glob(".sim.stage-*"))


def test_validation_exit_code(tmp_path, capsys):
    cfg = write(tmp_path, "run.replicas = 0\n")
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert "run.replicas" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()
    assert cli.main(["simulate", "--config", str(tmp_path / "nope.cfg")]) == 1
    assert cli.main(["simulate", "--config", str(cfg), "--threads", "-1"]) == 1


def test_internal_error_exit_code_and_no_partial_output(tmp_path, monkeypatch, capsys):
    cfg = write(tmp_path, FREE)
    out = tmp_path / "sim"

    def boom(*a, **k):
        raise SimulationError("negative waiting time")

    monkeypatch.setattr(cli, "run_ensemble", boom)
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(out)]) == 3
    assert not out.exists() and not list(tmp_path.glob(".sim.stage-*"))


def test_staging_keeps_old_artifact_on_failure(tmp_path):
    out = tmp_path / "art"
    out.mkdir()
    (out / "old.txt").write_text("keep")
    with pytest.raises(RuntimeError):
        with cli.staged(out) as stage:
            (stage / "new.txt").write_text("partial")
            raise RuntimeError
    assert (out / "old.txt").read_text() == "keep"
    with cli.staged(out) as stage:
        (stage / "new.txt").write_text("done")
    assert [p.name for p in out.iterdir()] == ["new.txt"]


def test_verify_free_config_passes(tmp_path, capsys):
    cfg = write(tmp_path, FREE)
    out = tmp_path / "ver"
    assert cli.main(["verify", "--config", str(cfg), "--out", str(out)]) == 0
    rows = read_jsonl(out / "reports.jsonl")
    ids = {r["check_id"] for r in rows}
    assert {"fp_residual", "hierarchy_spectral", "composition_sums", "metric_triangle"} <= ids
    assert all(r["verdict"] == "pass" for r in rows)
    assert (out / "summary.txt").read_text().startswith("check")
    first = (out / "reports.jsonl").read_text()
    assert cli.main(["verify", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "reports.jsonl").read_text() == first


@pytest.mark.parametrize("records,code", [
    ([("a", 1.0, 2.0, False)], 0),
    ([("a", 1.0, 2.0, False), ("b", 3.0, 2.0, False)], 2),
    ([("a", 3.0, 2.0, True)], 0),
])
def test_verify_exit_code_follows_unflagged_failures(tmp_path, monkeypatch, capsys, records, code):
    from kawasaki_lab.estimators import ReportRecord
    recs = [ReportRecord(i, "x", m, 0.0, t, "upper", flagged=f) for i, m, t, f in records]
    monkeypatch.setattr(cli, "run_checks", lambda cfg: recs)
    out = tmp_path / "v"
    assert cli.main(["verify", "--out", str(out)]) == code
    assert len(read_jsonl(out / "reports.jsonl")) == len(records)


def test_hierarchy_command(tmp_path, capsys):
    cfg = write(tmp_path, FREE)
    out = tmp_path / "hier"
    assert cli.main(["hierarchy", "--config", str(cfg), "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["spectral_error"] < 1e-4
    zero = write(tmp_path, FREE + "hierarchy.t = 0.0\n", "zero.cfg")
    assert cli.main(["hierarchy", "--config", str(zero), "--out", str(out)]) == 0
    assert json.loads((out / "report.json").read_text())["spectral_error"] == 0.0
    series = write(tmp_path, FREE + 'model.potential.height = 0.3\nhierarchy.scheme = "series"\n'
                   "hierarchy.t = 50.0\nhierarchy.theta_prime = 1.0\n", "series.cfg")
    assert cli.main(["hierarchy", "--config", str(series), "--out", str(out)]) == 0
    cert = json.loads((out / "report.json").read_text())["certificate"]
    assert cert["within_radius"] is False and cert["flag"]


def test_hierarchy_rejects_two_dimensions(tmp_path, capsys):
    cfg = write(tmp_path, "model.d = 2\ninitial.low = [-1.0, -1.0]\ninitial.high = [1.0, 1.0]\n")
    assert cli.main(["hierarchy", "--config", str(cfg), "--out", str(tmp_path / "h")]) == 1


def test_combinatorics_tables(tmp_path, capsys):
    out = tmp_path / "comb"
    assert cli.main(["combinatorics", "--m-max", "3", "--n-max", "4", "--out", str(out)]) == 0
    with (out / "compositions.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    row = next(r for r in rows if r["m"] == "2" and r["n"] == "2")
    assert row["weight_sum"] == "4"
    assert all(r["weight_sum"] == r["m_pow_n"] for r in rows)
    with (out / "wk.csv").open() as fh:
        assert all(r["closed_form"] == r["recurrence"] for r in csv.DictReader(fh))
    assert cli.main(["combinatorics", "--m-max", "0", "--out", str(out)]) == 1


def test_metric_command(tmp_path, capsys):
    a = tmp_path / "a.csv"
    a.write_text("x_1\n0.0\n1.0\n")
    b = tmp_path / "b.csv"
    b.write_text("x_1\n0.0\n")
    assert cli.main(["metric", str(a), str(a)]) == 0
    assert float(capsys.readouterr().out) == 0.0
    assert cli.main(["metric", str(a), str(b), "--out", str(tmp_path / "m")]) == 0
    val = json.loads((tmp_path / "m" / "metric.json").read_text())["value"]
    assert val == pytest.approx(0.5, abs=1e-9)  # a lone point at 1 weighs psi(1) = 1/2
    assert cli.main(["metric", str(a), str(tmp_path / "missing.csv")]) == 1
    c = tmp_path / "c.csv"
    c.write_text("x_1,x_2\n0.0,0.0\n")
    assert cli.main(["metric", str(a), str(c)]) == 1


def test_module_entry_point():
    import subprocess
    import sys
    res = subprocess.run([sys.executable, "-m", "kawasaki_lab", "--version"], capture_output=True,
                         text=True)
    assert res.returncode == 0 and res.stdout.strip() == "0.1.0"


def test_golden_free_config_passes(tmp_path, capsys):
    from pathlib import Path
    golden = Path(__file__).resolve().parents[1] / "demos" / "configs" / "free_golden.cfg"
    out = tmp_path / "golden"
    assert cli.main(["verify", "--config", str(golden), "--out", str(out)]) == 0
    rows = read_jsonl(out / "reports.jsonl")
    assert len(rows) > 60 and all(r["verdict"] == "pass" for r in rows)
