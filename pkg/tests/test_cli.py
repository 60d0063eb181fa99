import csv
import json

import numpy as np
import pytest

from bangbang.cli import OUT_ENV, ExperimentConfig, main, run
from bangbang.errors import ConfigError
from bangbang.io import Table, fmt, write_csv


def _write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_fmt_round_trips():
    for x in (0.1, np.pi, 1e-300, -2.5e17, 1.0 / 3.0):
        assert float(fmt(x)) == x
    assert fmt(3) == "3" and fmt(True) == "1"


def test_write_csv_layout(tmp_path):
    path = tmp_path / "t.csv"
    write_csv(path, Table(["a", "b"], [(1, 0.5), (2, 0.25)]))
    assert path.read_bytes() == b"a,b\n1,0.5\n2,0.25\n"


def test_solve_example(tmp_path, capsys):
    cfg = _write(tmp_path, {"kind": "solve", "model": "pure-heat", "n_points": 64, "n_steps": 100,
                            "snapshot_times": [0.0, 0.5, 1.0]})
    out = tmp_path / "out"
    assert run(cfg, out=str(out)) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["passed"] and summary["config"]["kind"] == "solve"
    rows = _read_csv(out / "snapshots.csv")
    assert rows[0] == ["x", "u_t0", "u_t1", "u_t2"]
    assert len(rows) == 65
    assert "PASS finite" in capsys.readouterr().out


def test_derivative_check(tmp_path):
    cfg = _write(tmp_path, {"kind": "derivative-check", "model": "logistic-population", "n_points": 64,
                            "n_directions": 4, "K": [4, 8]})
    out = tmp_path / "out"
    assert run(cfg, out=str(out)) == 0
    metrics = json.loads((out / "summary.json").read_text())["metrics"]
    assert metrics["max_rel_gradient_vs_fd"] < 1e-5
    assert len(_read_csv(out / "derivatives.csv")) == 5


def test_expansion_study(tmp_path):
    cfg = _write(tmp_path, {"kind": "expansion-study", "model": "logistic-population", "n_points": 128,
                            "K": [4, 8, 16, 32]})
    out = tmp_path / "out"
    assert run(cfg, out=str(out)) == 0
    rows = _read_csv(out / "scaling_report.csv")
    assert rows[0] == ["K", "residual_energy", "envelope", "L2_LK", "ratio_IJ_over_L", "slope"]
    assert float(rows[1][-1]) <= -2.5
    plot = _read_csv(out / "scaling.csv")
    assert plot[0] == ["K", "residual_energy"] and len(plot) == 5


def test_expansion_study_slope_threshold_controls_exit(tmp_path):
    cfg = _write(tmp_path, {"kind": "expansion-study", "n_points": 64, "K": [4, 8], "slope_threshold": -100.0})
    assert run(cfg, out=str(tmp_path / "out")) == 1


def test_optimize_plot_files(tmp_path):
    cfg = _write(tmp_path, {"kind": "optimize", "model": "pure-heat", "n_points": 256, "n_steps": 100})
    out = tmp_path / "out"
    assert run(cfg, out=str(out)) == 0
    trace = _read_csv(out / "trace.csv")
    assert trace[0] == ["iteration", "objective"]
    obj = np.array([float(r[1]) for r in trace[1:]])
    assert np.all(np.diff(obj) >= -1e-12)
    control = _read_csv(out / "control.csv")
    assert control[0] == ["x", "m"]
    m = np.array([float(r[1]) for r in control[1:]])
    assert m.min() >= 0.0 and m.max() <= 1.0


def test_bounds_check(tmp_path):
    cfg = _write(tmp_path, {"kind": "bounds-check", "n_points": 64, "n_steps": 200})
    out = tmp_path / "out"
    assert run(cfg, out=str(out)) == 0
    assert _read_csv(out / "bounds.csv")[0] == ["t", "min_u", "max_u", "min_p", "min_psi"]


@pytest.mark.parametrize(
    "raw, path",
    [
        ({"kind": "solve", "n_points": 7}, "$.n_points"),
        ({"kind": "solve", "V0": 7.0}, "$.V0"),
        ({"kind": "expansion-study", "n_points": 32, "K": [4, 12]}, "$.K[1]"),
        ({"kind": "expansion-study", "K": [4, 32], "n_steps": 1000}, "$.n_steps"),
        ({"kind": "solve", "bogus": 1}, "$.bogus"),
        ({"kind": "teleport"}, "$.kind"),
        ({"model": "pure-heat"}, "$.kind"),
        ({"kind": "solve", "model": "nope"}, "$.model"),
        ({"kind": "solve", "snapshot_times": [0.0, 2.0]}, "$.snapshot_times[1]"),
        ({"kind": "solve", "u0_mean": 0.2}, "$.u0_amplitude"),
    ],
)
def test_config_errors_name_the_field(tmp_path, capsys, raw, path):
    with pytest.raises(ConfigError) as err:
        ExperimentConfig.from_dict(raw)
    assert err.value.path == path
    assert run(_write(tmp_path, raw), out=str(tmp_path / "out")) == 2
    assert path in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_missing_and_malformed_files(tmp_path):
    assert run(tmp_path / "absent.json") == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run(bad) == 2


def test_output_dir_precedence(tmp_path, monkeypatch):
    cfg = _write(tmp_path, {"kind": "solve", "n_points": 16, "n_steps": 10, "out": str(tmp_path / "from_cfg")})
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "from_env"))
    assert run(cfg) == 0
    assert (tmp_path / "from_env" / "summary.json").exists()
    assert not (tmp_path / "from_cfg").exists()
    assert run(cfg, out=str(tmp_path / "from_flag")) == 0
    assert (tmp_path / "from_flag" / "summary.json").exists()
    monkeypatch.delenv(OUT_ENV)
    assert run(cfg) == 0
    assert (tmp_path / "from_cfg" / "summary.json").exists()


def test_main_entry_point(tmp_path):
    cfg = _write(tmp_path, {"kind": "solve", "n_points": 16, "n_steps": 10})
    assert main(["run", str(cfg), "--out", str(tmp_path / "o"), "--seed", "3"]) == 0
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["config"]["seed"] == 3


def _csv_bytes(out):
    return {p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))}


def test_determinism_and_echo_round_trip(tmp_path):
    raw = {"kind": "derivative-check", "n_points": 32, "n_steps": 200, "n_directions": 3, "K": [4], "seed": 11}
    cfg = _write(tmp_path, raw)
    a, b = tmp_path / "a", tmp_path / "b"
    run(cfg, out=str(a))
    run(cfg, out=str(b))
    assert _csv_bytes(a) and _csv_bytes(a) == _csv_bytes(b)
    # re-run from the echoed config
    echo = json.loads((a / "summary.json").read_text())["config"]
    c = tmp_path / "c"
    run(_write(tmp_path, echo, "echo.json"), out=str(c))
    assert _csv_bytes(c) == _csv_bytes(a)
    assert json.loads((c / "summary.json").read_text()) == json.loads((a / "summary.json").read_text())


def test_every_emitted_file_reparses(tmp_path):
    cfg = _write(tmp_path, {"kind": "optimize", "n_points": 32, "n_steps": 50, "max_iters": 5})
    out = tmp_path / "out"
    run(cfg, out=str(out))
    json.loads((out / "summary.json").read_text())
    for p in out.glob("*.csv"):
        rows = _read_csv(p)
        assert len({len(r) for r in rows}) == 1
        for r in rows[1:]:
            [float(v) for v in r]
