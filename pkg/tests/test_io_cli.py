import csv

import numpy as np
import pytest

from hdl import cli, io
from hdl import continuation as cont
from hdl.circle import douady_earle, sine_map
from hdl.config import ConfigError, RunConfig, format_grid, parse_config, parse_grid
from hdl.grid import DiskGrid
from hdl.harmonic import HarmonicSolveError
from hdl.metric import MetricField

GRID = "16x32@0.9"


def run(*argv):
    return cli.main(list(argv))


# -- serialisation --------------------------------------------------------------

def test_field_round_trip(tmp_path, rng):
    g = DiskGrid(8, 16, 0.95)
    real = rng.normal(size=g.shape)
    cplx = real + 1j * rng.normal(size=g.shape)
    for vals, name in ((real, "a.bin"), (cplx, "b.bin")):
        io.write_field(tmp_path / name, g, vals)
        g2, back = io.read_field(tmp_path / name)
        assert g2.compatible(g) and g2.r_max == 0.95
        assert np.array_equal(back, vals) and back.dtype == vals.dtype
    assert (tmp_path / "a.bin").stat().st_size == 16 + 8 * g.size


def test_binary_header_layout(tmp_path):
    g = DiskGrid(8, 16, 0.9)
    io.write_field(tmp_path / "f.bin", g, np.zeros(g.shape))
    blob = (tmp_path / "f.bin").read_bytes()
    assert blob[:4] == b"HDL1"
    assert int.from_bytes(blob[4:8], "little") == 8
    assert int.from_bytes(blob[8:12], "little") == 16
    assert np.frombuffer(blob[12:16], "<f4")[0] == np.float32(0.9)


def test_bad_files(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"NOPE" + bytes(12))
    with pytest.raises(io.FormatError):
        io.read_field(tmp_path / "x.bin")
    g = DiskGrid(8, 16, 0.9)
    io.write_field(tmp_path / "y.bin", g, np.zeros(g.shape))
    (tmp_path / "y.bin").write_bytes((tmp_path / "y.bin").read_bytes()[:-8])
    with pytest.raises(io.FormatError):
        io.read_field(tmp_path / "y.bin")
    with pytest.raises(ValueError):
        io.write_field(tmp_path / "z.bin", g, np.zeros((2, 2)))


def test_csv_matches_binary(tmp_path, rng):
    g = DiskGrid(8, 16, 0.9)
    vals = rng.normal(size=g.shape) + 1j * rng.normal(size=g.shape)
    io.write_field(tmp_path / "f.csv", g, vals)
    io.write_field(tmp_path / "f.bin", g, vals)
    _, a = io.read_field(tmp_path / "f.csv")
    _, b = io.read_field(tmp_path / "f.bin")
    assert np.array_equal(a, b)
    with open(tmp_path / "f.csv") as fh:
        fh.readline()
        assert next(csv.reader(fh)) == ["r", "theta", "x", "y", "value_re", "value_im"]


def test_disk_map_round_trip(tmp_path, sine_map_small, bump_metric_small):
    io.write_disk_map(tmp_path / "h.bin", sine_map_small)
    back = io.read_disk_map(tmp_path / "h.bin")
    assert np.array_equal(back.values, sine_map_small.values)
    assert np.array_equal(back.boundary.lift, sine_map_small.boundary.lift)
    assert np.array_equal(back.boundary.derivative, sine_map_small.boundary.derivative)
    assert back.target.is_constant
    with_target = io.read_disk_map(tmp_path / "h.bin", bump_metric_small)
    assert with_target.target is bump_metric_small
    with pytest.raises(ValueError):
        io.read_disk_map(tmp_path / "h.bin", MetricField.hyperbolic(DiskGrid(8, 16, 0.9)))


def test_report_format_round_trip():
    top = {"a": 0.1, "n": 3, "ok": True, "name": "sine:0.5", "xs": [1.5, -2.0], "nan": float("nan")}
    text = io.format_report(top, [("sec", {"v": 1e-300})])
    back, secs = io.parse_report(text)
    assert back["a"] == 0.1 and back["n"] == 3 and back["ok"] is True
    assert back["name"] == "sine:0.5" and back["xs"] == [1.5, -2.0]
    assert np.isnan(back["nan"])
    assert secs == [("sec", {"v": 1e-300})]
    assert io.format_report(back, secs) == text


# -- configuration ----------------------------------------------------------------

def test_empty_config_is_defaults():
    cfg = parse_config("")
    assert cfg == RunConfig()
    assert format_grid(cfg.grid) == "64x128@0.95"
    assert (cfg.metric_tol, cfg.map_tol, cfg.steps, cfg.seed) == (1e-10, 1e-8, 11, 0)


def test_config_grid_and_comments():
    cfg = parse_config("# run\ngrid=32x64@0.9\n\nsteps = 5  # fewer\n")
    assert (cfg.grid.n_r, cfg.grid.n_theta, cfg.grid.r_max) == (32, 64, 0.9)
    assert cfg.steps == 5


@pytest.mark.parametrize("text, line", [
    ("map_tol=-1", 1),
    ("grid=32x64@0.9\nbogus=1", 2),
    ("steps=3\nsteps=4", 2),
    ("\n\nsteps=abc", 3),
    ("grid=32by64", 1),
    ("just words", 1),
    ("steps=1", 1),
])
def test_config_errors_carry_line(text, line):
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    assert err.value.line == line
    assert f"line {line}" in str(err.value)


def test_config_required_keys():
    with pytest.raises(ConfigError, match="boundary"):
        parse_config("steps=3", required=("boundary",))


def test_parse_grid():
    assert format_grid(parse_grid(" 8 x 16 @ 0.5 ")) == "8x16@0.5"
    with pytest.raises(ValueError):
        parse_grid("8x16")


# -- command line -------------------------------------------------------------------

def test_solve_metric(tmp_path, capsys):
    out = tmp_path / "u.bin"
    assert run("solve-metric", "--curvature", "constant:-4", "--grid", GRID, "--out", str(out)) == 0
    _, u = io.read_field(out)
    assert np.allclose(u, -np.log(2), atol=1e-12)
    top, _ = io.parse_report(capsys.readouterr().out)
    assert top["a"] == 2.0 and top["b"] == 2.0 and top["grid"] == GRID


def test_solve_metric_plot_data_constant(tmp_path):
    p = tmp_path / "u.csv"
    assert run("solve-metric", "--curvature", "constant:-4", "--grid", GRID, "--plot-data", str(p)) == 0
    _, vals = io.read_field(p)
    assert np.ptp(vals) == 0


def test_solve_map_and_diagnose(tmp_path):
    u = tmp_path / "u.bin"
    h = tmp_path / "h.bin"
    rep = tmp_path / "rep.txt"
    assert run("solve-metric", "--curvature", "radial-bump:3,4", "--grid", GRID, "--out", str(u)) == 0
    assert run("solve-map", "--target", str(u), "--boundary", "sine:0.5", "--grid", GRID,
               "--out", str(h), "--report", str(rep)) == 0
    top, _ = io.read_report(rep)
    assert top["residual"] <= 1e-8
    assert run("diagnose", "--map", str(h), "--target", str(u), "--qi-pairs", "200",
               "--report", str(rep)) == 0
    top, _ = io.read_report(rep)
    assert top["jacobian_inf"] > 0 and top["map"] == str(h)
    # warm start from a stored map
    assert run("solve-map", "--target", str(u), "--boundary", "sine:0.5", "--grid", GRID,
               "--init", str(h), "--report", str(rep)) == 0
    assert io.read_report(rep)[0]["iterations"] == 0


def test_extend(tmp_path):
    out = tmp_path / "de.bin"
    assert run("extend", "--map", "sine:0.5", "--grid", GRID, "--out", str(out)) == 0
    g, vals = io.read_field(out)
    assert np.array_equal(vals, douady_earle(sine_map(0.5), g.z))


def test_sweep_report_plot_data_and_determinism(tmp_path):
    args = ["sweep", "--curvature", "constant:-1", "--boundary", "identity", "--steps", "11",
            "--grid", GRID]
    r1, r2, pd = tmp_path / "r1.txt", tmp_path / "r2.txt", tmp_path / "pd.csv"
    assert run(*args, "--report", str(r1), "--plot-data", str(pd)) == 0
    assert run(*args, "--report", str(r2)) == 0
    assert r1.read_bytes() == r2.read_bytes()
    rows = list(csv.reader(open(pd)))
    assert rows[0] == ["t", "j", "sup_mu", "w_margin", "dist_h0", "dJ"]
    assert len(rows) == 12
    assert io.read_report(r1)[0]["verdict"] == cont.CERTIFIED


def test_sweep_boundary(tmp_path):
    rep = tmp_path / "r.txt"
    assert run("sweep-boundary", "--boundary", "sine:0.3", "--steps", "3", "--grid", GRID,
               "--report", str(rep)) == 0
    top, secs = io.read_report(rep)
    assert top["kind"] == "boundary" and len(secs) == 3


def test_sweep_degeneration_exit_code(tmp_path, monkeypatch):
    monkeypatch.setattr(cont, "jacobian_inf", lambda f: -1.0)
    rep = tmp_path / "r.txt"
    assert run("sweep", "--steps", "3", "--grid", GRID, "--report", str(rep)) == 3
    assert io.read_report(rep)[0]["verdict"].startswith("DEGENERATED(")


def test_solver_failure_exit_codes(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise HarmonicSolveError("forced")

    monkeypatch.setattr(cont, "solve_harmonic", boom)
    assert run("sweep", "--steps", "3", "--grid", GRID, "--report", str(tmp_path / "r.txt")) == 2
    monkeypatch.setattr(cli, "solve_harmonic", boom)
    assert run("solve-map", "--grid", GRID, "--boundary", "sine:0.5") == 2


def test_config_file_and_overrides(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("grid = 16x32@0.9\ncurvature = constant:-4\n")
    assert run("--config", str(cfg), "solve-metric") == 0
    assert io.parse_report(capsys.readouterr().out)[0]["b"] == 2.0
    assert run("--config", str(cfg), "solve-metric", "--curvature", "constant:-9") == 0
    assert io.parse_report(capsys.readouterr().out)[0]["b"] == 3.0


def test_configuration_errors_exit_4(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("map_tol=-1\n")
    assert run("--config", str(bad), "solve-metric") == 4
    assert "line 1" in capsys.readouterr().err
    assert run("--config", str(tmp_path / "missing.cfg"), "solve-metric") == 4
    assert run("solve-metric", "--curvature", "constant:1", "--grid", GRID) == 4
    assert run("solve-metric", "--grid", "16x32") == 4
    assert run("solve-map", "--boundary", "sine:2", "--grid", GRID) == 4
    assert run("--threads", "0", "solve-metric", "--grid", GRID) == 4
    with pytest.raises(SystemExit) as err:
        run("frobnicate")
    assert err.value.code == 4


def test_threads(monkeypatch, capsys):
    assert run("--threads", "1", "solve-metric", "--grid", GRID) == 0
    monkeypatch.setenv("HDL_THREADS", "1")
    assert run("solve-metric", "--grid", GRID) == 0
