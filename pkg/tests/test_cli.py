import hashlib
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from stochavg.cli import run
from stochavg.config import ConfigError, emit_config, parse_config

CONFIGS = Path(__file__).resolve().parents[1] / "demos" / "configs"

SMALL = {
    "simulate": {
        "experiment": "simulate", "seed": 3,
        "system": {"kind": "linear", "A": [[-1.0, 0.0], [0.5, -2.0]], "b": [1.0, 0.0]},
        "perturbation": {"kind": "finite-markov", "transition": [[0.9, 0.1], [0.2, 0.8]],
                         "states": [-1.0, 2.0]},
        "x0": [1.0, -1.0], "epsilon": 0.01, "steps": 300,
    },
    "average": {
        "experiment": "average", "seed": 1,
        "system": {"kind": "linear", "A": [[-1.0]], "b": [1.0], "g": "sin2"},
        "perturbation": {"kind": "sampled-ou", "rate": 2.0, "volatility": 2.0, "period": 0.5},
        "x0": [0.0], "epsilon": 0.05, "steps": 200, "horizon": 10.0,
    },
    "verify-averaging": {
        "experiment": "verify-averaging", "seed": 7,
        "system": {"kind": "static-error",
                   "map": {"optimum_value": 1.0, "curvature": 1.0, "optimizer": 1.0},
                   "amplitude": 0.8, "probe_sigma": 2.0,
                   "noise": {"sigma1": 0.2, "bound": 1.0}},
        "x0": [4.0], "epsilons": [0.04, 0.02, 0.01], "horizon": 2.0,
        "replications": 8, "delta": 0.5,
    },
    "es-static": {
        "experiment": "es-static", "seed": 0,
        "map": {"optimum_value": 1.0, "curvature": 1.0, "optimizer": 1.0},
        "amplitude": 0.8, "epsilon": 0.002, "probe_sigma": 2.0,
        "noise": {"sigma1": 0.2, "bound": 1.0}, "initial_estimate": 5.0, "steps": 500,
    },
    "es-dynamic": {
        "experiment": "es-dynamic", "seed": 0, "varsigma": [0.0, 0.0, -1.0, 0.1],
        "gain": 1.0, "w1": 1.0, "w2": 1.0, "amplitude": 0.2, "epsilon": 0.002,
        "probe_sigma": 1.0, "noise": {"sigma1": 0.1, "bound": 0.5}, "steps": 500,
        "initial": [0.5, 0.0, 0.0],
        "plant": {"pole": 0.5, "theta_star": 1.0, "y_star": 2.0, "measure_after_update": True},
    },
    "stability": {
        "experiment": "stability", "varsigma": [0.0, 0.0, -1.0], "gain": 1.0, "w1": 1.0,
        "w2": 1.0, "amplitude": 0.05, "epsilon": 0.5, "probe_sigma": 1.0,
    },
    "moments": {"experiment": "moments", "sigma": 2.0},
}

OUTPUTS = {
    "simulate": {"x_hat.csv", "summary.json"},
    "average": {"x_hat.csv", "average.csv", "continuous.csv", "summary.json"},
    "verify-averaging": {"rate_study.csv", "summary.json"},
    "es-static": {"x_hat.csv", "y.csv", "summary.json"},
    "es-dynamic": {"reduced.csv", "closedloop.csv", "summary.json"},
    "stability": {"stability.json"},
    "moments": {"moments.json"},
}


def write_cfg(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def run_kind(tmp_path, kind, cfg=None, out="out", extra=()):
    cfg = SMALL[kind] if cfg is None else cfg
    path = write_cfg(tmp_path, cfg, f"{kind}.json")
    out = tmp_path / out
    code = run([kind, "--config", str(path), "--out", str(out), *extra])
    return code, out


def digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def output_digests(out):
    return {p.name: digest(p) for p in sorted(out.iterdir()) if p.name != "manifest.json"}


# -- each subcommand ------------------------------------------------------

@pytest.mark.parametrize("kind", sorted(SMALL))
def test_subcommand_writes_outputs_and_manifest(tmp_path, kind):
    code, out = run_kind(tmp_path, kind)
    assert code == 0
    names = {p.name for p in out.iterdir()}
    assert names == OUTPUTS[kind] | {"config.json", "manifest.json"}
    man = json.loads((out / "manifest.json").read_text())
    assert man["experiment"] == kind
    assert set(man["files"]) == names - {"manifest.json"}
    for name, h in man["files"].items():
        assert digest(out / name) == h
    assert man["config_sha256"] == man["files"]["config.json"]
    assert set(man["versions"]) >= {"numpy", "scipy", "python", "stochavg"}


def test_moments_values(tmp_path):
    code, out = run_kind(tmp_path, "moments")
    assert code == 0
    m = json.loads((out / "moments.json").read_text())
    vals = [m["sin_moments"][k]["closed_form"] for k in ("1", "2", "3", "4")]
    for k in ("1", "2", "3", "4"):
        row = m["sin_moments"][k]
        assert abs(row["quadrature"] - row["closed_form"]) < 1e-12
    assert vals[0] == 0.0 and vals[2] == 0.0
    assert vals[1] == pytest.approx(0.49983226868604874, rel=1e-15)
    assert vals[3] == pytest.approx(0.375 - 0.5 * np.exp(-8) + 0.125 * np.exp(-32), rel=1e-14)


def test_verify_averaging_rows(tmp_path):
    code, out = run_kind(tmp_path, "verify-averaging")
    assert code == 0
    rows = (out / "rate_study.csv").read_text().splitlines()
    assert len(rows) == 1 + 3
    s = json.loads((out / "summary.json").read_text())
    assert s["epsilons"] == [0.04, 0.02, 0.01]
    assert len(s["medians"]) == 3


def test_stability_outputs(tmp_path):
    code, out = run_kind(tmp_path, "stability")
    assert code == 0
    s = json.loads((out / "stability.json").read_text())
    assert s["b1"] == 0.0
    assert s["equilibrium"]["theta"] == 0.0
    assert s["epsilon_threshold"] == pytest.approx(2.0, abs=1e-6)
    assert s["spectral_radius"] < 1
    closed = [complex(*z) for z in s["eigenvalues"]]
    numeric = [complex(*z) for z in s["eigenvalues_numeric"]]
    assert len(closed) == 3
    assert max(min(abs(c - n) for n in numeric) for c in closed) < 1e-8


def test_es_dynamic_reduced_header(tmp_path):
    code, out = run_kind(tmp_path, "es-dynamic")
    assert code == 0
    assert (out / "reduced.csv").read_text().splitlines()[0] == "k,theta_tilde,xi,zeta_tilde"
    assert len((out / "reduced.csv").read_text().splitlines()) == 1 + 501


def test_demo_configs_parse():
    for path in sorted(CONFIGS.glob("*.json")):
        cfg = json.loads(path.read_text())
        parse_config(path.read_text(), cfg["experiment"])


# -- config errors --------------------------------------------------------

@pytest.mark.parametrize("text", ["", "{", "[]", "{\"experiment\": \"simulate\"}"])
def test_malformed_config_exit_2(tmp_path, text, capsys):
    p = tmp_path / "bad.json"
    p.write_text(text)
    out = tmp_path / "out"
    assert run(["simulate", "--config", str(p), "--out", str(out)]) == 2
    assert not out.exists()
    assert capsys.readouterr().err.strip()


def test_unknown_key_exit_2(tmp_path, capsys):
    cfg = dict(SMALL["moments"], colour="blue")
    code, out = run_kind(tmp_path, "moments", cfg)
    assert code == 2 and not out.exists()
    assert "colour" in capsys.readouterr().err


def test_type_error_names_field(tmp_path, capsys):
    cfg = dict(SMALL["es-static"], steps="many")
    code, out = run_kind(tmp_path, "es-static", cfg)
    assert code == 2 and not out.exists()
    assert "steps" in capsys.readouterr().err


def test_json_error_reports_position(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "sigma": 1.0,,\n}')
    assert run(["moments", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "line 2" in capsys.readouterr().err


def test_experiment_mismatch_exit_2(tmp_path):
    p = write_cfg(tmp_path, SMALL["moments"])
    out = tmp_path / "o"
    assert run(["stability", "--config", str(p), "--out", str(out)]) == 2
    assert not out.exists()


def test_missing_config_file_exit_2(tmp_path):
    out = tmp_path / "o"
    assert run(["moments", "--config", str(tmp_path / "nope.json"), "--out", str(out)]) == 2
    assert not out.exists()


def test_perturbation_for_builtin_system_rejected(tmp_path):
    cfg = json.loads(json.dumps(SMALL["verify-averaging"]))
    cfg["perturbation"] = {"kind": "iid-gaussian", "sigma": 1.0}
    code, out = run_kind(tmp_path, "verify-averaging", cfg)
    assert code == 2 and not out.exists()


def test_parse_rejects_out_of_range_seed():
    with pytest.raises(ConfigError):
        parse_config(json.dumps(dict(SMALL["moments"], seed=-1)), "moments")
    with pytest.raises(ConfigError):
        parse_config(json.dumps(dict(SMALL["moments"], seed=2**64)), "moments")


# -- numeric failure ------------------------------------------------------

def test_blowup_exit_3(tmp_path, capsys):
    cfg = json.loads(json.dumps(SMALL["simulate"]))
    cfg["system"]["A"] = [[50.0, 0.0], [0.0, 50.0]]
    cfg["epsilon"] = 1.0
    code, out = run_kind(tmp_path, "simulate", cfg)
    assert code == 3
    assert not out.exists()
    assert capsys.readouterr().err.strip()


def test_unstable_map_exit_3(tmp_path):
    cfg = dict(SMALL["stability"], varsigma=[0.0, 0.0, 1.0])
    code, out = run_kind(tmp_path, "stability", cfg)
    assert code == 3 and not out.exists()


# -- round trip and reproducibility ---------------------------------------

@pytest.mark.parametrize("kind", sorted(SMALL))
def test_config_roundtrip(kind):
    cfg = parse_config(json.dumps(SMALL[kind]), kind)
    assert parse_config(emit_config(cfg), kind) == cfg
    assert emit_config(cfg).endswith("\n")


@pytest.mark.parametrize("kind", ["simulate", "verify-averaging", "es-static", "es-dynamic"])
def test_reruns_byte_identical(tmp_path, kind):
    _, a = run_kind(tmp_path, kind, out="a")
    _, b = run_kind(tmp_path, kind, out="b")
    assert output_digests(a) == output_digests(b)
    ma = json.loads((a / "manifest.json").read_text())["files"]
    mb = json.loads((b / "manifest.json").read_text())["files"]
    assert ma == mb


def test_threads_byte_identical(tmp_path):
    _, a = run_kind(tmp_path, "verify-averaging", out="t1", extra=["--threads", "1"])
    _, b = run_kind(tmp_path, "verify-averaging", out="t4", extra=["--threads", "4"])
    assert output_digests(a) == output_digests(b)


def test_seed_override(tmp_path):
    _, a = run_kind(tmp_path, "es-static", out="a")
    _, b = run_kind(tmp_path, "es-static", out="b", extra=["--seed", "99"])
    assert digest(a / "x_hat.csv") != digest(b / "x_hat.csv")
    assert json.loads((b / "config.json").read_text())["seed"] == 99
    assert json.loads((b / "manifest.json").read_text())["seed"] == 99
    cfg = dict(SMALL["es-static"], seed=99)
    _, c = run_kind(tmp_path, "es-static", cfg, out="c")
    assert digest(b / "x_hat.csv") == digest(c / "x_hat.csv")


# -- plot -----------------------------------------------------------------

def _polyline_points(svg):
    start = svg.index('class="trajectory"')
    seg = svg[svg.rindex("<polyline", 0, start):svg.index("/>", start)]
    pts = seg.split('points="')[1].split('"')[0].split()
    return np.array([[float(c) for c in p.split(",")] for p in pts])


def test_plot_constant_trajectory(tmp_path):
    csv = tmp_path / "traj.csv"
    csv.write_text("k,t,x_0\n" + "".join(f"{k},{0.1 * k},2.5\n" for k in range(20)))
    out = tmp_path / "plot"
    code = run(["plot", "--input", str(csv), "--column", "x_0", "--reference", "1.0",
                "--out", str(out)])
    assert code == 0
    pts = _polyline_points((out / "plot.svg").read_text())
    assert len(pts) == 20
    assert np.ptp(pts[:, 1]) == 0.0
    assert np.all(np.diff(pts[:, 0]) > 0)
    assert 'class="reference"' in (out / "plot.svg").read_text()
    rows = (out / "plot.dat").read_text().splitlines()
    assert rows[0].startswith("#")
    k = np.array([float(r.split()[0]) for r in rows[1:]])
    assert np.all(np.diff(k) > 0)


def test_plot_from_es_static_run(tmp_path):
    _, run_dir = run_kind(tmp_path, "es-static")
    out = tmp_path / "plot"
    code = run(["plot", "--input", str(run_dir / "x_hat.csv"), "--reference", "1.0",
                "--out", str(out)])
    assert code == 0
    assert len(_polyline_points((out / "plot.svg").read_text())) == 501


def test_plot_missing_input_exit_2(tmp_path):
    out = tmp_path / "plot"
    assert run(["plot", "--input", str(tmp_path / "none.csv"), "--out", str(out)]) == 2
    assert not out.exists()


def test_plot_unknown_column_exit_2(tmp_path):
    csv = tmp_path / "traj.csv"
    csv.write_text("k,t,x_0\n0,0,1\n1,0.1,2\n")
    out = tmp_path / "plot"
    assert run(["plot", "--input", str(csv), "--column", "nope", "--out", str(out)]) == 2
    assert not out.exists()


# -- entry point ----------------------------------------------------------

def test_module_entry_point(tmp_path):
    p = write_cfg(tmp_path, SMALL["moments"])
    out = tmp_path / "o"
    r = subprocess.run([sys.executable, "-m", "stochavg", "moments", "--config", str(p),
                        "--out", str(out)], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert (out / "moments.json").exists()
    r = subprocess.run([sys.executable, "-m", "stochavg", "moments", "--config",
                        str(tmp_path / "missing.json"), "--out", str(tmp_path / "p")],
                       capture_output=True, text=True)
    assert r.returncode == 2
