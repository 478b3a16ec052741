import io
import json

import numpy as np
import pytest

from gpmarchenko.cli import run
from gpmarchenko.config import ConfigError, apply_override, load_config
from gpmarchenko.fields import FieldGrid
from gpmarchenko.nsoliton import u_N
from gpmarchenko.scattering import validate

GRID = {"t_min": -1.0, "t_max": 1.0, "tau": 0.1, "x_min": -5.0, "x_max": 5.0, "h": 0.1}


def _cfg(tmp_path, **extra):
    body = {"scattering": {"lambdas": [-0.5, 0.5], "mus0": [-1.0, -1.0]}, "grid": GRID}
    body.update(extra)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(body))
    return str(path)


def _run(argv):
    out = io.StringIO()
    code = run(argv, out)
    pairs = dict(line.split("=", 1) for line in out.getvalue().splitlines() if "=" in line)
    return code, pairs, out.getvalue()


def test_validate_params(tmp_path):
    code, kv, _ = _run(["validate-params", "-c", _cfg(tmp_path)])
    assert code == 0 and kv["status"] == "ok" and kv["N"] == "2"
    assert float(kv["gram_min_eigenvalue_x_pm10"]) > 0


def test_config_errors_exit_2(tmp_path):
    assert _run(["validate-params", "--lambdas", "0.5", "-0.5", "--mus0", "-1", "-1"])[0] == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert _run(["validate-params", "-c", str(bad)])[0] == 2
    assert _run(["validate-params", "-c", str(tmp_path / "missing.json")])[0] == 2
    assert _run(["nsoliton-eval", "--lambdas", "0.3", "--mus0", "-1"])[0] == 2  # no grid
    assert _run(["no-such-command"])[0] == 2
    assert _run(["validate-params", "--lambdas", "0.3", "--mus0", "-1", "--tol", "0.5"])[0] == 2


def test_flags_override_config(tmp_path):
    cfg = load_config(_cfg(tmp_path), ["solver.tol=1e-8"], {"lambdas": [0.1], "mus0": [-2.0], "solver.tol": 1e-9})
    assert cfg.data.lam.tolist() == [0.1] and cfg.solver["tol"] == 1e-9
    raw = {}
    apply_override(raw, "a.b=[1, 2]")
    apply_override(raw, "name=plain")
    assert raw == {"a": {"b": [1, 2]}, "name": "plain"}
    with pytest.raises(ConfigError):
        apply_override(raw, "novalue")
    with pytest.raises(ConfigError):
        apply_override(raw, "name.x=1")


def test_nsoliton_eval_roundtrip_and_determinism(tmp_path):
    cfg = _cfg(tmp_path)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert _run(["nsoliton-eval", "-c", cfg, "-o", str(a)])[0] == 0
    assert _run(["nsoliton-eval", "-c", cfg, "-o", str(b)])[0] == 0
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "a.csv.json").read_bytes() == (tmp_path / "b.csv.json").read_bytes()
    f = FieldGrid.from_csv(a)
    d = validate([-0.5, 0.5], [-1.0, -1.0])
    np.testing.assert_array_equal(f.u, u_N(d, f.t[:, None], f.x[None, :]))
    assert f.provenance == "nsoliton"


def test_nsoliton_eval_vacuum(tmp_path):
    out = tmp_path / "v.csv"
    code, kv, _ = _run(["nsoliton-eval", "--set", f"grid={json.dumps(GRID)}", "-o", str(out)])
    assert code == 0 and kv["max_abs_u"] == "1.0" and kv["min_abs_u"] == "1.0"


def test_residual_check(tmp_path):
    cfg = _cfg(tmp_path)
    code, kv, _ = _run(["residual", "-c", cfg, "-o", str(tmp_path / "r.csv"), "--check"])
    assert code == 0 and kv["check"] == "pass"
    assert 1.8 <= float(kv["order"]) <= 2.2
    code, kv, _ = _run(["residual", "-c", cfg, "-o", str(tmp_path / "r.csv"), "--check",
                        "--set", "residual.max_linf=1e-20"])
    assert code == 4 and kv["check"] == "fail"
    # a saved field can be checked directly
    f = tmp_path / "f.csv"
    _run(["nsoliton-eval", "-c", cfg, "-o", str(f)])
    code, kv, _ = _run(["residual", "-c", cfg, "--set", f"residual.input={json.dumps(str(f))}",
                        "-o", str(tmp_path / "r2.csv")])
    assert code == 0 and kv["order"] == "nan"


def test_divergence_exit_3(tmp_path):
    cfg = _cfg(tmp_path, reflection={"family": "gaussian", "amplitude": 10.0, "width": 1.0},
               grid={"t_min": 0.0, "t_max": 0.0, "tau": 1.0, "x_min": 0.0, "x_max": 0.0, "h": 1.0})
    code, kv, _ = _run(["perturbed-eval", "-c", cfg, "--lambdas", "0.3", "--mus0", "-1", "-o", str(tmp_path / "p.csv")])
    assert code == 3 and kv["status"] == "diverged"


def test_perturbed_eval(tmp_path):
    cfg = _cfg(tmp_path, reflection={"family": "gaussian", "amplitude": 0.01, "width": 1.0},
               grid={"t_min": 0.0, "t_max": 0.0, "tau": 1.0, "x_min": -1.0, "x_max": 1.0, "h": 1.0})
    code, kv, _ = _run(["perturbed-eval", "-c", cfg, "--lambdas", "0.3", "--mus0", "-1", "-o", str(tmp_path / "p.csv")])
    assert code == 0
    assert float(kv["max_contraction_ratio"]) < 0.5
    assert 0 < float(kv["max_gap_to_nsoliton"]) < 1e-2
    meta = json.loads((tmp_path / "p.csv.json").read_text())
    assert meta["provenance"] == "perturbed" and len(meta["diagnostics"]) == 3


def test_lax_check(tmp_path):
    cfg = _cfg(tmp_path, grid={"t_min": 0.4, "t_max": 0.4, "tau": 1.0, "x_min": -8.0, "x_max": 8.0, "h": 0.1})
    code, kv, _ = _run(["lax-check", "-c", cfg, "--lambdas", "0.3", "--mus0", "-1", "--check",
                        "-o", str(tmp_path / "l.csv")])
    assert code == 0 and kv["check"] == "pass"
    assert float(kv["control_factor"]) >= 100


def test_asymptotics_and_shift_table(tmp_path):
    cfg = _cfg(tmp_path)
    code, kv, _ = _run(["asymptotics", "-c", cfg, "--check", "-o", str(tmp_path / "a.csv")])
    assert code == 0 and kv["monotone"] == "True" and float(kv["max_deviation_at_T_max"]) <= 1e-5
    code, kv, text = _run(["shift-table", "-c", cfg, "-o", str(tmp_path / "s.csv")])
    assert code == 0 and kv["rows"] == "4"
    assert "k=2 sign=- eta=-0.6931471805599453" in text


def test_evolve_cn(tmp_path):
    cfg = _cfg(tmp_path, grid={"t_min": 0.0, "t_max": 0.2, "tau": 0.01, "x_min": -15.0, "x_max": 15.0, "h": 0.05})
    code, kv, _ = _run(["evolve-cn", "-c", cfg, "--check", "--set", "cn.store_every=5", "-o", str(tmp_path / "c.csv")])
    assert code == 0 and kv["check"] == "pass" and kv["nt_stored"] == "5"
