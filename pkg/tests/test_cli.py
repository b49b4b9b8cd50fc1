from __future__ import annotations

import json
import math
import subprocess
import sys

import numpy as np
import pytest
import yaml

from gammaz import cli

import oracles as O

HV = "x^2+(y^2+z^2)/2"

HEIS_CFG = {
    "name": "heisenberg",
    "coords": ["x", "y", "z"],
    "n": 2,
    "m": 1,
    "a": [["1", "0"], ["0", "1"], ["-y/2", "x/2"]],
    "z": [["0"], ["0"], ["1"]],
    "V": HV,
    "lambda_mode": "preset",
}


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def run_json(capsys, *argv):
    code, out, err = run(capsys, *argv, "--json")
    assert out.count("\n") == 1
    return code, json.loads(out), err


# tensor --------------------------------------------------------------------------


def test_tensor_heisenberg_origin(capsys):
    code, doc, _ = run_json(capsys, "tensor", "--preset", "heisenberg", "--V", HV, "--point", "0,0,0")
    assert code == 0
    np.testing.assert_allclose(np.diag(doc["A"]), [1, 0, 0.5], atol=1e-14)
    assert doc["lambda_min"] == pytest.approx(0, abs=1e-14)
    assert set(doc) >= {"A", "RG_ab", "R_zb", "R_rho", "lambda_min", "point", "coords"}


def test_tensor_martinet_origin(capsys):
    code, doc, _ = run_json(capsys, "tensor", "--preset", "martinet", "--V", "(x^2+y^2)/2", "--point", "0,0,0")
    assert code == 0
    assert doc["A"][0][2] == pytest.approx(0.5)
    assert doc["lambda_min"] == pytest.approx((1 - math.sqrt(2)) / 2, abs=1e-12)


def test_tensor_text_output(capsys):
    code, out, _ = run(capsys, "tensor", "--preset", "heisenberg", "--V", HV, "--point", "0.1,-0.2,0.3")
    assert code == 0
    for key in ("A =", "R^G_ab =", "R_zb =", "R_rho =", "lambda_min(A) ="):
        assert key in out


def test_tensor_negative_point_values(capsys):
    code, doc, _ = run_json(capsys, "tensor", "--preset", "se2", "--V", "theta^2", "--param", "beta=-0.5",
                            "--point", "-0.1,-0.2,0.3")
    assert code == 0 and doc["point"] == [-0.1, -0.2, 0.3]


def test_tensor_config_yaml_and_json(tmp_path, capsys):
    y = tmp_path / "h.yaml"
    y.write_text(yaml.safe_dump(HEIS_CFG))
    j = tmp_path / "h.json"
    j.write_text(json.dumps(HEIS_CFG))
    _, a, _ = run_json(capsys, "tensor", "--config", str(y), "--point", "0.2,0.1,-0.3")
    _, b, _ = run_json(capsys, "tensor", "--config", str(j), "--point", "0.2,0.1,-0.3")
    _, c, _ = run_json(capsys, "tensor", "--preset", "heisenberg", "--V", HV, "--mode", "preset",
                       "--point", "0.2,0.1,-0.3")
    assert a["A"] == b["A"]
    np.testing.assert_allclose(a["A"], c["A"], atol=1e-14)


def test_missing_config_names_path(capsys):
    code, _, err = run(capsys, "tensor", "--config", "/nonexistent/cfg.yaml", "--point", "0,0,0")
    assert code == 2 and "/nonexistent/cfg.yaml" in err


def test_usage_errors(capsys, tmp_path):
    assert run(capsys, "tensor", "--preset", "heisenberg", "--V", HV, "--point", "0,0")[0] == 2
    assert run(capsys, "tensor", "--preset", "heisenberg", "--point", "0,0,0")[0] == 2  # no V
    assert run(capsys, "tensor", "--preset", "nope", "--V", "0", "--point", "0,0,0")[0] == 2
    assert run(capsys, "tensor", "--preset", "heisenberg", "--V", "x +* y", "--point", "0,0,0")[0] == 2
    assert run(capsys, "tensor", "--preset", "heisenberg", "--V", "w", "--point", "0,0,0")[0] == 2
    assert run(capsys, "bogus")[0] == 2
    bad = dict(HEIS_CFG, a=[["1", "0"], ["0", "1"]])
    p = tmp_path / "bad.yaml"
    p.write_text(yaml.safe_dump(bad))
    assert run(capsys, "tensor", "--config", str(p), "--point", "0,0,0")[0] == 2


def test_degenerate_exit_3(capsys, tmp_path):
    cfg = {"coords": ["x", "y"], "n": 1, "m": 1, "a": [["1"], ["0"]], "z": [["1"], ["x"]], "V": "x^2/2"}
    p = tmp_path / "sing.yaml"
    p.write_text(yaml.safe_dump(cfg))
    code, _, err = run(capsys, "tensor", "--config", str(p), "--point", "0,0.3")
    assert code == 3 and "SingularFrame" in err
    code, _, err = run(capsys, "tensor", "--preset", "se2", "--V", "0", "--param", "g=x", "--point", "0.1,0,0.2")
    assert code == 3 and "AssumptionUnsatisfied" in err
    code, _, err = run(capsys, "tensor", "--preset", "heisenberg", "--V", "log(x)", "--point", "-1,0,0")
    assert code == 3


def test_finite_d_rejected(capsys):
    code, _, err = run(capsys, "tensor", "--preset", "heisenberg", "--V", HV, "--point", "0,0,0", "-d", "3")
    assert code == 2 and "CD(kappa, d)" in err


# scan ----------------------------------------------------------------------------


def test_scan_summary_and_csv(tmp_path, capsys):
    out = tmp_path / "m.csv"
    code, doc, _ = run_json(capsys, "scan", "--preset", "martinet", "--V", "(x^2+y^2)/2",
                            "--region", "-1:1,-1:1,0:0", "--grid", "11,11,1", "--out", str(out))
    assert code == 0
    assert doc["cells"] == 121 and doc["holes"] == 0 and doc["shape"] == [11, 11, 1]
    lines = out.read_text().split("\n")
    assert lines[0] == "# gammaz scan v1" and len(lines) == 121 + 3
    lam = np.array([float(r.split(",")[3]) for r in lines[2:-1]])
    assert doc["kappa"] == lam.min()
    pts = np.array([[float(v) for v in r.split(",")[:3]] for r in lines[2:-1]])
    ref = np.linalg.eigvalsh(O.true_A_martinet(pts, O.Derivs("(x**2+y**2)/2", O.HEIS)))[:, 0]
    np.testing.assert_allclose(lam, ref, atol=1e-8)


def test_scan_byte_identical_across_runs_and_threads(tmp_path, capsys):
    args = ["scan", "--preset", "heisenberg", "--V", HV, "--region", "-0.2:0.2,-0.2:0.2,10:10", "--grid", "41,41,1"]
    paths = []
    for k, threads in enumerate(("1", "1", "3")):
        p = tmp_path / f"s{k}.csv"
        assert run(capsys, *args, "--out", str(p), "--threads", threads)[0] == 0
        paths.append(p.read_bytes())
    assert paths[0] == paths[1] == paths[2]


def test_scan_grid_mismatch(capsys):
    code, _, err = run(capsys, "scan", "--preset", "heisenberg", "--V", HV, "--region", "-1:1,-1:1,0:0",
                       "--grid", "11,11")
    assert code == 2
    code, _, _ = run(capsys, "scan", "--preset", "heisenberg", "--V", HV, "--region", "-1:1,-1:1,0:1",
                     "--grid", "11,11,1")
    assert code == 2


def test_scan_no_A(tmp_path, capsys):
    p = tmp_path / "s.csv"
    run(capsys, "scan", "--preset", "ou1d", "--V", "x^2/2", "--region", "-1:1", "--grid", "5", "--out", str(p), "--no-A")
    assert p.read_text().split("\n")[1] == "x1,lambda_min"


# verify --------------------------------------------------------------------------


def test_verify_martinet(capsys):
    code, doc, _ = run_json(capsys, "verify", "--preset", "martinet", "--V", "(x^2+y^2)/2",
                            "--trials", "100", "--seed", "7")
    assert code == 0 and doc["max_residual"] <= 1e-8 and doc["ok"]


def test_verify_se2_general_g(capsys):
    code, doc, _ = run_json(capsys, "verify", "--preset", "se2", "--V", "theta^2/2 + x*y",
                            "--param", "beta=1", "--param", "g=2+sin(theta)")
    assert code == 0 and doc["max_residual"] <= 1e-8


def test_verify_all_presets_both_modes(capsys):
    for preset, V in (("heisenberg", HV), ("se2", "theta^2"), ("martinet", "x*z"), ("ou1d", "x^2/2")):
        for mode in ("preset", "least_squares"):
            assert run(capsys, "verify", "--preset", preset, "--V", V, "--mode", mode, "--trials", "30")[0] == 0


def test_verify_corrupted_entry_fails(tmp_path, capsys):
    bad = dict(HEIS_CFG)
    bad["a"] = [["1", "0"], ["0", "1"], ["-y", "x/2"]]
    p = tmp_path / "bad.yaml"
    p.write_text(yaml.safe_dump(bad))
    code, doc, _ = run_json(capsys, "verify", "--config", str(p))
    assert code == 1 and not doc["ok"] and doc["max_residual"] > 1e-8
    code, out, _ = run(capsys, "verify", "--config", str(p))
    assert "FAIL" in out and "max residual" in out


def test_verify_is_seeded(capsys):
    a = run(capsys, "verify", "--preset", "heisenberg", "--V", HV, "--seed", "3", "--json")[1]
    b = run(capsys, "verify", "--preset", "heisenberg", "--V", HV, "--seed", "3", "--json")[1]
    assert a == b


# dissipate -----------------------------------------------------------------------


def test_dissipate_ou(tmp_path, capsys):
    csv = tmp_path / "d.csv"
    snap = tmp_path / "rho.bin"
    args = ["dissipate", "--preset", "ou1d", "--V", "x^2/2", "--box", "-6:6", "--cells", "512",
            "--t-end", "1", "--rho0", "exp(-(x-2)^2/2)", "--out", str(csv), "--snapshot", str(snap)]
    code, doc, _ = run_json(capsys, *args)
    assert code == 0 and doc["ok"]
    assert doc["kappa"] == pytest.approx(1.0)
    assert abs(doc["measured_rate"] - 2) <= 0.1
    assert doc["kl_envelope_all"] and doc["l1_envelope_all"] and doc["pinsker_all"]
    first = csv.read_bytes()
    assert first.startswith(b"# gammaz dissipate v1\nt,kl,fisher_az,l1\n")
    assert (tmp_path / "rho.bin.json").exists() and snap.stat().st_size == 512 * 8
    run(capsys, *args)
    assert csv.read_bytes() == first


def test_dissipate_usage(capsys):
    base = ["dissipate", "--preset", "ou1d", "--V", "x^2/2", "--box", "-6:6", "--cells", "64"]
    assert run(capsys, *base, "--t-end", "0")[0] == 2
    assert run(capsys, *base, "--t-end", "-1")[0] == 2
    assert run(capsys, *base, "--t-end", "1", "--rho0", "x")[0] == 2  # not positive
    assert run(capsys, *base, "--t-end", "1", "--dt", "fast")[0] == 2
    assert run(capsys, "dissipate", "--preset", "ou1d", "--V", "x^2/2", "--box", "1:-1", "--cells", "8",
               "--t-end", "1")[0] == 2


def test_console_script_entry_point():
    r = subprocess.run([sys.executable, "-m", "gammaz.cli", "tensor", "--preset", "ou1d", "--V", "x^2/2",
                        "--point", "0.5", "--json"], capture_output=True, text=True)
    assert r.returncode == 0
    assert json.loads(r.stdout)["lambda_min"] == pytest.approx(1.0)
