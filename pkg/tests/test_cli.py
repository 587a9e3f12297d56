import json
import subprocess
import sys

import numpy as np
import pytest

from causal_ot.cli import fingerprint, main, sandwich, value
from causal_ot.closedform import ConstantChainExample, v_term
from causal_ot.instance import instance_from_dict, load_instance

from conftest import config_path


def run(capsys, *argv):
    code = main(list(argv))
    return code, capsys.readouterr()


def test_sandwich_table(capsys, tmp_path):
    code, out = run(capsys, "sandwich", "--config", config_path("table1"), "--out", str(tmp_path))
    assert code == 0
    rows = [l.split() for l in out.out.splitlines()[2:]]
    assert [r[1] for r in rows] == ["0.250000", "0.313991", "0.375734", "0.416128", "0.417777", "0.417777", "0.417777"]
    assert [r[2] for r in rows] == ["0.441703", "0.436859", "0.432210", "0.426318", "0.422032", "0.418043", "0.417777"]
    text = (tmp_path / "sandwich.csv").read_text()
    assert text.startswith("# fingerprint sha256:")
    assert "0.4177772238991697" in text


def test_sandwich_single_row_and_ordering(table1):
    rep = sandwich(table1, [0], 12)
    assert len(rep.rows) == 1
    assert round(rep.rows[0].lower, 6) == 0.25 and round(rep.rows[0].upper, 6) == 0.441703
    assert rep.check() == []


def test_empty_ns_is_usage_error(capsys):
    with pytest.raises(SystemExit) as e:
        main(["sandwich", "--config", config_path("table1"), "--Ns"])
    assert e.value.code == 2


def test_csv_outputs_deterministic(capsys, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        main(["simulate", "--config", config_path("table1"), "--paths", "20", "--steps", "50", "--seed", "4", "--out", str(d)])
        main(["dual", "--config", config_path("table1"), "--N", "2", "--out", str(d)])
    capsys.readouterr()
    for name in ("paths.csv", "dual.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_value_command(capsys, table1):
    code, out = run(capsys, "value", "--config", config_path("table1"), "--tol", "1e-5")
    assert code == 0
    assert "value 0.417777" in out.out and "converged" in out.out
    rep = value(table1, 12, tol=1e-5)
    assert rep.gap <= 1e-5 and rep.N <= 16


def test_value_two_identical_atoms_equals_single(table1):
    raw = table1.to_dict()
    raw["diffusion"]["y0_atoms"] = [{"y": 0.0, "w": 0.5}, {"y": 0.0, "w": 0.5}]
    two = instance_from_dict(raw)
    rep = value(two, 8, tol=1e-6)
    one = value(table1.with_start(0.0), 8, tol=1e-6)
    assert rep.kernel[0] == pytest.approx(rep.kernel[1])
    assert rep.lower == pytest.approx(one.lower, abs=1e-10)
    assert rep.upper == pytest.approx(one.upper, abs=1e-10)


def test_value_multi_atom_weights(table1):
    raw = table1.to_dict()
    raw["diffusion"]["y0_atoms"] = [{"y": -0.5, "w": 0.4}, {"y": 0.7, "w": 0.6}]
    rep = value(instance_from_dict(raw), 6, tol=1e-6)
    assert rep.lower <= rep.upper + 1e-10
    assert np.array([0.4, 0.6]) @ rep.kernel[:, 0] == pytest.approx(0.5, abs=1e-10)


def test_value_constant_chain_near_closed_form(constant):
    # small N on a frozen chain is expensive; start where the window already covers [0, 1]
    rep = value(constant, 50, tol=1e-6, N_start=8.0, N_max=16)
    exact = v_term(ConstantChainExample(np.array([-1.0, 1.0]), np.array([0.5, 0.5])))
    assert rep.converged and rep.N == 8.0
    assert abs(rep.lower - exact) <= 5e-3


def test_closedform_command(capsys):
    code, out = run(capsys, "closedform", "--xs", "-1", "1", "--p", "0.5", "0.5")
    assert code == 0 and "v_term 0.797885" in out.out


def test_simulate_zero_paths_usage(capsys):
    with pytest.raises(SystemExit) as e:
        main(["simulate", "--config", config_path("table1"), "--paths", "0"])
    assert e.value.code == 2


def test_exit_codes(capsys, tmp_path):
    assert main(["primal", "--config", str(tmp_path / "missing.json"), "--N", "1"]) == 3
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"chain": {"lambda": [[1, -1], [0, 0]], "p0": [0.5, 0.5]}}))
    assert main(["primal", "--config", str(bad), "--N", "1"]) == 3
    assert main(["hjb", "--config", config_path("table1"), "--N", "2", "--nt", "100"]) == 4
    assert main(["primal", "--config", config_path("table1"), "--N", "-1"]) == 3
    capsys.readouterr()


def test_follower_and_initial_commands(capsys, tmp_path):
    code, out = run(capsys, "follower", "--kind", "two", "--nz", "101", "--out", str(tmp_path))
    assert code == 0 and "V(0,0,0.5)" in out.out
    assert (tmp_path / "follower.csv").exists()
    code, out = run(capsys, "initial", "--config", config_path("table1"), "--steps", "6", "--N", "2")
    assert code == 0 and "atom y=0" in out.out


def test_hjb_command_small(capsys):
    code, out = run(capsys, "hjb", "--config", config_path("table1"), "--N", "0.5", "--ny", "41", "--np", "21", "--y-domain", "-4", "4")
    assert code == 0 and "gap" in out.out


def test_fingerprint_stable(table1):
    again = load_instance(config_path("table1"))
    assert fingerprint(table1) == fingerprint(again)
    assert len(fingerprint(table1)) == 64


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "causal_ot", "closedform"], capture_output=True, text=True)
    assert res.returncode == 0 and "0.797885" in res.stdout
