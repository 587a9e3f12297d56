import json

import numpy as np
import pytest

from causal_ot.instance import ConfigError, dump_instance, instance_from_dict, load_instance

from conftest import config_path, make_instance


def test_table1_config_values(table1):
    assert table1.K == 2 and table1.T == 1.0
    y = np.array([-1.0, 0.0, 2.0])
    g = table1.cost.g0_values(y)
    assert np.allclose(g[:, 0], 1.0 / (1.0 + np.exp(-8.0 * y)))
    assert np.allclose(g[:, 1], 0.0)
    assert not table1.cost.has_running_cost
    assert table1.diffusion.is_constant


def test_roundtrip(tmp_path, table1):
    p = tmp_path / "inst.json"
    dump_instance(table1, p)
    again = load_instance(p)
    assert again.to_dict() == table1.to_dict()


def test_missing_field_names_path():
    raw = json.load(open(config_path("table1")))
    del raw["diffusion"]["T"]
    with pytest.raises(ConfigError, match="diffusion.T"):
        instance_from_dict(raw)


def test_omitted_costs_default_to_zero():
    raw = json.load(open(config_path("table1")))
    del raw["cost"]["g0"]
    inst = instance_from_dict(raw)
    assert np.all(inst.cost.g0_values(np.linspace(-1, 1, 5)) == 0.0)


def test_unknown_form_rejected():
    raw = json.load(open(config_path("table1")))
    raw["cost"]["g0"] = {"form": "spline"}
    with pytest.raises(ConfigError, match="unknown form"):
        instance_from_dict(raw)


def test_cost_dimension_mismatch():
    with pytest.raises(ConfigError):
        make_instance([[-1, 1], [1, -1]], g0={"form": "linear-xy", "params": {"values": [1.0, 2.0, 3.0]}})


def test_with_start_and_multiatom():
    inst = make_instance([[-1, 1], [1, -1]], atoms=[{"y": -1.0, "w": 0.5}, {"y": 1.0, "w": 0.5}])
    with pytest.raises(ValueError):
        inst.diffusion.y0
    sub = inst.with_start(1.0)
    assert float(sub.diffusion.y0[0]) == 1.0


def test_running_cost_forms():
    inst = make_instance([[-1, 1], [1, -1]], f0={"form": "const", "params": {"values": [1.0, -2.0]}})
    assert inst.cost.has_running_cost
    assert np.allclose(inst.cost.f0_values(np.zeros(3)), [[1.0, -2.0]] * 3)
