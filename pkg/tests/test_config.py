import json
import math
from importlib import resources

import pytest
from hypothesis import given
from hypothesis import strategies as st

from stochcancel.config import (
    ExperimentConfig,
    config_from_dict,
    config_to_dict,
    load_config,
    parse_real,
    resolve_observable,
)
from stochcancel.errors import ConfigError, ResourceCeilingError
from stochcancel.pauli import LocalOperator


def test_parse_real_forms():
    assert parse_real("0.2*pi") == pytest.approx(0.2 * math.pi)
    assert parse_real("2 pi") == pytest.approx(2 * math.pi)
    assert parse_real("pi/2") == pytest.approx(math.pi / 2)
    assert parse_real("-pi") == pytest.approx(-math.pi)
    assert parse_real("inf") == math.inf
    assert parse_real(3) == 3.0
    for bad in ["tau", True, "1e", None]:
        with pytest.raises(ConfigError):
            parse_real(bad)


def test_defaults_validate():
    cfg = config_from_dict({})
    assert cfg == ExperimentConfig()
    assert cfg.base_seed == 0 and cfg.kind == "trace"


def test_unknown_keys_and_sections():
    with pytest.raises(ConfigError, match="unknown key"):
        config_from_dict({"system": {"NN": 4}})
    with pytest.raises(ConfigError, match="unknown config section"):
        config_from_dict({"plot": {}})


@pytest.mark.parametrize(
    "doc",
    [
        {"system": {"N": 1}},
        {"system": {"boundary": "twisted"}},
        {"noise": {"variant": "cauchy"}},
        {"noise": {"delta_prime": -0.1}},
        {"noise": {"mode": "sometimes"}},
        {"experiment": {"kind": "movie"}},
        {"experiment": {"observable": "Y9"}},
        {"experiment": {"observable": "(0+1j)*Y1"}},
        {"experiment": {"kind": "sweep_N", "sweep_values": [4, 3]}},
        {"experiment": {"kind": "sweep_N", "sweep_values": []}},
        {"experiment": {"initial_state": "012"}},
        {"system": {"N": 3}, "experiment": {"initial_state": "01"}},
        {"propagator": {"tol": 0.1}},
        {"system": {"N": "four"}},
    ],
)
def test_invalid_configs(doc):
    with pytest.raises(ConfigError):
        config_from_dict(doc)


def test_resource_ceilings():
    with pytest.raises(ResourceCeilingError):
        config_from_dict({"system": {"N": 20}})
    with pytest.raises(ResourceCeilingError):
        config_from_dict({"system": {"N": 12}, "experiment": {"kind": "fg"}})
    with pytest.raises(ResourceCeilingError):
        config_from_dict({"system": {"N": 18, "max_sites": 18}, "experiment": {"n_times": 5000}})


def test_light_cone_needs_bounded_noise():
    doc = {"experiment": {"kind": "sweep_R", "sweep_values": [1, 2, 3]}}
    with pytest.raises(ConfigError, match="bounded"):
        config_from_dict(doc)
    ok = config_from_dict({**doc, "noise": {"variant": "truncated", "gamma": 0.02}})
    assert ok.sweep_axis == "R"


def test_small_noise_warning():
    cfg = config_from_dict({"system": {"N": 4}, "noise": {"delta_prime": 0.2}, "experiment": {"t_max": 2.0}})
    assert cfg.warnings and "small-noise" in cfg.warnings[0]
    assert not config_from_dict({"system": {"N": 4}}).warnings


def test_observable_forms():
    assert resolve_observable("sum:Y", 3) == sum((LocalOperator.pauli("Y", i) for i in range(3)), LocalOperator())
    assert resolve_observable("mean:Z", 2) == LocalOperator.pauli("Z", 0, 0.5) + LocalOperator.pauli("Z", 1, 0.5)
    assert resolve_observable("Y1", 4) == LocalOperator.pauli("Y", 1)


def test_env_overrides(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text('[system]\nN = 4\nJ = "0.2*pi"\n[noise]\nseed = 3\n')
    cfg = load_config(path, environ={"SIMV_NOISE__SEED": "11", "SIMV_SYSTEM__N": "5", "OTHER": "x"})
    assert cfg.noise.seed == 11 and cfg.system.N == 5
    assert cfg.system.J == pytest.approx(0.2 * math.pi)
    with pytest.raises(ConfigError):
        load_config(path, environ={"SIMV_NOISE__COLOUR": "red"})


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml", environ={})
    bad = tmp_path / "bad.toml"
    bad.write_text("[system\n")
    with pytest.raises(ConfigError):
        load_config(bad, environ={})


def test_json_config(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"noise": {"variant": "uniform", "delta_prime": 0.02}}))
    cfg = load_config(path, environ={})
    assert cfg.noise.deformation().gamma == 0.02


@pytest.mark.parametrize("name", ["figure1", "figure1_n10", "figure2", "figure2_h05pi"])
def test_canned_configs_load(name):
    path = resources.files("stochcancel") / "configs" / f"{name}.toml"
    cfg = load_config(path, environ={})
    assert cfg.system.J == pytest.approx(0.2 * math.pi)


def test_time_grid_and_updates():
    cfg = config_from_dict({"experiment": {"t_max": 2.0, "n_times": 5}})
    assert list(cfg.time_grid()) == [0.0, 0.5, 1.0, 1.5, 2.0]
    explicit = cfg.with_updates("experiment", times=(0.25, 1.0))
    assert list(explicit.time_grid()) == [0.25, 1.0]
    with pytest.raises(ConfigError):
        cfg.with_updates("system", N=1)


configs = st.builds(
    lambda N, J, h, boundary, variant, delta, seed, mode, kind_vals, n_times, nreal: {
        "system": {"N": N, "J": J, "h": h, "boundary": boundary},
        "noise": {"variant": variant, "delta_prime": delta, "seed": seed, "mode": mode,
                  **({"gamma": 2 * delta} if variant == "truncated" else {})},
        "experiment": {"kind": kind_vals[0], "sweep_values": kind_vals[1], "n_times": n_times,
                       "n_realizations": nreal, "t_max": 1.0},
    },
    st.integers(2, 8),
    st.floats(-5, 5),
    st.floats(-5, 5),
    st.sampled_from(["open", "periodic"]),
    st.sampled_from(["raw", "uniform", "truncated"]),
    st.floats(1e-4, 0.05),
    st.integers(0, 2**63 - 1),
    st.sampled_from(["random", "symmetric", "both"]),
    st.sampled_from([("trace", []), ("sweep_delta", [1e-3, 2e-3, 5e-3]), ("sweep_N", [2, 4]), ("tail", [])]),
    st.integers(1, 50),
    st.integers(1, 500),
)


@given(configs)
def test_round_trip(doc):
    cfg = config_from_dict(doc)
    again = config_from_dict(json.loads(json.dumps(config_to_dict(cfg))))
    assert again == cfg


def test_realization_defaults_depend_on_kind():
    assert config_from_dict({}).n_realizations == 200
    tail = config_from_dict({"experiment": {"kind": "tail"}})
    assert tail.n_realizations == 2000
    assert config_from_dict(json.loads(json.dumps(config_to_dict(tail)))) == tail
    assert config_from_dict({"experiment": {"kind": "tail", "n_realizations": 50}}).n_realizations == 50
    with pytest.raises(ConfigError):
        config_from_dict({"experiment": {"n_realizations": 0}})
