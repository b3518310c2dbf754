import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zsmftg import ConfigError, IterateLog, IterateRecord, PolicyProfile, TrainSpec, train
from zsmftg.artifacts import average_logs, csv_header, emit_csv, emit_plot, format_csv, read_csv
from zsmftg.config import apply_env, load_config, parse_config, preset, serialize_config

floats = st.floats(allow_nan=False, allow_infinity=False, width=64)


def test_table1_preset_round_trip():
    cfg = preset("table1")
    text = serialize_config(cfg)
    again = parse_config(text)
    assert again == cfg
    assert serialize_config(again) == text
    m = again.build_model()
    assert m.gamma == 0.9 and m.B2[0, 0] == 0.3


@settings(max_examples=50)
@given(st.lists(floats, min_size=1, max_size=6), floats)
def test_numbers_round_trip(xs, y):
    cfg = preset("table1")
    cfg.train["eta1"] = y
    cfg.model["Q"] = [[x] for x in xs]
    assert parse_config(serialize_config(cfg)).model["Q"] == cfg.model["Q"]
    assert parse_config(serialize_config(cfg)).train["eta1"] == y


@pytest.mark.parametrize("text, needle", [
    ("[model]\nA = [0.4\n", "<config>:2: key 'A'"),
    ("[modle]\n", "<config>:1: unknown section"),
    ("[train]\nlr = 0.1\n", "<config>:2: unknown key 'lr'"),
    ("A = 1\n", "outside of any section"),
    ("[train]\neta1 = 1\neta1 = 2\n", "<config>:3: duplicate key"),
    ("[train]\neta1\n", "expected 'key = value'"),
])
def test_parse_errors_name_line_and_key(text, needle):
    with pytest.raises(ConfigError, match=needle.replace("[", r"\[").replace("(", r"\(")):
        parse_config(text)


def test_model_errors_name_section():
    cfg = preset("table1")
    cfg.model["R1"] = -1.0
    with pytest.raises(ConfigError, match=r"\[model\]"):
        cfg.build_model()


def test_env_override():
    cfg = apply_env(preset("table1"), {"ZSMFTG_TRAIN_ETA1": "0.05", "ZSMFTG_MODEL_b2": "0.2",
                                       "HOME": "/x"})
    assert cfg.train["eta1"] == 0.05
    assert cfg.model["B2"] == 0.2
    with pytest.raises(ConfigError):
        apply_env(preset("table1"), {"ZSMFTG_TRAIN_LR": "1"})
    with pytest.raises(ConfigError):
        apply_env(preset("table1"), {"ZSMFTG_TRAIN_ETA1": "abc"})


def test_load_config(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text(serialize_config(preset("table1")))
    assert load_config(p) == preset("table1")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.cfg")


def test_train_spec_from_config():
    cfg = preset("table1")
    cfg.train["theta0"] = {"K1": 0.1, "L1": 0.2, "K2": 0.0, "L2": 0.0}
    spec = cfg.train_spec()
    assert isinstance(spec, TrainSpec)
    assert spec.theta0.L1[0, 0] == 0.2
    assert spec.estimator.n_perturbations == 10_000


def small_log(n=3, shape=(1, 1)):
    log = IterateLog(reference=1.0)
    rng = np.random.default_rng(0)
    for k in range(1, n + 1):
        theta = PolicyProfile.from_vector(rng.normal(size=4 * shape[0] * shape[1]), *shape)
        log.append(IterateRecord(k, theta, float(rng.normal()), None if k == 1 else 0.1 / k,
                                 float(np.nan) if k == 2 else 1.0 / 3, k != 3))
    return log


def test_csv_header_layout():
    assert csv_header((1, 2)) == ["iter", "K1_0_0", "K1_0_1", "L1_0_0", "L1_0_1", "K2_0_0",
                                  "K2_0_1", "L2_0_0", "L2_0_1", "cost", "rel_error",
                                  "grad_norm", "in_Theta"]


def test_csv_one_row(tmp_path):
    path = emit_csv(small_log(1), tmp_path / "a.csv")
    lines = path.read_text().splitlines()
    assert len(lines) == 2
    assert lines[1].endswith(",,0.33333333333333331,true")


def test_csv_round_trip(tmp_path):
    for shape in ((1, 1), (2, 3)):
        log = small_log(4, shape)
        back = read_csv(emit_csv(log, tmp_path / "r.csv"), reference=1.0)
        assert format_csv(back) == format_csv(log)
        assert np.array_equal(back.params(), log.params())


def test_empty_log_writes_nothing(tmp_path):
    with pytest.raises(ValueError):
        emit_csv(IterateLog(), tmp_path / "e.csv")
    with pytest.raises(ValueError):
        emit_plot(IterateLog(), tmp_path / "e.svg")
    assert not list(tmp_path.iterdir())


def test_plot_deterministic(tmp_path, table1, table1_saddle):
    log = train(table1, TrainSpec(iters=50), reference=table1_saddle.value)
    a = emit_plot(log, tmp_path / "a.svg", target=table1_saddle.theta_star).read_bytes()
    b = emit_plot(log, tmp_path / "b.svg", target=table1_saddle.theta_star).read_bytes()
    assert a == b
    assert b"<svg" in a


def test_average_logs():
    a, b = small_log(3), small_log(3)
    avg = average_logs([a, b])
    assert np.allclose(avg.params(), a.params())
    assert avg[0].rel_error is None
    assert avg[1].rel_error == pytest.approx(0.05)
