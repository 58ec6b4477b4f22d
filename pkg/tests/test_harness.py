import json
import math
import re
from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from torusdiff.errors import ConfigError, InvalidInputError, TrainingDivergedError
from torusdiff.harness import (
    CSV_COLUMNS,
    InstanceConfig,
    SweepConfig,
    SweepResult,
    config_to_dict,
    decreasing_prefix,
    emit_outputs,
    fit_rate,
    format_csv,
    parse_config,
    read_sweep_csv,
    run_instance,
    sweep,
)

SMALL = dict(tau0=1e-3, T0=20.0, sizing="explicit", hidden_dim=8, num_residual_blocks=1,
             epochs=2, batch_size=256, test_points=2000, boundary_pairs=50)


def truth_fit(obs, cfg, model):
    return SimpleNamespace(drift=model.drift, diffusion=model.diffusion)


def test_minimal_config_gets_defaults():
    cfg = parse_config({"model": "example", "tau": 1e-3, "T": 10.0})
    assert cfg == InstanceConfig(tau=1e-3, T=10.0)
    assert cfg.tau0 == 1e-4 and cfg.T0 == 200.0 and cfg.lambda_periodic == 1.0
    assert cfg.test_points == 50_000 and cfg.hidden_dim == 128


def test_config_errors_name_the_key(tmp_path):
    with pytest.raises(ConfigError) as info:
        parse_config({"model": "example", "tau": 1.5e-4, "T": 10.0})
    assert info.value.key == "tau"
    with pytest.raises(ConfigError) as info:
        parse_config({"model": "example", "tau": 1e-3, "T": 500.0})
    assert info.value.key == "T"
    with pytest.raises(ConfigError) as info:
        parse_config({"model": "example", "tau": 1e-3, "T": 1.0, "colour": 3})
    assert info.value.key == "colour"
    with pytest.raises(ConfigError) as info:
        parse_config({"model": "example", "tau": 1e-3, "T": 1.0, "epochs": "ten"})
    assert info.value.key == "epochs"
    with pytest.raises(ConfigError) as info:
        parse_config({"model": "nope", "tau": 1e-3, "T": 1.0})
    assert info.value.key == "model"
    with pytest.raises(ConfigError) as info:
        parse_config(tmp_path / "missing.json")
    assert info.value.key == "config"
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        parse_config(bad)


def test_config_round_trip(tmp_path):
    cfg = parse_config({"model": "constant", "model_params": {"b0": [1.0, -0.5], "sigma0": 0.8},
                        "x0": [0.1, 0.2], "tau": 2e-3, "T": 5.0, "epochs": 3})
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(config_to_dict(cfg)))
    assert parse_config(path) == cfg

    sw = parse_config({"model": "example", "sweep": {"scheme": "B", "grid": [100, 1000], "T": 5.0}})
    assert isinstance(sw, SweepConfig)
    assert parse_config(json.loads(json.dumps(config_to_dict(sw)))) == sw


def test_sweep_validation_rejects_unsatisfiable_grid():
    with pytest.raises(ConfigError):
        parse_config({"tau0": 1e-3, "T0": 10.0, "sweep": {"scheme": "A", "tau": 1e-3,
                                                          "grid": [100, 100000]}})
    with pytest.raises(ConfigError):
        parse_config({"sweep": {"grid": [1000, 100]}})
    with pytest.raises(ConfigError) as info:
        parse_config({"sweep": {"grid": [100], "bogus": 1}})
    assert info.value.key == "sweep.bogus"
    # scheme B with tau = T/N not a multiple of tau0
    with pytest.raises(ConfigError):
        parse_config({"tau0": 1e-3, "T0": 10.0, "sweep": {"scheme": "B", "T": 10.0, "grid": [3000]}})


def test_scheme_arithmetic():
    base = InstanceConfig()
    a = SweepConfig(base, "A", (10_000,), tau_fixed=1e-3)
    assert a.instances()[0][2] == pytest.approx(10.0)
    b = SweepConfig(base, "B", (10_000,), T_fixed=50.0)
    assert b.instances()[0][1] == pytest.approx(5e-3)


@pytest.fixture(scope="module")
def cache():
    return {}


def test_truth_oracle_gives_zero_losses(cache):
    cfg = InstanceConfig(**SMALL, tau=1e-3, T=5.0)
    row = run_instance(cfg, cache=cache, fit=truth_fit)
    assert row["status"] == "ok"
    assert row["drift_loss"] == 0.0 and row["diffusion_loss"] == 0.0
    assert row["f_recovery_error"] == pytest.approx(0.0, abs=1e-28)
    assert row["N"] == 5000 and row["wall_time_s"] == 0.0 and row["elapsed_s"] > 0


def test_sweep_rows_and_scheme_constraints(cache):
    base = InstanceConfig(**SMALL)
    res = sweep("A", [100, 300, 1000], [0, 1, 2], base, tau_fixed=2e-3, cache=cache, fit=truth_fit)
    assert len(res.rows) == 9
    for r in res.rows:
        assert r["tau"] == 2e-3
        assert abs(r["T"] - r["N"] * r["tau"]) <= 1e-9 * r["T"]
    res = sweep("B", [100, 1000], [0], base, T_fixed=10.0, cache=cache, fit=truth_fit)
    assert [r["T"] for r in res.rows] == [10.0, 10.0]
    assert [r["N"] for r in res.rows] == [100, 1000]


def test_failed_row_does_not_stop_sweep(cache):
    def flaky(obs, cfg, model):
        if obs.N == 300:
            raise TrainingDivergedError("forced", stage="drift")
        return truth_fit(obs, cfg, model)

    res = sweep("A", [100, 300, 1000], [0], InstanceConfig(**SMALL), tau_fixed=1e-3,
                cache=cache, fit=flaky)
    status = {r["N"]: r["status"] for r in res.rows}
    assert status == {100: "ok", 300: "failed:train:drift", 1000: "ok"}
    failed = [r for r in res.rows if r["N"] == 300][0]
    assert math.isnan(failed["diffusion_loss"])
    assert res.aggregate()["N"] == [100, 1000]


def test_nan_estimator_flags_evaluation(cache):
    def nan_fit(obs, cfg, model):
        return SimpleNamespace(drift=lambda x: np.full(x.shape, np.nan), diffusion=model.diffusion)

    row = run_instance(InstanceConfig(**SMALL, tau=1e-3, T=1.0), cache=cache, fit=nan_fit)
    assert row["status"].startswith("failed:evaluate")


def test_real_training_row_is_deterministic(cache):
    cfg = InstanceConfig(**SMALL, tau=1e-3, T=2.0, seed=4)
    a = run_instance(cfg, cache=cache)
    b = run_instance(cfg, cache=cache)
    a.pop("elapsed_s"), b.pop("elapsed_s")
    assert a == b and a["status"] == "ok"
    assert a["diffusion_loss"] > 0


def test_fit_rate_examples():
    slope, _ = fit_rate([(1e3, 1e-1), (1e4, 1e-2), (1e5, 1e-3)])
    assert slope == pytest.approx(-1.0, abs=1e-12)
    slope, _ = fit_rate([(1e3, 0.5), (1e4, 0.5), (1e5, 0.5)])
    assert slope == pytest.approx(0.0, abs=1e-12)
    slope, _ = fit_rate([(1e3, 8e-2), (1e4, 1.1e-2), (1e5, 1.0e-3)])
    assert slope == pytest.approx(-0.9515, abs=5e-3)
    with pytest.raises(InvalidInputError):
        fit_rate([(1e3, 0.1), (1e4, 0.0)])
    with pytest.raises(InvalidInputError):
        fit_rate([(1e3, 0.1)])


def test_fit_rate_segment():
    pts = [(1e3, 1e-1), (1e4, 1e-2), (1e5, 1e-2)]
    assert fit_rate(pts, (0, 2))[0] == pytest.approx(-1.0)


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.floats(1e-6, 1e3), min_size=3, max_size=6),
    st.floats(1e-3, 1e3),
)
def test_fit_rate_scale_invariant(errors, c):
    pts = [(10.0 ** (i + 2), e) for i, e in enumerate(errors)]
    s1, _ = fit_rate(pts)
    s2, _ = fit_rate([(n, c * e) for n, e in pts])
    assert abs(s1 - s2) <= 1e-12 * max(1.0, abs(s1))


def test_decreasing_prefix():
    assert decreasing_prefix([3, 2, 1]) == 3
    assert decreasing_prefix([3, 2, 2, 1]) == 2
    assert decreasing_prefix([]) == 0


def test_empty_result_writes_header_only(tmp_path):
    paths = emit_outputs(SweepResult([], "A"), tmp_path)
    assert paths["csv"].read_text() == ",".join(CSV_COLUMNS) + "\n"


def test_emit_outputs_round_trip_and_plot(tmp_path, cache):
    res = sweep("A", [100, 1000], [0, 1], InstanceConfig(**SMALL), tau_fixed=1e-3,
                cache=cache, fit=truth_fit)
    # give the losses distinct nonzero values so the plot has something to draw
    for i, r in enumerate(res.rows):
        r["drift_loss"] = 1.0 / (i + 1) ** 0.5 + 1 / 3
        r["diffusion_loss"] = 0.1 / r["N"] ** 0.9 * (1 + 0.1 * r["seed"])
        r["f_recovery_error"] = math.pi / r["N"]
    paths = emit_outputs(res, tmp_path)
    text = paths["csv"].read_text()
    assert "\r" not in text and not any(line.endswith(",") for line in text.splitlines())
    back = read_sweep_csv(paths["csv"])
    for orig, parsed in zip(res.rows, back):
        for k in CSV_COLUMNS:
            assert parsed[k] == orig[k]

    summary = json.loads(paths["summary"].read_text())
    assert summary["aggregates"]["diffusion_loss"]["N"] == [100, 1000]
    assert summary["rate_fit"]["diffusion_loss"]["slope"] == pytest.approx(-0.9, abs=0.05)

    svg = paths["plot"].read_text()
    for metric in ("drift_loss", "diffusion_loss", "f_recovery_error"):
        assert len(re.findall(rf'id="metric-{metric}"', svg)) == 1
    assert len(re.findall(r'id="reference-line"', svg)) == 1


def test_emit_outputs_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError) as info:
        emit_outputs(SweepResult([], "A"), blocker / "sub")
    assert str(blocker) in str(info.value)


def test_csv_formatting_is_exact():
    row = {"scheme": "A", "N": 10, "tau": 0.1, "T": 1.0, "seed": 0, "drift_loss": 1 / 3,
           "diffusion_loss": 2.0, "f_recovery_error": math.nan, "wall_time_s": 0.0, "status": "ok"}
    line = format_csv([row]).splitlines()[1]
    assert line == "A,10,0.10000000000000001,1,0,0.33333333333333331,2,nan,0,ok"


def test_sweep_rerun_identical_csv(tmp_path):
    base = replace(InstanceConfig(**SMALL), T0=3.0)
    texts = []
    for k in range(2):
        res = sweep("A", [500, 1000], [0, 1], base, tau_fixed=2e-3)
        texts.append(emit_outputs(res, tmp_path / str(k))["csv"].read_bytes())
    assert texts[0] == texts[1]
