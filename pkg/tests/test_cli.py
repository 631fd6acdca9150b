import json
import math
from pathlib import Path

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spikebeam import snapshot
from spikebeam.cli import (AGGREGATE_COLUMNS, EXIT_CONFIG, EXIT_IO, EXIT_OK, RATE_COLUMNS, SWEEP_COLUMNS,
                           aggregate_rows, main, read_csv)
from spikebeam.config import ConfigError, ScenarioConfig, dbm_to_watt, watt_to_dbm
from spikebeam.experiment import ExperimentSpec, load_spec, spec_from_mapping
from spikebeam.rl import METRIC_COLUMNS, AlignedPolicy, TrainConfig, evaluate, make_agent, power_sweep

TINY = """\
backend: {backend}
seeds: {seeds}
output: {output}
scenario:
  horizon: 12
train:
  iterations: 2
  batch_size: 24
  minibatch_size: 12
  epochs: 1
  hidden: [8, 8]
evaluation:
  episodes: 2
"""


def write_cfg(tmp_path, backend="spiking", seeds="[0]", name="cfg.yaml", out="run"):
    path = tmp_path / name
    path.write_text(TINY.format(backend=backend, seeds=seeds, output=tmp_path / out))
    return path


def comments(path):
    return [line for line in path.read_text().splitlines() if line.startswith("#")]


# --- dBm conversion -------------------------------------------------------------

def test_dbm_examples():
    assert dbm_to_watt(40.0) == pytest.approx(10.0, rel=1e-15)
    assert dbm_to_watt(30.0) == 1.0
    assert dbm_to_watt(0.0) == pytest.approx(1e-3, rel=1e-15)
    assert watt_to_dbm(10.0) == pytest.approx(40.0, rel=1e-15)


@given(st.floats(-100, 100))
def test_dbm_round_trip(dbm):
    assert watt_to_dbm(dbm_to_watt(dbm)) == pytest.approx(dbm, abs=1e-10)


# --- experiment spec ------------------------------------------------------------

def test_default_config_file_matches_defaults():
    spec = load_spec("configs/default.yaml")
    ref = ExperimentSpec()
    assert spec.scenario == ref.scenario
    assert spec.train == ref.train
    assert spec.evaluation == ref.evaluation
    assert spec.seeds == (0, 1, 2, 3, 4)
    assert spec.sweep_dbm == (20.0, 25.0, 30.0, 35.0, 40.0)


@pytest.mark.parametrize("kwargs", [dict(backend="ddpg"), dict(seeds=()), dict(sweep_dbm=()),
                                    dict(sweep_dbm=(20.0, -3.0))])
def test_spec_invariants(kwargs):
    with pytest.raises(ConfigError):
        ExperimentSpec(**kwargs)


def test_config_error_names_line_and_field(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("seeds: [0]\nscenario:\n  num_vehicles: 3\n  horizon: -4\n")
    with pytest.raises(ConfigError) as info:
        load_spec(p)
    assert info.value.line == 4 and info.value.field_name == "scenario.horizon"


def test_unknown_key_rejected():
    with pytest.raises(ConfigError) as info:
        spec_from_mapping({"train": {"lr": 0.1}})
    assert info.value.field_name == "train.lr"


def test_bool_is_not_a_number():
    with pytest.raises(ConfigError):
        spec_from_mapping({"train": {"epochs": True}})


# --- snapshot -------------------------------------------------------------------

@pytest.mark.parametrize("backend", ["spiking", "dense"])
def test_snapshot_round_trip(backend):
    sc = ScenarioConfig()
    policy, critic = make_agent(sc, TrainConfig(hidden=(8, 6), seed=3), backend)
    policy.log_std[:] = np.linspace(-1, 0, policy.action_dim)
    pol2, crit2 = snapshot.loads(snapshot.dumps(policy, critic), sc)
    for a, b in zip(policy.params + critic.params, pol2.params + crit2.params):
        assert np.array_equal(a, b)
    obs = np.linspace(-1, 1, sc.obs_dim)
    a1, _, _ = policy.act(obs, deterministic=True)
    a2, _, _ = pol2.act(obs, deterministic=True)
    npt.assert_array_equal(a1.beam_angles, a2.beam_angles)
    assert snapshot.dumps(pol2, crit2) == snapshot.dumps(policy, critic)


def test_snapshot_mismatch_and_corruption():
    policy, critic = make_agent(ScenarioConfig(), TrainConfig(hidden=(8, 6)), "spiking")
    data = snapshot.dumps(policy, critic)
    two = ScenarioConfig(num_vehicles=2, initial_positions=((-5, 10), (-15, 10)))
    with pytest.raises(snapshot.SnapshotMismatch):
        snapshot.loads(data, two)
    for bad in (data[:-3], data + b"\x00", b"NOTSNAP!" + data[8:]):
        with pytest.raises(snapshot.SnapshotError):
            snapshot.loads(bad, ScenarioConfig())


# --- aggregation ------------------------------------------------------------------

def test_aggregate_rows_mean_std():
    keys = dict.fromkeys(AGGREGATE_COLUMNS[1::2], 0.0)
    runs = []
    for v in (1.0, 2.0, 6.0):
        row = {k.rsplit("_", 1)[0]: 0.0 for k in keys}
        row["mean_reward"] = v
        runs.append([row])
    (agg,) = aggregate_rows(runs)
    assert agg[1] == pytest.approx(3.0) and agg[2] == pytest.approx(math.sqrt(14 / 3))


# --- commands -------------------------------------------------------------------

def test_train_writes_artifacts_with_provenance(tmp_path):
    cfg = write_cfg(tmp_path)
    assert main(["train", str(cfg)]) == EXIT_OK
    d = tmp_path / "run" / "seed_0"
    for name in ("metrics.csv", "energy.csv"):
        head = comments(d / name)
        assert head[0].startswith("# spikebeam v")
        resolved = json.loads(head[1][len("# config "):])
        assert resolved["train"]["iterations"] == 2 and resolved["seed"] == 0
    assert any("backward" in line for line in comments(d / "energy.csv"))
    _, rows = read_csv(d / "metrics.csv")
    assert len(rows) == 2 and list(rows[0]) == list(METRIC_COLUMNS)
    assert (d / "policy.bin").stat().st_size > 0
    for name in ("aggregate.csv", "summary.csv"):
        assert comments(tmp_path / "run" / name)[0].startswith("# spikebeam v")


def test_train_is_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path)
    main(["train", str(cfg)])
    first = (tmp_path / "run" / "seed_0" / "metrics.csv").read_bytes()
    main(["train", str(cfg)])
    assert (tmp_path / "run" / "seed_0" / "metrics.csv").read_bytes() == first


def test_three_seeds_aggregate(tmp_path):
    cfg = write_cfg(tmp_path, seeds="[0, 1, 2]")
    assert main(["train", str(cfg)]) == EXIT_OK
    run = tmp_path / "run"
    per = [read_csv(run / f"seed_{s}" / "metrics.csv")[1] for s in range(3)]
    _, agg = read_csv(run / "aggregate.csv")
    assert len(agg) == 2
    for it in range(2):
        vals = [float(p[it]["mean_sum_rate"]) for p in per]
        assert float(agg[it]["mean_sum_rate_mean"]) == pytest.approx(np.mean(vals), rel=1e-12)
        assert float(agg[it]["mean_sum_rate_std"]) == pytest.approx(np.std(vals), rel=1e-12, abs=1e-15)
    _, summary = read_csv(run / "summary.csv")
    assert [r["seed"] for r in summary] == ["0", "1", "2", "mean", "std"]


def test_random_backend_skips_optimisation(tmp_path):
    cfg = write_cfg(tmp_path, backend="random")
    assert main(["train", str(cfg)]) == EXIT_OK
    d = tmp_path / "run" / "seed_0"
    _, rows = read_csv(d / "metrics.csv")
    assert len(rows) == 2
    assert all(r["policy_loss"] == "nan" and float(r["train_energy_pj"]) == 0.0 for r in rows)
    assert not (d / "policy.bin").exists()


def test_evaluate_rate_vs_slot_rows(tmp_path):
    cfg = write_cfg(tmp_path)
    main(["train", str(cfg)])
    assert main(["evaluate", str(cfg), "--trajectory"]) == EXIT_OK
    d = tmp_path / "run" / "seed_0"
    _, rows = read_csv(d / "rate_vs_slot.csv")
    assert len(rows) == 12 and list(rows[0]) == list(RATE_COLUMNS)
    _, traj = read_csv(d / "trajectory.csv")
    assert len(traj) == 2 * 12 * 3
    assert comments(d / "trajectory.csv")[0].startswith("# spikebeam v")


def test_evaluate_snapshot_mismatch_is_config_error(tmp_path):
    cfg = write_cfg(tmp_path)
    main(["train", str(cfg)])
    snap = tmp_path / "run" / "seed_0" / "policy.bin"
    other = tmp_path / "k2.yaml"
    other.write_text(cfg.read_text().replace("  horizon: 12\n", "  horizon: 12\n  num_vehicles: 2\n"
                                             "  initial_positions: [[-5, 10], [-15, 10]]\n"))
    assert main(["evaluate", str(other), "--snapshot", str(snap)]) == EXIT_CONFIG
    snap.write_bytes(snap.read_bytes()[:40])
    assert main(["evaluate", str(cfg)]) == EXIT_IO


def test_sweep_of_one_point_equals_single_evaluation(tmp_path):
    cfg = write_cfg(tmp_path)
    assert main(["sweep", str(cfg), "--policy", "aligned", "--sweep-dbm", "40"]) == EXIT_OK
    _, rows = read_csv(tmp_path / "run" / "seed_0" / "power_sweep.csv")
    assert list(rows[0]) == list(SWEEP_COLUMNS) and len(rows) == 1
    spec = load_spec(cfg)
    ref = evaluate(AlignedPolicy(spec.scenario), spec.scenario, 2, spec.evaluation.seed)
    assert float(rows[0]["mean_sum_rate"]) == pytest.approx(ref.mean_sum_rate, rel=1e-15)
    (_, one), = power_sweep(AlignedPolicy(spec.scenario), spec.scenario, [40.0], 2, spec.evaluation.seed)
    npt.assert_array_equal(one.episode_sum_rates, ref.episode_sum_rates)


def test_energy_report_ratios(tmp_path):
    spk = write_cfg(tmp_path, name="spk.yaml", out="spk")
    dense = write_cfg(tmp_path, backend="dense", name="dense.yaml", out="dense")
    main(["train", str(spk)])
    main(["train", str(dense)])
    out = tmp_path / "report.csv"
    assert main(["energy-report", str(tmp_path / "spk" / "seed_0"), str(tmp_path / "dense" / "seed_0"),
                 "--output", str(out)]) == EXIT_OK
    assert any("backward" in line for line in comments(out))
    _, rows = read_csv(out)
    get = {(Path(r["run"]).parent.name, r["phase"], r["network"]): float(r["energy_pj"]) for r in rows}
    for phase in ("training", "inference"):
        s = get[("spk", phase, "spiking")]
        ratio = get[("spk", phase, "ratio_baseline_over_spiking")]
        assert ratio == pytest.approx(get[("spk", phase, "baseline")] / s, rel=1e-12)
        assert ratio > 1.0
        dense_pj = get[("dense", phase, "dense")]
        assert get[("", phase, "ratio_dense_over_spiking")] == pytest.approx(dense_pj / s, rel=1e-12)


def test_energy_report_missing_metrics(tmp_path):
    assert main(["energy-report", str(tmp_path / "nowhere")]) == EXIT_IO


def test_zero_iterations_zero_training_energy(tmp_path):
    cfg = write_cfg(tmp_path)
    assert main(["train", str(cfg), "--iterations", "0"]) == EXIT_OK
    _, rows = read_csv(tmp_path / "run" / "seed_0" / "energy.csv")
    train_rows = [r for r in rows if r["phase"] == "training" and not r["network"].startswith("ratio")]
    assert all(float(r["forward_passes"]) == 0 and float(r["energy_pj"]) == 0.0 for r in train_rows)


def test_validate_config_exit_codes(tmp_path, capsys):
    good = write_cfg(tmp_path)
    assert main(["validate-config", str(good), "--pmax-dbm", "30"]) == EXIT_OK
    printed = json.loads(capsys.readouterr().out)
    assert printed["scenario"]["max_power_dbm"] == pytest.approx(30.0)
    bad = tmp_path / "bad.yaml"
    bad.write_text("train:\n  epochs: zero\n")
    assert main(["validate-config", str(bad)]) == EXIT_CONFIG
    assert "line 2" in capsys.readouterr().err
    assert main(["validate-config", str(tmp_path / "missing.yaml")]) == EXIT_IO
