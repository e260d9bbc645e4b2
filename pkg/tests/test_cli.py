import csv
from pathlib import Path

import pytest
import yaml

from cisr.cli import AGGREGATE_HEADER, STUDENT_HEADER, UNIT_HEADER, main
from cisr.config import ExperimentConfig, config_from_dict, dump_config, load_config
from cisr.errors import ConfigInvalid

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

TINY = {
    "environment": "frozen_lake",
    "teacher": {"N_s": 2, "unit_steps": 300, "K": 1, "n_init": 2, "N_t": 1,
                "eval_horizon": 300, "eval_rollouts": 3},
    "experiment": {"policy_mode": "single_intervention", "intervention": "SR1",
                   "n_students": 2, "seeds": [0]},
}


def write_cfg(tmp_path, data, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return str(p)


def read_rows(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


def test_defaults_round_trip():
    cfg = ExperimentConfig()
    assert config_from_dict(yaml.safe_load(dump_config(cfg))) == cfg


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.yaml")), ids=lambda p: p.name)
def test_committed_configs_load(path):
    load_config(path)


@pytest.mark.parametrize("data, field", [
    ({"student": {"eta": "fast"}}, "student.eta"),
    ({"teacher": {"bogus": 1}}, "teacher.bogus"),
    ({"environment": "mars"}, "environment"),
    ({"experiment": {"n_students": 3, "seeds": [1, 2]}}, "experiment.seeds"),
    ({"experiment": {"policy_mode": "bandit"}}, "experiment.policy_mode"),
    ({"teacher": {"N_s": 0}}, "teacher"),
])
def test_invalid_config_names_field(data, field):
    with pytest.raises(ConfigInvalid) as exc:
        config_from_dict(data)
    assert exc.value.field == field


def test_seed_expansion():
    cfg = config_from_dict({"experiment": {"n_students": 3, "seeds": [7]}})
    assert cfg.experiment.student_seeds() == [7, 8, 9]


def test_exit_code_config_error(tmp_path, capsys):
    bad = write_cfg(tmp_path, {"student": {"eta": "x"}})
    assert main(["run-experiment", "--config", bad, "--out", str(tmp_path / "o")]) == 2
    assert "student.eta" in capsys.readouterr().err


def test_exit_code_missing_map(tmp_path):
    cfg = write_cfg(tmp_path, TINY)
    assert main(["run-experiment", "--config", cfg, "--map", str(tmp_path / "none.txt"),
                 "--out", str(tmp_path / "o")]) == 3


def test_bad_map_is_config_error(tmp_path):
    m = tmp_path / "m.txt"
    m.write_text("SQG\n")
    cfg = write_cfg(tmp_path, TINY)
    assert main(["train-student", "--config", cfg, "--map", str(m), "--out", str(tmp_path / "o")]) == 2


def test_run_experiment_outputs(tmp_path):
    cfg = write_cfg(tmp_path, TINY)
    out = tmp_path / "run"
    assert main(["run-experiment", "--config", cfg, "--out", str(out)]) == 0
    students = read_rows(out / "students.csv")
    assert students[0] == STUDENT_HEADER and len(students) == 3
    assert all(r[3] == "0" for r in students[1:])  # SR1 never fails in training
    assert read_rows(out / "units.csv")[0] == UNIT_HEADER
    assert read_rows(out / "aggregate.csv")[0] == AGGREGATE_HEADER
    assert (out / "metadata.json").exists() and (out / "config.yaml").exists()


def test_single_student_aggregate_equals_record(tmp_path):
    data = dict(TINY, experiment={"policy_mode": "no_intervention", "n_students": 1, "seeds": [4]})
    out = tmp_path / "one"
    assert main(["run-experiment", "--config", write_cfg(tmp_path, data), "--out", str(out)]) == 0
    rec = dict(zip(*read_rows(out / "students.csv")))
    agg = {r[0]: r for r in read_rows(out / "aggregate.csv")[1:]}
    for metric in ("training_failures", "deployed_return", "success_rate"):
        assert float(agg[metric][2]) == float(rec[metric])
        assert agg[metric][4] == agg[metric][5] == agg[metric][2]


def test_optimize_then_replay_best_params(tmp_path):
    cfg = write_cfg(tmp_path, TINY)
    out = tmp_path / "opt"
    assert main(["optimize-teacher", "--config", cfg, "--out", str(out), "--seed", "5"]) == 0
    trace = read_rows(out / "trace.csv")
    assert len(trace) - 1 == 2 + 1  # initial design plus one GP-UCB round
    assert len(read_rows(out / "gp_data.csv")) == 4
    best = yaml.safe_load((out / "best_params.yaml").read_text())
    replay = dict(TINY, experiment={"policy_mode": "fixed_params",
                                    "params_file": str(out / "best_params.yaml"),
                                    "n_students": 1, "seeds": best["student_seeds"]})
    out2 = tmp_path / "replay"
    assert main(["run-experiment", "--config", write_cfg(tmp_path, replay, "r.yaml"),
                 "--out", str(out2)]) == 0
    row = dict(zip(*read_rows(out2 / "students.csv")))
    assert float(row["teacher_reward"]) == best["final_value"]


def test_train_student_then_eval(tmp_path):
    cfg = write_cfg(tmp_path, TINY)
    out = tmp_path / "ts"
    assert main(["train-student", "--config", cfg, "--out", str(out)]) == 0
    assert read_rows(out / "training.csv")[0][:3] == ["unit", "intervention", "epoch"]
    assert len(read_rows(out / "policy.csv")) == 101
    ev = tmp_path / "ev"
    assert main(["eval", "--config", cfg, "--policy", str(out / "policy.csv"), "--out", str(ev)]) == 0
    assert len(read_rows(ev / "eval.csv")) == 3
    assert main(["eval", "--config", cfg, "--out", str(ev)]) == 2


def test_verify_props(tmp_path):
    out = tmp_path / "vp"
    assert main(["verify-props", "--out", str(out)]) == 0
    rows = read_rows(out / "report.csv")
    assert all(r[8] == r[9] for r in rows[1:])
    assert any(r[0] == "broken" and r[8] == "counterexample" for r in rows[1:])


def test_custom_cmdp_environment(tmp_path):
    from cisr.cmdp import dumps
    from cisr.fixtures import slip_grid
    from cisr.frozen_lake import trigger_ring
    grid, base = slip_grid("SFF\nFFF\nFHG", horizon=6, kappa=0.3)
    path = tmp_path / "m.json"
    path.write_text(dumps(base))
    data = dict(TINY, environment="custom_cmdp",
                custom_cmdp={"path": str(path), "interventions": [
                    {"name": "ring", "trigger": sorted(trigger_ring(grid, 1)), "reset": "initial",
                     "tau": 0.3}]},
                experiment={"policy_mode": "single_intervention", "intervention": "ring",
                            "n_students": 1, "seeds": [0]})
    cfg = write_cfg(tmp_path, data)
    assert main(["run-experiment", "--config", cfg, "--out", str(tmp_path / "c")]) == 0
    assert main(["verify-props", "--config", cfg, "--out", str(tmp_path / "v")]) == 0


def test_lander_experiment_runs(tmp_path):
    data = {"environment": "lander",
            "teacher": {"N_s": 1, "unit_steps": 200, "eval_horizon": 300},
            "experiment": {"intervention": "Wide", "n_students": 1, "track_units": False}}
    out = tmp_path / "lander"
    assert main(["run-experiment", "--config", write_cfg(tmp_path, data), "--out", str(out)]) == 0
    assert len(read_rows(out / "students.csv")) == 2
