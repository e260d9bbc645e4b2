"""Command-line entry point: ``cisr <command> [--config PATH] [--seed N] [--out DIR] ...``.

Every command writes deterministic CSV files to the output directory and puts
wall-clock details in ``metadata.json`` only. Exit codes: 0 ok, 2 config
error, 3 runtime error.
"""

import argparse
import csv
import dataclasses
import io
import json
import logging
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml
from scipy import stats as sps

from . import __version__
from .cmdp import TabularPolicy, loads
from .bayesopt import FROZEN_LAKE_PRIORS, LANDER_PRIORS
from .config import dump_config, load_config
from .errors import CISRError, ConfigInvalid, MapError
from .fixtures import broken_fixture, identity_fixture, prop_fixtures
from .frozen_lake import build_flake_cmdp, default_map_text, make_interventions, parse_map
from .interventions import reset_to_initial, reset_to_previous
from .lander import LanderCurriculumEnv, build_lander_interventions
from .oracle import EnumerationBudget, verify_prop1, verify_prop2
from .rng import child_seed
from .student import deploy, evaluate_features, train_student
from .teacher import (CurriculumPolicyParams, TabularCurriculumEnv, cisr_optimize,
                      decide_intervention, run_round, train_plain)

log = logging.getLogger("cisr")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
CSV_VERSION = "1"

STUDENT_HEADER = ["student", "seed", "policy", "training_failures", "deployed_return",
                  "success_rate", "failure_rate", "episodes", "teacher_reward", "switches"]
UNIT_HEADER = ["student", "unit", "intervention", "deployed_return", "success_rate",
               "failure_rate"]
AGGREGATE_HEADER = ["metric", "n", "mean", "std", "ci95_low", "ci95_high"]
AGGREGATE_METRICS = ("training_failures", "deployed_return", "success_rate", "failure_rate",
                     "teacher_reward")


# ---------------------------------------------------------------- environments

def build_env(cfg):
    """Curriculum environment described by ``cfg`` (Frozen Lake, lander or a CMDP file)."""
    if cfg.environment == "frozen_lake":
        text = Path(cfg.map).read_text() if cfg.map else default_map_text()
        grid = parse_map(text)
        base = build_flake_cmdp(grid, cfg.frozen_lake)
        ivs = make_interventions(grid, base, cfg.interventions.tau_soft, cfg.interventions.tau_hard)
        return TabularCurriculumEnv(base, ivs, r_max=cfg.teacher.R_max)
    if cfg.environment == "lander":
        return LanderCurriculumEnv(cfg.lander, build_lander_interventions(cfg.interventions.lander_tau),
                                   cfg.discretization)
    return _custom_env(cfg.custom_cmdp)


def _custom_env(settings):
    if not settings.path:
        raise ConfigInvalid("custom_cmdp.path", "required for environment custom_cmdp")
    try:
        base = loads(Path(settings.path).read_text())
    except OSError as exc:
        raise ConfigInvalid("custom_cmdp.path", str(exc)) from exc
    except ValueError as exc:
        raise ConfigInvalid("custom_cmdp.path", f"not a valid CMDP document: {exc}") from exc
    ivs = {}
    for k, spec in enumerate(settings.interventions):
        path = f"custom_cmdp.interventions[{k}]"
        if not isinstance(spec, dict) or "name" not in spec or "trigger" not in spec:
            raise ConfigInvalid(path, "needs name and trigger")
        mode = spec.get("reset", "initial")
        builder = {"initial": reset_to_initial, "previous": reset_to_previous}.get(mode)
        if builder is None:
            raise ConfigInvalid(f"{path}.reset", "must be initial or previous")
        ivs[spec["name"]] = builder(base, frozenset(int(s) for s in spec["trigger"]), spec["name"],
                                    float(spec.get("tau", 0.0)), float(spec.get("kappa_i", 0.0)))
    return TabularCurriculumEnv(base, ivs)


# ---------------------------------------------------------------- policy modes

def params_to_dict(params):
    return {"intervention_sequence": list(params.intervention_sequence),
            "switch_thresholds": [list(p) for p in params.switch_thresholds]}


def params_from_dict(data, where="params_file"):
    try:
        return CurriculumPolicyParams(tuple(data["intervention_sequence"]),
                                      tuple(tuple(p) for p in data["switch_thresholds"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigInvalid(where, f"malformed curriculum parameters: {exc}") from exc


def load_params(path):
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigInvalid("experiment.params_file", str(exc)) from exc
    if isinstance(data, dict) and "params" in data:
        data = data["params"]
    return params_from_dict(data, "experiment.params_file")


def resolve_policy(cfg, env):
    """``None`` for plain training, an intervention id, or curriculum parameters."""
    exp = cfg.experiment
    if exp.policy_mode == "no_intervention":
        return None
    if exp.policy_mode == "single_intervention":
        if exp.intervention not in env.ids:
            raise ConfigInvalid("experiment.intervention", f"must be one of {env.ids}")
        return exp.intervention
    if not exp.params_file:
        raise ConfigInvalid("experiment.params_file", f"required for policy_mode {exp.policy_mode}")
    params = load_params(exp.params_file)
    for i in params.intervention_sequence:
        if i not in env.ids:
            raise ConfigInvalid("experiment.params_file", f"unknown intervention {i!r}")
    return params


def policy_label(policy):
    if policy is None:
        return "none"
    return policy if isinstance(policy, str) else policy.describe()


def _run_student(job):
    cfg, policy, seed = job
    env = build_env(cfg)
    track = cfg.experiment.track_units
    if isinstance(policy, CurriculumPolicyParams):
        return run_round(policy, env, cfg.teacher, cfg.student, seed, track_units=track)
    return train_plain(env, cfg.teacher, cfg.student, seed, intervention_id=policy, track_units=track)


def run_students(cfg, policy, seeds, workers=1):
    jobs = [(cfg, policy, s) for s in seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_student, jobs))
    return [_run_student(j) for j in jobs]


# ---------------------------------------------------------------- CSV helpers

def _num(x):
    x = float(x)
    return "nan" if x != x else repr(x)


def write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    Path(path).write_text(buf.getvalue())


def student_rows(results, seeds, label):
    rows = []
    for k, (res, seed) in enumerate(zip(results, seeds)):
        d = res.deployment
        switches = ";".join(f"{u}:{i}" for u, i in res.switch_log)
        rows.append([k, seed, label, res.training_failures, _num(d.mean_return),
                     _num(d.success_rate), _num(d.failure_rate), d.episodes,
                     _num(res.final_value), switches])
    return rows


def unit_rows(results):
    rows = []
    for k, res in enumerate(results):
        schedule = _unit_schedule(res, len(res.unit_deployments))
        for n, d in enumerate(res.unit_deployments):
            rows.append([k, n, schedule[n] or "none", _num(d.mean_return), _num(d.success_rate),
                         _num(d.failure_rate)])
    return rows


def _unit_schedule(res, n_units):
    out, current, switches = [], None, dict(res.switch_log)
    for n in range(n_units):
        current = switches.get(n, current)
        out.append(current)
    return out


def aggregate(results):
    """Mean, sample std and a t-based 95% interval for each metric over students."""
    values = {
        "training_failures": [r.training_failures for r in results],
        "deployed_return": [r.deployment.mean_return for r in results],
        "success_rate": [r.deployment.success_rate for r in results],
        "failure_rate": [r.deployment.failure_rate for r in results],
        "teacher_reward": [r.final_value for r in results],
    }
    rows = []
    for name in AGGREGATE_METRICS:
        v = np.asarray(values[name], dtype=float)
        n, mean = len(v), float(v.mean())
        std = float(v.std(ddof=1)) if n > 1 else 0.0
        if n > 1 and std > 0:
            half = float(sps.t.ppf(0.975, n - 1)) * std / np.sqrt(n)
        else:
            half = 0.0
        rows.append([name, n, _num(mean), _num(std), _num(mean - half), _num(mean + half)])
    return rows


def write_metadata(out, command, cfg, argv, started, extra=None):
    meta = {"command": command, "argv": list(argv), "version": __version__,
            "csv_schema_version": CSV_VERSION, "python": platform.python_version(),
            "started": time.strftime("%Y-%m-%dT%H:%M:%S%z", time.localtime(started)),
            "elapsed_seconds": round(time.time() - started, 3)}
    if extra:
        meta.update(extra)
    (out / "metadata.json").write_text(json.dumps(meta, indent=2) + "\n")
    (out / "config.yaml").write_text(dump_config(cfg))


# ---------------------------------------------------------------- commands

def cmd_train_student(cfg, args, out):
    """Train one student with the configured policy; log every epoch and save the policy."""
    env = build_env(cfg)
    policy = resolve_policy(cfg, env)
    seed = cfg.experiment.student_seeds()[0]
    state, rows, failures, stage = None, [], 0, 0
    params = policy if isinstance(policy, CurriculumPolicyParams) else None
    current = params.intervention_sequence[0] if params else policy
    for n in range(cfg.teacher.N_s):
        sim = env.training_sim(current)
        state, stats = train_student(sim, cfg.teacher.unit_steps, cfg.student, warm_start=state,
                                     rng_seed=child_seed(seed, n, 0))
        failures += stats.training_failures
        for e in stats.epochs:
            gaps = dict(zip(stats.constraint_names, e.violation_gaps))
            lams = dict(zip(stats.constraint_names, e.lambdas))
            rows.append([n, current or "none", e.epoch, e.steps, e.episodes, _num(e.return_estimate),
                         _num(gaps["unsafe"]), _num(gaps.get("trigger", float("nan"))),
                         _num(lams["unsafe"]), _num(lams.get("trigger", float("nan"))),
                         failures - stats.training_failures + e.training_failures_cumulative])
        if params and n + 1 < cfg.teacher.N_s:
            obs = evaluate_features(state.policy, sim, cfg.teacher.eval_rollouts, child_seed(seed, n, 1))
            current, stage = decide_intervention(params, stage, obs)
    write_csv(out / "training.csv",
              ["unit", "intervention", "epoch", "steps", "episodes", "return_estimate",
               "gap_unsafe", "gap_trigger", "lambda_unsafe", "lambda_trigger",
               "training_failures_cumulative"], rows)
    write_policy(out / "policy.csv", state.policy)
    d = deploy(state.policy, env.deployment_sim(), cfg.teacher.eval_horizon,
               child_seed(seed, cfg.teacher.N_s, 3))
    write_csv(out / "deployment.csv", ["seed", "training_failures", "deployed_return", "success_rate",
                                       "failure_rate", "episodes"],
              [[seed, failures, _num(d.mean_return), _num(d.success_rate), _num(d.failure_rate),
                d.episodes]])
    print(f"training failures {failures}; deployed success {d.success_rate:.3f}, "
          f"return {d.mean_return:.3f}")


def cmd_run_experiment(cfg, args, out):
    """Train ``n_students`` students under one policy mode and summarise them."""
    env = build_env(cfg)
    policy = resolve_policy(cfg, env)
    seeds = cfg.experiment.student_seeds()
    results = run_students(cfg, policy, seeds, args.workers)
    label = policy_label(policy)
    write_csv(out / "students.csv", STUDENT_HEADER, student_rows(results, seeds, label))
    if cfg.experiment.track_units:
        write_csv(out / "units.csv", UNIT_HEADER, unit_rows(results))
    agg = aggregate(results)
    write_csv(out / "aggregate.csv", AGGREGATE_HEADER, agg)
    for row in agg:
        print(f"{row[0]:18s} mean {float(row[2]):10.4f}  95% CI [{row[4]}, {row[5]}]")


def teacher_priors(cfg):
    """Tabulated hyperpriors where the parameter layout matches them, else generic ones."""
    dim = 3 * cfg.teacher.K + 1
    table = {"frozen_lake": FROZEN_LAKE_PRIORS, "lander": LANDER_PRIORS}.get(cfg.environment)
    if table is not None and len(table.lengthscales) == dim:
        return table
    return None


def cmd_optimize_teacher(cfg, args, out):
    """Initial design plus GP-UCB over curriculum policies; saves trace and best parameters."""
    env = build_env(cfg)

    def progress(row):
        print(f"round {row.round:3d} [{row.phase}] value {row.final_value:9.3f} "
              f"success {row.success_rate:.3f}  {row.params.describe()}", flush=True)

    best, trace = cisr_optimize(env, cfg.teacher, cfg.student, cfg.bayesopt,
                                priors=teacher_priors(cfg), rng_seed=cfg.seed, progress=progress)
    (out / "trace.csv").write_text(trace.to_csv())
    (out / "gp_data.csv").write_text(trace.bo.dump_csv())
    row = trace.best()
    # seeds of the students behind the best datum, for exact replay with fixed_params
    datum = child_seed(cfg.seed, 2, row.round)
    doc = {"params": params_to_dict(best), "final_value": float(row.final_value),
           "round": row.round, "seed": cfg.seed,
           "student_seeds": [child_seed(datum, k) for k in range(cfg.teacher.students_per_datum)]}
    (out / "best_params.yaml").write_text(yaml.safe_dump(doc, sort_keys=False))
    print(f"best: {best.describe()} (value {row.final_value:.3f}, round {row.round})")


def _prop_cases(cfg):
    """``(fixture, base, interventions, checked)``; built-in fixtures have known outcomes."""
    if cfg.environment == "custom_cmdp":
        env = _custom_env(cfg.custom_cmdp)
        return [("custom", env.base, env.interventions, False)]
    cases = [(name, base, ivs, True) for name, (base, ivs) in prop_fixtures().items()]
    base, iv = broken_fixture()
    cases.append(("broken", base, {iv.name: iv}, True))
    base, iv = identity_fixture()
    cases.append(("identity", base, {iv.name: iv}, True))
    return cases


def cmd_verify_props(cfg, args, out):
    """Exhaustive checks of eventual and learning safety on small CMDPs.

    On the built-in fixtures a proposition must verify whenever its premise
    holds, and every non-blanket fixture here is built to leak into the
    unsafe set; any other outcome is a runtime error.
    """
    budget = EnumerationBudget()
    rows, cex = [], []
    mismatch = False
    for name, base, ivs, checked in _prop_cases(cfg):
        for iv_name, iv in ivs.items():
            r1 = verify_prop1(base, iv, budget, n_random=10_000, rng_seed=cfg.seed)
            r2 = verify_prop2(base, iv, budget)
            for rep in (r1, r2):
                got = "verified" if rep.verified else "counterexample"
                expected = ("verified" if rep.premise_holds else "counterexample") if checked else ""
                mismatch |= checked and expected != got
                rows.append([name, iv_name, rep.proposition, int(rep.premise_holds),
                             rep.policies_checked, rep.random_checked, rep.feasible_in_induced,
                             len(rep.counterexamples), got, expected])
                for label, kind, value in rep.counterexamples:
                    cex.append([name, iv_name, rep.proposition, label, kind, _num(value)])
                print(f"{name}/{iv_name}: {rep.summary()}")
    write_csv(out / "report.csv",
              ["fixture", "intervention", "property", "premise_holds", "policies_checked",
               "random_checked", "feasible_in_induced", "counterexamples", "result", "expected"], rows)
    write_csv(out / "counterexamples.csv",
              ["fixture", "intervention", "property", "policy", "kind", "value"], cex)
    if mismatch:
        raise RuntimeError("a proposition check disagreed with its expected outcome")


def write_policy(path, policy):
    probs = policy.action_probs
    write_csv(path, ["state"] + [f"p{a}" for a in range(probs.shape[1])],
              [[s] + [_num(p) for p in probs[s]] for s in range(probs.shape[0])])


def read_policy(path):
    try:
        with open(path, newline="") as f:
            rows = list(csv.reader(f))[1:]
        probs = np.array([[float(v) for v in r[1:]] for r in rows])
        return TabularPolicy(probs)
    except (OSError, ValueError, IndexError) as exc:
        raise ConfigInvalid("--policy", f"cannot read policy: {exc}") from exc


def cmd_eval(cfg, args, out):
    """Deploy a saved policy (from ``train-student``) in the original environment."""
    if not args.policy:
        raise ConfigInvalid("--policy", "eval needs --policy PATH")
    env = build_env(cfg)
    policy = read_policy(args.policy)
    if policy.action_probs.shape != (env.n_states, env.n_actions):
        raise ConfigInvalid("--policy", "policy table does not match the environment")
    rows = []
    for k, seed in enumerate(cfg.experiment.student_seeds()):
        d = deploy(policy, env.deployment_sim(), cfg.teacher.eval_horizon, seed)
        rows.append([k, seed, _num(d.mean_return), _num(d.success_rate), _num(d.failure_rate),
                     d.episodes, d.steps])
        print(f"seed {seed}: success {d.success_rate:.3f}, return {d.mean_return:.3f}, "
              f"failures {d.failure_rate:.3f}")
    write_csv(out / "eval.csv", ["run", "seed", "deployed_return", "success_rate", "failure_rate",
                                 "episodes", "steps"], rows)


COMMANDS = {
    "train-student": cmd_train_student,
    "run-experiment": cmd_run_experiment,
    "optimize-teacher": cmd_optimize_teacher,
    "verify-props": cmd_verify_props,
    "eval": cmd_eval,
}


def make_parser():
    p = argparse.ArgumentParser(prog="cisr", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        s = sub.add_parser(name, help=fn.__doc__.splitlines()[0])
        s.add_argument("--config", help="YAML experiment config")
        s.add_argument("--seed", type=int, help="override the top-level seed")
        s.add_argument("--out", help="output directory (default: <output_dir>/<command>)")
        s.add_argument("--workers", type=int, default=1, help="parallel student processes")
        s.add_argument("--map", help="Frozen Lake map file")
        s.add_argument("-v", "--verbose", action="store_true")
        if name == "eval":
            s.add_argument("--policy", help="policy.csv written by train-student")
    return p


def apply_overrides(cfg, args):
    changes = {}
    if args.map:
        changes["map"] = args.map
    if args.seed is not None:
        changes["seed"] = args.seed
        exp = cfg.experiment
        if exp.seeds == (0,) or len(exp.seeds) == 1:
            changes["experiment"] = dataclasses.replace(exp, seeds=(args.seed,))
    if args.workers < 1:
        raise ConfigInvalid("--workers", "must be >= 1")
    return dataclasses.replace(cfg, **changes) if changes else cfg


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = time.time()
    try:
        cfg = apply_overrides(load_config(args.config), args)
        out = Path(args.out) if args.out else Path(cfg.output_dir) / args.command
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](cfg, args, out)
    except (ConfigInvalid, MapError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CISRError, RuntimeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    write_metadata(out, args.command, cfg, argv, started)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
