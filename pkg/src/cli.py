#!/usr/bin/env python3
"""
Command-line interface for the CFPI toolkit.

Every subcommand writes into one run directory (``--out``): config.json with
the resolved settings, log.csv with training curves, result.json with the
final numbers, and checkpoints/. All randomness comes from ``--seed``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""
import argparse
import logging
from contextlib import contextmanager
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .behavior_cloning import PolicyHead, heldout_nll, load_policy, save_policy
from .config import CONFIG, OPERATORS, Config, ConfigurationManager, CriticConfig, IterativeConfig, OneStepConfig
from .critics import best_checkpoint, kfold_validation_curve, load_any_critic, save_critics, save_ensemble
from .data import RunDirectory, dataset_hash
from .envsuite import (ENVIRONMENTS, generate_heterogeneous, make_env, normalized_score, read_dataset,
                       reference_scores, rollout, write_dataset)
from .error import CFPIError, ConfigurationError, DataError, NumericalError, UsageError
from .evaluation import RunMatrix, aggregate_report, append_score
from .logger import LOGGER, attach_run_handler, detach_handler
from .offline_rl import (DEFAULT_LOG_TAUS, fit_behavior, fit_critic, iterate, load_improved_policy,
                         one_step, save_policy_artifacts, tau_sweep)
from .oracles import run_oracle_suite
from .seeding import RandomStreams

DATASET_FILE = "dataset.cfpi"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class _Parser(argparse.ArgumentParser):
    """argparse that raises UsageError instead of exiting with status 2."""

    def error(self, message):
        raise UsageError(message)


def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from e


def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from e


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument('--seed', type=int, default=0, help='Seed for every random stream')
    common.add_argument('--config', type=str, help='Path to a JSON configuration file')
    common.add_argument('--out', type=str, required=True, help='Run directory')
    common.add_argument('--debug', action='store_true', help='Enable debug logging')

    parser = _Parser(prog="cfpi", description="Closed-form policy improvement for offline RL")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser('gen-data', parents=[common], help='Generate a heterogeneous dataset')
    p.add_argument('--env', required=True, choices=sorted(ENVIRONMENTS))
    p.add_argument('--episodes', type=int, default=100)

    for name, text in (('bc', 'Behavior cloning'), ('sarsa', 'SARSA critic training')):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument('--data', required=True, help='Dataset file')
        p.add_argument('--steps', type=int, help='Training steps')
        p.add_argument('--operator', choices=OPERATORS, default='mg',
                       help='Operator the model is trained for (sg: one Gaussian, det: deterministic)')

    p = sub.add_parser('validate-q', parents=[common], help='Validation-loss curve of the critic')
    p.add_argument('--data', required=True)
    p.add_argument('--checkpoints', type=_int_list, default=None, help='Comma-separated step counts')
    p.add_argument('--steps', type=int, help='Reference critic steps')
    p.add_argument('--split', type=float, default=None, help='Train fraction')

    p = sub.add_parser('improve', parents=[common], help='One-step policy improvement')
    p.add_argument('--data', required=True)
    p.add_argument('--operator', choices=OPERATORS, default=None)
    p.add_argument('--log-tau', type=float, default=None)
    p.add_argument('--steps', type=int, help='Steps for both behavior cloning and the critic')
    p.add_argument('--behavior-run', help='Reuse the behavior policy of a bc run')
    p.add_argument('--critic-run', help='Reuse the critic of a sarsa run')

    p = sub.add_parser('iterate', parents=[common], help='Iterative algorithm with target networks')
    p.add_argument('--data', required=True)
    p.add_argument('--log-tau', type=float, default=None)
    p.add_argument('--steps', type=int, help='Iterative critic steps')
    p.add_argument('--behavior-run', help='Reuse the behavior policy of a bc run')

    p = sub.add_parser('eval', parents=[common], help='Roll out a saved policy')
    p.add_argument('--policy', required=True, help='Run directory of improve/iterate')
    p.add_argument('--env', required=True, choices=sorted(ENVIRONMENTS))
    p.add_argument('--episodes', type=int, default=10)
    p.add_argument('--operator', choices=OPERATORS, default=None)
    p.add_argument('--log-tau', type=float, default=None)
    p.add_argument('--matrix', help='Append the normalized score to this long-format CSV')
    p.add_argument('--task', help='Task name in the matrix (default: the environment)')

    p = sub.add_parser('report', parents=[common], help='Aggregate statistics of a score matrix')
    p.add_argument('--matrix', required=True)
    p.add_argument('--resamples', type=int, default=None)
    p.add_argument('--level', type=float, default=None)

    p = sub.add_parser('oracle-check', parents=[common], help='Run the numerical oracle suites')
    p.add_argument('--instances', type=int, default=1000)
    p.add_argument('--episodes', type=int, default=400, help='Monte-Carlo episodes for the chain check')

    p = sub.add_parser('sweep-tau', parents=[common], help='Evaluate a saved policy over log tau values')
    p.add_argument('--policy', required=True)
    p.add_argument('--env', required=True, choices=sorted(ENVIRONMENTS))
    p.add_argument('--episodes', type=int, default=10)
    p.add_argument('--log-taus', type=_float_list, default=list(DEFAULT_LOG_TAUS))
    return parser


@contextmanager
def scoped_config(path: Optional[str]):
    """Overlay a config file on CONFIG for one command, then restore it."""
    saved = dict(vars(CONFIG))
    try:
        if path:
            if not Path(path).exists():
                raise ConfigurationError(f"Configuration file not found: {path}")
            ConfigurationManager(path, target=CONFIG).load_config()
        yield CONFIG
    finally:
        vars(CONFIG).clear()
        vars(CONFIG).update(saved)


def _command_record(args: argparse.Namespace) -> Dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("debug", "config")}


def _load_dataset(path: str):
    dataset = read_dataset(path)
    LOGGER.info(f"Loaded {len(dataset)} transitions from {path}")
    return dataset


def _one_step_config(config: Config, args, **overrides) -> OneStepConfig:
    overrides.setdefault("seed", args.seed)
    operator = overrides.get("operator") or "mg"
    overrides["operator"] = operator
    if operator == "sg":
        overrides.setdefault("n_components", 1)
    if getattr(args, "steps", None) is not None:
        overrides.setdefault("bc_steps", args.steps)
        overrides.setdefault("sarsa_steps", args.steps)
    return OneStepConfig.from_config(config, **{k: v for k, v in overrides.items() if v is not None})


# -- subcommands --------------------------------------------------------------

def cmd_gen_data(args, config: Config, run: RunDirectory, streams: RandomStreams) -> Dict:
    env = make_env(args.env)
    dataset = generate_heterogeneous(env, env.behavior_policies(), args.episodes,
                                     streams.generator("data"), seed=args.seed)
    path = write_dataset(dataset, run.root / DATASET_FILE)
    return {"env": env.name, "episodes": args.episodes, "transitions": len(dataset),
            "dataset": path.name, "dataset_hash": dataset_hash(dataset)}


def cmd_bc(args, config: Config, run: RunDirectory, streams: RandomStreams) -> Dict:
    dataset = _load_dataset(args.data)
    settings = _one_step_config(config, args, operator=args.operator)
    train, heldout = dataset.split(config.validation_split, streams.generator("split"))
    policy = fit_behavior(train, settings, streams.generator("bc"))
    save_policy(policy, run.checkpoints / "behavior", {"dataset_hash": dataset_hash(dataset)})
    run.write_log(policy.history, ["step", "bc_loss"])
    result = {"kind": policy.kind, "final_loss": policy.history[-1]["bc_loss"] if policy.history else None,
              "dataset_hash": dataset_hash(dataset)}
    if isinstance(policy, PolicyHead) and len(heldout):
        result["heldout_nll"] = heldout_nll(policy, heldout)
    return result


def cmd_sarsa(args, config: Config, run: RunDirectory, streams: RandomStreams) -> Dict:
    dataset = _load_dataset(args.data)
    settings = _one_step_config(config, args, operator=args.operator)
    critic = fit_critic(dataset, settings, streams.generator("critic"))
    metadata = {"dataset_hash": dataset_hash(dataset)}
    if settings.critic == "ensemble":
        save_ensemble(critic, run.checkpoints / "critic", metadata)
    else:
        save_critics(critic, run.checkpoints / "critic", metadata)
    run.write_log(critic.history)
    batch = dataset.full_batch()
    q = critic.value(batch.states, batch.actions)
    return {"critic": settings.critic, "q_mean": float(q.mean()), "q_max": float(q.max()),
            "dataset_hash": dataset_hash(dataset)}


def cmd_validate_q(args, config: Config, run: RunDirectory, streams: RandomStreams) -> Dict:
    dataset = _load_dataset(args.data)
    settings = CriticConfig.from_config(config)
    checkpoints = args.checkpoints or [int(v) for v in np.linspace(0, settings.steps, 6)[1:]]
    split = config.validation_split if args.split is None else args.split
    curve = kfold_validation_curve(dataset, split, checkpoints, streams.generator("validate"), settings,
                                   reference_steps=args.steps)
    run.write_log([{"step": step, "validation_loss": loss} for step, loss in curve],
                  ["step", "validation_loss"])
    best = best_checkpoint(curve)
    return {"best_step": best, "final_step": curve[-1][0], "overfit": best < curve[-1][0]}


def cmd_improve(args, config: Config, run: RunDirectory, streams: RandomStreams) -> Dict:
    dataset = _load_dataset(args.data)
    settings = _one_step_config(config, args, operator=args.operator, log_tau=args.log_tau)
    behavior = load_policy(Path(args.behavior_run) / "checkpoints" / "behavior") if args.behavior_run else None
    critic = load_any_critic(Path(args.critic_run) / "checkpoints" / "critic") if args.critic_run else None
    result = one_step(dataset, settings, streams.generator("improve"), run, behavior, critic)
    run.write_log(result.log)
    return {"operator": settings.operator, "log_tau": settings.log_tau,
            "dataset_hash": dataset_hash(dataset), "policy": result.policy.settings()}


def cmd_iterate(args, config: Config, run: RunDirectory, streams: RandomStreams) -> Dict:
    dataset = _load_dataset(args.data)
    overrides = {"seed": args.seed}
    if args.log_tau is not None:
        overrides["log_tau"] = args.log_tau
    if args.steps is not None:
        overrides["total_steps"] = args.steps
    settings = IterativeConfig.from_config(config, **overrides)
    if args.behavior_run:
        behavior = load_policy(Path(args.behavior_run) / "checkpoints" / "behavior")
    else:
        behavior = fit_behavior(dataset, _one_step_config(config, args, operator="mg"), streams.generator("bc"))
    if not isinstance(behavior, PolicyHead):
        raise ConfigurationError("The iterative algorithm needs a mixture behavior policy")
    policy, rows = iterate(dataset, settings, streams.generator("iterate"), behavior)
    save_policy_artifacts(policy, run, {"dataset_hash": dataset_hash(dataset)})
    run.write_log(rows)
    return {"operator": "mg", "log_tau": settings.log_tau, "steps": settings.total_steps,
            "dataset_hash": dataset_hash(dataset), "policy": policy.settings()}


def _policy_overrides(args) -> Dict:
    overrides = {}
    if getattr(args, "operator", None):
        overrides["operator"] = args.operator
    if getattr(args, "log_tau", None) is not None:
        overrides["log_tau"] = args.log_tau
    return overrides


def cmd_eval(args, config: Config, run: RunDirectory, streams: RandomStreams) -> Dict:
    env = make_env(args.env)
    policy = load_improved_policy(args.policy, **_policy_overrides(args))
    returns = rollout(env, policy, args.episodes, streams.generator("eval"))
    random_ref, expert_ref = reference_scores(env.name)
    score = normalized_score(returns.mean_return, random_ref, expert_ref)
    if args.matrix:
        append_score(args.matrix, args.task or env.name, args.seed, score)
    LOGGER.info(f"{env.name}: mean return {returns.mean_return:.4f}, normalized {score:.2f}")
    return {"env": env.name, "episodes": args.episodes, "mean_return": returns.mean_return,
            "normalized_score": score, "returns": returns.returns.tolist(), "policy": policy.settings()}


def cmd_report(args, config: Config, run: RunDirectory, streams: RandomStreams) -> Dict:
    matrix = RunMatrix.read_csv(args.matrix)
    report = aggregate_report(matrix, args.resamples, args.level, streams.generator("bootstrap"))
    report.write(run.root)
    return {"tasks": report.n_tasks, "seeds": report.n_seeds,
            "estimates": {name: {"point": e.point, "ci_low": e.low, "ci_high": e.high}
                          for name, e in report.estimates.items()}}


def cmd_oracle_check(args, config: Config, run: RunDirectory, streams: RandomStreams) -> Dict:
    report = run_oracle_suite(args.instances, streams.generator("oracle"), chain_episodes=args.episodes)
    run.write_log(report.to_frame().to_dict("records"), ["suite", "checked", "failures", "worst"])
    run.write_result(report.to_dict())
    if not report.passed:
        failed = [s.name for s in report.suites if not s.passed]
        raise NumericalError(f"Oracle suites failed: {', '.join(failed)}")
    return report.to_dict()


def cmd_sweep_tau(args, config: Config, run: RunDirectory, streams: RandomStreams) -> Dict:
    env = make_env(args.env)
    policy = load_improved_policy(args.policy)
    sweep = tau_sweep(policy, env, args.log_taus, args.episodes, streams.generator("sweep"))
    run.write_log(sweep.rows(), ["log_tau", "mean_return"])
    return {"env": env.name, "best_log_tau": sweep.best, "values": sweep.values, "returns": sweep.returns}


# raised by numpy and the interpreter rather than by this package
NUMERICAL_FAILURES = (FloatingPointError, OverflowError, ZeroDivisionError, np.linalg.LinAlgError)


COMMANDS = {
    'gen-data': cmd_gen_data,
    'bc': cmd_bc,
    'sarsa': cmd_sarsa,
    'validate-q': cmd_validate_q,
    'improve': cmd_improve,
    'iterate': cmd_iterate,
    'eval': cmd_eval,
    'report': cmd_report,
    'oracle-check': cmd_oracle_check,
    'sweep-tau': cmd_sweep_tau,
}


def exit_code(error: BaseException) -> int:
    if isinstance(error, (UsageError, ConfigurationError)):
        return EXIT_USAGE
    if isinstance(error, DataError):
        return EXIT_DATA
    if isinstance(error, (NumericalError,) + NUMERICAL_FAILURES):
        return EXIT_NUMERICAL
    return EXIT_USAGE


def run_command(args: argparse.Namespace) -> Dict:
    run = RunDirectory(args.out)
    handler = attach_run_handler(run.root)
    try:
        with scoped_config(args.config) as config:
            run.write_config({"command": _command_record(args), "config": config.as_dict()})
            result = COMMANDS[args.command](args, config, run, RandomStreams(args.seed))
            if args.command != 'oracle-check':
                run.write_result(result)
            return result
    finally:
        detach_handler(handler)


def cli_main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse ``argv``, run one subcommand and map failures to exit codes."""
    previous_level = LOGGER.level
    try:
        args = build_parser().parse_args(argv)
        if args.debug:
            LOGGER.setLevel(logging.DEBUG)
            LOGGER.debug("Debug logging enabled")
        run_command(args)
        return EXIT_OK
    except SystemExit as e:
        # --help
        return e.code if isinstance(e.code, int) else EXIT_OK
    except CFPIError as e:
        LOGGER.error(f"{type(e).__name__}: {e}")
        if e.cause:
            LOGGER.error(f"Caused by: {e.cause}")
        return exit_code(e)
    except NUMERICAL_FAILURES as e:
        LOGGER.error(f"Numerical failure: {type(e).__name__}: {e}")
        return EXIT_NUMERICAL
    except Exception as e:
        LOGGER.error(f"Unexpected error: {e}", exc_info=True)
        return EXIT_USAGE
    finally:
        LOGGER.setLevel(previous_level)
