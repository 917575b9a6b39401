"""
The jerkgrpo command line.

    jerkgrpo demonstrate --episodes 200 --out demos.jsonl
    jerkgrpo train --stage bc --demos demos.jsonl --out runs/bc
    jerkgrpo train --stage grpo --init runs/bc/bc.json --out runs/smooth
    jerkgrpo eval runs/bc/bc.json runs/smooth/grpo.json --scripted --out runs/eval
    jerkgrpo analyze runs/eval/steps.csv
    jerkgrpo ablate --init runs/bc/bc.json --seeds 0 1 2 3 4 --out runs/ablate

Relative output paths are resolved against $JERKGRPO_RUN_DIR (default:
the current directory). Exit codes: 0 on success, 2 for usage, config,
file-format or contract errors, 3 after a numerical failure.
"""
import argparse
import dataclasses
import json
import logging
import os
import os.path as op
import sys
from typing import Any, Dict, List, Optional, Sequence, Tuple

import yaml

from . import __version__, loader
from .config import ExperimentConfig, config_hash, load_config
from .demos import DemoSet, ScriptedController, collect_demonstrations
from .env import Rollout
from .errors import (
    ConfigError,
    ContractViolation,
    FormatError,
    JerkGrpoError,
    NumericalFailure,
)
from .kinematics import JointTrajectory
from .path import MANIFEST_NAME, output_path
from .policy import PolicyParams, ReferencePolicy
from .smoothness import SmoothnessReport, trajectory_report
from .tables import (
    ABLATION_METRICS,
    ablation_summary_rows,
    ablation_table,
    training_log_dataset,
)
from .trainer import (
    REWARD_MODES,
    EvalResult,
    GrpoLogRow,
    bc_train,
    evaluate,
    evaluation_rollouts,
    grpo_train,
)
from .utils import episode_seeds

__all__ = [
    "EXIT_OK",
    "EXIT_USAGE",
    "EXIT_NUMERICAL",
    "ExperimentManifest",
    "cmd_demonstrate",
    "cmd_train",
    "cmd_eval",
    "cmd_analyze",
    "cmd_ablate",
    "build_parser",
    "main",
]

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3

# the columns of the metric tables
EVAL_COLUMNS = ("label", "success_rate", "mean_jerk", "peak_jerk", "n_episodes")
ANALYZE_COLUMNS = ("episode",) + SmoothnessReport.COLUMNS
ABLATE_COLUMNS = ("mode", "seed") + ABLATION_METRICS
BC_LOG_COLUMNS = ("iteration", "loss")


@dataclasses.dataclass(frozen=True)
class ExperimentManifest:
    """
    What produced an output directory, written as manifest.json.
    """

    command: str
    config_path: Optional[str]
    config_hash: str
    seeds: List[int]
    files: List[str]
    versions: Dict[str, Any]

    def __post_init__(self) -> None:
        if not self.seeds:
            raise ContractViolation("A manifest needs at least one seed.")

    def write(self, directory: str) -> str:
        path = op.join(directory, MANIFEST_NAME)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(dataclasses.asdict(self), f, indent=2, sort_keys=True)
            f.write("\n")
        return path


def _manifest(
    command: str,
    args: argparse.Namespace,
    cfg: ExperimentConfig,
    seeds: Sequence[int],
    files: Sequence[str],
) -> ExperimentManifest:
    return ExperimentManifest(
        command=command,
        config_path=args.config,
        config_hash=config_hash(cfg),
        seeds=[int(s) for s in seeds],
        files=sorted(op.basename(f) for f in files),
        versions={"jerkgrpo": __version__, "format": loader.FORMAT_VERSION},
    )


def _parse_overrides(pairs: Sequence[str]) -> Dict[str, Any]:
    """
    Turn ["grpo.batches=10", ...] into {"grpo.batches": 10, ...}.
    """
    overrides = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep:
            raise ConfigError(
                f"Overrides must look like 'section.key=value', got '{pair}'."
            )
        overrides[key.strip()] = yaml.safe_load(value)
    return overrides


def _load(args: argparse.Namespace, **extra: Any) -> ExperimentConfig:
    overrides = _parse_overrides(args.set or [])
    overrides.update({k: v for k, v in extra.items() if v is not None})
    return load_config(args.config, overrides)


def _output_dir(path: str) -> str:
    directory = output_path(path)
    os.makedirs(directory, exist_ok=True)
    return directory


def cmd_demonstrate(args: argparse.Namespace) -> int:
    """
    Write scripted minimum-jerk demonstrations as JSON lines.

    The first line is always the header record, so zero episodes give a
    header-only file.
    """
    cfg = _load(args, **{"demo.seed": args.seed})
    out = output_path(args.out)
    directory = op.dirname(out) or "."
    os.makedirs(directory, exist_ok=True)

    seeds = episode_seeds(cfg.demo.seed, args.episodes)
    demos = collect_demonstrations(
        cfg.env,
        [int(s) for s in seeds],
        cfg.demo.mode,
        cfg.demo.speed_margin,
        cfg.kinematics.derivative_method,
    )

    loader.write_rollouts(out, demos.rollouts, cfg.env.horizon, config_hash(cfg))
    _manifest("demonstrate", args, cfg, [cfg.demo.seed], [out]).write(directory)

    print(f"episodes: {len(demos.rollouts)}")
    print(f"success_rate: {demos.success_rate!r}")
    print(f"mean_jerk: {demos.mean_jerk!r}")

    return EXIT_OK


def _bc_demos(args: argparse.Namespace, cfg: ExperimentConfig) -> DemoSet:
    if args.demos:
        _, rollouts = loader.read_rollouts(args.demos)
        return DemoSet.from_rollouts(rollouts, cfg.env.chunk_size)

    seeds = episode_seeds(cfg.demo.seed, cfg.bc.n_demos)
    return collect_demonstrations(
        cfg.env,
        [int(s) for s in seeds],
        cfg.demo.mode,
        cfg.demo.speed_margin,
        cfg.kinematics.derivative_method,
    )


def _train_bc(args: argparse.Namespace, cfg: ExperimentConfig, directory: str) -> int:

    demos = _bc_demos(args, cfg)
    params, losses = bc_train(demos, cfg.env, cfg.bc, cfg.policy)

    digest = config_hash(cfg)
    checkpoint = op.join(directory, "bc.json")
    log = op.join(directory, "bc_log.csv")

    loader.save_checkpoint(checkpoint, params, digest, stage="bc")
    loader.write_table(
        log,
        loader.make_header(loader.TRAINING_LOG, digest, stage="bc"),
        BC_LOG_COLUMNS,
        enumerate(losses),
    )
    _manifest("train", args, cfg, [cfg.bc.seed], [checkpoint, log]).write(directory)

    final = float(losses[-1]) if len(losses) else float("nan")
    print(f"final_loss: {final!r}")

    return EXIT_OK


def _load_init(
    args: argparse.Namespace, cfg: ExperimentConfig, directory: str
) -> PolicyParams:
    """
    The BC checkpoint GRPO starts from (--init, else bc.json in the output).
    """
    path = args.init if args.init else op.join(directory, "bc.json")

    if not op.exists(path):
        raise FileNotFoundError(
            f"No BC checkpoint at '{path}'; run 'train --stage bc' first."
        )

    params, _ = loader.load_checkpoint(path, cfg.env.obs_dim, cfg.env.act_dim)
    return params


def _run_grpo(
    cfg: ExperimentConfig, init: PolicyParams, directory: str, prefix: str
) -> Tuple[PolicyParams, List[GrpoLogRow], List[str]]:
    """
    Run GRPO writing the log as it grows; on a numerical failure an abort
    checkpoint is written before re-raising.
    """
    digest = config_hash(cfg)
    log = op.join(directory, f"{prefix}log.csv")
    checkpoint = op.join(directory, f"{prefix}grpo.json")
    header = loader.make_header(loader.TRAINING_LOG, digest, stage="grpo")

    latest = [init]

    with loader.TableWriter(log, header, GrpoLogRow.COLUMNS) as writer:

        def on_batch(row: GrpoLogRow, params: PolicyParams) -> None:
            writer.append(row.as_row())
            latest[0] = params

        try:
            params, rows = grpo_train(
                init,
                cfg.env,
                cfg.grpo,
                cfg.reward,
                ReferencePolicy.freeze(init),
                cfg.kinematics.derivative_method,
                on_batch,
            )
        except NumericalFailure as err:
            last = err.params if isinstance(err.params, PolicyParams) else latest[0]
            abort = op.join(directory, f"{prefix}abort.json")
            loader.save_checkpoint(abort, last, digest, stage="abort", error=str(err))
            logger.error(f"Numerical failure, wrote {abort}")
            raise

    loader.save_checkpoint(checkpoint, params, digest, stage="grpo")

    return params, rows, [checkpoint, log]


def _quarter_jerk(rows: Sequence[GrpoLogRow]) -> Tuple[float, float]:
    """
    The mean jerk of the first and the last quarter of the batches.
    """
    jerk = training_log_dataset(rows).mean_jerk
    quarter = max(1, jerk.sizes["batch"] // 4)
    return float(jerk[:quarter].mean()), float(jerk[-quarter:].mean())


def _train_grpo(args: argparse.Namespace, cfg: ExperimentConfig, directory: str) -> int:

    init = _load_init(args, cfg, directory)
    seeds = [cfg.grpo.seed]

    try:
        _, rows, files = _run_grpo(cfg, init, directory, "")
    except NumericalFailure:
        aborted = ["abort.json", "log.csv"]
        _manifest("train", args, cfg, seeds, aborted).write(directory)
        raise

    _manifest("train", args, cfg, seeds, files).write(directory)

    if rows:
        first, last = _quarter_jerk(rows)
        print(f"first_quarter_jerk: {first!r}")
        print(f"last_quarter_jerk: {last!r}")

    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    """
    Run the BC stage or the GRPO stage.
    """
    if args.stage == "bc":
        cfg = _load(args, **{"bc.seed": args.seed, "policy.init_seed": args.seed})
    else:
        cfg = _load(args, **{"grpo.seed": args.seed, "reward.mode": args.reward_mode})

    directory = _output_dir(args.out)

    if args.stage == "bc":
        return _train_bc(args, cfg, directory)

    return _train_grpo(args, cfg, directory)


def cmd_eval(args: argparse.Namespace) -> int:
    """
    Evaluate checkpoints (and optionally the scripted controller).

    Each checkpoint becomes one row of eval.csv; the episodes of the first
    evaluated actor are also written as steps.csv for `analyze`.
    """
    cfg = _load(args)
    digest = config_hash(cfg)
    directory = _output_dir(args.out)
    method = cfg.kinematics.derivative_method

    actors: List[Tuple[str, Any]] = []
    for path in args.checkpoints:
        params, _ = loader.load_checkpoint(path, cfg.env.obs_dim, cfg.env.act_dim)
        actors.append((op.splitext(op.basename(path))[0], params))

    if args.scripted:
        scripted = ScriptedController(cfg.env, cfg.demo.mode, cfg.demo.speed_margin)
        actors.append(("scripted", scripted))

    if not actors:
        raise ContractViolation("Nothing to evaluate: pass checkpoints or --scripted.")

    rows = []
    kept: List[Rollout] = []
    for label, actor in actors:
        rollouts = evaluation_rollouts(actor, cfg.env, args.episodes, args.seed, method)
        result = EvalResult.from_rollouts(rollouts)
        if not kept:
            kept = rollouts
        rows.append(
            [
                label,
                result.success_rate,
                result.mean_jerk,
                result.peak_jerk,
                result.n_episodes,
            ]
        )
        print(
            f"{label}: success_rate={result.success_rate!r} "
            f"mean_jerk={result.mean_jerk!r} peak_jerk={result.peak_jerk!r}"
        )

    table = op.join(directory, "eval.csv")
    header = loader.make_header(loader.METRICS, digest)
    loader.write_table(table, header, EVAL_COLUMNS, rows)

    # keep the episodes of the first actor for offline analysis
    steps = op.join(directory, "steps.csv")
    loader.write_step_csv(steps, kept, digest)

    _manifest("eval", args, cfg, [args.seed], [table, steps]).write(directory)

    return EXIT_OK


def _analysis_trajectories(path: str) -> Dict[int, JointTrajectory]:
    """
    The joint trajectories of a rollout JSON-lines file or a per-step CSV.
    """
    with open(path, "r", encoding="utf-8") as f:
        first = f.readline()

    if first.startswith("{"):
        _, rollouts = loader.read_rollouts(path)
        return {i: r.joint_traj for i, r in enumerate(rollouts)}

    _, trajectories = loader.read_step_csv(path)
    return trajectories


def cmd_analyze(args: argparse.Namespace) -> int:
    """
    Compute the end-effector smoothness report of every episode in a file.
    """
    cfg = _load(args)
    model = cfg.env.model

    trajectories = _analysis_trajectories(args.file)

    rows = []
    for episode, traj in trajectories.items():

        if traj.dof != model.dof:
            raise FormatError(
                f"Episode {episode} has {traj.dof} joints "
                f"but the config arm has {model.dof}."
            )

        report = trajectory_report(model, traj, cfg.kinematics.derivative_method)
        rows.append([episode, *report.as_row()])
        print(
            f"{episode}: mean_jerk={report.mean_jerk_norm!r} "
            f"peak_jerk={report.peak_jerk_norm!r}"
        )

    if args.out:
        out = output_path(args.out)
    else:
        out = op.splitext(args.file)[0] + ".smoothness.csv"

    header = loader.make_header(loader.METRICS, config_hash(cfg))
    loader.write_table(out, header, ANALYZE_COLUMNS, rows)

    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    """
    Run GRPO for every reward mode and seed and summarize the final policies.
    """
    cfg = _load(args)
    digest = config_hash(cfg)
    directory = _output_dir(args.out)

    if args.init:
        init, _ = loader.load_checkpoint(args.init, cfg.env.obs_dim, cfg.env.act_dim)
    else:
        init, _ = bc_train(_bc_demos(args, cfg), cfg.env, cfg.bc, cfg.policy)
        loader.save_checkpoint(op.join(directory, "bc.json"), init, digest, stage="bc")

    results: Dict[Tuple[str, int], EvalResult] = {}
    files = []

    for mode in REWARD_MODES:
        for seed in args.seeds:

            run = dataclasses.replace(
                cfg,
                grpo=dataclasses.replace(cfg.grpo, seed=seed),
                reward=dataclasses.replace(cfg.reward, mode=mode),
            )
            logger.info(f"Ablation run: reward {mode}, seed {seed}")

            params, _, written = _run_grpo(run, init, directory, f"{mode}_seed{seed}_")
            files.extend(written)

            results[(mode, seed)] = evaluate(
                params, cfg.env, args.episodes, seed, cfg.kinematics.derivative_method
            )

    summary = op.join(directory, "summary.csv")
    rows = ablation_summary_rows(ablation_table(results))
    header = loader.make_header(loader.METRICS, digest)
    loader.write_table(summary, header, ABLATE_COLUMNS, rows)

    _manifest("ablate", args, cfg, args.seeds, files + [summary]).write(directory)

    for row in rows:
        print(",".join(str(v) for v in row))

    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    """
    The argument parser of the `jerkgrpo` command.
    """
    parser = argparse.ArgumentParser(
        prog="jerkgrpo",
        description="Smoothness-aware GRPO fine-tuning of a planar reaching policy.",
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {__version__}"
    )

    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument(
        "-v", "--verbose", action="store_true", help="Log debug messages."
    )
    verbosity.add_argument(
        "-q", "--quiet", action="store_true", help="Only log warnings."
    )

    # options shared by every command
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="A YAML experiment config.")
    common.add_argument(
        "--set",
        action="append",
        default=None,
        metavar="SECTION.KEY=VALUE",
        help="Override a config key (repeatable).",
    )

    commands = parser.add_subparsers(dest="command", required=True)

    demonstrate = commands.add_parser(
        "demonstrate", parents=[common], help="Write scripted demonstrations."
    )
    demonstrate.add_argument(
        "--episodes",
        type=int,
        default=200,
        help="The number of episodes; 0 writes a file holding only the header line.",
    )
    demonstrate.add_argument("--seed", type=int, default=None)
    demonstrate.add_argument("--out", default="demos.jsonl")
    demonstrate.set_defaults(func=cmd_demonstrate)

    train = commands.add_parser(
        "train", parents=[common], help="Run the BC or the GRPO stage."
    )
    train.add_argument("--stage", choices=("bc", "grpo"), required=True)
    train.add_argument("--reward-mode", choices=REWARD_MODES, default=None)
    train.add_argument("--seed", type=int, default=None)
    train.add_argument("--init", default=None, help="The BC checkpoint to start from.")
    train.add_argument("--demos", default=None, help="Demonstrations for BC.")
    train.add_argument("--out", default="run")
    train.set_defaults(func=cmd_train)

    evaluate_ = commands.add_parser(
        "eval", parents=[common], help="Evaluate checkpoints."
    )
    evaluate_.add_argument("checkpoints", nargs="*")
    evaluate_.add_argument(
        "--scripted",
        action="store_true",
        help="Also evaluate the scripted controller.",
    )
    evaluate_.add_argument("--episodes", type=int, default=100)
    evaluate_.add_argument("--seed", type=int, default=0)
    evaluate_.add_argument("--out", default="eval")
    evaluate_.set_defaults(func=cmd_eval)

    analyze = commands.add_parser(
        "analyze", parents=[common], help="Smoothness of recorded trajectories."
    )
    analyze.add_argument("file")
    analyze.add_argument("--out", default=None)
    analyze.set_defaults(func=cmd_analyze)

    ablate = commands.add_parser(
        "ablate", parents=[common], help="Compare the reward modes."
    )
    ablate.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ablate.add_argument("--init", default=None)
    ablate.add_argument("--demos", default=None)
    ablate.add_argument("--episodes", type=int, default=100)
    ablate.add_argument("--out", default="ablate")
    ablate.set_defaults(func=cmd_ablate)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Run the command line and return its exit code.
    """
    parser = build_parser()

    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return int(err.code) if err.code is not None else EXIT_OK

    if args.verbose:
        level = logging.DEBUG
    elif args.quiet:
        level = logging.WARNING
    else:
        level = logging.INFO
    logging.basicConfig(
        level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s"
    )

    try:
        return int(args.func(args))
    except NumericalFailure as err:
        logger.error(str(err))
        return EXIT_NUMERICAL
    except (JerkGrpoError, OSError) as err:
        logger.error(str(err))
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
