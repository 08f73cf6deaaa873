"""Command-line interface: dataset, run, eval, stats, and arena subcommands."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .arena import ArenaService, tally_preferences
from .config import ConfigError, RunSettings, build_gateway, endpoint_from_config, load_settings
from .curriculum import resume_curriculum, run_curriculum
from .errors import ChatloopError
from .evaluation import easy_rate_series, evaluate_chatbot, regen_stats, render_eval_table, render_regen_table
from .gateway import EndpointRef
from .manifest import load_manifest, verify_artifacts
from .models import dump_json, read_corpus
from .personas import (
    OCCUPATION_CATALOG,
    build_dataset,
    import_backgrounds,
    load_dataset,
    save_dataset,
    select_groups,
    split_dataset,
    BackgroundDataset,
)


def _dataset_build(args: argparse.Namespace) -> int:
    groups = select_groups(args.groups, args.seed)
    dataset = build_dataset(groups, args.per_group, seed=args.seed)
    save_dataset(args.out, dataset, seed=args.seed)
    print(f"built {len(dataset.backgrounds)} backgrounds across {args.groups} groups -> {args.out}")
    return 0


def _dataset_split(args: argparse.Namespace) -> int:
    dataset = load_dataset(args.dataset)
    dataset = split_dataset(dataset, (args.train_groups, args.val_groups, args.test_groups), args.seed)
    save_dataset(args.dataset, dataset, seed=args.seed)
    sizes = {name: len(ids) for name, ids in dataset.splits.items()}
    print(f"split {args.dataset}: {sizes}")
    return 0


def _dataset_import(args: argparse.Namespace) -> int:
    records = import_backgrounds(args.file)
    flagged = sum(1 for r in records if r.flagged)
    save_dataset(args.out, BackgroundDataset(backgrounds=tuple(records)))
    print(f"imported {len(records)} backgrounds ({flagged} flagged) -> {args.out}")
    return 0


def _load_run_context(settings: RunSettings):
    gateway = build_gateway(settings.generation)
    chatbot = endpoint_from_config(gateway, settings.endpoints["chatbot"], "chatbot")
    user_agent = endpoint_from_config(gateway, settings.endpoints["user_agent"], "user_agent")
    critic = None
    if "critic" in settings.endpoints:
        critic = endpoint_from_config(gateway, settings.endpoints["critic"], "critic")
    if settings.dataset_dir is None:
        raise ConfigError("dataset_dir: required to run")
    dataset = load_dataset(settings.dataset_dir)
    if dataset.splits:
        users_train = dataset.split_users("train")
        users_validation = dataset.split_users("validation")
        users_test = dataset.split_users("test")
    else:
        users_train, users_validation, users_test = list(dataset.backgrounds), [], []
    return gateway, chatbot, user_agent, critic, users_train, users_validation, users_test


def _run_start(args: argparse.Namespace) -> int:
    settings = load_settings(args.config, args.set)
    if args.mode:
        settings = load_settings(args.config, (args.set or []) + [f"mode={args.mode}"])
    run_dir = args.run_dir or settings.run_dir
    gateway, chatbot, user_agent, critic, users_train, users_validation, _ = _load_run_context(settings)
    manifest = run_curriculum(
        gateway,
        settings.generation,
        users_train,
        chatbot,
        user_agent,
        critic,
        settings.trainer,
        settings.mode,
        run_dir,
        run_id=settings.run_id,
        users_validation=users_validation,
        dataset_manifest=settings.dataset_dir,
        max_iterations_this_session=args.iterations,
    )
    print(f"run {manifest.run_id}: {manifest.status} after {manifest.completed_iterations()} iteration(s)")
    if manifest.halt_reason:
        print(f"halt reason: {manifest.halt_reason}", file=sys.stderr)
        return 1
    return 0


def _resolve_run_dir(args: argparse.Namespace, default: str | None = None) -> str:
    if getattr(args, "run_dir", None):
        return args.run_dir
    if getattr(args, "run_id", None):
        return str(Path(getattr(args, "runs_root", None) or "runs") / args.run_id)
    if default:
        return default
    raise ConfigError("run_dir: pass --run-dir or --run-id")


def _run_resume(args: argparse.Namespace) -> int:
    settings = load_settings(args.config, args.set)
    run_dir = _resolve_run_dir(args, settings.run_dir)
    gateway, _, user_agent, critic, users_train, users_validation, _ = _load_run_context(settings)
    manifest = resume_curriculum(
        gateway,
        run_dir,
        users_train,
        user_agent,
        critic,
        settings.trainer,
        users_validation=users_validation,
        max_iterations_this_session=args.iterations,
    )
    print(f"run {manifest.run_id}: {manifest.status} after {manifest.completed_iterations()} iteration(s)")
    if manifest.halt_reason:
        print(f"halt reason: {manifest.halt_reason}", file=sys.stderr)
        return 1
    return 0


def _run_status(args: argparse.Namespace) -> int:
    run_dir = _resolve_run_dir(args)
    manifest = load_manifest(run_dir)
    missing = verify_artifacts(run_dir, manifest)
    print(f"run {manifest.run_id} [{manifest.mode}] status={manifest.status}")
    for record in manifest.iterations:
        rate = f" easy_rate={record.easy_rate:.3f}" if record.easy_rate is not None else ""
        print(f"  iter {record.iteration}: corpus={record.corpus_path} critic_calls={record.critic_calls}{rate}")
    if manifest.halt_reason:
        print(f"halt reason: {manifest.halt_reason}")
    if missing:
        print(f"missing artifacts: {missing}", file=sys.stderr)
        return 1
    return 0


def _eval_run(args: argparse.Namespace) -> int:
    settings = load_settings(args.config, args.set)
    gateway, chatbot, user_agent, critic, _, _, users_test = _load_run_context(settings)
    if critic is None:
        raise ConfigError("endpoints.critic: required to evaluate")
    if args.run_dir:
        manifest = load_manifest(args.run_dir)
        endpoint_dict = manifest.final_trained_endpoint or manifest.current_endpoint_dict()
        chatbot = EndpointRef.from_dict(endpoint_dict)
    if not users_test:
        raise ConfigError("dataset has no test split; run `chatloop dataset split` first")
    scorer = None
    if "ppl_scorer" in settings.endpoints:
        scorer = endpoint_from_config(gateway, settings.endpoints["ppl_scorer"], "ppl_scorer")
    report = evaluate_chatbot(gateway, chatbot, users_test, user_agent, critic, settings.generation, scorer)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(dump_json(report.to_dict()) + "\n", encoding="utf-8")
    print(render_eval_table(report))
    print(f"report -> {out}")
    return 0


def _stats_regen(args: argparse.Namespace) -> int:
    corpora = [read_corpus(p) for p in args.corpus]
    stats = regen_stats(corpora)
    print(render_regen_table(stats))
    if args.out:
        Path(args.out).write_text(dump_json(stats.to_dict()) + "\n", encoding="utf-8")
    return 0


def _stats_easy_rate(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.run_dir)
    records = [r.to_dict() for r in manifest.iterations if r.easy_rate is not None]
    if not records:
        print("no difficulty-classified iterations in this run", file=sys.stderr)
        return 1
    for k, rate in easy_rate_series(records):
        print(f"iter {k}: easy rate {rate:.3f}")
    return 0


def _arena_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    settings = load_settings(args.config, args.set)
    if settings.arena is None:
        raise ConfigError("arena: section required to serve")
    gateway = build_gateway(settings.generation)
    system_1 = endpoint_from_config(gateway, settings.arena.system_1, "arena.system_1")
    system_2 = endpoint_from_config(gateway, settings.arena.system_2, "arena.system_2")
    arena = ArenaService(gateway, system_1, system_2, settings.arena.votes_path, seed=settings.arena.seed)
    import os

    app = create_app(arena, runs_root=args.runs_root, admin_token=os.environ.get("CHATLOOP_ADMIN_TOKEN"))
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def _arena_tally(args: argparse.Namespace) -> int:
    report = tally_preferences(args.votes)
    print(dump_json(report))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chatloop", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    dataset = sub.add_parser("dataset", help="build, split, or import persona datasets")
    dataset_sub = dataset.add_subparsers(dest="subcommand", required=True)
    build = dataset_sub.add_parser("build", help="synthesize a persona dataset offline")
    build.add_argument("--out", required=True)
    build.add_argument("--groups", type=int, default=40, help=f"occupation groups to select (catalog has {len(OCCUPATION_CATALOG)})")
    build.add_argument("--per-group", type=int, default=20)
    build.add_argument("--seed", type=int, default=0)
    build.set_defaults(func=_dataset_build)
    split = dataset_sub.add_parser("split", help="assign whole occupation groups to train/validation/test")
    split.add_argument("--dataset", required=True)
    split.add_argument("--train-groups", type=int, default=25)
    split.add_argument("--val-groups", type=int, default=5)
    split.add_argument("--test-groups", type=int, default=10)
    split.add_argument("--seed", type=int, default=0)
    split.set_defaults(func=_dataset_split)
    imp = dataset_sub.add_parser("import", help="import externally authored backgrounds")
    imp.add_argument("--file", required=True)
    imp.add_argument("--out", required=True)
    imp.set_defaults(func=_dataset_import)

    run = sub.add_parser("run", help="start, resume, or inspect curriculum runs")
    run_sub = run.add_subparsers(dest="subcommand", required=True)
    start = run_sub.add_parser("start", help="start a fresh run from a config file")
    start.add_argument("--config", required=True)
    start.add_argument("--run-dir")
    start.add_argument("--mode", choices=["sft", "sft_cdc", "cdc_ift", "full"])
    start.add_argument("--iterations", type=int, help="limit iterations this session (resume later)")
    start.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    start.set_defaults(func=_run_start)
    resume = run_sub.add_parser("resume", help="continue a halted or interrupted run")
    resume.add_argument("--config", required=True)
    resume.add_argument("--run-dir")
    resume.add_argument("--run-id", help="shorthand for --run-dir <runs-root>/<run-id>")
    resume.add_argument("--runs-root", default="runs")
    resume.add_argument("--iterations", type=int)
    resume.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    resume.set_defaults(func=_run_resume)
    status = run_sub.add_parser("status", help="show manifest state and verify artifacts")
    status.add_argument("--run-dir")
    status.add_argument("--run-id")
    status.add_argument("--runs-root", default="runs")
    status.set_defaults(func=_run_status)

    ev = sub.add_parser("eval", help="evaluate a chatbot on the test split")
    eval_sub = ev.add_subparsers(dest="subcommand", required=True)
    eval_run = eval_sub.add_parser("run")
    eval_run.add_argument("--config", required=True)
    eval_run.add_argument("--run-dir", help="evaluate the run's final trained endpoint")
    eval_run.add_argument("--out", default="eval_report.json")
    eval_run.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    eval_run.set_defaults(func=_eval_run)

    stats = sub.add_parser("stats", help="regeneration and easy-rate statistics")
    stats_sub = stats.add_subparsers(dest="subcommand", required=True)
    regen = stats_sub.add_parser("regen")
    regen.add_argument("--corpus", nargs="+", required=True)
    regen.add_argument("--out")
    regen.set_defaults(func=_stats_regen)
    easy = stats_sub.add_parser("easy-rate")
    easy.add_argument("--run-dir", required=True)
    easy.set_defaults(func=_stats_easy_rate)

    arena = sub.add_parser("arena", help="serve the A/B evaluation API or tally votes")
    arena_sub = arena.add_subparsers(dest="subcommand", required=True)
    serve = arena_sub.add_parser("serve")
    serve.add_argument("--config", required=True)
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8080)
    serve.add_argument("--runs-root")
    serve.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    serve.set_defaults(func=_arena_serve)
    tally = arena_sub.add_parser("tally")
    tally.add_argument("--votes", required=True)
    tally.set_defaults(func=_arena_tally)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except ChatloopError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
