"""Command-line interface: ``gvgai-llm run | play | translate | metrics``.

Flags of ``run`` mirror the fields of :class:`.RunConfig` and override the values of
the ``--config`` JSON file.
"""

import argparse
import json
import sys

from .agents import make_agent
from .gameEngine import Outcome, init_state, step
from .llmClient import ChatClient, ClientError, load_mock_script
from .models import Action, AgentConfig, AgentKind, JsonEncoder, PromptOptions, RunConfig
from .runBatch import ConfigError, OutputExists, recompute_reports, run_batch, run_episode, summarize
from .settings import load_endpoint, setup_logging
from .state2text import assemble_prompt, serialize_state
from .vgdlParser import ParseError, load_game, load_level, render_game

__all__ = ["build_parser", "config_from_args", "main"]


def _csv(value: str) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


def _levels(value: str) -> list[int] | str:
    return "all" if value == "all" else [int(v) for v in _csv(value)]


def _actions(value: str) -> list[Action]:
    actions = []
    for v in _csv(value):
        try:
            actions.append(Action(int(v)) if v.lstrip("-").isdigit() else Action[v.upper()])
        except (KeyError, ValueError):
            names = ", ".join(a.name.lower() for a in Action)
            raise argparse.ArgumentTypeError(f"unknown action {v!r}, expected a code or one of {names}") from None
    return actions


def _agent(value: str) -> AgentConfig:
    kind, _, name = value.partition(":")
    return AgentConfig(kind=AgentKind(kind), name=name or None)


def _add_prompt_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--coord-tags", action="store_true", default=None, help="add coordinate lines")
    p.add_argument("--verbose-grounding", action="store_true", default=None, help="describe adjacent cells")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gvgai-llm", description="Play and evaluate VGDL games.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a batch and write logs and reports")
    run.add_argument("--config", help="RunConfig JSON file")
    run.add_argument("--games", type=_csv, help="comma-separated game names")
    run.add_argument("--levels", type=_levels, help="'all' or comma-separated level numbers")
    run.add_argument(
        "--agent", type=_agent, action="append", help="KIND[:NAME], repeatable (random, mcts, llm)"
    )
    run.add_argument("--episodes", type=int, help="episodes per level")
    run.add_argument("--max-steps", type=int, help="step cap per episode")
    run.add_argument("--seed", type=int, help="seed of the first episode")
    run.add_argument("--mock-llm", metavar="SCRIPT", help="answer LLM agents from a mock script")
    run.add_argument("--out", help="output directory")
    run.add_argument("--overwrite", action="store_true", default=None)
    run.add_argument("--parallelism", type=int, help="episodes run concurrently")
    _add_prompt_flags(run)

    play = sub.add_parser("play", help="play one episode and print every step")
    play.add_argument("--game", required=True)
    play.add_argument("--level", type=int, default=0)
    play.add_argument("--agent", type=_agent, default=AgentConfig(kind=AgentKind.RANDOM))
    play.add_argument("--script", type=_actions, default=[], help="actions of a scripted agent")
    play.add_argument("--seed", type=int, default=0)
    play.add_argument("--max-steps", type=int, default=2000)
    play.add_argument("--mcts-iterations", type=int)
    play.add_argument("--mock-llm", metavar="SCRIPT")
    _add_prompt_flags(play)

    translate = sub.add_parser("translate", help="print the prompt of a game state")
    translate.add_argument("--game", required=True)
    translate.add_argument("--level", type=int, default=0)
    translate.add_argument("--seed", type=int, default=0)
    translate.add_argument("--actions", type=_actions, default=[], help="actions played first")
    translate.add_argument("--canonical", action="store_true", help="print the canonical game text")
    _add_prompt_flags(translate)

    metrics = sub.add_parser("metrics", help="recompute reports from stored logs")
    metrics.add_argument("--out", required=True, help="output directory of a batch")
    metrics.add_argument("--epsilon", type=float, default=1e-9)
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    """Merge the ``--config`` file with the flags given on the command line."""
    data: dict = {}
    if args.config:
        try:
            with open(args.config, "r", encoding="utf-8") as f:
                data = json.load(f)
        except FileNotFoundError:
            raise FileNotFoundError(f"Config file not found: {args.config}")

    overrides = {
        "games": args.games,
        "levels": args.levels,
        "agents": [a.model_dump() for a in args.agent] if args.agent else None,
        "episodes_per_level": args.episodes,
        "max_steps": args.max_steps,
        "seed_base": args.seed,
        "mock_script": args.mock_llm,
        "output_dir": args.out,
        "overwrite": args.overwrite,
        "parallelism": args.parallelism,
    }
    data |= {k: v for k, v in overrides.items() if v is not None}
    prompt = dict(data.get("prompt", {}))
    if args.coord_tags:
        prompt["coordinate_tagging"] = True
    if args.verbose_grounding:
        prompt["verbose_grounding"] = True
    data["prompt"] = prompt
    data.setdefault("games", [])
    data.setdefault("agents", [])
    return RunConfig.model_validate(data)


def _run(args: argparse.Namespace) -> None:
    config = config_from_args(args)
    reports, logs = run_batch(config)
    print(json.dumps(summarize(reports)["aggregate"], cls=JsonEncoder, indent=4))


def _prompt_options(args: argparse.Namespace) -> PromptOptions:
    return PromptOptions(
        coordinate_tagging=bool(args.coord_tags), verbose_grounding=bool(args.verbose_grounding)
    )


def _play(args: argparse.Namespace) -> None:
    spec = load_game(args.game)
    level = load_level(spec, args.level)
    update = {"script": args.script}
    if args.mcts_iterations is not None:
        update["mcts_iterations"] = args.mcts_iterations
    config = args.agent.model_copy(update=update)

    client = None
    if config.kind is AgentKind.LLM:
        if args.mock_llm:
            client = load_mock_script(args.mock_llm).client()
        else:
            client = ChatClient(load_endpoint())
    agent = make_agent(config, client=client, options=_prompt_options(args))
    log = run_episode(spec, level, agent, args.seed, args.max_steps, level_index=args.level)

    state = init_state(spec, level, args.seed)
    print(serialize_state(state)[0], end="\n\n")
    for s in log.steps:
        state = step(state, s.action)[0]
        flags = " parse-failure" if s.parse_failure else ""
        print(
            f"tick {s.tick}: {s.action.label} reward {s.reward_delta:+g} "
            f"changed={s.state_changed} meaningful={s.meaningful}{flags}"
        )
        print(serialize_state(state)[0], end="\n\n")
    print(f"{log.outcome.value} at tick {log.terminal_tick}, total reward {log.total_reward:g} ({log.reason})")
    if log.failure:
        print(f"failure: {log.failure}")


def _translate(args: argparse.Namespace) -> None:
    spec = load_game(args.game)
    if args.canonical:
        print(render_game(spec), end="")
        return
    state = init_state(spec, load_level(spec, args.level), args.seed)
    for action in args.actions:
        if state.outcome is not Outcome.ONGOING:
            break
        state = step(state, action)[0]
    print(assemble_prompt(spec, state, _prompt_options(args)).text)


def _metrics(args: argparse.Namespace) -> None:
    reports = recompute_reports(args.out, args.epsilon)
    print(json.dumps(summarize(reports)["aggregate"], cls=JsonEncoder, indent=4))


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging()
    commands = {"run": _run, "play": _play, "translate": _translate, "metrics": _metrics}
    try:
        commands[args.command](args)
    except (ConfigError, OutputExists, ParseError, ClientError, FileNotFoundError, ValueError) as e:
        print(f"gvgai-llm {args.command}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
