"""Episode protocol, batch runner and report files.

A batch plays ``episodes_per_level`` episodes for every (game, level, agent), episode
``i`` with seed ``seed_base + i``. Rewards are min-max normalized per level across all
agents of the batch. Output layout::

    <output_dir>/
        logs/<game>_lvl<level>_<agent>_seed<seed>.jsonl
        summary.json
        summary.csv
"""

from concurrent.futures import ThreadPoolExecutor
from logging import getLogger
import json
import os

import numpy as np
import pandas as pd

from .agents import Agent, AgentFailure, act, make_agent
from .gameEngine import Outcome, init_state, step
from .llmClient import ChatClient, load_mock_script
from .metrics import build_report, mark_meaningful
from .models import (
    Action,
    AgentConfig,
    AgentKind,
    EpisodeLog,
    EpisodeLogList,
    EpisodeOutcome,
    GameSpec,
    JsonEncoder,
    LevelGrid,
    MetricsReport,
    MetricsReportList,
    PromptOptions,
    RunConfig,
    StepRecord,
)
from .settings import load_endpoint
from .vgdlParser import UnknownGame, available_levels, load_game, load_level

__all__ = [
    "ConfigError",
    "OutputExists",
    "run_episode",
    "run_batch",
    "compute_reports",
    "emit_report",
    "load_logs",
    "recompute_reports",
    "summarize",
]

logger = getLogger(__name__)

_AGGREGATED = [
    "meaningful_ratio",
    "step_efficiency",
    "win_rate",
    "normalized_reward",
    "inverted_steps",
    "overall_score",
]


class ConfigError(ValueError):
    pass


class OutputExists(FileExistsError):
    pass


def run_episode(
    spec: GameSpec,
    level: LevelGrid,
    agent: Agent,
    seed: int,
    max_steps: int,
    level_index: int = 0,
) -> EpisodeLog:
    """Play one episode.

    The loop asks the agent for an action on the current state, advances the engine
    and records a :class:`.StepRecord`, until the game ends or ``max_steps`` steps
    were played (outcome ``timeout``). An :class:`.AgentFailure` turns the step into
    NIL and is recorded on it; any other error ends the episode and is stored in
    ``failure``.

    Parameters
    ----------
    spec : GameSpec
        Game rules.
    level : LevelGrid
        Level layout.
    agent : Agent
        Player, reset before the first step.
    seed : int
        Seed of the engine.
    max_steps : int
        Step cap.
    level_index : int, optional
        Level number written to the log.

    Examples
    --------
    .. literalinclude:: /py_examples/ex_run_episode.py
    """
    agent.reset()
    steps: list[StepRecord] = []
    failure = None
    state = None
    try:
        state = init_state(spec, level, seed)
        while state.outcome is Outcome.ONGOING and len(steps) < max_steps:
            before = state.avatar.pos if state.avatar is not None else None
            agent_failure = None
            try:
                action = act(agent, state, spec)
            except AgentFailure as e:
                logger.warning(f"{agent.name} failed at tick {state.tick}, playing NIL: {e}")
                action, agent_failure = Action.NIL, str(e)
            nxt, delta, changed = step(state, action)
            after = nxt.avatar.pos if nxt.avatar is not None else None
            steps.append(
                StepRecord(
                    tick=state.tick,
                    action=action,
                    reward_delta=delta,
                    state_changed=changed,
                    avatar_pos_before=before,
                    avatar_pos_after=after,
                    parse_failure=agent.parse_failure,
                    agent_failure=agent_failure,
                    prompt_chars=agent.prompt_chars,
                )
            )
            state = nxt
    except Exception as e:
        failure = f"{type(e).__name__}: {e}"
        logger.error(f"{spec.name} level {level_index} seed {seed} ({agent.name}) aborted: {failure}")

    if state is not None and state.outcome is Outcome.WIN:
        outcome, reason = EpisodeOutcome.WIN, state.reason
    elif state is not None and state.outcome is Outcome.LOSS:
        outcome, reason = EpisodeOutcome.LOSS, state.reason
    elif failure is not None:
        outcome, reason = EpisodeOutcome.LOSS, "failure"
    else:
        outcome, reason = EpisodeOutcome.TIMEOUT, f"max_steps={max_steps}"

    steps = mark_meaningful(steps)
    log = EpisodeLog(
        game=spec.name,
        level=level_index,
        agent=agent.name,
        seed=seed,
        steps=steps,
        outcome=outcome,
        terminal_tick=len(steps),
        total_reward=sum(s.reward_delta for s in steps),
        max_steps=max_steps,
        reason=reason,
        failure=failure,
    )
    logger.info(
        f"{spec.name} level {level_index} seed {seed} ({agent.name}): "
        f"{outcome.value} at tick {log.terminal_tick}, reward {log.total_reward}"
    )
    return log


def _levels(config: RunConfig, game: str) -> list[int]:
    found = available_levels(game)
    if config.levels == "all":
        return found
    missing = [k for k in config.levels if k not in found]
    if missing:
        raise ConfigError(f"Game {game} has no level {missing}")
    return list(config.levels)


def _check_output(output_dir: str | None, overwrite: bool) -> None:
    if output_dir is None or overwrite:
        return
    if os.path.isdir(output_dir) and os.listdir(output_dir):
        raise OutputExists(f"Output directory is not empty: {output_dir} (use overwrite)")


def _client(config: RunConfig) -> ChatClient | None:
    if not any(a.kind is AgentKind.LLM for a in config.agents):
        return None
    if config.mock_script is not None:
        transcript = None
        if config.output_dir is not None:
            os.makedirs(config.output_dir, exist_ok=True)
            transcript = os.path.join(config.output_dir, "transcript.jsonl")
        return load_mock_script(config.mock_script, transcript).client(config.step_timeout_s)
    endpoint = config.endpoint or load_endpoint()
    return ChatClient(endpoint, step_timeout_s=config.step_timeout_s)


def _agent_seed(agent_seed: int, episode_seed: int) -> int:
    return int(np.random.SeedSequence([agent_seed, episode_seed]).generate_state(1)[0])


def _prompt_options(config: RunConfig, agent: AgentConfig) -> PromptOptions:
    own = agent.llm_options.prompt
    return PromptOptions(
        coordinate_tagging=own.coordinate_tagging or config.prompt.coordinate_tagging,
        verbose_grounding=own.verbose_grounding or config.prompt.verbose_grounding,
    )


def run_batch(
    config: RunConfig, client: ChatClient | None = None
) -> tuple[MetricsReportList, EpisodeLogList]:
    """Run the episode protocol over every (game, level, agent) of ``config``.

    Parameters
    ----------
    config : RunConfig
        Batch description.
    client : ChatClient | None, optional
        Model client of LLM agents. By default a mock client when
        ``config.mock_script`` is set, else a client of ``config.endpoint`` or of the
        endpoint described by the environment.

    Returns
    -------
    tuple[MetricsReportList, EpisodeLogList]
        One report per (game, level, agent) and every episode log, in protocol order.
        Both are written to ``config.output_dir`` when it is set.

    Raises
    ------
    ConfigError
        If no game is selected, or a game or level does not exist; raised before any
        episode runs.
    OutputExists
        If ``output_dir`` is not empty and ``overwrite`` is not set.

    Examples
    --------
    .. literalinclude:: /py_examples/ex_run_batch.py
    """
    if not config.games:
        raise ConfigError("No game selected.")
    if not config.agents:
        raise ConfigError("No agent selected.")
    labels = [a.label for a in config.agents]
    if len(set(labels)) != len(labels):
        raise ConfigError(f"Agent names must be unique: {labels}")

    jobs = []
    for game in config.games:
        try:
            spec = load_game(game)
        except UnknownGame as e:
            raise ConfigError(str(e)) from e
        for k in _levels(config, game):
            level = load_level(spec, k)
            for agent in config.agents:
                for i in range(config.episodes_per_level):
                    jobs.append((spec, level, k, agent, config.seed_base + i))
    _check_output(config.output_dir, config.overwrite)
    client = client or _client(config)

    def play(job) -> EpisodeLog:
        spec, level, k, agent_config, seed = job
        agent = make_agent(
            agent_config,
            seed=_agent_seed(agent_config.seed, seed),
            client=client,
            options=_prompt_options(config, agent_config),
        )
        return run_episode(spec, level, agent, seed, config.max_steps, level_index=k)

    logger.info(f"Running {len(jobs)} episodes with parallelism {config.parallelism}")
    with ThreadPoolExecutor(max_workers=config.parallelism) as executor:
        logs = EpisodeLogList(list(executor.map(play, jobs)))

    reports = compute_reports(logs, config.epsilon)
    if config.output_dir is not None:
        emit_report(reports, logs, config.output_dir, overwrite=True)
    return reports, logs


def compute_reports(logs: list[EpisodeLog], epsilon: float = 1e-9) -> MetricsReportList:
    """Group logs by (game, level, agent) and build their reports.

    ``r_min`` and ``r_max`` of a level are the extreme total rewards of its valid
    episodes over all agents.
    """
    cells: dict[tuple[str, int, str], list[EpisodeLog]] = {}
    bounds: dict[tuple[str, int], list[float]] = {}
    for log in logs:
        cells.setdefault((log.game, log.level, log.agent), []).append(log)
        rewards = bounds.setdefault((log.game, log.level), [])
        if log.failure is None:
            rewards.append(log.total_reward)

    reports = MetricsReportList()
    for (game, level, agent), cell in cells.items():
        rewards = bounds[(game, level)] or [0.0]
        reports.append(
            build_report(game, level, agent, cell, min(rewards), max(rewards), epsilon)
        )
    return reports


def summarize(reports: list[MetricsReport]) -> dict:
    """Aggregate block plus per-game and per-agent rollups of report rows."""
    df = pd.DataFrame([r.model_dump() for r in reports])
    if df.empty:
        return {"aggregate": {}, "per_game": [], "per_agent": []}

    def rollup(key: str) -> list[dict]:
        grouped = df.groupby(key, sort=False)
        table = grouped[_AGGREGATED].mean()
        table[["episodes", "excluded", "wins"]] = grouped[["episodes", "excluded", "wins"]].sum()
        return table.reset_index().to_dict(orient="records")

    episodes = int(df["episodes"].sum())
    aggregate = {
        "rows": len(df),
        "episodes": episodes,
        "excluded": int(df["excluded"].sum()),
        "wins": int(df["wins"].sum()),
        "average_meaningful_ratio": float(df["meaningful_ratio"].mean()),
        "overall_win_rate": float(df["wins"].sum() / episodes) if episodes else 0.0,
        "average_overall_score": float(df["overall_score"].mean()),
    }
    return {"aggregate": aggregate, "per_game": rollup("game"), "per_agent": rollup("agent")}


def _write(path: str, text: str) -> None:
    try:
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)
    except OSError as e:
        raise OSError(f"Cannot write {path}: {e}") from e


def emit_report(
    reports: list[MetricsReport],
    logs: list[EpisodeLog],
    output_dir: str,
    overwrite: bool = False,
) -> None:
    """Write step logs, ``summary.json`` and ``summary.csv``.

    Each episode gets a JSONL file: the first line holds the episode fields, every
    following line one step. Logs of an earlier batch in the same directory are removed.

    Raises
    ------
    OutputExists
        If ``output_dir`` is not empty and ``overwrite`` is False.
    OSError
        If a file cannot be written; the message names it.
    """
    _check_output(output_dir, overwrite)
    log_dir = os.path.join(output_dir, "logs")
    os.makedirs(log_dir, exist_ok=True)
    for name in os.listdir(log_dir):
        if name.endswith(".jsonl"):
            os.remove(os.path.join(log_dir, name))

    for log in logs:
        header = log.model_dump(mode="json", exclude={"steps"})
        lines = [json.dumps(header, ensure_ascii=False)]
        lines += [s.model_dump_json() for s in log.steps]
        name = f"{log.game}_lvl{log.level}_{log.agent}_seed{log.seed}.jsonl"
        _write(os.path.join(log_dir, name), "\n".join(lines) + "\n")

    _write_summary(reports, output_dir)
    logger.info(f"Wrote {len(logs)} logs and {len(reports)} report rows to {output_dir}")


def _write_summary(reports: list[MetricsReport], output_dir: str) -> None:
    summary = {"rows": list(reports)} | summarize(reports)
    summary_json = os.path.join(output_dir, "summary.json")
    _write(summary_json, json.dumps(summary, cls=JsonEncoder, indent=4, ensure_ascii=False) + "\n")

    summary_csv = os.path.join(output_dir, "summary.csv")
    try:
        pd.DataFrame([r.model_dump() for r in reports]).to_csv(summary_csv, index=False)
    except OSError as e:
        raise OSError(f"Cannot write {summary_csv}: {e}") from e


def load_logs(log_dir: str) -> EpisodeLogList:
    """Read the JSONL episode logs written by :func:`emit_report`.

    Raises
    ------
    FileNotFoundError
        If ``log_dir`` does not exist.
    """
    if not os.path.isdir(log_dir):
        raise FileNotFoundError(f"Log directory not found: {log_dir}")
    logs = EpisodeLogList()
    for name in sorted(os.listdir(log_dir)):
        if not name.endswith(".jsonl"):
            continue
        with open(os.path.join(log_dir, name), "r", encoding="utf-8") as f:
            lines = [json.loads(line) for line in f if line.strip()]
        if not lines:
            continue
        logs.append(EpisodeLog.model_validate(lines[0] | {"steps": lines[1:]}))
    return logs


def recompute_reports(
    output_dir: str, epsilon: float = 1e-9, write: bool = True
) -> MetricsReportList:
    """Rebuild the reports of a finished batch from its stored logs.

    Logs are read from ``<output_dir>/logs``; with ``write`` the summary files are
    rewritten.
    """
    logs = load_logs(os.path.join(output_dir, "logs"))
    logs.sort(key=lambda log: (log.game, log.level, log.agent, log.seed))
    reports = compute_reports(logs, epsilon)
    if write:
        _write_summary(reports, output_dir)
    return reports
