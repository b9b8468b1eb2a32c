"""Game-playing agents.

Every agent returns a member of :func:`.legal_actions` for the state it is given.
Agents hold per-episode state (the scripted agent's cursor, the LLM agent's last
prompt size) and must not be shared between episodes running concurrently.
"""

from dataclasses import dataclass, field
from logging import getLogger
from math import log, sqrt, tanh
from time import perf_counter
import re

import numpy as np

from .gameEngine import GameState, Outcome, legal_actions, step
from .llmClient import ChatClient, ClientError
from .models import Action, AgentConfig, AgentKind, Decoding, GameSpec, PromptOptions, Usage
from .state2text import assemble_prompt

__all__ = [
    "AgentFailure",
    "Agent",
    "RandomAgent",
    "ScriptedAgent",
    "MCTSAgent",
    "LLMAgent",
    "RHEAAgent",
    "OLETSAgent",
    "SearchStats",
    "mcts_search",
    "mcts_select",
    "parse_llm_action",
    "make_agent",
    "act",
]

logger = getLogger(__name__)

_ACTION_PATTERN = re.compile(r"Action:\s*(-?\d+)")


class AgentFailure(RuntimeError):
    pass


class Agent:
    """Base class of agents.

    Attributes
    ----------
    name : str
        Identifier used in logs and reports.
    parse_failure : bool
        Whether the last decision fell back to NIL because no legal action was found.
    prompt_chars : int | None
        Prompt size of the last decision, for agents that build prompts.
    """

    def __init__(self, name: str, seed: int = 0) -> None:
        self.name = name
        self.seed = seed
        self.parse_failure = False
        self.prompt_chars: int | None = None

    def reset(self, seed: int | None = None) -> None:
        """Prepare a new episode."""
        if seed is not None:
            self.seed = seed
        self.parse_failure = False
        self.prompt_chars = None

    def act(self, state: GameState, spec: GameSpec) -> Action:
        raise NotImplementedError


class RandomAgent(Agent):
    """Uniform choice among the legal actions, seeded by (seed, tick)."""

    def act(self, state: GameState, spec: GameSpec) -> Action:
        actions = sorted(legal_actions(state))
        rng = np.random.default_rng([self.seed, state.tick])
        return actions[int(rng.integers(len(actions)))]


class ScriptedAgent(Agent):
    """Replay a fixed action sequence, then NIL forever."""

    def __init__(self, name: str, script: list[Action], seed: int = 0) -> None:
        super().__init__(name, seed)
        self.script = [Action(a) for a in script]
        self.cursor = 0

    def reset(self, seed: int | None = None) -> None:
        super().reset(seed)
        self.cursor = 0

    def act(self, state: GameState, spec: GameSpec) -> Action:
        if self.cursor >= len(self.script):
            return Action.NIL
        action = self.script[self.cursor]
        self.cursor += 1
        return action if action in legal_actions(state) else Action.NIL


class _Node:
    def __init__(self, actions: list[Action], parent: "_Node | None" = None) -> None:
        self.parent = parent
        self.children: dict[Action, _Node] = {}
        self.untried = list(actions)
        self.visits = 0
        self.total = 0.0

    @property
    def mean(self) -> float:
        return self.total / self.visits if self.visits else 0.0

    def best_child(self, exploration: float, rng: np.random.Generator) -> tuple[Action, "_Node"]:
        items = list(self.children.items())
        scores = np.array(
            [c.mean + exploration * sqrt(log(self.visits) / c.visits) for _, c in items]
        )
        best = np.flatnonzero(scores == scores.max())
        return items[int(best[rng.integers(len(best))]) if len(best) > 1 else int(best[0])]

    def update(self, value: float) -> None:
        self.total += value
        self.visits += 1


@dataclass
class SearchStats:
    """Root statistics of one search.

    ``visits`` and ``values`` are keyed by root action; ``values`` holds mean
    backed-up values in [-1, 1].
    """

    action: Action
    iterations: int
    visits: dict[Action, int] = field(default_factory=dict)
    values: dict[Action, float] = field(default_factory=dict)


def _value(state: GameState, root_score: float, score_scale: float) -> float:
    if state.outcome is Outcome.WIN:
        return 1.0
    if state.outcome is Outcome.LOSS:
        return -1.0
    return tanh((state.score - root_score) / score_scale)


def mcts_search(
    state: GameState,
    budget_ms: float = 40.0,
    seed: int = 0,
    iterations: int | None = None,
    rollout_depth: int = 10,
    exploration: float = sqrt(2),
    score_scale: float = 10.0,
) -> SearchStats:
    """Open-loop UCT search from ``state``.

    Each iteration replays the tree path from a copy of the root with a fresh random
    generator, expands one untried child, finishes with random actions until the
    game ends or ``rollout_depth`` simulated ticks are reached, and backs up the mean
    value: +1 for a win, -1 for a loss, else ``tanh(score delta / score_scale)``.

    Parameters
    ----------
    state : GameState
        Ongoing root state; it is not modified.
    budget_ms : float, optional
        Wall-clock budget, by default 40 ms.
    seed : int, optional
        Seed of every random choice of the search.
    iterations : int | None, optional
        Fixed iteration count replacing the wall-clock budget.
    rollout_depth : int, optional
        Maximum simulated ticks below the root, by default 10.
    exploration : float, optional
        UCT exploration constant, by default sqrt(2).
    score_scale : float, optional
        Score delta mapped to tanh(1), by default 10.

    Returns
    -------
    SearchStats
        Chosen action (most-visited root child, ties by higher mean) and root statistics.
    """
    rng = np.random.default_rng(seed)
    actions = sorted(legal_actions(state))
    root = _Node(actions)
    deadline = perf_counter() + budget_ms / 1000
    done = 0

    while done < 1 or (
        done < iterations if iterations is not None else perf_counter() < deadline
    ):
        sim = state.clone()
        sim.rng = np.random.default_rng(rng.integers(2**63))
        node, path, depth = root, [root], 0

        while not node.untried and node.children and sim.outcome is Outcome.ONGOING and depth < rollout_depth:
            action, node = node.best_child(exploration, rng)
            sim = step(sim, action)[0]
            path.append(node)
            depth += 1

        if node.untried and sim.outcome is Outcome.ONGOING and depth < rollout_depth:
            action = node.untried.pop(int(rng.integers(len(node.untried))))
            child = _Node(actions, parent=node)
            node.children[action] = child
            sim = step(sim, action)[0]
            path.append(child)
            depth += 1

        while sim.outcome is Outcome.ONGOING and depth < rollout_depth:
            sim = step(sim, actions[int(rng.integers(len(actions)))])[0]
            depth += 1

        value = _value(sim, state.score, score_scale)
        for n in path:
            n.update(value)
        done += 1

    items = list(root.children.items())
    most = max(c.visits for _, c in items)
    tied = [(a, c) for a, c in items if c.visits == most]
    best_mean = max(c.mean for _, c in tied)
    tied = [(a, c) for a, c in tied if c.mean == best_mean]
    chosen = tied[int(rng.integers(len(tied)))][0] if len(tied) > 1 else tied[0][0]
    return SearchStats(
        action=chosen,
        iterations=done,
        visits={a: c.visits for a, c in items},
        values={a: c.mean for a, c in items},
    )


def mcts_select(
    state: GameState,
    spec: GameSpec | None = None,
    budget_ms: float = 40.0,
    seed: int = 0,
    **kwargs,
) -> Action:
    """Action chosen by :func:`mcts_search`; ``spec`` defaults to the state's game."""
    return mcts_search(state, budget_ms=budget_ms, seed=seed, **kwargs).action


class MCTSAgent(Agent):
    def __init__(self, name: str, config: AgentConfig, seed: int = 0) -> None:
        super().__init__(name, seed)
        self.config = config
        self.last_stats: SearchStats | None = None

    def act(self, state: GameState, spec: GameSpec) -> Action:
        c = self.config
        seed = int(np.random.SeedSequence([self.seed, state.tick]).generate_state(1)[0])
        self.last_stats = mcts_search(
            state,
            budget_ms=c.mcts_budget_ms,
            seed=seed,
            iterations=c.mcts_iterations,
            rollout_depth=c.mcts_rollout_depth,
            exploration=c.mcts_exploration,
            score_scale=c.score_scale,
        )
        return self.last_stats.action


def parse_llm_action(response_text: str, legal: set[Action] | frozenset[Action]) -> tuple[Action, bool]:
    """Extract the action of a model reply.

    The first ``Action:<integer>`` occurrence decides. Absent pattern, unknown code or
    illegal action yield NIL with the failure flag set.

    Returns
    -------
    tuple[Action, bool]
        Action and parse-failure flag.

    Examples
    --------
    >>> parse_llm_action("I will move down. \\\\ Action:3", set(Action))
    (<Action.DOWN: 3>, False)
    """
    m = _ACTION_PATTERN.search(response_text)
    # no valid code has more than 9 digits
    if m is None or len(m.group(1).lstrip("-")) > 9:
        return Action.NIL, True
    code = int(m.group(1))
    if code not in Action._value2member_map_ or Action(code) not in legal:
        return Action.NIL, True
    return Action(code), False


class LLMAgent(Agent):
    """Zero-shot language-model player: one prompt per step, no history.

    Parameters
    ----------
    name : str
        Agent identifier.
    client : ChatClient
        Client of the model endpoint or of a mock server.
    options : PromptOptions
        Prompt sections to include.
    decoding : Decoding
        Sampling parameters passed through to the endpoint.
    """

    def __init__(
        self,
        name: str,
        client: ChatClient,
        options: PromptOptions = PromptOptions(),
        decoding: Decoding = Decoding(),
        seed: int = 0,
    ) -> None:
        super().__init__(name, seed)
        self.client = client
        self.options = options
        self.decoding = decoding
        self.last_reply: str | None = None
        self.last_usage: Usage | None = None

    def act(self, state: GameState, spec: GameSpec) -> Action:
        self.parse_failure = False
        bundle = assemble_prompt(spec, state, self.options)
        self.prompt_chars = len(bundle.text)
        logger.info(
            f"{self.name} tick {state.tick}: prompt {self.prompt_chars} chars, "
            f"~{self.prompt_chars // 4} tokens"
        )
        try:
            reply, usage = self.client.complete(bundle.system_text, bundle.user_text, self.decoding)
        except ClientError as e:
            raise AgentFailure(f"{type(e).__name__}: {e}") from e
        self.last_reply, self.last_usage = reply, usage

        action, self.parse_failure = parse_llm_action(reply, legal_actions(state))
        if self.parse_failure:
            logger.warning(f"{self.name} tick {state.tick}: no legal action in reply {reply[:120]!r}")
        return action


class RHEAAgent(Agent):
    """Rolling-horizon evolutionary baseline. Not implemented."""

    def act(self, state: GameState, spec: GameSpec) -> Action:
        raise NotImplementedError("RHEA is not implemented.")


class OLETSAgent(Agent):
    """Open-loop expectimax tree search baseline. Not implemented."""

    def act(self, state: GameState, spec: GameSpec) -> Action:
        raise NotImplementedError("OLETS is not implemented.")


def make_agent(
    config: AgentConfig,
    seed: int | None = None,
    client: ChatClient | None = None,
    options: PromptOptions | None = None,
) -> Agent:
    """Instantiate the agent described by ``config``.

    Parameters
    ----------
    config : AgentConfig
        Agent description.
    seed : int | None, optional
        Seed replacing ``config.seed``.
    client : ChatClient | None, optional
        Required for LLM agents.
    options : PromptOptions | None, optional
        Prompt sections replacing ``config.llm_options.prompt``.

    Raises
    ------
    ValueError
        If an LLM agent has no client.
    """
    seed = config.seed if seed is None else seed
    match config.kind:
        case AgentKind.RANDOM:
            return RandomAgent(config.label, seed)
        case AgentKind.SCRIPTED:
            return ScriptedAgent(config.label, config.script, seed)
        case AgentKind.MCTS:
            return MCTSAgent(config.label, config, seed)
        case AgentKind.LLM:
            if client is None:
                raise ValueError(f"Agent {config.label} needs a model client.")
            return LLMAgent(
                config.label,
                client,
                options or config.llm_options.prompt,
                config.llm_options.decoding,
                seed,
            )
    raise ValueError(f"Unknown agent kind: {config.kind}")


def act(agent: Agent, state: GameState, spec: GameSpec) -> Action:
    """Ask ``agent`` for an action; anything outside the legal set becomes NIL.

    Raises
    ------
    AgentFailure
        If the agent could not decide, e.g. the model endpoint kept failing.
    """
    action = Action(agent.act(state, spec))
    return action if action in legal_actions(state) else Action.NIL
