"""Fundamental classes for the GVGAI LLM tools.

Records that cross module boundaries (game descriptions, levels, step and episode
logs, metric reports and run configurations) are pydantic models so that they can
be validated on load and dumped to JSON with :class:`.BaseModelList`.
"""

from enum import IntEnum, StrEnum
from datetime import date, datetime, time
from math import isclose, sqrt
from typing import Any, Generic, Literal, TypeAlias, TypeVar
import json

import numpy as np
from pydantic import BaseModel, Field, model_validator

TBM = TypeVar("TBM", bound=BaseModel)
ParamValue: TypeAlias = int | float | bool | str
Position: TypeAlias = tuple[int, int]

__all__ = [
    "Action",
    "SpriteClass",
    "AVATAR_CLASSES",
    "SpriteDef",
    "InteractionRule",
    "TerminationKind",
    "TerminationRule",
    "GameSpec",
    "LevelGrid",
    "PromptOptions",
    "Decoding",
    "LLMOptions",
    "AgentKind",
    "AgentConfig",
    "ModelEndpoint",
    "Usage",
    "StepRecord",
    "EpisodeOutcome",
    "EpisodeLog",
    "EpisodeLogList",
    "MetricsReport",
    "MetricsReportList",
    "RunConfig",
    "BaseModelList",
    "JsonEncoder",
]


class Action(IntEnum):
    """Avatar actions.

    Codes 0 to 4 are shared by every game; ``USE`` only exists for avatars
    that can shoot or swing a weapon.
    """

    NIL = 0
    LEFT = 1
    RIGHT = 2
    DOWN = 3
    UP = 4
    USE = 5

    @property
    def label(self) -> str:
        """Name shown to language models, e.g. ``ACTION_LEFT``."""
        return f"ACTION_{self.name}"


class SpriteClass(StrEnum):
    """Supported VGDL sprite classes."""

    IMMOVABLE = "Immovable"
    PASSIVE = "Passive"
    MISSILE = "Missile"
    BOMBER = "Bomber"
    RANDOM_NPC = "RandomNPC"
    CHASER = "Chaser"
    FLEEING = "Fleeing"
    FLICKER = "Flicker"
    RESOURCE = "Resource"
    PORTAL = "Portal"
    SPAWN_POINT = "SpawnPoint"
    DOOR = "Door"
    MOVING_AVATAR = "MovingAvatar"
    ORIENTED_AVATAR = "OrientedAvatar"
    SHOOT_AVATAR = "ShootAvatar"
    FLAK_AVATAR = "FlakAvatar"


AVATAR_CLASSES = frozenset(
    {
        SpriteClass.MOVING_AVATAR,
        SpriteClass.ORIENTED_AVATAR,
        SpriteClass.SHOOT_AVATAR,
        SpriteClass.FLAK_AVATAR,
    }
)


class SpriteDef(BaseModel):
    """Sprite definition of the ``SpriteSet`` block.

    Parameters
    ----------
    name : str
        Sprite name.
    sprite_class : SpriteClass | None
        Effective class. Only grouping nodes (definitions with children) may have none.
    params : dict[str, int | float | bool | str]
        Effective parameters, i.e. the parent's parameters overridden by the child's.
    parent : str | None
        Name of the enclosing definition, or None at the top level.

    See Also
    --------
    .GameSpec: Parsed game description
    .parse_game: Parse a VGDL game file
    """

    name: str
    sprite_class: SpriteClass | None = None
    params: dict[str, ParamValue] = {}
    parent: str | None = None


class InteractionRule(BaseModel):
    """One ``actor collider > effect`` line with a single collider.

    A source line with several colliders expands into one rule per collider,
    in the order they are written.
    """

    actor: str
    collider: str
    effect: str
    params: dict[str, ParamValue] = {}

    @property
    def score_change(self) -> float:
        return float(self.params.get("scoreChange", 0))


class TerminationKind(StrEnum):
    SPRITE_COUNTER = "SpriteCounter"
    MULTI_SPRITE_COUNTER = "MultiSpriteCounter"
    TIMEOUT = "Timeout"


class TerminationRule(BaseModel):
    """Termination condition.

    Parameters
    ----------
    kind : TerminationKind
        Condition kind.
    stypes : list[str]
        Counted sprite names, empty for ``Timeout``.
    limit : int
        Count (or tick) limit.
    win : bool
        Whether reaching the condition wins the game.
    """

    kind: TerminationKind
    stypes: list[str] = []
    limit: int = 0
    win: bool = False


class GameSpec(BaseModel):
    """Parsed VGDL game description.

    Parameters
    ----------
    name : str
        Game identifier, set by :func:`.load_game`.
    game_params : dict[str, int | float | bool | str]
        Parameters of the ``BasicGame`` header line.
    sprites : list[SpriteDef]
        Sprite definitions in declaration order, parents before children.
    level_mapping : dict[str, list[str]]
        Level character to sprite names.
    interactions : list[InteractionRule]
        Interaction rules in declaration order.
    terminations : list[TerminationRule]
        Termination rules in declaration order.
    strategy : str | None
        Optional strategy text shown to language models.
    warnings : list[str]
        Non-fatal findings of the parser.

    Examples
    --------
    .. literalinclude:: /py_examples/ex_parse_game.py

    See Also
    --------
    .parse_game: Parse a VGDL game file
    .render_game: Render a GameSpec as canonical VGDL text
    """

    name: str = ""
    game_params: dict[str, ParamValue] = {}
    sprites: list[SpriteDef] = []
    level_mapping: dict[str, list[str]] = {}
    interactions: list[InteractionRule] = []
    terminations: list[TerminationRule] = []
    strategy: str | None = None
    warnings: list[str] = []

    def sprite_defs(self) -> dict[str, SpriteDef]:
        return {s.name: s for s in self.sprites}

    def children(self, name: str) -> list[str]:
        return [s.name for s in self.sprites if s.parent == name]

    def ancestors(self, name: str) -> list[str]:
        """Names of the enclosing definitions, innermost first."""
        defs = self.sprite_defs()
        out = []
        parent = defs[name].parent
        while parent is not None:
            out.append(parent)
            parent = defs[parent].parent
        return out

    def concrete_sprites(self) -> list[SpriteDef]:
        """Definitions that can be instantiated: leaves that have a class."""
        parents = {s.parent for s in self.sprites}
        return [
            s for s in self.sprites if s.name not in parents and s.sprite_class is not None
        ]

    def expand(self, name: str) -> set[str]:
        """Concrete sprite names matched by ``name`` (itself or its descendants)."""
        return {
            s.name
            for s in self.concrete_sprites()
            if s.name == name or name in self.ancestors(s.name)
        }

    def avatar_root(self) -> SpriteDef:
        """Topmost definition of the avatar lineage."""
        defs = self.sprite_defs()
        for s in self.sprites:
            if s.sprite_class in AVATAR_CLASSES and (
                s.parent is None or defs[s.parent].sprite_class not in AVATAR_CLASSES
            ):
                return s
        raise ValueError(f"Game {self.name!r} has no avatar sprite.")

    def floor_sprite(self) -> str | None:
        """Name of the sprite drawn under everything, if the game has one.

        It is the only sprite mapped by ``.``, or else the sprite shared by all
        mapping entries.
        """
        if len(self.level_mapping.get(".", [])) == 1:
            return self.level_mapping["."][0]
        common = None
        for names in self.level_mapping.values():
            common = set(names) if common is None else common & set(names)
        if common and len(common) == 1:
            return common.pop()
        return None

    def same_structure(self, other: "GameSpec") -> bool:
        """Order-preserving equality of the parsed blocks."""
        keys = {"game_params", "sprites", "level_mapping", "interactions", "terminations"}
        return self.model_dump(include=keys) == other.model_dump(include=keys) and list(
            self.level_mapping
        ) == list(other.level_mapping)


class LevelGrid(BaseModel):
    """Level layout.

    Parameters
    ----------
    width : int
        Number of columns.
    height : int
        Number of rows.
    cells : list[str]
        Rows of level characters, all of length ``width``.
    source : list[str]
        Raw text lines.
    warnings : list[str]
        Non-fatal findings, e.g. padded rows.
    """

    width: int
    height: int
    cells: list[str]
    source: list[str]
    warnings: list[str] = []

    def char(self, row: int, col: int) -> str:
        return self.cells[row][col]


class PromptOptions(BaseModel):
    """Optional prompt sections."""

    coordinate_tagging: bool = False
    verbose_grounding: bool = False


class Decoding(BaseModel):
    temperature: float = Field(default=0.9, ge=0.0, le=2.0)
    max_tokens: int | None = Field(default=None, ge=1)


class LLMOptions(BaseModel):
    prompt: PromptOptions = PromptOptions()
    decoding: Decoding = Decoding()


class AgentKind(StrEnum):
    RANDOM = "random"
    SCRIPTED = "scripted"
    MCTS = "mcts"
    LLM = "llm"


class AgentConfig(BaseModel):
    """Agent configuration.

    Parameters
    ----------
    kind : AgentKind
        Agent implementation.
    name : str | None
        Identifier used in logs and reports, defaults to the kind.
    seed : int
        Agent seed, combined with the episode seed.
    mcts_budget_ms : float
        Wall-clock budget per move, by default 40 ms.
    mcts_rollout_depth : int
        Maximum simulated depth below the root, tree and rollout together.
    mcts_iterations : int | None
        Fixed iteration count. When set it replaces the wall-clock budget.
    mcts_exploration : float
        UCT exploration constant, by default sqrt(2).
    score_scale : float
        Score delta that maps to tanh(1) in rollout values.
    script : list[Action]
        Actions replayed by the scripted agent.
    llm_options : LLMOptions
        Prompt sections and decoding parameters of the LLM agent.

    Examples
    --------
    .. literalinclude:: /py_examples/run_config.json
        :caption: run_config.json
        :language: json
    """

    kind: AgentKind
    name: str | None = None
    seed: int = 0
    mcts_budget_ms: float = Field(default=40.0, gt=0)
    mcts_rollout_depth: int = Field(default=10, ge=1)
    mcts_iterations: int | None = Field(default=None, ge=1)
    mcts_exploration: float = Field(default=sqrt(2), ge=0)
    score_scale: float = Field(default=10.0, gt=0)
    script: list[Action] = []
    llm_options: LLMOptions = LLMOptions()

    @property
    def label(self) -> str:
        return self.name or self.kind.value


class ModelEndpoint(BaseModel):
    """Chat-completion endpoint.

    Parameters
    ----------
    base_url : str
        Base URL, the client posts to ``{base_url}/chat/completions``.
    model_name : str
        Model identifier sent with each request.
    api_key_env : str
        Environment variable holding the bearer token.
    timeout_s : float
        Per-request timeout.
    max_retries : int
        Retries after the first attempt for transient errors.
    backoff_base_s : float
        Base of the exponential backoff.
    concurrency : int
        Maximum number of requests in flight.
    transcript_path : str | None
        JSONL file receiving every request and reply.
    """

    base_url: str
    model_name: str
    api_key_env: str = "MODEL_API_KEY"
    timeout_s: float = Field(default=120.0, gt=0)
    max_retries: int = Field(default=3, ge=0)
    backoff_base_s: float = Field(default=1.0, ge=0)
    concurrency: int = Field(default=4, ge=1)
    transcript_path: str | None = None


class Usage(BaseModel):
    prompt_tokens: int = Field(default=0, ge=0)
    completion_tokens: int = Field(default=0, ge=0)
    latency_ms: float = Field(default=0.0, ge=0)
    retries: int = Field(default=0, ge=0)


class StepRecord(BaseModel):
    """One agent step.

    Parameters
    ----------
    tick : int
        Tick at which the action was taken.
    action : Action
        Executed action.
    reward_delta : float
        Score change caused by the step.
    state_changed : bool
        Whether any sprite was created, destroyed, transformed or moved, or a resource changed.
    avatar_pos_before : tuple[int, int] | None
        Avatar cell before the step, None if dead.
    avatar_pos_after : tuple[int, int] | None
        Avatar cell after the step, None if dead.
    meaningful : bool
        Set by :func:`.mark_meaningful`.
    parse_failure : bool
        The model reply held no legal action.
    agent_failure : str | None
        Error raised by the agent, the step then executes NIL.
    prompt_chars : int | None
        Prompt size of LLM agents.
    """

    tick: int
    action: Action
    reward_delta: float
    state_changed: bool
    avatar_pos_before: Position | None
    avatar_pos_after: Position | None
    meaningful: bool = False
    parse_failure: bool = False
    agent_failure: str | None = None
    prompt_chars: int | None = None


class EpisodeOutcome(StrEnum):
    WIN = "win"
    LOSS = "loss"
    TIMEOUT = "timeout"


class EpisodeLog(BaseModel):
    """Complete record of one episode.

    ``TIMEOUT`` counts as a loss; ``failure`` is set when the episode was aborted
    by an engine or agent error and must be excluded from means.
    """

    game: str
    level: int
    agent: str
    seed: int
    steps: list[StepRecord] = []
    outcome: EpisodeOutcome
    terminal_tick: int
    total_reward: float
    max_steps: int = Field(ge=1)
    reason: str = ""
    failure: str | None = None

    @model_validator(mode="after")
    def _check_totals(self) -> "EpisodeLog":
        if self.terminal_tick != len(self.steps):
            raise ValueError(
                f"terminal_tick {self.terminal_tick} differs from step count {len(self.steps)}"
            )
        total = sum(s.reward_delta for s in self.steps)
        if not isclose(total, self.total_reward, abs_tol=1e-9):
            raise ValueError(f"total_reward {self.total_reward} differs from {total}")
        return self

    @property
    def is_win(self) -> bool:
        return self.outcome is EpisodeOutcome.WIN


class MetricsReport(BaseModel):
    """Metrics of one (game, level, agent) cell of a batch.

    ``wins``, ``episodes`` and ``excluded`` are raw counts for external tests.
    """

    game: str
    level: int
    agent: str
    episodes: int = Field(ge=0)
    excluded: int = Field(default=0, ge=0)
    wins: int = Field(ge=0)
    r_min: float
    r_max: float
    mean_total_reward: float
    meaningful_ratio: float = Field(ge=0.0, le=1.0)
    step_efficiency: float = Field(ge=0.0, le=1.0)
    win_rate: float = Field(ge=0.0, le=1.0)
    normalized_reward: float = Field(ge=0.0, le=1.0)
    inverted_steps: float = Field(ge=0.0, le=1.0)
    overall_score: float = Field(ge=0.0, le=1.0)


class RunConfig(BaseModel):
    """Batch configuration, loaded from JSON and overridden by CLI flags.

    Parameters
    ----------
    games : list[str]
        Bundled game identifiers.
    levels : list[int] | "all"
        Level indices, or all five.
    agents : list[AgentConfig]
        Agents to evaluate.
    episodes_per_level : int
        Episodes per (game, level, agent), by default 5.
    max_steps : int
        Step cap, by default 2000.
    seed_base : int
        Episode ``i`` uses ``seed_base + i``.
    output_dir : str | None
        Where logs and reports are written.
    overwrite : bool
        Allow writing into a non-empty ``output_dir``.
    prompt : PromptOptions
        Prompt sections applied to every LLM agent.
    parallelism : int
        Episodes run concurrently.
    epsilon : float
        Guard of the normalized reward.
    step_timeout_s : float
        Wall-clock cap of one LLM step, retries included.
    endpoint : ModelEndpoint | None
        Endpoint of LLM agents, read from the environment when None.
    mock_script : str | None
        JSON script file; LLM agents then talk to the mock server.

    Examples
    --------
    .. literalinclude:: /py_examples/run_config.json
        :caption: run_config.json
        :language: json
    """

    games: list[str]
    levels: list[int] | Literal["all"] = "all"
    agents: list[AgentConfig]
    episodes_per_level: int = Field(default=5, ge=1)
    max_steps: int = Field(default=2000, ge=1)
    seed_base: int = 0
    output_dir: str | None = None
    overwrite: bool = False
    prompt: PromptOptions = PromptOptions()
    parallelism: int = Field(default=1, ge=1)
    epsilon: float = Field(default=1e-9, gt=0)
    step_timeout_s: float = Field(default=120.0, gt=0)
    endpoint: ModelEndpoint | None = None
    mock_script: str | None = None


class BaseModelList(list[TBM], Generic[TBM]):
    """List of basemodels.

    See Also
    --------
    .EpisodeLogList: List of episode logs
    .MetricsReportList: List of metric reports
    """

    def dump_json(self, filename: str, verbose: bool = False, **kwargs: Any) -> None:
        """Save data to JSON file.

        Parameters
        ----------
        filename : str
            Output JSON filename.
        verbose : bool, optional
            Print detail, by default False.
        kwargs : Any
            Additional keyword arguments for :func:`json.dump`.
        """
        kwargs = {
            "indent": 4,
            "cls": JsonEncoder,
            "ensure_ascii": False,
        } | kwargs
        with open(filename, "w") as f:
            json.dump(obj=self, fp=f, **kwargs)
        if verbose:
            print("dump_json: Data counts:", len(self))
            print("dump_json: Output filename:", filename)


class EpisodeLogList(BaseModelList[EpisodeLog]):
    def __init__(self, logs: list[dict] | list[EpisodeLog] = []) -> None:
        super().__init__(
            [EpisodeLog.model_validate(e) if isinstance(e, dict) else e for e in logs]
        )


class MetricsReportList(BaseModelList[MetricsReport]):
    def __init__(self, reports: list[dict] | list[MetricsReport] = []) -> None:
        super().__init__(
            [MetricsReport.model_validate(r) if isinstance(r, dict) else r for r in reports]
        )


class JsonEncoder(json.JSONEncoder):
    def default(self, obj):
        if issubclass(obj.__class__, BaseModel):
            return obj.model_dump(mode="json")
        if isinstance(obj, (datetime, date, time)):
            return obj.isoformat()
        if isinstance(obj, np.generic):
            return obj.item()
        return super().default(obj)
