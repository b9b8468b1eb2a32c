import pytest

from gvgaiLlmTools.gameEngine import GameState, init_state
from gvgaiLlmTools.models import GameSpec
from gvgaiLlmTools.vgdlParser import list_games, load_game, load_level, parse_game, parse_level

BUNDLED_GAMES = ["aliens", "boulderdash", "escape", "realsokoban", "sokoban", "zelda"]

ROOM = """\
BasicGame
    SpriteSet
        floor > Immovable
        wall > Immovable
        avatar > MovingAvatar
    LevelMapping
        . > floor
        w > floor wall
        A > floor avatar
    InteractionSet
        avatar wall > stepBack
    TerminationSet
"""

# one step right wins, every other move walks into a trap
GOAL_OR_TRAP = """\
BasicGame
    SpriteSet
        floor > Immovable
        goal > Immovable
        trap > Immovable
        avatar > MovingAvatar
    LevelMapping
        . > floor
        g > floor goal
        t > floor trap
        A > floor avatar
    InteractionSet
        goal avatar > killSprite scoreChange=1
        avatar trap > killSprite
    TerminationSet
        SpriteCounter stype=goal limit=0 win=True
        SpriteCounter stype=avatar limit=0 win=False
"""

KEY_ROOM = """\
BasicGame
    SpriteSet
        floor > Immovable
        wall > Immovable
        key > Immovable
        avatar > MovingAvatar
    LevelMapping
        . > floor
        w > floor wall
        k > floor key
        A > floor avatar
        K > floor key avatar
    InteractionSet
        avatar wall > stepBack
        key avatar > killSprite
    TerminationSet
        SpriteCounter stype=key limit=0 win=True
"""

COIN_CORRIDOR = """\
BasicGame
    SpriteSet
        floor > Immovable
        wall > Immovable
        coin > Immovable
        avatar > MovingAvatar
    LevelMapping
        . > floor
        w > floor wall
        c > floor coin
        A > floor avatar
    InteractionSet
        avatar wall > stepBack
        coin avatar > killSprite scoreChange=1
    TerminationSet
"""


@pytest.fixture(scope="session")
def bundled() -> dict[str, GameSpec]:
    return {name: load_game(name) for name in list_games()}


@pytest.fixture
def start():
    """Initial state of a game given as VGDL text (or GameSpec) and a level layout."""

    def make(game: str | GameSpec, level: str, seed: int = 0) -> GameState:
        spec = parse_game(game) if isinstance(game, str) else game
        return init_state(spec, parse_level(spec, level), seed)

    return make


@pytest.fixture
def level0(bundled):
    """Initial state of level 0 of a bundled game."""

    def make(name: str, seed: int = 0) -> GameState:
        spec = bundled[name]
        return init_state(spec, load_level(spec, 0), seed)

    return make


@pytest.fixture
def room():
    return parse_game(ROOM)


@pytest.fixture
def goal_or_trap():
    return parse_game(GOAL_OR_TRAP)


@pytest.fixture
def key_room():
    return parse_game(KEY_ROOM)


@pytest.fixture
def coin_corridor():
    return parse_game(COIN_CORRIDOR)


@pytest.fixture(autouse=True)
def _bundled_games_only(monkeypatch):
    monkeypatch.delenv("GVGAI_GAMES_DIR", raising=False)
