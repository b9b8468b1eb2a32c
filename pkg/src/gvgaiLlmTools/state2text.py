"""Textual views of games and states shown to language models.

The prompt of one step is split in a static part (rules, actions, mechanics notice)
sent as the system message and a dynamic part (sprite mapping, map, coordinates,
avatar position, grounding) sent as the user message. Nothing from earlier ticks is
ever included.
"""

from logging import getLogger

from pydantic import BaseModel

from .gameEngine import GameState, Sprite
from .models import AVATAR_CLASSES, GameSpec, PromptOptions, SpriteClass, TerminationKind
from .vgdlParser import EOS

__all__ = [
    "UntranslatableEffect",
    "AvatarDead",
    "PromptBundle",
    "MECHANICS_NOTICE",
    "RESPONSE_FORMAT",
    "display_chars",
    "translate_rules",
    "serialize_state",
    "coordinate_tags",
    "wall_sprites",
    "verbose_grounding",
    "assemble_prompt",
]

logger = getLogger(__name__)

MECHANICS_NOTICE = (
    "Some directional actions may rotate the avatar without movement. "
    "Repeating the direction may be needed. Avoid null actions. "
    "Interpret the state carefully and act meaningfully."
)
RESPONSE_FORMAT = (
    "Reply with a one-line justification of your action followed by\n"
    "\\\\ Action:<action number>"
)
CHAR_POOL = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789@#$%&*+=?!~^"
EMPTY_CELL = "(empty)"

_TIER = {
    SpriteClass.MISSILE: 4,
    SpriteClass.BOMBER: 4,
    SpriteClass.RANDOM_NPC: 4,
    SpriteClass.CHASER: 4,
    SpriteClass.FLEEING: 4,
    SpriteClass.FLICKER: 4,
    SpriteClass.PASSIVE: 4,
    SpriteClass.PORTAL: 3,
    SpriteClass.SPAWN_POINT: 3,
    SpriteClass.RESOURCE: 3,
    SpriteClass.DOOR: 3,
    SpriteClass.IMMOVABLE: 2,
}

# effect -> sentence; {a} actor, {b} collider name, {B} collider phrase
_TEMPLATES = {
    "stepBack": "If the {a} touches {B}, the {a} is blocked and stays where it was.",
    "killSprite": "If the {a} touches {B}, the {a} disappears.",
    "killBoth": "If the {a} touches {B}, both disappear.",
    "transformTo": "If the {a} touches {B}, the {a} turns into a {stype}.",
    "bounceForward": "If {B} walks into the {a}, the {a} is pushed one cell in the same direction.",
    "undoAll": "If the {a} touches {B}, every movement of this step is undone.",
    "collectResource": "If the {a} touches {B}, the {b} collects the {a}.",
    "changeResource": "If the {a} touches {B}, the {resource} count of the {a} changes by {value}.",
    "killIfHasLess": "If the {a} touches {B} while holding at most {limit} {resource}, the {a} disappears.",
    "killIfOtherHasMore": (
        "If the {a} touches {B} and the {b} holds at least {limit} {resource}, the {a} disappears."
    ),
    "killIfFromAbove": "If {B} falls onto the {a}, the {a} disappears.",
    "turnAround": "If the {a} touches {B}, the {a} moves down one row and reverses its direction.",
    "reverseDirection": "If the {a} touches {B}, the {a} reverses its direction.",
    "teleportToExit": "If the {a} touches {B}, the {a} is teleported to the exit of the {b}.",
}


class UntranslatableEffect(ValueError):
    pass


class AvatarDead(ValueError):
    pass


class PromptBundle(BaseModel):
    """Sections of one zero-shot prompt, in prompt order.

    Parameters
    ----------
    rule_text : str
        Natural-language rules, identical at every tick.
    action_text : str
        ``<code>: ACTION_<NAME>`` lines of the legal actions.
    mechanics_notice : str
        Fixed notice on rotation and null actions.
    sprite_mapping_text : str
        ``<name> -> '<char>'`` lines.
    state_text : str
        ASCII map, one line per grid row.
    coordinate_lines : list[str]
        Coordinate tags, empty unless enabled.
    avatar_position_line : str
        ``Avatar position: row=<r>, col=<c>``.
    grounding_text : str | None
        Adjacent-cell sentences, None unless enabled.
    """

    rule_text: str
    action_text: str
    mechanics_notice: str = MECHANICS_NOTICE
    sprite_mapping_text: str
    state_text: str
    coordinate_lines: list[str] = []
    avatar_position_line: str
    grounding_text: str | None = None
    response_format: str = RESPONSE_FORMAT

    @property
    def system_text(self) -> str:
        return "\n".join(
            [
                "=== Game Rules ===",
                self.rule_text,
                "",
                "=== Available Actions ===",
                self.action_text,
                "",
                "=== Important Mechanics Notice ===",
                self.mechanics_notice,
            ]
        )

    @property
    def user_text(self) -> str:
        lines = ["=== Sprite Mapping ===", self.sprite_mapping_text, "", "=== Current State ===", self.state_text]
        if self.coordinate_lines:
            lines += ["Each line shows entity at (row, col).", *self.coordinate_lines]
        lines += ["", self.avatar_position_line]
        if self.grounding_text is not None:
            lines += [self.grounding_text]
        lines += ["", self.response_format]
        return "\n".join(lines)

    @property
    def text(self) -> str:
        return self.system_text + "\n\n" + self.user_text


def _tiers(spec: GameSpec) -> dict[str, int]:
    """Display priority of every concrete sprite, higher is drawn on top."""
    floor = spec.floor_sprite()
    tiers = {}
    for s in spec.concrete_sprites():
        if s.name == floor:
            tiers[s.name] = 1
        elif s.sprite_class in AVATAR_CLASSES:
            tiers[s.name] = 5
        else:
            tiers[s.name] = _TIER[s.sprite_class]
    return tiers


def _top(tiers: dict[str, int], sprites: list[Sprite], exclude: int | None = None) -> Sprite | None:
    candidates = [s for s in sprites if s.id != exclude]
    if not candidates:
        return None
    return max(candidates, key=lambda s: (tiers[s.name], s.id))


def display_chars(spec: GameSpec) -> dict[str, str]:
    """Display character of every concrete sprite.

    The floor sprite is drawn as ``.``. Other sprites take the level character that
    places them (the highest-priority sprite of a character wins it); sprites without
    one, e.g. spawned or transformed sprites, take the first free character of
    :data:`CHAR_POOL`.
    """
    tiers = _tiers(spec)
    floor = spec.floor_sprite()
    chars: dict[str, str] = {}
    if floor is not None:
        chars[floor] = "."
    used = {"."} | set(spec.level_mapping)

    for char, names in spec.level_mapping.items():
        if char == ".":
            continue
        free = [n for n in names if n not in chars]
        if free:
            chars[max(free, key=lambda n: tiers[n])] = char

    pool = (c for c in CHAR_POOL if c not in used)
    for s in spec.concrete_sprites():
        if s.name not in chars:
            chars[s.name] = next(pool)
    return {s.name: chars[s.name] for s in spec.concrete_sprites()}


def _phrase(name: str) -> str:
    return "the edge of the screen" if name == EOS else f"a {name}"


def _points(score: float) -> str:
    if score == 0:
        return ""
    n = int(score) if float(score).is_integer() else score
    unit = "point" if abs(n) == 1 else "points"
    return f" This gives {n} {unit}." if n > 0 else f" This costs {-n} {unit}."


def _termination_sentence(term) -> str:
    verb = "won" if term.win else "lost"
    if term.kind is TerminationKind.TIMEOUT:
        return f"The game is {verb} after {term.limit} ticks."
    if term.limit == 0:
        what = " and no ".join(term.stypes)
        tail = "remains" if len(term.stypes) == 1 else "remain"
        return f"The game is {verb} when no {what} {tail}."
    what = " and ".join(term.stypes)
    return f"The game is {verb} when at most {term.limit} {what} remain."


def _genre(spec: GameSpec) -> str:
    if any(r.effect == "bounceForward" for r in spec.interactions):
        return "This is a puzzle game: sprites are pushed around the grid to reach a goal."
    if spec.avatar_root().sprite_class in (SpriteClass.SHOOT_AVATAR, SpriteClass.FLAK_AVATAR):
        return "This is an action game: the avatar can use a weapon on other sprites."
    return "This is a navigation game: the avatar moves through the grid to reach a goal."


def translate_rules(spec: GameSpec) -> str:
    """Describe the rules of ``spec`` in natural language.

    One sentence is written per interaction rule and per termination rule, from a
    fixed template table keyed by effect name, below a short game analysis header.

    Raises
    ------
    UntranslatableEffect
        If an interaction uses an effect without template.
    """
    floor = spec.floor_sprite()
    names = [s.name for s in spec.concrete_sprites() if s.name != floor]

    interactions = []
    for r in spec.interactions:
        if r.effect not in _TEMPLATES:
            raise UntranslatableEffect(f"No template for effect {r.effect!r} ({r.actor} {r.collider})")
        fields = dict(r.params) | {"a": r.actor, "b": r.collider, "B": _phrase(r.collider)}
        sentence = _TEMPLATES[r.effect].format(**fields)
        interactions.append(f"- {sentence}{_points(r.score_change)}")

    outcomes = [f"- {_termination_sentence(t)}" for t in spec.terminations]
    avatars = {s.name for s in spec.sprites if s.sprite_class in AVATAR_CLASSES}
    if not any(set(t.stypes) & avatars for t in spec.terminations):
        outcomes.append("- The game is lost if the avatar is destroyed.")

    lines = [
        "Game rules in natural language:",
        "",
        "# Game Analysis",
        "",
        f"**Genre:** {_genre(spec)}",
        "",
        "**Mechanics:**",
        f"1. **Sprites:** The game includes {', '.join(names)}.",
    ]
    item = 2
    if interactions:
        lines += [f"{item}. **Interactions:**", *interactions]
        item += 1
    lines += [f"{item}. **Win/Loss:**", *outcomes]
    if spec.strategy:
        lines += ["", "**Strategy Suggestions:**"]
        lines += [ln if ln.startswith("-") else f"- {ln}" for ln in spec.strategy.splitlines() if ln.strip()]
    return "\n".join(lines)


def serialize_state(state: GameState, spec: GameSpec | None = None) -> tuple[str, dict[str, str]]:
    """Render the grid as ASCII.

    Parameters
    ----------
    state : GameState
        State to render, ongoing or terminal.
    spec : GameSpec | None, optional
        Game of the state, by default ``state.spec``.

    Returns
    -------
    tuple[str, dict[str, str]]
        ``height`` lines of ``width`` characters, and the sprite mapping (every
        concrete sprite name to its character). Each cell shows its top sprite:
        avatar, then moving sprites, portals and resources, immovables, floor.
    """
    spec = spec or state.spec
    chars = display_chars(spec)
    tiers = _tiers(spec)
    mapping = dict(chars)
    rows = []
    for cells in state.grid:
        row = []
        for sprites in cells:
            top = _top(tiers, sprites)
            if top is None:
                mapping.setdefault(EMPTY_CELL, ".")
                row.append(".")
            else:
                row.append(chars[top.name])
        rows.append("".join(row))
    return "\n".join(rows), mapping


def _on_border(state: GameState, sprite: Sprite) -> bool:
    return sprite.row in (0, state.height - 1) or sprite.col in (0, state.width - 1)


def wall_sprites(state: GameState) -> set[str]:
    """Immovable sprites that stop every form of the avatar.

    A sprite counts when each concrete avatar sprite has a ``stepBack`` or
    ``undoAll`` rule against it.
    """
    game = state.game
    if not game.avatar_names:
        return set()
    walls = set.intersection(*(game.blockers[a] for a in game.avatar_names))
    return {name for name in walls if game.classes[name] is SpriteClass.IMMOVABLE}


def coordinate_tags(state: GameState) -> list[str]:
    """``row=<r>, col=<c> -> <char> (<name>)`` lines, row-major, then by instance id.

    The floor and the walls (see :func:`wall_sprites`) on the outer ring are left out.
    """
    chars = display_chars(state.spec)
    floor = state.spec.floor_sprite()
    walls = wall_sprites(state)
    lines = []
    for sprite in sorted(state.sprites.values(), key=lambda s: (s.row, s.col, s.id)):
        if sprite.name == floor:
            continue
        if sprite.name in walls and _on_border(state, sprite):
            continue
        lines.append(f"row={sprite.row}, col={sprite.col} -> {chars[sprite.name]} ({sprite.name})")
    return lines


def verbose_grounding(state: GameState) -> str:
    """State what lies up, down, left and right of the avatar.

    Raises
    ------
    AvatarDead
        If the avatar has been destroyed.
    """
    avatar = state.avatar
    if avatar is None:
        raise AvatarDead(f"No avatar at tick {state.tick}")
    grid = state.grid
    tiers = _tiers(state.spec)
    lines = []
    for word, (dr, dc) in (("up", (-1, 0)), ("down", (1, 0)), ("left", (0, -1)), ("right", (0, 1))):
        r, c = avatar.row + dr, avatar.col + dc
        if not state.in_bounds(r, c):
            lines.append(f"The cell {word} of the avatar is boundary.")
            continue
        top = _top(tiers, grid[r][c], exclude=avatar.id)
        what = top.name if top is not None else "empty"
        lines.append(f"The cell {word} of the avatar (row={r}, col={c}) is {what}.")
    return "\n".join(lines)


def assemble_prompt(
    spec: GameSpec, state: GameState, options: PromptOptions = PromptOptions()
) -> PromptBundle:
    """Build the zero-shot prompt of the current tick.

    Parameters
    ----------
    spec : GameSpec
        Game rules.
    state : GameState
        Current state; earlier ticks never contribute.
    options : PromptOptions, optional
        Coordinate tagging and verbose grounding switches, both off by default.

    Returns
    -------
    PromptBundle
        Sections in the order Game Rules, Available Actions, Important Mechanics
        Notice, Sprite Mapping, Current State, coordinate lines.

    Examples
    --------
    .. literalinclude:: /py_examples/ex_translate.py
    """
    state_text, mapping = serialize_state(state, spec)
    actions = sorted(state.game.actions)
    avatar = state.avatar
    position = f"row={avatar.row}, col={avatar.col}" if avatar is not None else "none"

    grounding = None
    if options.verbose_grounding and avatar is not None:
        grounding = verbose_grounding(state)

    bundle = PromptBundle(
        rule_text=translate_rules(spec),
        action_text="\n".join(f"{a.value}: {a.label}" for a in actions),
        sprite_mapping_text="\n".join(f"{name} -> '{ch}'" for name, ch in mapping.items()),
        state_text=state_text,
        coordinate_lines=coordinate_tags(state) if options.coordinate_tagging else [],
        avatar_position_line=f"Avatar position: {position}",
        grounding_text=grounding,
    )
    size = len(bundle.text)
    logger.debug(f"Prompt at tick {state.tick}: {size} chars, ~{size // 4} tokens")
    return bundle
