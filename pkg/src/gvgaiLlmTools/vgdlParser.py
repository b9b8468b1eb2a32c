"""VGDL game and level parser.

A game file holds an optional ``BasicGame`` header line and four indented blocks,
``SpriteSet``, ``LevelMapping``, ``InteractionSet`` and ``TerminationSet``. Only the
sprite classes of :class:`.SpriteClass`, the effects of :data:`EFFECTS` and the
termination kinds of :class:`.TerminationKind` are accepted; anything else raises
:class:`.ParseError` with the offending line number.
"""

from dataclasses import dataclass
from logging import getLogger
import math
import os
import re

from .models import (
    AVATAR_CLASSES,
    GameSpec,
    InteractionRule,
    LevelGrid,
    ParamValue,
    SpriteClass,
    SpriteDef,
    TerminationKind,
    TerminationRule,
)
from .settings import games_dir

__all__ = [
    "ParseError",
    "UnknownTile",
    "EmptyLevel",
    "UnknownGame",
    "EFFECTS",
    "EOS",
    "ORIENTATIONS",
    "parse_game",
    "parse_level",
    "render_game",
    "background_char",
    "load_game",
    "load_level",
    "list_games",
    "available_levels",
]

logger = getLogger(__name__)

BLOCKS = ("SpriteSet", "LevelMapping", "InteractionSet", "TerminationSet")
GAME_CLASSES = ("BasicGame",)
EOS = "EOS"

# (row, col) unit vectors, row 0 at the top
ORIENTATIONS: dict[str, tuple[int, int]] = {
    "UP": (-1, 0),
    "DOWN": (1, 0),
    "LEFT": (0, -1),
    "RIGHT": (0, 1),
}

# effect name -> mandatory parameters
EFFECTS: dict[str, tuple[str, ...]] = {
    "stepBack": (),
    "killSprite": (),
    "killBoth": (),
    "transformTo": ("stype",),
    "bounceForward": (),
    "undoAll": (),
    "collectResource": (),
    "changeResource": ("resource", "value"),
    "killIfHasLess": ("resource", "limit"),
    "killIfOtherHasMore": ("resource", "limit"),
    "killIfFromAbove": (),
    "turnAround": (),
    "reverseDirection": (),
    "teleportToExit": (),
}

SPAWNING_CLASSES = {
    SpriteClass.BOMBER,
    SpriteClass.SPAWN_POINT,
    SpriteClass.SHOOT_AVATAR,
    SpriteClass.FLAK_AVATAR,
}

# parameters the engine reads as numbers
NUMERIC_PARAMS = ("prob", "speed", "cooldown", "limit", "total", "value", "scoreChange")

_NAME = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_MAPPING = re.compile(r"^(\S)\s*>\s*(.*)$")
_HASH_MAPPING = re.compile(r"^#\s*>")
_INLINE_COMMENT = re.compile(r"\s+#(?!\s*>).*$")


class ParseError(ValueError):
    """Malformed game description.

    Parameters
    ----------
    line : int
        1-based line number of the problem.
    message : str
        Description of the problem.
    """

    def __init__(self, line: int, message: str) -> None:
        self.line = line
        self.message = message
        super().__init__(f"line {line}: {message}")


class UnknownTile(ValueError):
    def __init__(self, char: str, row: int, col: int) -> None:
        self.char = char
        self.row = row
        self.col = col
        super().__init__(f"Unknown level character {char!r} at (row={row}, col={col})")


class EmptyLevel(ValueError):
    pass


class UnknownGame(FileNotFoundError):
    pass


@dataclass
class _Line:
    number: int
    indent: int
    text: str


def _lines(source: str) -> list[_Line]:
    out = []
    for number, raw in enumerate(source.splitlines(), start=1):
        expanded = raw.replace("\t", "    ")
        content = expanded.strip()
        if not content:
            continue
        if content.startswith("#") and _HASH_MAPPING.match(content) is None:
            continue
        content = _INLINE_COMMENT.sub("", content).strip()
        indent = len(expanded) - len(expanded.lstrip(" "))
        out.append(_Line(number, indent, content))
    return out


def _parse_value(text: str) -> ParamValue:
    if text in ("True", "False"):
        return text == "True"
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def _parse_params(tokens: list[str], line: int) -> dict[str, ParamValue]:
    params: dict[str, ParamValue] = {}
    for tok in tokens:
        key, sep, value = tok.partition("=")
        if not sep or not key or not value:
            raise ParseError(line, f"malformed key=value pair {tok!r}")
        parsed = _parse_value(value)
        if isinstance(parsed, float) and not math.isfinite(parsed):
            raise ParseError(line, f"parameter {key} is not finite: {value}")
        params[key] = parsed
    return params


def _check_numeric(params: dict[str, ParamValue], line: int) -> None:
    for key in NUMERIC_PARAMS:
        value = params.get(key)
        if value is not None and (isinstance(value, bool) or not isinstance(value, (int, float))):
            raise ParseError(line, f"parameter {key} must be a number, got {value!r}")


def _split_arrow(ln: _Line) -> tuple[str, str]:
    left, sep, right = ln.text.partition(">")
    if not sep:
        if ln.text.split()[0] in BLOCKS:
            raise ParseError(ln.number, f"bad indentation: block keyword {ln.text.split()[0]}")
        raise ParseError(ln.number, f"expected '>' in {ln.text!r}")
    return left.strip(), right.strip()


def _parse_sprites(entries: list[_Line]) -> tuple[list[SpriteDef], dict[str, int]]:
    sprites: list[SpriteDef] = []
    lines: dict[str, int] = {}
    stack: list[tuple[int, SpriteDef]] = []
    child_indent: dict[str | None, int] = {}

    for ln in entries:
        left, right = _split_arrow(ln)
        if _NAME.match(left) is None:
            raise ParseError(ln.number, f"invalid sprite name {left!r}")
        if left in lines or left == EOS:
            raise ParseError(ln.number, f"duplicate sprite name {left!r}")

        tokens = right.split()
        sprite_class: SpriteClass | None = None
        if tokens and "=" not in tokens[0]:
            if tokens[0] not in SpriteClass._value2member_map_:
                raise ParseError(ln.number, f"unknown sprite class {tokens[0]!r}")
            sprite_class = SpriteClass(tokens[0])
            tokens = tokens[1:]
        params = _parse_params(tokens, ln.number)
        _check_numeric(params, ln.number)
        for key, value in params.items():
            if isinstance(value, (int, float)) and not isinstance(value, bool) and value < 0:
                raise ParseError(ln.number, f"parameter {key} must be non-negative, got {value}")
        if params.get("orientation", "UP") not in ORIENTATIONS:
            raise ParseError(ln.number, f"unknown orientation {params['orientation']!r}")

        while stack and stack[-1][0] >= ln.indent:
            stack.pop()
        parent = stack[-1][1] if stack else None
        parent_name = parent.name if parent is not None else None
        expected = child_indent.setdefault(parent_name, ln.indent)
        if expected != ln.indent:
            raise ParseError(ln.number, f"bad indentation of sprite {left!r}")

        sd = SpriteDef(
            name=left,
            sprite_class=sprite_class or (parent.sprite_class if parent else None),
            params=(parent.params if parent else {}) | params,
            parent=parent_name,
        )
        sprites.append(sd)
        lines[left] = ln.number
        stack.append((ln.indent, sd))

    parents = {s.parent for s in sprites}
    for s in sprites:
        if s.name not in parents and s.sprite_class is None:
            raise ParseError(lines[s.name], f"sprite {s.name!r} has no class")
        if s.name not in parents and s.sprite_class in SPAWNING_CLASSES and "stype" not in s.params:
            raise ParseError(lines[s.name], f"{s.sprite_class.value} sprite {s.name!r} requires parameter stype")
    return sprites, lines


def _parse_mapping(entries: list[_Line], warnings: list[str]) -> tuple[dict[str, list[str]], dict[str, int]]:
    mapping: dict[str, list[str]] = {}
    lines: dict[str, int] = {}
    for ln in entries:
        m = _MAPPING.match(ln.text)
        if m is None or not m.group(2).split():
            raise ParseError(ln.number, f"expected '<char> > <sprite> ...', got {ln.text!r}")
        char, names = m.group(1), m.group(2).split()
        if char in mapping:
            msg = f"line {ln.number}: mapping character {char!r} redefined, last definition wins"
            warnings.append(msg)
            logger.warning(msg)
        mapping[char] = names
        lines[char] = ln.number
    return mapping, lines


def _parse_interactions(entries: list[_Line]) -> list[tuple[int, InteractionRule]]:
    rules = []
    for ln in entries:
        left, right = _split_arrow(ln)
        names = left.split()
        if len(names) < 2:
            raise ParseError(ln.number, "interaction needs an actor and at least one collider")
        tokens = right.split()
        if not tokens or "=" in tokens[0]:
            raise ParseError(ln.number, "interaction has no effect")
        effect = tokens[0]
        if effect not in EFFECTS:
            raise ParseError(ln.number, f"unknown effect {effect!r}")
        params = _parse_params(tokens[1:], ln.number)
        _check_numeric(params, ln.number)
        for key in EFFECTS[effect]:
            if key not in params:
                raise ParseError(ln.number, f"effect {effect} requires parameter {key}")
        for collider in names[1:]:
            rules.append(
                (
                    ln.number,
                    InteractionRule(actor=names[0], collider=collider, effect=effect, params=params),
                )
            )
    return rules


def _parse_terminations(entries: list[_Line]) -> list[tuple[int, TerminationRule]]:
    rules = []
    for ln in entries:
        tokens = ln.text.split()
        if tokens[0] not in TerminationKind._value2member_map_:
            raise ParseError(ln.number, f"unknown termination {tokens[0]!r}")
        kind = TerminationKind(tokens[0])
        params = _parse_params(tokens[1:], ln.number)

        stypes: list[str] = []
        if kind is TerminationKind.SPRITE_COUNTER:
            if "stype" not in params:
                raise ParseError(ln.number, "SpriteCounter requires parameter stype")
            stypes = [str(params.pop("stype"))]
        elif kind is TerminationKind.MULTI_SPRITE_COUNTER:
            numbered = sorted(
                (k for k in params if re.fullmatch(r"stype\d+", k)), key=lambda k: int(k[5:])
            )
            if not numbered:
                raise ParseError(ln.number, "MultiSpriteCounter requires parameters stype1, stype2, ...")
            stypes = [str(params.pop(k)) for k in numbered]
        elif "limit" not in params:
            raise ParseError(ln.number, "Timeout requires parameter limit")

        limit = params.pop("limit", 0)
        win = params.pop("win", False)
        if params:
            raise ParseError(ln.number, f"unsupported termination parameter {next(iter(params))!r}")
        if isinstance(limit, bool) or not isinstance(limit, int) or limit < 0:
            raise ParseError(ln.number, f"limit must be a non-negative integer, got {limit!r}")
        if not isinstance(win, bool):
            raise ParseError(ln.number, f"win must be True or False, got {win!r}")
        rules.append((ln.number, TerminationRule(kind=kind, stypes=stypes, limit=limit, win=win)))
    return rules


def _check_references(
    spec: GameSpec,
    sprite_lines: dict[str, int],
    mapping_lines: dict[str, int],
    interactions: list[tuple[int, InteractionRule]],
    terminations: list[tuple[int, TerminationRule]],
) -> None:
    defs = spec.sprite_defs()
    concrete = {s.name for s in spec.concrete_sprites()}

    def resolve(name: str, line: int, placeable: bool = False) -> None:
        if name not in defs:
            raise ParseError(line, f"unresolved sprite reference {name!r}")
        if placeable and name not in concrete:
            raise ParseError(line, f"sprite {name!r} is a group and cannot be instantiated")

    for s in spec.sprites:
        if "stype" in s.params:
            resolve(str(s.params["stype"]), sprite_lines[s.name], s.sprite_class in SPAWNING_CLASSES)
    for char, names in spec.level_mapping.items():
        for name in names:
            resolve(name, mapping_lines[char], placeable=True)
    for line, rule in interactions:
        resolve(rule.actor, line)
        if rule.collider != EOS:
            resolve(rule.collider, line)
        if "stype" in rule.params:
            resolve(str(rule.params["stype"]), line, placeable=rule.effect == "transformTo")
        if "resource" in rule.params:
            resolve(str(rule.params["resource"]), line)
    for line, term in terminations:
        for name in term.stypes:
            resolve(name, line)

    roots = [
        s
        for s in spec.sprites
        if s.sprite_class in AVATAR_CLASSES
        and (s.parent is None or defs[s.parent].sprite_class not in AVATAR_CLASSES)
    ]
    if len(roots) != 1:
        line = sprite_lines[roots[1].name] if len(roots) > 1 else min(sprite_lines.values(), default=1)
        raise ParseError(line, f"expected exactly one avatar sprite lineage, found {len(roots)}")


def parse_game(source: str) -> GameSpec:
    """Parse a VGDL game description.

    Parameters
    ----------
    source : str
        Full text of the game file.

    Returns
    -------
    GameSpec
        Validated game description. Nested sprites are flattened, children inherit
        the class and parameters of their parent.

    Raises
    ------
    ParseError
        For a missing block, an unknown sprite class or effect, an unresolved sprite
        reference, a malformed ``key=value`` pair or bad indentation.

    Examples
    --------
    .. literalinclude:: /py_examples/ex_parse_game.py

    See Also
    --------
    .render_game: Inverse operation
    .load_game: Load a bundled game
    """
    lines = _lines(source)
    last_line = len(source.splitlines()) + 1
    if not lines:
        raise ParseError(1, f"missing block {BLOCKS[0]}")

    game_params: dict[str, ParamValue] = {}
    head = lines[0].text.split()
    if head[0] in BLOCKS:
        body = lines
    elif head[0] in GAME_CLASSES:
        game_params = _parse_params(head[1:], lines[0].number)
        body = lines[1:]
        if body and body[0].indent <= lines[0].indent:
            raise ParseError(body[0].number, "bad indentation: blocks must be indented below the game line")
    else:
        raise ParseError(lines[0].number, f"expected a game class or block keyword, got {head[0]!r}")

    blocks: dict[str, tuple[int, list[_Line]]] = {}
    current: str | None = None
    block_indent = body[0].indent if body else 0
    for ln in body:
        if ln.indent == block_indent:
            keyword = ln.text.split()
            if keyword[0] not in BLOCKS or len(keyword) > 1:
                raise ParseError(ln.number, f"expected a block keyword, got {ln.text!r}")
            if keyword[0] in blocks:
                raise ParseError(ln.number, f"duplicate block {keyword[0]}")
            current = keyword[0]
            blocks[current] = (ln.number, [])
        elif ln.indent > block_indent and current is not None:
            blocks[current][1].append(ln)
        else:
            raise ParseError(ln.number, "bad indentation")

    for i, name in enumerate(BLOCKS):
        if name not in blocks:
            later = [blocks[b][0] for b in BLOCKS[i + 1 :] if b in blocks]
            raise ParseError(later[0] if later else last_line, f"missing block {name}")

    warnings: list[str] = []
    sprites, sprite_lines = _parse_sprites(blocks["SpriteSet"][1])
    mapping, mapping_lines = _parse_mapping(blocks["LevelMapping"][1], warnings)
    interactions = _parse_interactions(blocks["InteractionSet"][1])
    terminations = _parse_terminations(blocks["TerminationSet"][1])

    spec = GameSpec(
        game_params=game_params,
        sprites=sprites,
        level_mapping=mapping,
        interactions=[r for _, r in interactions],
        terminations=[t for _, t in terminations],
        warnings=warnings,
    )
    _check_references(spec, sprite_lines, mapping_lines, interactions, terminations)
    return spec


def _render_value(value: ParamValue) -> str:
    if isinstance(value, bool):
        return "True" if value else "False"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _render_params(params: dict[str, ParamValue]) -> str:
    return "".join(f" {k}={_render_value(v)}" for k, v in params.items())


def render_game(spec: GameSpec) -> str:
    """Render a GameSpec as canonical VGDL text.

    Children are written with their effective class and parameters, so reparsing the
    output yields a structurally identical GameSpec.
    """
    out = ["BasicGame" + _render_params(spec.game_params), "    SpriteSet"]
    for s in spec.sprites:
        indent = " " * (8 + 4 * len(spec.ancestors(s.name)))
        cls = f" {s.sprite_class.value}" if s.sprite_class is not None else ""
        out.append(f"{indent}{s.name} >{cls}{_render_params(s.params)}")

    out.append("    LevelMapping")
    for char, names in spec.level_mapping.items():
        out.append(f"        {char} > {' '.join(names)}")

    out.append("    InteractionSet")
    for r in spec.interactions:
        out.append(f"        {r.actor} {r.collider} > {r.effect}{_render_params(r.params)}")

    out.append("    TerminationSet")
    for t in spec.terminations:
        if t.kind is TerminationKind.SPRITE_COUNTER:
            stypes = f" stype={t.stypes[0]}"
        else:
            stypes = "".join(f" stype{i}={n}" for i, n in enumerate(t.stypes, start=1))
        win = "True" if t.win else "False"
        out.append(f"        {t.kind.value}{stypes} limit={t.limit} win={win}")
    return "\n".join(out) + "\n"


def background_char(spec: GameSpec) -> str:
    """Character of empty cells, also used to pad ragged level rows."""
    if "." in spec.level_mapping:
        return "."
    floor = spec.floor_sprite()
    for char, names in spec.level_mapping.items():
        if names == [floor]:
            return char
    return "."


def parse_level(spec: GameSpec, source: str) -> LevelGrid:
    """Parse a level layout.

    Parameters
    ----------
    spec : GameSpec
        Game whose level mapping applies.
    source : str
        Level text, one row per line.

    Returns
    -------
    LevelGrid
        Rows padded to equal width with the background character.

    Raises
    ------
    EmptyLevel
        If the text holds no rows.
    UnknownTile
        For a character absent from the level mapping.
    """
    raw = source.splitlines()
    while raw and not raw[-1].strip():
        raw.pop()
    while raw and not raw[0].strip():
        raw.pop(0)
    if not raw:
        raise EmptyLevel("Level has no rows.")

    bg = background_char(spec)
    width = max(len(row) for row in raw)
    cells = []
    warnings = []
    for r, row in enumerate(raw):
        if len(row) < width:
            msg = f"row {r} padded from {len(row)} to {width} columns"
            warnings.append(msg)
            logger.warning(msg)
            row = row + bg * (width - len(row))
        for c, ch in enumerate(row):
            if ch != bg and ch not in spec.level_mapping:
                raise UnknownTile(ch, r, c)
        cells.append(row)
    return LevelGrid(width=width, height=len(cells), cells=cells, source=raw, warnings=warnings)


def _read(path: str) -> str:
    with open(path, "r", encoding="utf-8") as f:
        return f.read()


def list_games(path: str | None = None) -> list[str]:
    """Names of the games found in ``path`` (the bundled games by default)."""
    base = path or games_dir()
    return sorted(
        d for d in os.listdir(base) if os.path.isfile(os.path.join(base, d, f"{d}.txt"))
    )


def available_levels(name: str, path: str | None = None) -> list[int]:
    base = os.path.join(path or games_dir(), name)
    return [k for k in range(5) if os.path.isfile(os.path.join(base, f"{name}_lvl{k}.txt"))]


def load_game(name: str, path: str | None = None) -> GameSpec:
    """Load ``<name>/<name>.txt`` and the optional ``<name>_strategy.txt``.

    Parameters
    ----------
    name : str
        Game identifier, e.g. ``"sokoban"``.
    path : str | None, optional
        Games directory, by default the bundled one (see :func:`.games_dir`).

    Raises
    ------
    UnknownGame
        If the game file does not exist.
    ParseError
        If the game file is malformed; the message names the file.
    """
    base = os.path.join(path or games_dir(), name)
    filename = os.path.join(base, f"{name}.txt")
    try:
        source = _read(filename)
    except FileNotFoundError:
        raise UnknownGame(f"Game description not found: {filename}")
    try:
        spec = parse_game(source)
    except ParseError as e:
        raise ParseError(e.line, f"{filename}: {e.message}")

    strategy = None
    strategy_file = os.path.join(base, f"{name}_strategy.txt")
    if os.path.isfile(strategy_file):
        strategy = _read(strategy_file).strip()
    return spec.model_copy(update={"name": name, "strategy": strategy})


def load_level(spec: GameSpec, level: int, path: str | None = None) -> LevelGrid:
    """Load level ``level`` of a game loaded with :func:`.load_game`.

    Raises
    ------
    FileNotFoundError
        If the level file does not exist.
    """
    filename = os.path.join(path or games_dir(), spec.name, f"{spec.name}_lvl{level}.txt")
    try:
        source = _read(filename)
    except FileNotFoundError:
        raise FileNotFoundError(f"Level file not found: {filename}")
    return parse_level(spec, source)
