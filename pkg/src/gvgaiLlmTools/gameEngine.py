"""Deterministic tick-based VGDL engine.

One call to :func:`step` advances one tick:

1. the avatar applies the action (oriented avatars rotate first, then move),
2. every other sprite that existed at the start of the tick acts in instance-id
   order (missiles fly, NPCs wander, chase or flee, spawners spawn, flickers expire),
3. interaction rules are resolved in declaration order; within a rule, colliding
   pairs are resolved in ascending (actor id, collider id) order,
4. sprites left outside the grid are moved back to their previous cell,
5. termination rules are checked in declaration order. If none fires and the avatar
   was destroyed, the game is lost.

Two sprites collide when they share a cell after the movement phase. ``EOS`` is the
pseudo-collider of sprites outside the grid. All randomness comes from the state's
seeded generator.
"""

from dataclasses import dataclass, field, replace
from enum import StrEnum
from logging import getLogger
import copy

import numpy as np

from .models import (
    AVATAR_CLASSES,
    Action,
    GameSpec,
    LevelGrid,
    Position,
    SpriteClass,
    TerminationKind,
)
from .vgdlParser import EOS, ORIENTATIONS

__all__ = [
    "Outcome",
    "NoAvatar",
    "SteppedTerminal",
    "Sprite",
    "CompiledGame",
    "GameState",
    "DIRECTIONS",
    "init_state",
    "step",
    "legal_actions",
    "clone",
]

logger = getLogger(__name__)

DIRECTIONS: dict[Action, tuple[int, int]] = {
    Action.LEFT: (0, -1),
    Action.RIGHT: (0, 1),
    Action.DOWN: (1, 0),
    Action.UP: (-1, 0),
}
_MOVES = tuple(DIRECTIONS.values())
_STATIC = {
    SpriteClass.IMMOVABLE,
    SpriteClass.PASSIVE,
    SpriteClass.RESOURCE,
    SpriteClass.PORTAL,
    SpriteClass.DOOR,
}


class Outcome(StrEnum):
    ONGOING = "ongoing"
    WIN = "win"
    LOSS = "loss"


class NoAvatar(ValueError):
    pass


class SteppedTerminal(RuntimeError):
    pass


@dataclass(frozen=True, slots=True)
class Sprite:
    """Sprite instance. Instances are immutable; the engine replaces them on change."""

    id: int
    name: str
    row: int
    col: int
    orientation: tuple[int, int] = (0, 1)
    resources: tuple[tuple[str, int], ...] = ()
    born: int = 0
    spawned: int = 0

    @property
    def pos(self) -> Position:
        return (self.row, self.col)

    def resource(self, name: str) -> int:
        return dict(self.resources).get(name, 0)


class CompiledGame:
    """Lookup tables derived once from a :class:`.GameSpec` and shared by all states."""

    def __init__(self, spec: GameSpec) -> None:
        self.spec = spec
        self.defs = {s.name: s for s in spec.concrete_sprites()}
        self.classes = {n: s.sprite_class for n, s in self.defs.items()}
        self.params = {n: s.params for n, s in self.defs.items()}
        self.avatar_names = {n for n, c in self.classes.items() if c in AVATAR_CLASSES}
        self._expanded: dict[str, frozenset[str]] = {}

        self.rules = [
            (r, self.matching(r.actor), None if r.collider == EOS else self.matching(r.collider))
            for r in spec.interactions
        ]
        self.blockers: dict[str, set[str]] = {n: set() for n in self.defs}
        for r, actors, colliders in self.rules:
            if colliders is not None and r.effect in ("stepBack", "undoAll"):
                for name in actors:
                    self.blockers[name] |= colliders
        self.terminations = [
            (t, frozenset().union(*(self.matching(n) for n in t.stypes))) for t in spec.terminations
        ]

        avatar_class = spec.avatar_root().sprite_class
        actions = {Action.NIL, Action.LEFT, Action.RIGHT}
        if avatar_class is not SpriteClass.FLAK_AVATAR:
            actions |= {Action.DOWN, Action.UP}
        if avatar_class in (SpriteClass.SHOOT_AVATAR, SpriteClass.FLAK_AVATAR):
            actions.add(Action.USE)
        self.actions = frozenset(actions)

    def matching(self, name: str) -> frozenset[str]:
        """Concrete sprite names matched by a sprite or group name."""
        if name not in self._expanded:
            self._expanded[name] = frozenset(self.spec.expand(name))
        return self._expanded[name]

    def orientation(self, name: str) -> tuple[int, int] | None:
        value = self.params[name].get("orientation")
        return ORIENTATIONS[str(value)] if value is not None else None


@dataclass(eq=False)
class GameState:
    """World snapshot at one tick.

    Parameters
    ----------
    game : CompiledGame
        Rules of the game, shared between clones.
    height, width : int
        Grid size.
    sprites : dict[int, Sprite]
        Live sprite instances keyed by instance id, kept in ascending id order.
    rng : numpy.random.Generator
        Source of every random draw.
    tick : int
        Number of ticks played.
    score : float
        Accumulated ``scoreChange`` of fired interaction rules.
    outcome : Outcome
        Ongoing until a termination fires.
    reason : str
        Which condition ended the game.
    avatar_id : int | None
        Instance id of the avatar.
    next_id : int
        Id given to the next spawned sprite.
    """

    game: CompiledGame
    height: int
    width: int
    sprites: dict[int, Sprite]
    rng: np.random.Generator
    tick: int = 0
    score: float = 0.0
    outcome: Outcome = Outcome.ONGOING
    reason: str = ""
    avatar_id: int | None = None
    next_id: int = field(default=0)

    def __post_init__(self) -> None:
        self.sprites = dict(sorted(self.sprites.items()))

    @property
    def spec(self) -> GameSpec:
        return self.game.spec

    @property
    def avatar(self) -> Sprite | None:
        sprite = self.sprites.get(self.avatar_id) if self.avatar_id is not None else None
        if sprite is None or sprite.name not in self.game.avatar_names:
            return None
        return sprite

    @property
    def avatar_alive(self) -> bool:
        return self.avatar is not None

    @property
    def grid(self) -> list[list[list[Sprite]]]:
        """Per-cell sprite lists in ascending instance id."""
        cells: list[list[list[Sprite]]] = [[[] for _ in range(self.width)] for _ in range(self.height)]
        for sprite in self.sprites.values():
            if self.in_bounds(sprite.row, sprite.col):
                cells[sprite.row][sprite.col].append(sprite)
        return cells

    def in_bounds(self, row: int, col: int) -> bool:
        return 0 <= row < self.height and 0 <= col < self.width

    def clone(self) -> "GameState":
        return replace(self, sprites=dict(self.sprites), rng=copy.deepcopy(self.rng))

    def snapshot(self) -> tuple:
        """Hashable summary used for structural equality."""
        return (
            self.tick,
            self.score,
            self.outcome,
            self.reason,
            self.avatar_id,
            self.next_id,
            tuple(self.sprites.values()),
            repr(self.rng.bit_generator.state),
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GameState):
            return NotImplemented
        return self.game.spec == other.game.spec and self.snapshot() == other.snapshot()

    __hash__ = None  # type: ignore[assignment]


def init_state(spec: GameSpec, level: LevelGrid, seed: int) -> GameState:
    """Instantiate every mapped sprite of ``level``.

    Sprites are created row by row, and within a cell in mapping order, so that
    instance ids are stable.

    Parameters
    ----------
    spec : GameSpec
        Game rules.
    level : LevelGrid
        Level layout of the same game.
    seed : int
        Seed of the state's random generator.

    Raises
    ------
    NoAvatar
        If no cell places an avatar.
    """
    game = CompiledGame(spec)
    sprites: dict[int, Sprite] = {}
    for r, row in enumerate(level.cells):
        for c, ch in enumerate(row):
            for name in spec.level_mapping.get(ch, []):
                sid = len(sprites)
                sprites[sid] = Sprite(sid, name, r, c, game.orientation(name) or (0, 1))

    avatars = [s.id for s in sprites.values() if s.name in game.avatar_names]
    if not avatars:
        raise NoAvatar(f"Level of game {spec.name!r} places no avatar.")
    if len(avatars) > 1:
        logger.warning(f"Level of game {spec.name!r} places {len(avatars)} avatars, using id {avatars[0]}")

    return GameState(
        game=game,
        height=level.height,
        width=level.width,
        sprites=sprites,
        rng=np.random.default_rng(seed),
        avatar_id=avatars[0],
        next_id=len(sprites),
    )


def _speed_gate(speed: float, k: int) -> bool:
    """Whether the ``k``-th action of a sprite with fractional speed is a move."""
    milli = round(speed * 1000)
    if milli >= 1000:
        return True
    return ((k + 1) * milli) // 1000 > (k * milli) // 1000


class _Tick:
    def __init__(self, state: GameState) -> None:
        self.s = state
        self.g = state.game
        self.t = state.tick
        self.prev: dict[int, Position] = {}
        self.mutated = False
        self._index: dict[Position, list[int]] | None = None

    # -- primitives

    def index(self) -> dict[Position, list[int]]:
        if self._index is None:
            self._index = {}
            for sid, sprite in self.s.sprites.items():
                self._index.setdefault(sprite.pos, []).append(sid)
        return self._index

    def move_to(self, sid: int, row: int, col: int, orientation: tuple[int, int] | None = None) -> None:
        sprite = self.s.sprites[sid]
        self.prev.setdefault(sid, sprite.pos)
        self.s.sprites[sid] = replace(
            sprite, row=row, col=col, orientation=orientation or sprite.orientation
        )
        self._index = None

    def move(self, sid: int, d: tuple[int, int]) -> None:
        sprite = self.s.sprites[sid]
        self.move_to(sid, sprite.row + d[0], sprite.col + d[1], d)

    def restore(self, sid: int) -> bool:
        sprite = self.s.sprites.get(sid)
        if sprite is None or sid not in self.prev or sprite.pos == self.prev[sid]:
            return False
        row, col = self.prev[sid]
        self.s.sprites[sid] = replace(sprite, row=row, col=col)
        self._index = None
        return True

    def kill(self, sid: int) -> None:
        if self.s.sprites.pop(sid, None) is not None:
            self.mutated = True
            self._index = None

    def spawn(self, name: str, row: int, col: int, orientation: tuple[int, int]) -> int | None:
        if not self.s.in_bounds(row, col):
            return None
        if self.g.params[name].get("singleton") is True and any(
            s.name == name for s in self.s.sprites.values()
        ):
            return None
        sid = self.s.next_id
        self.s.next_id += 1
        self.s.sprites[sid] = Sprite(
            sid, name, row, col, self.g.orientation(name) or orientation, born=self.t
        )
        self.mutated = True
        self._index = None
        return sid

    def set_resource(self, sid: int, name: str, value: int) -> None:
        sprite = self.s.sprites[sid]
        resources = dict(sprite.resources) | {name: value}
        self.s.sprites[sid] = replace(sprite, resources=tuple(sorted(resources.items())))
        self.mutated = True

    # -- phases

    def run(self, action: Action) -> bool:
        movers = list(self.s.sprites)
        avatar = self.s.avatar
        if avatar is not None:
            self.avatar_phase(avatar, action)
        for sid in movers:
            sprite = self.s.sprites.get(sid)
            if sprite is None or sid == self.s.avatar_id:
                continue
            self.npc_phase(sprite)
        self.resolve()
        self.settle()
        self.s.tick += 1
        self.terminate()
        return self.mutated or any(
            sid in self.s.sprites and self.s.sprites[sid].pos != pos for sid, pos in self.prev.items()
        )

    def avatar_phase(self, avatar: Sprite, action: Action) -> None:
        cls = self.g.classes[avatar.name]
        if action in DIRECTIONS:
            if cls is SpriteClass.FLAK_AVATAR and action in (Action.UP, Action.DOWN):
                return
            d = DIRECTIONS[action]
            if cls in (SpriteClass.ORIENTED_AVATAR, SpriteClass.SHOOT_AVATAR) and avatar.orientation != d:
                self.s.sprites[avatar.id] = replace(avatar, orientation=d)
                return
            self.move(avatar.id, d)
        elif action is Action.USE and cls in (SpriteClass.SHOOT_AVATAR, SpriteClass.FLAK_AVATAR):
            d = DIRECTIONS[Action.UP] if cls is SpriteClass.FLAK_AVATAR else avatar.orientation
            self.spawn(str(self.g.params[avatar.name]["stype"]), avatar.row + d[0], avatar.col + d[1], d)

    def npc_phase(self, sprite: Sprite) -> None:
        cls = self.g.classes[sprite.name]
        if cls in _STATIC or cls in AVATAR_CLASSES:
            return
        params = self.g.params[sprite.name]
        age = self.t - sprite.born
        if cls is SpriteClass.FLICKER:
            if age >= int(params.get("limit", 1)):
                self.kill(sprite.id)
            return

        period = int(params.get("cooldown", 0)) + 1
        if age % period:
            return
        rng = self.s.rng

        if cls is SpriteClass.SPAWN_POINT:
            if rng.random() < float(params.get("prob", 1.0)):
                self.spawn_from(sprite, params)
            return

        moving = _speed_gate(float(params.get("speed", 1.0)), age // period)
        if cls in (SpriteClass.MISSILE, SpriteClass.BOMBER):
            if moving:
                self.move(sprite.id, sprite.orientation)
        elif cls is SpriteClass.RANDOM_NPC:
            if moving:
                self.move(sprite.id, _MOVES[int(rng.integers(len(_MOVES)))])
        elif cls in (SpriteClass.CHASER, SpriteClass.FLEEING):
            if moving:
                self.pursue(sprite, str(params.get("stype", "avatar")), cls is SpriteClass.FLEEING)

        if cls is SpriteClass.BOMBER and rng.random() < float(params.get("prob", 1.0)):
            bomber = self.s.sprites[sprite.id]
            self.spawn(str(params["stype"]), bomber.row, bomber.col, bomber.orientation)

    def spawn_from(self, sprite: Sprite, params: dict) -> None:
        if self.spawn(str(params["stype"]), sprite.row, sprite.col, sprite.orientation) is None:
            return
        count = sprite.spawned + 1
        self.s.sprites[sprite.id] = replace(sprite, spawned=count)
        total = int(params.get("total", 0))
        if total and count >= total:
            self.kill(sprite.id)

    def pursue(self, sprite: Sprite, stype: str, flee: bool) -> None:
        names = self.g.matching(stype)
        targets = [s for s in self.s.sprites.values() if s.name in names]
        if not targets:
            return
        target = min(targets, key=lambda s: (abs(s.row - sprite.row) + abs(s.col - sprite.col), s.id))
        dists = [abs(target.row - sprite.row - d[0]) + abs(target.col - sprite.col - d[1]) for d in _MOVES]
        best = max(dists) if flee else min(dists)
        candidates = [d for d, dist in zip(_MOVES, dists) if dist == best]
        d = candidates[int(self.s.rng.integers(len(candidates)))] if len(candidates) > 1 else candidates[0]
        self.move(sprite.id, d)

    def resolve(self) -> None:
        for rule, actors, colliders in self.g.rules:
            if colliders is None:
                outside = [
                    sid
                    for sid, s in self.s.sprites.items()
                    if s.name in actors and not self.s.in_bounds(s.row, s.col)
                ]
                for sid in outside:
                    sprite = self.s.sprites.get(sid)
                    if sprite is not None and not self.s.in_bounds(sprite.row, sprite.col):
                        self.apply(rule, sprite, None)
                continue

            index = self.index()
            pairs = [
                (sid, oid)
                for sid, s in self.s.sprites.items()
                if s.name in actors
                for oid in index.get(s.pos, ())
                if oid != sid and self.s.sprites[oid].name in colliders
            ]
            for a, b in pairs:
                sa, sb = self.s.sprites.get(a), self.s.sprites.get(b)
                if sa is None or sb is None or sa.pos != sb.pos:
                    continue
                if sa.name not in actors or sb.name not in colliders:
                    continue
                self.apply(rule, sa, sb)

    def settle(self) -> None:
        for sid, sprite in list(self.s.sprites.items()):
            if not self.s.in_bounds(sprite.row, sprite.col):
                if not self.restore(sid):
                    self.kill(sid)

    def terminate(self) -> None:
        for term, names in self.g.terminations:
            if term.kind is TerminationKind.TIMEOUT:
                hit = self.s.tick >= term.limit
            else:
                hit = sum(1 for s in self.s.sprites.values() if s.name in names) <= term.limit
            if hit:
                self.s.outcome = Outcome.WIN if term.win else Outcome.LOSS
                stypes = ",".join(term.stypes)
                self.s.reason = f"{term.kind.value}({stypes}) limit={term.limit}"
                return
        if self.s.avatar is None:
            self.s.outcome = Outcome.LOSS
            self.s.reason = "avatar destroyed"

    # -- effects

    def apply(self, rule, a: Sprite, b: Sprite | None) -> None:
        applied = getattr(self, f"_{rule.effect}")(rule, a, b)
        if applied and rule.score_change:
            self.s.score += rule.score_change

    def _stepBack(self, rule, a: Sprite, b: Sprite | None) -> bool:
        return self.restore(a.id)

    def _killSprite(self, rule, a: Sprite, b: Sprite | None) -> bool:
        self.kill(a.id)
        return True

    def _killBoth(self, rule, a: Sprite, b: Sprite | None) -> bool:
        self.kill(a.id)
        if b is not None:
            self.kill(b.id)
        return True

    def _transformTo(self, rule, a: Sprite, b: Sprite | None) -> bool:
        name = str(rule.params["stype"])
        if a.name == name:
            return False
        self.s.sprites[a.id] = replace(a, name=name)
        self.mutated = True
        return True

    def _bounceForward(self, rule, a: Sprite, b: Sprite | None) -> bool:
        if b is None or b.id not in self.prev:
            return False
        pr, pc = self.prev[b.id]
        d = (b.row - pr, b.col - pc)
        if d == (0, 0):
            return False
        dest = (a.row + d[0], a.col + d[1])
        blockers = self.g.blockers[a.name]
        blocked = not self.s.in_bounds(*dest) or any(
            self.s.sprites[oid].name in blockers for oid in self.index().get(dest, ()) if oid != a.id
        )
        if blocked:
            self.restore(a.id)
            self.restore(b.id)
        else:
            self.move_to(a.id, *dest)
        return True

    def _undoAll(self, rule, a: Sprite, b: Sprite | None) -> bool:
        for sid in list(self.prev):
            self.restore(sid)
        return True

    def _collectResource(self, rule, a: Sprite, b: Sprite | None) -> bool:
        if b is None:
            return False
        params = self.g.params[a.name]
        current = b.resource(a.name)
        limit = params.get("limit")
        if limit is not None and current >= int(limit):
            return False
        value = current + int(params.get("value", 1))
        self.set_resource(b.id, a.name, value if limit is None else min(value, int(limit)))
        self.kill(a.id)
        return True

    def _changeResource(self, rule, a: Sprite, b: Sprite | None) -> bool:
        name = str(rule.params["resource"])
        current = a.resource(name)
        value = max(0, current + int(rule.params["value"]))
        if value == current:
            return False
        self.set_resource(a.id, name, value)
        return True

    def _killIfHasLess(self, rule, a: Sprite, b: Sprite | None) -> bool:
        if a.resource(str(rule.params["resource"])) > int(rule.params["limit"]):
            return False
        self.kill(a.id)
        return True

    def _killIfOtherHasMore(self, rule, a: Sprite, b: Sprite | None) -> bool:
        if b is None or b.resource(str(rule.params["resource"])) < int(rule.params["limit"]):
            return False
        self.kill(a.id)
        return True

    def _killIfFromAbove(self, rule, a: Sprite, b: Sprite | None) -> bool:
        if b is None or b.id not in self.prev or b.row <= self.prev[b.id][0]:
            return False
        self.kill(a.id)
        return True

    def _turnAround(self, rule, a: Sprite, b: Sprite | None) -> bool:
        self.restore(a.id)
        sprite = self.s.sprites[a.id]
        reverse = (-sprite.orientation[0], -sprite.orientation[1])
        if self.s.in_bounds(sprite.row + 1, sprite.col):
            self.move_to(a.id, sprite.row + 1, sprite.col, reverse)
        else:
            self.s.sprites[a.id] = replace(sprite, orientation=reverse)
        return True

    def _reverseDirection(self, rule, a: Sprite, b: Sprite | None) -> bool:
        self.restore(a.id)
        sprite = self.s.sprites[a.id]
        self.s.sprites[a.id] = replace(sprite, orientation=(-sprite.orientation[0], -sprite.orientation[1]))
        return True

    def _teleportToExit(self, rule, a: Sprite, b: Sprite | None) -> bool:
        if b is None or "stype" not in self.g.params[b.name]:
            return False
        names = self.g.matching(str(self.g.params[b.name]["stype"]))
        exits = [s for s in self.s.sprites.values() if s.name in names]
        if not exits:
            return False
        self.move_to(a.id, *exits[0].pos)
        return True


def step(state: GameState, action: Action) -> tuple[GameState, float, bool]:
    """Advance one tick.

    Parameters
    ----------
    state : GameState
        Ongoing state. It is not modified.
    action : Action
        Avatar action. Actions outside :func:`legal_actions` act as NIL.

    Returns
    -------
    tuple[GameState, float, bool]
        Next state, score delta and whether any sprite was created, destroyed,
        transformed or moved, or a resource count changed.

    Raises
    ------
    SteppedTerminal
        If the state is already won or lost.
    """
    if state.outcome is not Outcome.ONGOING:
        raise SteppedTerminal(
            f"step called on a finished state (tick {state.tick}, outcome {state.outcome.value})"
        )
    action = Action(action)
    if action not in state.game.actions:
        action = Action.NIL
    nxt = state.clone()
    changed = _Tick(nxt).run(action)
    return nxt, nxt.score - state.score, changed


def legal_actions(state: GameState) -> frozenset[Action]:
    """Action set of the avatar class plus NIL, whatever the position or outcome."""
    return state.game.actions


def clone(state: GameState) -> GameState:
    """Independent copy, random generator included."""
    return state.clone()
