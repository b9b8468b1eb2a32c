import hashlib

import pytest

from gvgaiLlmTools.agents import RandomAgent, ScriptedAgent
from gvgaiLlmTools.gameEngine import (
    NoAvatar,
    Outcome,
    SteppedTerminal,
    clone,
    init_state,
    legal_actions,
    step,
)
from gvgaiLlmTools.models import Action
from gvgaiLlmTools.runBatch import run_episode
from gvgaiLlmTools.vgdlParser import load_level, parse_level

from conftest import BUNDLED_GAMES

L, R, D, U = Action.LEFT, Action.RIGHT, Action.DOWN, Action.UP

OPEN = "wwwww\nw...w\nw.A.w\nw...w\nwwwww"


def _play(state, actions):
    deltas = []
    for a in actions:
        state, delta, _ = step(state, a)
        deltas.append(delta)
    return state, deltas


def test_init_state(level0):
    state = level0("sokoban", seed=7)
    assert state.outcome is Outcome.ONGOING
    assert state.score == 0
    assert state.tick == 0
    assert state.avatar.pos == (2, 2)
    assert state == level0("sokoban", seed=7)


def test_level_without_avatar(bundled):
    spec = bundled["sokoban"]
    with pytest.raises(NoAvatar):
        init_state(spec, parse_level(spec, "www\nw.w\nwww"), 0)


def test_move_onto_floor(start, room):
    state = start(room, OPEN)
    nxt, delta, changed = step(state, R)
    assert nxt.avatar.pos == (2, 3)
    assert delta == 0
    assert changed
    assert nxt.tick == 1


def test_move_into_wall(start, room):
    state = start(room, OPEN)
    state = step(state, R)[0]
    nxt, delta, changed = step(state, R)
    assert nxt.avatar.pos == (2, 3)
    assert delta == 0
    assert not changed


def test_push_box_into_hole(bundled):
    spec = bundled["sokoban"]
    state = init_state(spec, parse_level(spec, "A10."), 0)
    nxt, delta, changed = step(state, R)
    assert nxt.avatar.pos == (0, 1)
    assert not any(s.name == "box" for s in nxt.sprites.values())
    assert delta == 1
    assert changed
    assert nxt.outcome is Outcome.WIN


def test_push_against_wall_is_undone(bundled):
    spec = bundled["sokoban"]
    state = init_state(spec, parse_level(spec, "A1w"), 0)
    nxt, delta, changed = step(state, R)
    assert nxt.avatar.pos == (0, 0)
    assert [s.pos for s in nxt.sprites.values() if s.name == "box"] == [(0, 1)]
    assert not changed


def test_nil_changes_nothing_in_static_game(level0):
    state = level0("sokoban")
    nxt, delta, changed = step(state, Action.NIL)
    assert not changed
    assert delta == 0
    assert nxt.sprites == state.sprites


def test_step_does_not_modify_its_input(level0):
    state = level0("zelda", seed=3)
    before = state.snapshot()
    step(state, L)
    assert state.snapshot() == before


def test_clone_is_independent(level0):
    state = level0("aliens", seed=5)
    copy = clone(state)
    assert copy == state
    moved = step(copy, L)[0]
    assert moved != state
    assert state == level0("aliens", seed=5)
    assert step(state, Action.USE)[0] == step(clone(state), Action.USE)[0]


def test_clone_of_terminal_state(bundled):
    spec = bundled["sokoban"]
    won = step(init_state(spec, parse_level(spec, "A10."), 0), R)[0]
    copy = clone(won)
    assert copy.outcome is Outcome.WIN
    with pytest.raises(SteppedTerminal):
        step(copy, L)


def test_sokoban_scripted_solution(level0):
    state, deltas = _play(level0("sokoban"), [R, R, R, D, L, L, L, D])
    assert state.outcome is Outcome.WIN
    assert state.tick == 8
    assert state.score == 2 == sum(deltas)
    assert state.reason == "SpriteCounter(box) limit=0"


def test_escape_scripted_solution(level0):
    state = level0("escape")
    positions = []
    for a in [D, D, R, R, R, R]:
        positions.append(state.avatar.pos)
        state = step(state, a)[0]
    assert positions == [(1, 3), (2, 3), (3, 3), (3, 4), (3, 5), (3, 6)]
    assert state.outcome is Outcome.WIN
    assert state.tick == 6
    assert state.reason == "SpriteCounter(exit) limit=0"


def test_escape_hole_kills_avatar(bundled):
    spec = bundled["escape"]
    state = init_state(spec, parse_level(spec, "wwwww\nwAhxw\nwwwww"), 0)
    nxt = step(state, R)[0]
    assert nxt.avatar is None
    assert nxt.outcome is Outcome.LOSS


def test_realsokoban_box_locks_on_target(bundled):
    spec = bundled["realsokoban"]
    state = init_state(spec, parse_level(spec, "A10.1"), 0)
    nxt, delta, _ = step(state, R)
    names = {s.pos: s.name for s in nxt.sprites.values() if s.name in ("box", "boxin")}
    assert names[(0, 2)] == "boxin"
    assert delta == 1
    assert nxt.outcome is Outcome.ONGOING


def test_legal_actions_follow_avatar_class(level0):
    moving = {Action.NIL, L, R, D, U}
    assert legal_actions(level0("sokoban")) == moving
    assert legal_actions(level0("zelda")) == moving | {Action.USE}
    assert legal_actions(level0("boulderdash")) == moving | {Action.USE}
    assert legal_actions(level0("aliens")) == {Action.NIL, L, R, Action.USE}


def test_legal_actions_of_terminal_state(bundled):
    spec = bundled["sokoban"]
    won = step(init_state(spec, parse_level(spec, "A10."), 0), R)[0]
    assert legal_actions(won) == {Action.NIL, L, R, D, U}


def test_illegal_action_acts_as_nil(level0):
    state = level0("sokoban")
    assert step(state, Action.USE)[0].sprites == step(state, Action.NIL)[0].sprites


def test_oriented_avatar_rotates_before_moving(level0):
    state = level0("zelda")
    assert state.avatar.pos == (5, 2)
    turned = step(state, U)[0]
    assert turned.avatar.pos == (5, 2)
    assert turned.avatar.orientation == (-1, 0)
    moved = step(turned, U)[0]
    assert moved.avatar.pos == (4, 2)


def test_sword_appears_in_front_of_avatar(level0):
    state = level0("zelda")
    nxt, _, changed = step(state, Action.USE)
    swords = [s.pos for s in nxt.sprites.values() if s.name == "sword"]
    assert swords == [(5, 3)]
    assert changed


def test_flak_avatar_shoots_up(level0):
    state = level0("aliens")
    row, col = state.avatar.pos
    nxt = step(state, Action.USE)[0]
    assert any(s.name == "sam" and s.col == col and s.row < row for s in nxt.sprites.values())


def test_score_is_sum_of_deltas(level0):
    state = level0("zelda", seed=11)
    total = 0.0
    agent = RandomAgent("random", 11)
    while state.outcome is Outcome.ONGOING and state.tick < 300:
        state, delta, _ = step(state, agent.act(state, state.spec))
        total += delta
    assert state.score == total


def test_outcome_never_changes(level0):
    state = level0("boulderdash", seed=2)
    agent = RandomAgent("random", 2)
    while state.outcome is Outcome.ONGOING and state.tick < 500:
        state = step(state, agent.act(state, state.spec))[0]
    if state.outcome is not Outcome.ONGOING:
        with pytest.raises(SteppedTerminal):
            step(state, Action.NIL)


@pytest.mark.parametrize("name", BUNDLED_GAMES)
def test_random_episode_is_reproducible(bundled, name):
    spec = bundled[name]
    level = load_level(spec, 0)
    digests = {
        hashlib.sha256(
            run_episode(spec, level, RandomAgent("random", 42), 42, 200).model_dump_json().encode()
        ).hexdigest()
        for _ in range(3)
    }
    assert len(digests) == 1


def test_scripted_episode_log(bundled):
    spec = bundled["escape"]
    log = run_episode(spec, load_level(spec, 0), ScriptedAgent("solution", [D, D, R, R, R, R]), 0, 100)
    assert log.is_win
    assert log.terminal_tick == 6
    assert log.total_reward == 1
    assert [s.avatar_pos_before for s in log.steps] == [(1, 3), (2, 3), (3, 3), (3, 4), (3, 5), (3, 6)]
    assert all(s.meaningful for s in log.steps)
