import pytest

from gvgaiLlmTools.gameEngine import step
from gvgaiLlmTools.models import Action, InteractionRule, PromptOptions
from gvgaiLlmTools.state2text import (
    MECHANICS_NOTICE,
    AvatarDead,
    UntranslatableEffect,
    assemble_prompt,
    coordinate_tags,
    display_chars,
    serialize_state,
    translate_rules,
    verbose_grounding,
    wall_sprites,
)

from conftest import BUNDLED_GAMES

HEADERS = [
    "=== Game Rules ===",
    "=== Available Actions ===",
    "=== Important Mechanics Notice ===",
    "=== Sprite Mapping ===",
    "=== Current State ===",
]


def _assert_headers_in_order(text: str) -> None:
    positions = [text.find(h + "\n") for h in HEADERS]
    assert all(p >= 0 for p in positions)
    assert positions == sorted(positions)
    assert all(text.count(h) == 1 for h in HEADERS)


@pytest.mark.parametrize("name", BUNDLED_GAMES)
def test_prompt_sections_in_order(level0, name):
    state = level0(name)
    bundle = assemble_prompt(state.spec, state, PromptOptions(coordinate_tagging=True, verbose_grounding=True))
    _assert_headers_in_order(bundle.text)
    assert bundle.system_text.startswith("=== Game Rules ===\nGame rules in natural language:\n")
    assert bundle.user_text.startswith("=== Sprite Mapping ===\n")
    assert bundle.text.index("Each line shows entity at (row, col).") > bundle.text.index("=== Current State ===")
    assert bundle.text.endswith("\\\\ Action:<action number>")


def test_prompt_core_sections_only(level0):
    state = level0("sokoban")
    bundle = assemble_prompt(state.spec, state)
    assert bundle.coordinate_lines == []
    assert bundle.grounding_text is None
    assert "row=" not in bundle.user_text.replace(bundle.avatar_position_line, "")
    assert bundle.avatar_position_line == "Avatar position: row=2, col=2"
    assert bundle.action_text == "0: ACTION_NIL\n1: ACTION_LEFT\n2: ACTION_RIGHT\n3: ACTION_DOWN\n4: ACTION_UP"
    assert bundle.mechanics_notice == MECHANICS_NOTICE
    assert "=== Important Mechanics Notice ===\n" + MECHANICS_NOTICE in bundle.system_text


def test_prompt_with_both_options(level0):
    state = level0("zelda")
    bundle = assemble_prompt(state.spec, state, PromptOptions(coordinate_tagging=True, verbose_grounding=True))
    assert bundle.coordinate_lines
    assert "The cell up of the avatar" in bundle.grounding_text
    assert "5: ACTION_USE" in bundle.action_text


def test_prompt_is_deterministic(level0):
    options = PromptOptions(coordinate_tagging=True, verbose_grounding=True)
    a = level0("boulderdash", seed=4)
    b = level0("boulderdash", seed=4)
    assert assemble_prompt(a.spec, a, options).text == assemble_prompt(b.spec, b, options).text


def test_rules_are_identical_across_ticks(level0):
    state = level0("sokoban")
    before = assemble_prompt(state.spec, state)
    after = assemble_prompt(state.spec, step(state, Action.DOWN)[0])
    assert before.system_text == after.system_text
    assert before.state_text != after.state_text
    assert before.avatar_position_line != after.avatar_position_line


@pytest.mark.parametrize("name", BUNDLED_GAMES)
def test_map_matches_grid_and_mapping(level0, name):
    state = level0(name)
    text, mapping = serialize_state(state)
    rows = text.split("\n")
    assert len(rows) == state.height
    assert all(len(row) == state.width for row in rows)
    assert set(text) - {"\n"} <= set(mapping.values())


def test_boulderdash_characters(bundled):
    chars = display_chars(bundled["boulderdash"])
    assert chars["avatar"] == "a"
    assert chars["wall"] == "b"
    assert chars["diamond"] == "%"
    assert chars["dirt"] == "&"
    assert chars["crab"] == "$"
    assert chars["background"] == "."
    assert len(set(chars.values())) == len(chars)


def test_transformed_sprites_get_their_own_character(bundled):
    chars = display_chars(bundled["zelda"])
    assert chars["nokey"] == "A"
    assert chars["withkey"] not in (chars["nokey"], ".")
    assert chars["sword"] not in bundled["zelda"].level_mapping


def test_avatar_alone_on_floor(start, room):
    state = start(room, "...\n.A.\n...")
    text, mapping = serialize_state(state)
    assert text.split("\n")[1] == ".A."
    assert mapping["avatar"] == "A"
    assert mapping["floor"] == "."


def test_top_sprite_is_shown(start, key_room):
    state = start(key_room, "wwwww\nw.K.w\nwwwww")
    text, _ = serialize_state(state)
    assert text.split("\n")[1] == "w.A.w"


def test_empty_cells(start):
    bare = "\n".join(
        [
            "BasicGame",
            "    SpriteSet",
            "        wall > Immovable",
            "        avatar > MovingAvatar",
            "    LevelMapping",
            "        w > wall",
            "        A > avatar",
            "    InteractionSet",
            "        avatar wall > stepBack",
            "    TerminationSet",
        ]
    )
    state = start(bare, "wwww\nwA.w\nwwww")
    text, mapping = serialize_state(state)
    assert text.split("\n")[1] == "wA.w"
    assert mapping == {"wall": "w", "avatar": "A", "(empty)": "."}


def test_no_empty_cells_over_floor(level0):
    _, mapping = serialize_state(level0("aliens"))
    assert "(empty)" not in mapping


def test_coordinate_line_of_avatar(start, bundled):
    state = start(bundled["boulderdash"], "bbbbb\nb&&ab\nbbbbb")
    lines = coordinate_tags(state)
    assert lines == [
        "row=1, col=1 -> & (dirt)",
        "row=1, col=2 -> & (dirt)",
        "row=1, col=3 -> a (avatar)",
    ]


def test_coordinate_lines_of_empty_interior(start, room):
    state = start(room, "wwwww\nw...w\nw.A.w\nwwwww")
    assert coordinate_tags(state) == ["row=2, col=2 -> A (avatar)"]


def test_coordinate_lines_of_shared_cell(start, key_room):
    state = start(key_room, "wwwww\nw.K.w\nwwwww")
    assert coordinate_tags(state) == ["row=1, col=2 -> k (key)", "row=1, col=2 -> A (avatar)"]


def test_coordinate_lines_keep_border_sprites_that_are_not_walls(start, key_room, goal_or_trap):
    state = start(key_room, "wwwww\nw.A.k\nwwwww")
    assert coordinate_tags(state) == ["row=1, col=2 -> A (avatar)", "row=1, col=4 -> k (key)"]
    assert wall_sprites(state) == {"wall"}

    state = start(goal_or_trap, "ttt\ntAg\nttt")
    names = [line.rsplit(" (", 1)[1].rstrip(")") for line in coordinate_tags(state)]
    assert names == ["trap"] * 4 + ["avatar", "goal"] + ["trap"] * 3
    assert wall_sprites(state) == set()


def test_walls_must_block_every_avatar_form(level0):
    assert wall_sprites(level0("zelda")) == {"wall"}
    assert wall_sprites(level0("realsokoban")) == {"wall", "boxin"}


def test_coordinate_lines_agree_with_map(level0):
    state = level0("zelda")
    text, _ = serialize_state(state)
    rows = text.split("\n")
    chars = display_chars(state.spec)
    for line in coordinate_tags(state):
        pos, _, rest = line.partition(" -> ")
        r, c = (int(part.split("=")[1]) for part in pos.split(", "))
        name = rest.split(" (")[1].rstrip(")")
        assert rest[0] == chars[name]
        assert rows[r][c] == chars[name] or rows[r][c] in chars.values()


def test_grounding_names_neighbours(start, key_room):
    state = start(key_room, "wwwww\nw.K.w\nw...w\nwwwww")
    assert verbose_grounding(state).split("\n") == [
        "The cell up of the avatar (row=0, col=2) is wall.",
        "The cell down of the avatar (row=2, col=2) is floor.",
        "The cell left of the avatar (row=1, col=1) is floor.",
        "The cell right of the avatar (row=1, col=3) is floor.",
    ]


def test_grounding_in_corner(start, room):
    lines = verbose_grounding(start(room, "A..\n...")).split("\n")
    assert lines[0] == "The cell up of the avatar is boundary."
    assert lines[2] == "The cell left of the avatar is boundary."
    assert sum("boundary" in line for line in lines) == 2


def test_grounding_names_key_on_the_right(start, key_room):
    state = start(key_room, "wwwww\nw.Akw\nwwwww")
    assert verbose_grounding(state).split("\n")[3] == "The cell right of the avatar (row=1, col=3) is key."
    assert "row=1, col=3 -> k (key)" in coordinate_tags(state)


def test_grounding_needs_an_avatar(start, goal_or_trap):
    dead = step(start(goal_or_trap, "ttt\ntAg\nttt"), Action.LEFT)[0]
    with pytest.raises(AvatarDead):
        verbose_grounding(dead)
    bundle = assemble_prompt(dead.spec, dead, PromptOptions(verbose_grounding=True))
    assert bundle.grounding_text is None
    assert bundle.avatar_position_line == "Avatar position: none"


def test_rule_sentences(bundled, key_room):
    sokoban = translate_rules(bundled["sokoban"])
    assert "- The game is won when no box remains." in sokoban
    assert "- The game is lost after 2000 ticks." in sokoban
    assert "pushed one cell in the same direction" in sokoban
    assert "This gives 1 point." in sokoban
    assert "**Genre:** This is a puzzle game" in sokoban

    key = translate_rules(key_room)
    sentence = next(line for line in key.split("\n") if line.startswith("- If the key"))
    assert "touches" in sentence and "disappears" in sentence


def test_rule_text_layout(bundled):
    text = translate_rules(bundled["zelda"])
    lines = text.split("\n")
    assert lines[:3] == ["Game rules in natural language:", "", "# Game Analysis"]
    assert "**Mechanics:**" in lines
    assert "**Strategy Suggestions:**" in lines
    assert "If the nokey touches a key, the nokey turns into a withkey. This gives 1 point." in text
    assert "If the enemy touches a sword, the enemy disappears. This gives 2 points." in text
    assert "This costs 1 point." in text


def test_rules_without_interactions(key_room):
    spec = key_room.model_copy(update={"interactions": []})
    text = translate_rules(spec)
    assert "Interactions" not in text
    assert "- The game is won when no key remains." in text
    assert "- The game is lost if the avatar is destroyed." in text


def test_multi_sprite_termination(bundled):
    text = translate_rules(bundled["aliens"])
    assert "- The game is won when no portal and no alien remain." in text
    assert "the edge of the screen" in text


def test_untranslatable_effect(key_room):
    spec = key_room.model_copy(
        update={"interactions": [InteractionRule(actor="avatar", collider="wall", effect="explode")]}
    )
    with pytest.raises(UntranslatableEffect):
        translate_rules(spec)
