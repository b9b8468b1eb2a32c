from gvgaiLlmTools.vgdlParser import load_game, load_level, render_game

spec = load_game("sokoban")
print(spec.avatar_root())
print(render_game(spec))

level = load_level(spec, 0)
print("\n".join(level.cells))
