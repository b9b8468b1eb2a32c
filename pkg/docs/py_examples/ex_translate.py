from gvgaiLlmTools.gameEngine import init_state
from gvgaiLlmTools.models import PromptOptions
from gvgaiLlmTools.state2text import assemble_prompt
from gvgaiLlmTools.vgdlParser import load_game, load_level

spec = load_game("zelda")
state = init_state(spec, load_level(spec, 0), seed=0)

bundle = assemble_prompt(spec, state, PromptOptions(coordinate_tagging=True))
print(bundle.system_text)
print(bundle.user_text)
