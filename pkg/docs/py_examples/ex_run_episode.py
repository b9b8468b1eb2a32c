from gvgaiLlmTools.agents import make_agent
from gvgaiLlmTools.models import AgentConfig, AgentKind
from gvgaiLlmTools.runBatch import run_episode
from gvgaiLlmTools.settings import setup_logging
from gvgaiLlmTools.vgdlParser import load_game, load_level

setup_logging()

spec = load_game("aliens")
agent = make_agent(AgentConfig(kind=AgentKind.MCTS, mcts_budget_ms=40), seed=1)
log = run_episode(spec, load_level(spec, 0), agent, seed=1, max_steps=2000)

print(log.outcome, log.terminal_tick, log.total_reward)
