import json
import os

import pandas as pd
import pytest

from gvgaiLlmTools.agents import Agent
from gvgaiLlmTools.llmClient import mock_server
from gvgaiLlmTools.metrics import meaningful_ratio
from gvgaiLlmTools.models import Action, AgentConfig, AgentKind, EpisodeOutcome, PromptOptions, RunConfig
from gvgaiLlmTools.runBatch import (
    ConfigError,
    OutputExists,
    compute_reports,
    emit_report,
    load_logs,
    recompute_reports,
    run_batch,
    run_episode,
    summarize,
)
from gvgaiLlmTools.vgdlParser import load_level

L, R, D, U = Action.LEFT, Action.RIGHT, Action.DOWN, Action.UP

HEADERS = [
    "=== Game Rules ===",
    "=== Available Actions ===",
    "=== Important Mechanics Notice ===",
    "=== Sprite Mapping ===",
    "=== Current State ===",
]

ESCAPE_SOLUTION = [
    {"pattern": r"^Avatar position: row=1, col=3$", "reply": "Push the box into the hole. \\\\ Action:3"},
    {"pattern": r"^Avatar position: row=2, col=3$", "reply": "Walk down. \\\\ Action:3"},
    {"pattern": r"^Avatar position: row=3, col=[3-6]$", "reply": "Head for the exit. \\\\ Action:2"},
]


def _config(**kwargs) -> RunConfig:
    defaults = {
        "games": ["sokoban"],
        "agents": [
            AgentConfig(kind=AgentKind.RANDOM),
            AgentConfig(kind=AgentKind.SCRIPTED, script=[R, R, R, D, L, L, L, D]),
        ],
        "max_steps": 30,
    }
    return RunConfig(**(defaults | kwargs))


class Broken(Agent):
    def act(self, state, spec):
        raise RuntimeError("broken")


def test_batch_protocol():
    reports, logs = run_batch(_config())
    assert len(logs) == 50
    assert len(reports) == 10
    assert [(r.level, r.agent) for r in reports] == [
        (k, a) for k in range(5) for a in ("random", "scripted")
    ]
    assert sorted({log.seed for log in logs}) == [0, 1, 2, 3, 4]
    assert all(r.episodes == 5 for r in reports)

    for k in range(5):
        rows = [r for r in reports if r.level == k]
        rewards = [log.total_reward for log in logs if log.level == k]
        assert {(r.r_min, r.r_max) for r in rows} == {(min(rewards), max(rewards))}


def test_scripted_solution_wins_level_zero():
    reports, logs = run_batch(_config(levels=[0], agents=[_config().agents[1]]))
    assert all(log.is_win and log.terminal_tick == 8 for log in logs)
    assert reports[0].win_rate == 1.0
    assert reports[0].wins == 5


def test_seed_base_shifts_episode_seeds():
    _, logs = run_batch(_config(levels=[1], episodes_per_level=2, seed_base=100))
    assert [log.seed for log in logs] == [100, 101, 100, 101]


def test_batch_is_reproducible(tmp_path):
    first, second = tmp_path / "first", tmp_path / "second"
    run_batch(_config(output_dir=str(first)))
    run_batch(_config(output_dir=str(second), parallelism=4))
    assert (first / "summary.json").read_bytes() == (second / "summary.json").read_bytes()
    assert (first / "summary.csv").read_bytes() == (second / "summary.csv").read_bytes()
    names = sorted(os.listdir(first / "logs"))
    assert names == sorted(os.listdir(second / "logs"))
    for name in names:
        assert (first / "logs" / name).read_bytes() == (second / "logs" / name).read_bytes()


def test_report_files(tmp_path):
    reports, logs = run_batch(_config(output_dir=str(tmp_path)))
    names = os.listdir(tmp_path / "logs")
    assert len(names) == 50
    assert "sokoban_lvl0_random_seed0.jsonl" in names

    lines = (tmp_path / "logs" / "sokoban_lvl0_scripted_seed3.jsonl").read_text().splitlines()
    header = json.loads(lines[0])
    assert header["outcome"] == "win"
    assert header["terminal_tick"] == len(lines) - 1 == 8
    assert json.loads(lines[1])["action"] == R

    summary = json.loads((tmp_path / "summary.json").read_text())
    assert len(summary["rows"]) == 10
    assert summary["aggregate"]["episodes"] == 50
    assert summary["aggregate"]["rows"] == 10
    assert {row["agent"] for row in summary["per_agent"]} == {"random", "scripted"}
    assert summary["per_game"][0]["episodes"] == 50

    table = pd.read_csv(tmp_path / "summary.csv")
    assert len(table) == 10
    assert list(table["overall_score"]) == pytest.approx([r.overall_score for r in reports])


def test_recompute_from_logs(tmp_path):
    reports, logs = run_batch(_config(output_dir=str(tmp_path)))
    loaded = load_logs(str(tmp_path / "logs"))
    assert len(loaded) == 50
    key = lambda log: (log.level, log.agent, log.seed)
    assert sorted(loaded, key=key) == sorted(logs, key=key)

    recomputed = recompute_reports(str(tmp_path))
    assert sorted(r.model_dump_json() for r in recomputed) == sorted(r.model_dump_json() for r in reports)


def test_output_guard(tmp_path):
    run_batch(_config(output_dir=str(tmp_path), levels=[0], episodes_per_level=1))
    with pytest.raises(OutputExists):
        run_batch(_config(output_dir=str(tmp_path), levels=[0], episodes_per_level=1))
    run_batch(_config(output_dir=str(tmp_path), levels=[0], episodes_per_level=1, overwrite=True))
    with pytest.raises(OutputExists):
        emit_report([], [], str(tmp_path))


def test_overwrite_drops_logs_of_the_earlier_batch(tmp_path):
    run_batch(_config(output_dir=str(tmp_path), levels=[0], episodes_per_level=2))
    assert len(load_logs(str(tmp_path / "logs"))) == 4
    reports, logs = run_batch(_config(output_dir=str(tmp_path), levels=[0], episodes_per_level=1, overwrite=True))
    loaded = load_logs(str(tmp_path / "logs"))
    assert len(loaded) == len(logs) == 2
    recomputed = recompute_reports(str(tmp_path), write=False)
    assert [r.episodes for r in recomputed] == [1, 1]
    assert sorted(r.model_dump_json() for r in recomputed) == sorted(r.model_dump_json() for r in reports)


@pytest.mark.parametrize(
    "kwargs, message",
    [
        ({"games": []}, "No game"),
        ({"agents": []}, "No agent"),
        ({"games": ["pacman"]}, "pacman"),
        ({"levels": [0, 7]}, "no level"),
        ({"agents": [AgentConfig(kind=AgentKind.RANDOM), AgentConfig(kind=AgentKind.RANDOM)]}, "unique"),
    ],
)
def test_config_errors(tmp_path, kwargs, message):
    out = tmp_path / "out"
    with pytest.raises(ConfigError, match=message):
        run_batch(_config(output_dir=str(out), **kwargs))
    assert not out.exists()


def test_llm_agent_needs_a_client(monkeypatch):
    for key in ("MODEL_BASE_URL", "MODEL_NAME"):
        monkeypatch.delenv(key, raising=False)
    monkeypatch.chdir(os.path.dirname(__file__))
    with pytest.raises(ValueError, match="MODEL_BASE_URL"):
        run_batch(_config(agents=[AgentConfig(kind=AgentKind.LLM)]))


def test_mock_llm_wins_escape(tmp_path):
    script = tmp_path / "script.json"
    script.write_text(json.dumps({"script": ESCAPE_SOLUTION, "default": "Action:0"}))
    out = tmp_path / "out"
    config = RunConfig(
        games=["escape"],
        levels=[0],
        agents=[AgentConfig(kind=AgentKind.LLM, name="mock")],
        episodes_per_level=1,
        max_steps=20,
        mock_script=str(script),
        output_dir=str(out),
        prompt=PromptOptions(coordinate_tagging=True),
    )
    reports, logs = run_batch(config)
    log = logs[0]
    assert log.outcome is EpisodeOutcome.WIN
    assert log.terminal_tick == 6
    assert [s.action for s in log.steps] == [D, D, R, R, R, R]
    assert not any(s.parse_failure for s in log.steps)
    assert all(s.prompt_chars for s in log.steps)
    assert reports[0].win_rate == 1.0

    exchanges = [json.loads(line) for line in (out / "transcript.jsonl").read_text().splitlines()]
    assert len(exchanges) == 6
    for exchange in exchanges:
        system, user = (m["content"] for m in exchange["messages"])
        text = system + "\n\n" + user
        positions = [text.index(h + "\n") for h in HEADERS]
        assert positions == sorted(positions)
        assert system.startswith("=== Game Rules ===\n")
        assert "Each line shows entity at (row, col)." in user


def test_malformed_replies_become_nil(caplog):
    client = mock_server([("never matches", "Action:2")], default_reply="I would rather not say.").client()
    config = RunConfig(
        games=["escape"],
        levels=[0],
        agents=[AgentConfig(kind=AgentKind.LLM)],
        episodes_per_level=1,
        max_steps=5,
    )
    with caplog.at_level("WARNING"):
        _, logs = run_batch(config, client=client)
    log = logs[0]
    assert log.outcome is EpisodeOutcome.TIMEOUT
    assert log.reason == "max_steps=5"
    assert log.failure is None
    assert [s.action for s in log.steps] == [Action.NIL] * 5
    assert all(s.parse_failure for s in log.steps)
    assert meaningful_ratio(log) == 0.0
    assert "no legal action" in caplog.text


def test_agent_errors_end_the_episode(bundled):
    spec = bundled["sokoban"]
    log = run_episode(spec, load_level(spec, 0), Broken("broken"), 0, 10)
    assert log.failure == "RuntimeError: broken"
    assert log.outcome is EpisodeOutcome.LOSS
    assert log.reason == "failure"
    assert log.steps == []

    reports = compute_reports([log])
    assert reports[0].excluded == 1
    assert reports[0].episodes == 0


def test_exhausted_endpoint_plays_nil(bundled, monkeypatch):
    import httpx

    from gvgaiLlmTools.agents import LLMAgent
    from gvgaiLlmTools.llmClient import ChatClient
    from gvgaiLlmTools.models import ModelEndpoint

    monkeypatch.setenv("MODEL_API_KEY", "secret")
    endpoint = ModelEndpoint(base_url="http://test.invalid/v1", model_name="m", max_retries=0)
    client = ChatClient(endpoint, transport=httpx.MockTransport(lambda request: httpx.Response(503)))
    spec = bundled["escape"]
    log = run_episode(spec, load_level(spec, 0), LLMAgent("llm", client), 0, 3)
    assert log.failure is None
    assert log.terminal_tick == 3
    assert all(s.action is Action.NIL and s.agent_failure for s in log.steps)


def test_summarize():
    reports, _ = run_batch(_config(levels=[0, 1]))
    summary = summarize(reports)
    assert summary["aggregate"]["rows"] == 4
    assert summary["aggregate"]["episodes"] == 20
    assert summary["aggregate"]["overall_win_rate"] == pytest.approx(
        sum(r.wins for r in reports) / 20
    )
    assert len(summary["per_agent"]) == 2
    assert summarize([]) == {"aggregate": {}, "per_game": [], "per_agent": []}
