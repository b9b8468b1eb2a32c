import json

from gvgaiLlmTools.models import RunConfig
from gvgaiLlmTools.runBatch import run_batch
from gvgaiLlmTools.settings import setup_logging

setup_logging()

with open("run_config.json", "r", encoding="utf-8") as f:
    config = RunConfig.model_validate(json.load(f))

reports, logs = run_batch(config)
reports.dump_json("reports.json")
