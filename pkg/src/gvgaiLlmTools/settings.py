"""Environment and logging set-up.

Settings come from environment variables, optionally provided through a ``.env`` file
in the working directory:

==================== ==========================================================
Environment variable Description
==================== ==========================================================
MODEL_API_KEY        Bearer token of the model endpoint (name configurable)
MODEL_BASE_URL       Base URL of the chat-completion endpoint
MODEL_NAME           Model identifier
LOG_CONFIG           JSON file passed to :func:`logging.config.dictConfig`
GVGAI_GAMES_DIR      Directory replacing the bundled ``games`` directory
==================== ==========================================================
"""

import json
import os
from logging import config

from dotenv import load_dotenv

from .models import ModelEndpoint

__all__ = [
    "load_env",
    "setup_logging",
    "load_endpoint",
    "games_dir",
]


def load_env() -> None:
    load_dotenv(dotenv_path=os.path.join(os.getcwd(), ".env"))


def setup_logging() -> None:
    """Load ``.env`` and apply the logging configuration named by ``LOG_CONFIG``.

    Raises
    ------
    FileNotFoundError
        If ``LOG_CONFIG`` names a missing file.

    Examples
    --------
    .. literalinclude:: /py_examples/log_config.json
        :caption: log_config.json
        :language: json
    """
    load_env()

    if (log_config_file := os.getenv("LOG_CONFIG")) is not None:
        try:
            with open(os.path.join(os.getcwd(), log_config_file), "r") as f:
                log_conf = json.load(f)
            config.dictConfig(log_conf)
        except FileNotFoundError:
            raise FileNotFoundError(
                f"Specified log config file not found: {log_config_file}"
            )


def load_endpoint(**overrides) -> ModelEndpoint:
    """Build a :class:`.ModelEndpoint` from ``MODEL_BASE_URL`` and ``MODEL_NAME``.

    Parameters
    ----------
    overrides : Any
        Field values replacing the defaults, e.g. ``timeout_s``.

    Raises
    ------
    ValueError
        If a mandatory variable is not set.
    """
    load_env()
    mandatory_keys = {"MODEL_BASE_URL": "base_url", "MODEL_NAME": "model_name"}
    d = {}
    for key, field in mandatory_keys.items():
        if field in overrides:
            continue
        if os.getenv(key) is None:
            raise ValueError(f"Environment variable {key} is not set.")
        d[field] = os.getenv(key)
    return ModelEndpoint(**(d | overrides))


def games_dir() -> str:
    """Directory holding ``<name>/<name>.txt`` game folders."""
    if (path := os.getenv("GVGAI_GAMES_DIR")) is not None:
        return path
    return os.path.join(os.path.dirname(__file__), "games")
