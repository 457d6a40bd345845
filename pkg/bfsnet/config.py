"""
Configuration - environment defaults, run-config files and logging setup.
"""
import logging
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path

from dotenv import load_dotenv

from .errors import UsageError

# Load environment variables
load_dotenv()

# ============================================================================
# CONFIGURATION - OVERRIDE IN YOUR .env FILE
# ============================================================================
# BFSNET_SEED=0
# BFSNET_WORKERS=1
# BFSNET_LOG_LEVEL=INFO
# BFSNET_LM_BLOCK_SIZE=2048
# ============================================================================

DEFAULT_SEED = int(os.getenv("BFSNET_SEED", "0"))
DEFAULT_WORKERS = int(os.getenv("BFSNET_WORKERS", "1"))
LOG_LEVEL = os.getenv("BFSNET_LOG_LEVEL", "INFO")
LM_BLOCK_SIZE = int(os.getenv("BFSNET_LM_BLOCK_SIZE", "2048"))

LOG_FORMAT = "[%(asctime)s] [%(name)s] %(levelname)s: %(message)s"


def setup_logging(level=None):
    """
    Install the console handler used by every bfsnet logger.

    Args:
        level: Level name or number (default: BFSNET_LOG_LEVEL)
    """
    level = level or LOG_LEVEL
    if isinstance(level, str):
        level = logging.getLevelName(level.upper())
    root = logging.getLogger("bfsnet")
    if not root.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        root.addHandler(handler)
    root.setLevel(level)
    root.propagate = False


def load_run_config(path):
    """
    Read a TOML run configuration.

    Tables are named after CLI subcommands (``[train]``, ``[bench.rmse-snr]``)
    and keys after option names with dashes replaced by underscores, so the
    result can be used directly as click's ``default_map``.

    Args:
        path: Path to the TOML file

    Returns:
        Nested dictionary of defaults
    """
    path = Path(path)
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except FileNotFoundError as e:
        raise UsageError(f"config file not found: {path}") from e
    except tomllib.TOMLDecodeError as e:
        raise UsageError(f"config file {path} is not valid TOML: {e}") from e
    return _normalize_keys(data)


def _normalize_keys(table):
    result = {}
    for key, value in table.items():
        if isinstance(value, dict):
            # subcommand tables keep their dashed names
            result[key] = _normalize_keys(value)
        else:
            result[key.replace("-", "_")] = value
    return result
