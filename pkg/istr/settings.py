"""Environment-backed settings.

Values come from the process environment, optionally seeded from a ``.env``
file in the working directory (see ``.env.example``).
"""

import os
from pathlib import Path

from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()


def threads() -> int:
    """Parallelism cap for per-sample work (``ISTR_THREADS``)."""
    raw = os.getenv("ISTR_THREADS", "1")
    try:
        value = int(raw)
    except ValueError:
        raise ValueError(f"ISTR_THREADS must be an integer, got {raw!r}")
    return max(1, value)


def log_level() -> str:
    return os.getenv("ISTR_LOG_LEVEL", "INFO")


def data_dir() -> Path:
    """Dataset cache directory (``ISTR_DATA_DIR``)."""
    return Path(os.getenv("ISTR_DATA_DIR", Path.home() / ".cache" / "istr")).expanduser()


def run_slow_tests() -> bool:
    return os.getenv("ISTR_RUN_SLOW", "0") == "1"
