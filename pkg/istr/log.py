import logging
import sys
from typing import Optional

from istr import settings

LOG_FORMAT = "[%(asctime)s] [%(name)s] [%(levelname)s] %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"


def configure_logging(level: Optional[str] = None) -> None:
    """Install the stderr handler used by the CLI and the pipeline."""
    level = (level or settings.log_level()).upper()
    root = logging.getLogger("istr")
    root.setLevel(level)
    if not any(getattr(h, "_istr", False) for h in root.handlers):
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter(LOG_FORMAT, DATE_FORMAT))
        handler._istr = True
        root.addHandler(handler)
    for handler in root.handlers:
        handler.setLevel(level)
