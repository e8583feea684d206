"""Logging setup for EMT"""

import logging
import os
import sys
from typing import Optional

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
LEVEL_ENV = "EMT_LOG_LEVEL"


def setup_logging(level: Optional[str] = None) -> None:
    """루트 로거에 stderr 핸들러 하나를 설치 (level > EMT_LOG_LEVEL > INFO)"""
    name = (level or os.environ.get(LEVEL_ENV) or "INFO").upper()
    resolved = logging.getLevelName(name)
    if not isinstance(resolved, int):
        resolved = logging.INFO

    root = logging.getLogger()
    for handler in list(root.handlers):
        if getattr(handler, "_emt", False):
            root.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    handler._emt = True
    root.addHandler(handler)
    root.setLevel(resolved)
