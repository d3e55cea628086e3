import logging
import sys
from typing import Union


LOG_FORMAT = "ts=%(asctime)s level=%(levelname)s logger=%(name)s msg=%(message)s"


def configure_logging(level: Union[int, str] = logging.INFO) -> None:
    """Configure single-line key=value logging on stderr for the whole package"""
    root = logging.getLogger("sqlsynth")
    root.setLevel(level)
    for handler in root.handlers:
        if getattr(handler, "_sqlsynth", False):
            # stderr may have been swapped since the last call
            handler.stream = sys.stderr
            return
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    handler._sqlsynth = True
    root.addHandler(handler)
