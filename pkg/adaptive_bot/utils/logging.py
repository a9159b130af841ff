import logging
import logging.config
from contextlib import contextmanager
from typing import Any, Dict, Optional


PROGRESS_LOG_LEVEL = 15

CONSOLE_HANDLER_NAME = "console"


def _logging_config(log_path: Optional[str], console_level: int) -> Dict[str, Any]:
    handlers: Dict[str, Any] = {
        CONSOLE_HANDLER_NAME: {
            "level": console_level,
            "class": "logging.StreamHandler",
            "stream": "ext://sys.stdout",
            "formatter": "console",
        },
    }
    if log_path is not None:
        handlers["file"] = {
            "level": logging.DEBUG,
            "class": "logging.FileHandler",
            "filename": log_path,
            "formatter": "file",
        }

    return {
        "version": 1,
        "disable_existing_loggers": False,
        "formatters": {
            "console": {"format": "%(asctime)s: %(message)s", "datefmt": "%Y-%m-%d %H:%M:%S"},
            "file": {"format": "%(asctime)s %(name)-12s %(levelname)-10s %(message)s"},
        },
        "handlers": handlers,
        "root": {"handlers": list(handlers)},
    }


def set_up_logging(log_path: Optional[str] = None, console_level: int = logging.INFO) -> None:
    """Console logging at `console_level`, plus everything down to DEBUG into `log_path`."""
    logging.addLevelName(PROGRESS_LOG_LEVEL, "PROGRESS")
    logging.getLogger("").setLevel(logging.NOTSET)
    logging.config.dictConfig(_logging_config(log_path, console_level))


def _live_handlers():
    for handler_ref in list(logging._handlerList):  # type: ignore[attr-defined]
        handler = handler_ref()
        if handler is not None:
            yield handler


@contextmanager
def prefix_log_msgs(prefix: str):
    """Insert `prefix` in front of every message formatted while the context is active."""
    old_formats = {}
    for handler in _live_handlers():
        formatter = handler.formatter
        if formatter is None or formatter in old_formats:
            continue
        if not isinstance(formatter._style, logging.PercentStyle):
            raise ValueError(f"Cannot prefix messages of a {type(formatter._style).__name__}.")
        old_formats[formatter] = formatter._style._fmt
        formatter._style._fmt = old_formats[formatter].replace(
            "%(message)s", f"{prefix} %(message)s"
        )

    try:
        yield
    finally:
        for formatter, old_format in old_formats.items():
            formatter._style._fmt = old_format


@contextmanager
def restrict_console_log_level(log_level: int):
    console_handler = next(
        (h for h in _live_handlers() if h.get_name() == CONSOLE_HANDLER_NAME), None
    )
    if console_handler is None:
        yield
        return

    old_level = console_handler.level
    console_handler.setLevel(log_level)
    try:
        yield
    finally:
        console_handler.setLevel(old_level)


class FileLikeLogger:
    """Writable stream that forwards to a logger, e.g. as the `file` of a tqdm progress bar."""

    def __init__(self, logger: logging.Logger, level: int = PROGRESS_LOG_LEVEL):
        self._logger = logger
        self._level = level

    def write(self, s: str) -> None:
        message = s.strip()
        if message:
            self._logger.log(self._level, message)

    def writelines(self, lines) -> None:
        for line in lines:
            self.write(line)

    def flush(self) -> None:
        pass

    def close(self) -> None:
        pass

    def writable(self) -> bool:
        return True
