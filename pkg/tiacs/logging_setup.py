# tiacs/logging_setup.py
from __future__ import annotations

import json
import logging
import time
from contextlib import contextmanager
from typing import Any, Dict, Iterator, Optional

from tiacs.core.config import get_settings

_EXTRA_KEYS = (
    "stage",
    "duration_ms",
    "rows",
    "person_id",
    "path",
    "workers",
)


class JSONFormatter(logging.Formatter):
    """
    Lightweight JSON formatter for pipeline logs.
    Includes the stage name and timing extras when present.
    """

    def __init__(self, app_name: Optional[str] = None):
        super().__init__()
        self.app_name = app_name

    def format(self, record: logging.LogRecord) -> str:
        base: Dict[str, Any] = {
            "ts": int(time.time() * 1000),
            "app": self.app_name,
            "level": record.levelname,
            "logger": record.name,
            "msg": record.getMessage(),
        }

        for k in _EXTRA_KEYS:
            if hasattr(record, k):
                base[k] = getattr(record, k)

        if record.exc_info:
            base["exc_info"] = self.formatException(record.exc_info)

        return json.dumps(base, separators=(",", ":"), default=str)


def setup_logging(level: Optional[str] = None, fmt: Optional[str] = None) -> None:
    """
    Configure root logging once. Explicit arguments (CLI flags) win over
    LOG_LEVEL / LOG_FORMAT from the environment.
    """
    if getattr(setup_logging, "_configured", False):  # type: ignore[attr-defined]
        if level:
            logging.getLogger().setLevel(level.upper())
        return

    cfg = get_settings()
    level = (level or cfg.log_level).upper()
    fmt = fmt or cfg.log_format

    handler = logging.StreamHandler()
    if fmt == "text":
        handler.setFormatter(
            logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s")
        )
    else:
        handler.setFormatter(JSONFormatter(cfg.app_name))

    root = logging.getLogger()
    root.handlers.clear()
    root.addHandler(handler)
    root.setLevel(level)

    # Tame chatty libs
    logging.getLogger("numexpr").setLevel("WARNING")
    logging.getLogger("matplotlib").setLevel("WARNING")
    logging.getLogger("fiona").setLevel("WARNING")

    setattr(setup_logging, "_configured", True)  # type: ignore[attr-defined]


@contextmanager
def stage_timer(
    stage: str,
    timings: Optional[Dict[str, float]] = None,
    logger: Optional[logging.Logger] = None,
) -> Iterator[None]:
    """
    Log start/finish of a pipeline stage with its wall time in milliseconds.
    When `timings` is given the duration (seconds) is recorded under `stage`.
    """
    log = logger or logging.getLogger("tiacs.stage")
    log.info("stage started", extra={"stage": stage})
    start = time.perf_counter()
    try:
        yield
    except Exception:
        duration_ms = int((time.perf_counter() - start) * 1000)
        log.error("stage failed", extra={"stage": stage, "duration_ms": duration_ms})
        raise
    duration = time.perf_counter() - start
    if timings is not None:
        timings[stage] = round(duration, 3)
    log.info(
        "stage finished",
        extra={"stage": stage, "duration_ms": int(duration * 1000)},
    )
