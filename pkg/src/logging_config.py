"""
Structured Logging Configuration
Uses loguru for console and JSON file logging, tagged with a per-run correlation id
"""
import sys
import uuid
import time
import functools
from contextvars import ContextVar
from loguru import logger

from .config import settings

# Context variable holding the id of the current run
correlation_id: ContextVar[str] = ContextVar("correlation_id", default="")


def get_correlation_id() -> str:
    """Get or generate the correlation ID of the current run."""
    cid = correlation_id.get()
    if not cid:
        cid = uuid.uuid4().hex[:12]
        correlation_id.set(cid)
    return cid


def new_run_id() -> str:
    """Start a new run: every record logged afterwards carries this id."""
    cid = uuid.uuid4().hex[:12]
    correlation_id.set(cid)
    return cid


def _inject_context(record) -> bool:
    record["extra"]["correlation_id"] = get_correlation_id()
    record["extra"].setdefault("module", record["name"])
    return True


def setup_logging(level: str = None):
    """Configure loguru logging with console and file sinks."""
    logger.remove()
    level = level or settings.log_level

    log_format = (
        "<green>{time:YYYY-MM-DD HH:mm:ss.SSS}</green> | "
        "<level>{level: <8}</level> | "
        "<cyan>{extra[module]}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> | "
        "{extra[correlation_id]} | "
        "<level>{message}</level>"
    )

    # Console sink
    logger.add(
        sys.stderr,
        format=log_format,
        level=level,
        colorize=True,
        filter=_inject_context,
    )

    # File sink with rotation
    try:
        logger.add(
            settings.log_file,
            format=log_format,
            level=level,
            rotation="10 MB",
            retention="7 days",
            compression="gz",
            serialize=True,
            filter=_inject_context,
        )
    except Exception:
        # If log directory isn't writable, skip file logging
        pass

    return logger


def get_logger(name: str = "gkin"):
    """Get a logger bound with a module name."""
    return logger.bind(module=name)


def timed(func=None, *, name: str = None):
    """Decorator to log execution time of a function.

    The elapsed seconds are bound to the record as ``elapsed_s`` so the JSON
    sink keeps them as a number.
    """
    def decorator(fn):
        label = name or f"{fn.__module__}.{fn.__qualname__}"

        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            start = time.perf_counter()
            try:
                result = fn(*args, **kwargs)
            except Exception as e:
                elapsed = time.perf_counter() - start
                get_logger("timing").bind(label=label, elapsed_s=elapsed).error(
                    f"{label} failed after {elapsed:.3f}s: {e}"
                )
                raise
            elapsed = time.perf_counter() - start
            get_logger("timing").bind(label=label, elapsed_s=elapsed).info(f"{label} completed in {elapsed:.3f}s")
            return result

        return wrapper

    if func is not None:
        return decorator(func)
    return decorator


# Initialize logging on import
setup_logging()
