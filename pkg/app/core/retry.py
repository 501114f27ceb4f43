import logging
import random
import time
from functools import wraps
from typing import Callable, Iterator, Tuple, Type

from pydantic import BaseModel, ConfigDict, Field

logger = logging.getLogger(__name__)


class RetryConfig(BaseModel):
    """Retry policy for transient file-system failures"""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    max_attempts: int = Field(3, ge=1)
    base_delay: float = Field(1.0, ge=0.0)
    max_delay: float = Field(60.0, ge=0.0)
    exponential_base: float = Field(2.0, ge=1.0)
    jitter: bool = True
    retryable_exceptions: Tuple[Type[BaseException], ...] = (OSError,)


def calculate_delay(attempt: int, config: RetryConfig) -> float:
    """Delay before retry number `attempt` (1-based), capped at max_delay"""
    delay = min(config.base_delay * config.exponential_base ** (attempt - 1), config.max_delay)
    if config.jitter:
        delay += random.uniform(-0.1 * delay, 0.1 * delay)
    return max(0.0, delay)


def backoff_delays(config: RetryConfig) -> Iterator[float]:
    """The sleeps between consecutive attempts; one fewer than max_attempts"""
    for attempt in range(1, config.max_attempts):
        yield calculate_delay(attempt, config)


def retry_sync(config: RetryConfig = None):
    """Retry the wrapped call on the configured exceptions.

    The first positional argument after `self`, when it is a string, is taken
    as the file path and included in the log lines.
    """
    if config is None:
        config = RetryConfig()

    def decorator(func: Callable):
        @wraps(func)
        def wrapper(*args, **kwargs):
            target = next((a for a in args if isinstance(a, str)), func.__name__)
            delays = backoff_delays(config)
            attempt = 1
            while True:
                try:
                    return func(*args, **kwargs)
                except config.retryable_exceptions as e:
                    delay = next(delays, None)
                    if delay is None:
                        logger.error(f"I/O on {target} failed after {attempt} attempts: {e}")
                        raise
                    logger.warning(
                        f"I/O on {target} failed (attempt {attempt}/{config.max_attempts}), "
                        f"retrying in {delay:.2f}s: {e}"
                    )
                    time.sleep(delay)
                    attempt += 1

        return wrapper
    return decorator


# Missing files are not retried; only transient I/O failures are.
FILE_IO_RETRY_CONFIG = RetryConfig(
    max_attempts=3,
    base_delay=0.05,
    max_delay=1.0,
    jitter=False,
    retryable_exceptions=(BlockingIOError, InterruptedError, TimeoutError),
)
