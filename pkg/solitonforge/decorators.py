from functools import wraps
import logging

from solitonforge.exceptions import KahlerConeError

logger = logging.getLogger(__name__)


def resample(max_attempts=5, on=(KahlerConeError,)):
    """Re-run a sampling function when its draw is rejected.

    The wrapped function must draw from a generator passed by the caller, so
    every attempt sees a fresh sample while the whole sequence stays seeded.
    """
    def decorator(func):
        @wraps(func)
        def wrapper(*args, **kwargs):
            for attempt in range(max_attempts):
                try:
                    return func(*args, **kwargs)
                except on as e:
                    if attempt == max_attempts - 1:
                        logger.error(f"Final draw rejected for {func.__name__}: {str(e)}")
                        raise
                    logger.warning(f"Draw {attempt + 1} rejected ({str(e)}), resampling...")
        return wrapper
    return decorator
