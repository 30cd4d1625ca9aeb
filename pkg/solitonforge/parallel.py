import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Callable, List, Sequence, Tuple, TypeVar

from tqdm import tqdm

from solitonforge.exceptions import SolitonError

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def sweep_map(func: Callable[[T], R], items: Sequence[T], jobs: int = 1, desc: str = "sweep") -> List[Tuple[R, str]]:
    """Evaluate func on every sweep point, at most `jobs` at a time.

    Returns (result, error) pairs in input order; a failed point carries
    result None and the error message, the other points still complete.
    """
    results: List[Tuple[R, str]] = [(None, "")] * len(items)
    with ThreadPoolExecutor(max_workers=jobs) as executor:
        futures = {executor.submit(func, item): index for index, item in enumerate(items)}
        for future in tqdm(as_completed(futures), total=len(futures), desc=desc, leave=False):
            index = futures[future]
            try:
                results[index] = (future.result(), "")
            except SolitonError as e:
                logger.warning(f"Sweep point {index} ({items[index]}) failed: {str(e)}")
                results[index] = (None, str(e))
    return results
