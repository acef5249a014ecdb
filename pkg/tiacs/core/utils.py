# tiacs/core/utils.py
"""
Utility functions shared by the services.

Hashing for cache keys and the run manifest, rounding conventions, a row-error
collector used by every file loader, and the ordered worker-pool map.
"""

import hashlib
import math
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Callable, List, Optional, Sequence, TypeVar, Union

from tiacs.core.config import get_settings
from tiacs.core.errors import InputValidationError, RowError

T = TypeVar("T")
R = TypeVar("R")

_HASH_CHUNK = 1 << 20


def hash_file(path: Union[str, Path]) -> str:
    """
    SHA-256 of a file's bytes.

    Args:
        path: File to hash

    Returns:
        Hexadecimal hash digest
    """
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(_HASH_CHUNK), b""):
            digest.update(block)
    return digest.hexdigest()


def hash_parts(*parts: Any) -> str:
    """SHA-256 over the string forms of `parts`, separated so concatenations differ."""
    digest = hashlib.sha256()
    for part in parts:
        digest.update(str(part).encode("utf-8"))
        digest.update(b"\x1f")
    return digest.hexdigest()


def round_half_up(value: float) -> int:
    """Round a non-negative quantity to the nearest integer, halves going up."""
    return int(math.floor(value + 0.5))


def chunk_list(lst: Sequence[T], chunk_size: int) -> List[Sequence[T]]:
    """
    Split a sequence into chunks of specified size.

    Args:
        lst: Sequence to chunk
        chunk_size: Size of each chunk

    Returns:
        List of chunks
    """
    return [lst[i:i + chunk_size] for i in range(0, len(lst), chunk_size)]


def resolve_workers(configured: Optional[int]) -> int:
    """Worker count: TIACS_WORKERS (env or .env) wins over the configured value, floor of 1."""
    return max(1, int(get_settings().workers or configured or 1))


def parallel_map(
    fn: Callable[[T], R],
    items: Sequence[T],
    workers: int = 1,
    initializer: Optional[Callable[..., None]] = None,
    initargs: tuple = (),
    chunksize: Optional[int] = None,
) -> List[R]:
    """
    Map `fn` over `items` preserving input order.

    With one worker everything runs in-process (the initializer still runs),
    so results never depend on the worker count.
    """
    if workers <= 1 or len(items) <= 1:
        if initializer is not None:
            initializer(*initargs)
        return [fn(item) for item in items]

    if chunksize is None:
        chunksize = max(1, len(items) // (workers * 4))
    with ProcessPoolExecutor(
        max_workers=workers, initializer=initializer, initargs=initargs
    ) as pool:
        return list(pool.map(fn, items, chunksize=chunksize))


class RowErrorCollector:
    """
    Collects row-level validation errors so a loader can report all of them
    at once instead of stopping at the first bad row.
    """

    def __init__(self, source: str, limit: int = 1000):
        self.source = source
        self.limit = limit
        self.errors: List[RowError] = []

    def add_error(self, line: Optional[int], field: str, message: str) -> None:
        """Add a validation error."""
        if len(self.errors) < self.limit:
            self.errors.append(RowError(line, field, message))

    def extend_from_pydantic(self, line: Optional[int], exc: Any) -> None:
        """Record every error of a pydantic ValidationError against one line."""
        for err in exc.errors():
            loc = ".".join(str(p) for p in err.get("loc", ())) or "row"
            self.add_error(line, loc, err.get("msg", "invalid value"))

    def is_valid(self) -> bool:
        """Check if all validations passed."""
        return len(self.errors) == 0

    def raise_if_invalid(self, what: str) -> None:
        if self.errors:
            raise InputValidationError(f"{self.source}: invalid {what}", self.errors)

