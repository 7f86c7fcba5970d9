import csv
import json
import os

from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from .errors import ConfigError, IngestError


SEED_STREAMS = ("catalog", "network", "utility", "requests")
THREADS_ENV = "SOFTCACHE_THREADS"


def dict_to_bytes(data: Dict[str, Any]) -> bytes:
    return json.dumps(data).encode("utf-8")


def bytes_to_dict(data: bytes) -> Dict[str, Any]:
    return json.loads(data.decode("utf-8"))


def load_json(path: Union[str, Path]) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from e

    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")

    return data


def write_placement(path: Union[str, Path], rows: List[Tuple[int, int]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["content", "cell"])
        writer.writerows(rows)


def read_placement(path: Union[str, Path]) -> List[Tuple[int, int]]:
    with open(path, "r", newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["content", "cell"]:
            raise IngestError("placement header must be content,cell", line=1)

        rows = []
        for line, record in enumerate(reader, start=2):
            try:
                content, cell = (int(value) for value in record)
            except ValueError:
                raise IngestError(f"cannot parse placement row {record!r}", line=line)
            rows.append((content, cell))

    return rows


def resolve_threads(flag: Optional[int] = None) -> int:
    """Worker count: the explicit flag, then SOFTCACHE_THREADS, then the core count."""
    if flag is not None:
        return max(1, int(flag))

    value = os.environ.get(THREADS_ENV)
    if value:
        try:
            threads = int(value)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {value!r}")
        if threads < 1:
            raise ConfigError(f"{THREADS_ENV} must be at least 1, got {threads}")
        return threads

    return os.cpu_count() or 1


def derive_seed(seed: int, stream: str) -> int:
    """Independent 32-bit seed for one randomness stream of a sweep row."""
    sequence = np.random.SeedSequence([int(seed), SEED_STREAMS.index(stream)])
    return int(sequence.generate_state(1)[0])
