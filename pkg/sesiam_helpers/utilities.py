import hashlib
import json
import os
import platform
from contextlib import contextmanager

import torch

DETERMINISTIC_ENV = "SESIAM_DETERMINISTIC"


def get_str_with_sep_from(number):
    return f"{number:,d}".replace(",", " ")


def make_number_printable(value):
    """Write integral coordinates without a decimal part, others losslessly."""
    value = float(value)
    if value.is_integer():
        return str(int(value))
    return repr(value)


def canonical_json(data) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def config_hash(data) -> str:
    return hashlib.sha256(canonical_json(data).encode("utf-8")).hexdigest()[:16]


def env_flag(name: str) -> bool:
    return os.getenv(name, "").strip().lower() in ("1", "true", "yes", "on")


def deterministic_requested() -> bool:
    return env_flag(DETERMINISTIC_ENV)


def set_deterministic(enabled: bool = True) -> None:
    """Single-threaded reference mode: deterministic kernels, one intra-op thread."""
    torch.use_deterministic_algorithms(enabled)
    if enabled:
        torch.set_num_threads(1)


@contextmanager
def single_threaded():
    previous = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        yield
    finally:
        torch.set_num_threads(previous)


def hardware_descriptor() -> str:
    processor = platform.processor() or platform.machine() or "unknown-cpu"
    return (
        f"{processor} | {platform.system()} {platform.release()} | "
        f"python {platform.python_version()} | torch {torch.__version__} | "
        f"threads {torch.get_num_threads()}"
    )
