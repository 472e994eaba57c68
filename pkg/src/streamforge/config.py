"""Key-value text configuration files.

Format: one ``key = value`` pair per line; ``#`` starts a comment; blank
lines are ignored. Values are parsed as int, float, bool, or kept as
strings. The same keys are overridable by CLI flags.

Device keys: ``arena_bytes``, ``latency_us``, ``bandwidth_bytes_per_s``,
``realistic_timing``.

Solver keys: ``p``, ``n_elements``, ``dt``, ``t_end``, ``x0``, ``x1``,
``a``, ``precision``, ``ic``, ``source_term``, ``backend``,
``gemm_library``, ``diag_every``.
"""
from __future__ import annotations

from pathlib import Path

from .backend import TimingModel
from .errors import InvalidArgumentError
from .solver import SolverConfig

_BOOLS = {"true": True, "false": False, "yes": True, "no": False}


def _parse_value(text: str):
    text = text.strip()
    low = text.lower()
    if low in _BOOLS:
        return _BOOLS[low]
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "'\"":
        return text[1:-1]
    return text


def load_config(path) -> dict:
    """Parse a key-value config file into a dict."""
    result: dict = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        if not eq:
            raise InvalidArgumentError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        result[key.strip()] = _parse_value(value)
    return result


_SOLVER_KEYS = {
    "p",
    "n_elements",
    "dt",
    "t_end",
    "x0",
    "x1",
    "a",
    "precision",
    "ic",
    "source_term",
    "backend",
    "gemm_library",
    "diag_every",
}


def solver_config_from_file(path, **overrides) -> SolverConfig:
    data = load_config(path)
    unknown = set(data) - _SOLVER_KEYS
    if unknown:
        raise InvalidArgumentError(f"unknown solver config key(s): {sorted(unknown)}")
    data.update({k: v for k, v in overrides.items() if v is not None})
    missing = {"p", "n_elements", "dt", "t_end"} - set(data)
    if missing:
        raise InvalidArgumentError(f"solver config is missing: {sorted(missing)}")
    return SolverConfig(**data)


def timing_model_from_mapping(data: dict) -> TimingModel | None:
    if "latency_us" in data or "bandwidth_bytes_per_s" in data:
        try:
            return TimingModel(
                latency_us=float(data["latency_us"]),
                bandwidth_bytes_per_s=float(data["bandwidth_bytes_per_s"]),
            )
        except KeyError as exc:
            raise InvalidArgumentError(
                "timing model needs both latency_us and bandwidth_bytes_per_s"
            ) from exc
    return None
