"""Device discovery and the public device object.

The registry is populated lazily on first use; the environment variable
``STREAMFORGE_DEVICES`` (integer, default 1) sets how many emulated
devices exist. Index 0 is always present. Standalone devices can also be
constructed directly (handy for embedding, benchmarks, and tests) — they
live outside the registry and should be ``close()``d when done.
"""
from __future__ import annotations

import enum
import os
import threading

from .backend import DEFAULT_ARENA_BYTES, DeviceBackend, TimingModel
from .errors import DeviceNotFoundError
from .stream import OffloadStream


class DeviceKind(enum.Enum):
    EMULATED = "emulated"


class OffloadDevice:
    """One offload target: identity plus its arena/executor backend."""

    def __init__(
        self,
        device_id: int = 0,
        *,
        name: str | None = None,
        arena_bytes: int = DEFAULT_ARENA_BYTES,
        timing_model: TimingModel | None = None,
    ):
        self.device_id = device_id
        self.name = name or f"emulated-device-{device_id}"
        self.kind = DeviceKind.EMULATED
        self._backend = DeviceBackend(device_id, arena_bytes, timing_model)
        self._default_stream: OffloadStream | None = None
        self._lock = threading.Lock()
        self._kernel_cache: dict = {}

    @property
    def capabilities(self) -> dict:
        return {
            "max_alloc_bytes": self._backend.arena.capacity,
            "workers": 1,
        }

    def get_default_stream(self) -> OffloadStream:
        """The per-device singleton stream, created lazily."""
        with self._lock:
            if self._default_stream is None:
                self._default_stream = OffloadStream(self)
            return self._default_stream

    def create_stream(self) -> OffloadStream:
        """A fresh stream with no ordering relationship to any other."""
        return OffloadStream(self)

    def load_library(self, path_or_name: str):
        from .kernels import load_library

        return load_library(self, path_or_name)

    def configure(
        self,
        arena_bytes: int | None = None,
        timing_model: TimingModel | None | str = "keep",
        realistic_timing: bool | None = None,
    ) -> None:
        self._backend.configure(arena_bytes, timing_model, realistic_timing)

    # introspection for tests and benchmarks
    def arena_bytes_in_use(self) -> int:
        return self._backend.bytes_in_use()

    def live_allocations(self) -> list[tuple[int, int, int]]:
        return self._backend.live_allocations()

    def read_arena(self, base: int, nbytes: int) -> bytes:
        return self._backend.read_arena(base, nbytes)

    def close(self) -> None:
        self._backend.close()

    def __enter__(self) -> "OffloadDevice":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def __repr__(self):
        return f"OffloadDevice(id={self.device_id}, name={self.name!r})"


_registry: list[OffloadDevice] | None = None
_registry_lock = threading.Lock()


def _env_device_count() -> int:
    raw = os.environ.get("STREAMFORGE_DEVICES", "1")
    count = int(raw)
    if count < 1:
        count = 1
    return count


def _ensure_registry() -> list[OffloadDevice]:
    global _registry
    with _registry_lock:
        if _registry is None:
            _registry = [OffloadDevice(i) for i in range(_env_device_count())]
        return _registry


def configure_devices(count: int, *, arena_bytes: int = DEFAULT_ARENA_BYTES) -> list[OffloadDevice]:
    """Rebuild the registry with ``count`` emulated devices.

    Existing devices are closed; outstanding handles become invalid. Meant
    for process startup, benchmarks, and tests.
    """
    global _registry
    if count < 1:
        raise DeviceNotFoundError("at least one device must exist")
    with _registry_lock:
        if _registry is not None:
            for dev in _registry:
                dev.close()
        _registry = [OffloadDevice(i, arena_bytes=arena_bytes) for i in range(count)]
        return _registry


def list_devices() -> list[OffloadDevice]:
    """All configured devices, index 0 first; stable across calls."""
    return list(_ensure_registry())


def get_device(device_id: int) -> OffloadDevice:
    registry = _ensure_registry()
    if not isinstance(device_id, int) or not 0 <= device_id < len(registry):
        raise DeviceNotFoundError(f"no device with id {device_id!r}")
    return registry[device_id]


def _coerce_device(device) -> OffloadDevice:
    if isinstance(device, OffloadDevice):
        return device
    return get_device(device)


def get_default_stream(device) -> OffloadStream:
    """Per-device default stream; accepts a device object or id."""
    return _coerce_device(device).get_default_stream()


def create_stream(device) -> OffloadStream:
    """Fresh independent stream on the given device (object or id)."""
    return _coerce_device(device).create_stream()


def configure_device(
    device_id: int,
    arena_bytes: int | None = None,
    timing_model: TimingModel | None | str = "keep",
    realistic_timing: bool | None = None,
) -> None:
    """Resize a registered device's arena and/or install a timing model.

    Resizing fails with invalid-state while allocations are live. The
    timing model only affects reported transfer durations, never
    correctness.
    """
    get_device(device_id).configure(arena_bytes, timing_model, realistic_timing)


class _DevicesProxy:
    """Sequence view over the registry, so ``devices[0]`` reads naturally."""

    def __getitem__(self, index):
        return _ensure_registry()[index]

    def __len__(self):
        return len(_ensure_registry())

    def __iter__(self):
        return iter(_ensure_registry())

    def __repr__(self):
        return repr(_ensure_registry())


devices = _DevicesProxy()
