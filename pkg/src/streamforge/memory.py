"""Device memory primitives: arena allocator, allocation records, and the
opaque device pointers handed out to callers.

Host buffers are ordinary objects exposing the buffer protocol (numpy
arrays, bytearrays, memoryviews, ...). The caller must keep a host buffer
alive and unmoved until any transfer referencing it has been synced; the
runtime does not detect violations.
"""
from __future__ import annotations

import enum
import itertools

import numpy as np

from .errors import InvalidArgumentError, OutOfDeviceMemoryError

VALID_ALIGNMENTS = frozenset(1 << k for k in range(13))  # 1 .. 4096

_alloc_ids = itertools.count(1)


def _round_up(value: int, granule: int) -> int:
    return -(-value // granule) * granule


class Arena:
    """First-fit byte allocator over one contiguous storage block.

    Alignment is honoured by rounding both the placement and the reserved
    size up to the allocation's alignment granule, so accounting stays in
    whole granules. Not thread safe on its own; the owning backend
    serializes access.
    """

    __slots__ = ("capacity", "storage", "bytes_in_use", "_free", "_live")

    def __init__(self, capacity: int):
        self.capacity = capacity
        # np.zeros -> calloc, so untouched pages stay lazy on Linux
        self.storage = np.zeros(capacity, dtype=np.uint8)
        self.bytes_in_use = 0
        self._free: list[tuple[int, int]] = [(0, capacity)]
        self._live: dict[int, tuple[int, int]] = {}

    def allocate(self, alloc_id: int, nbytes: int, alignment: int) -> tuple[int, int]:
        size = _round_up(nbytes, alignment)
        for i, (start, end) in enumerate(self._free):
            base = _round_up(start, alignment)
            if base + size <= end:
                repl = []
                if start < base:
                    repl.append((start, base))
                if base + size < end:
                    repl.append((base + size, end))
                self._free[i : i + 1] = repl
                self._live[alloc_id] = (base, size)
                self.bytes_in_use += size
                return base, size
        raise OutOfDeviceMemoryError(
            f"cannot place {nbytes} bytes (alignment {alignment}); "
            f"{self.bytes_in_use} of {self.capacity} bytes in use"
        )

    def release(self, alloc_id: int) -> None:
        base, size = self._live.pop(alloc_id)
        self.bytes_in_use -= size
        self._free.append((base, base + size))
        self._free.sort()
        merged: list[tuple[int, int]] = []
        for start, end in self._free:
            if merged and start <= merged[-1][1]:
                merged[-1] = (merged[-1][0], max(merged[-1][1], end))
            else:
                merged.append((start, end))
        self._free = merged

    def live_ranges(self) -> list[tuple[int, int, int]]:
        """Sorted (alloc_id, base, size) triples for every live allocation."""
        return sorted((aid, b, s) for aid, (b, s) in self._live.items())


class AllocationState(enum.Enum):
    PENDING = "pending"  # alloc request enqueued, storage not yet placed
    LIVE = "live"
    FREED = "freed"
    FAILED = "failed"  # the alloc request itself failed
    DEAD = "dead"  # invalidated wholesale (device reset/close)


class Allocation:
    """Backing record for one device allocation.

    Every :class:`DevicePointer` view shares one of these. When the last
    pointer referencing the allocation is garbage collected without an
    explicit deallocation, the storage is released automatically by
    enqueuing a deallocation request on the creating stream.
    """

    __slots__ = (
        "alloc_id",
        "device_id",
        "nbytes",
        "alignment",
        "state",
        "base",
        "size",
        "release_enqueued",
        "_stream",
        "__weakref__",
    )

    def __init__(self, nbytes: int, alignment: int, stream):
        self.alloc_id = next(_alloc_ids)
        self.device_id = stream.device_id
        self.nbytes = nbytes
        self.alignment = alignment
        self.state = AllocationState.PENDING
        self.base: int | None = None
        self.size: int | None = None
        self.release_enqueued = False
        self._stream = stream

    def __del__(self):
        if self.release_enqueued or self.state not in (
            AllocationState.PENDING,
            AllocationState.LIVE,
        ):
            return
        try:
            self._stream._enqueue_auto_release(self)
        except Exception:
            pass  # interpreter shutdown / closed device


class DevicePointer:
    """Opaque handle to a byte range inside one device allocation.

    A device pointer is not a host address: it pairs an allocation token
    with a byte offset/length view, and is only meaningful on its owning
    device. ``slice`` derives sub-views that share the allocation's
    lifetime.
    """

    __slots__ = ("_allocation", "offset", "nbytes")

    def __init__(self, allocation: Allocation, offset: int, nbytes: int):
        self._allocation = allocation
        self.offset = offset
        self.nbytes = nbytes

    @property
    def device_id(self) -> int:
        return self._allocation.device_id

    @property
    def alloc_id(self) -> int:
        return self._allocation.alloc_id

    @property
    def alignment(self) -> int:
        return self._allocation.alignment

    def slice(self, offset: int, nbytes: int | None = None) -> "DevicePointer":
        """A sub-view covering ``nbytes`` starting ``offset`` bytes into this view."""
        if nbytes is None:
            nbytes = self.nbytes - offset
        if offset < 0 or nbytes < 0 or offset + nbytes > self.nbytes:
            raise InvalidArgumentError(
                f"slice [{offset}, {offset + nbytes}) exceeds view of {self.nbytes} bytes"
            )
        return DevicePointer(self._allocation, self.offset + offset, nbytes)

    def __repr__(self):
        return (
            f"DevicePointer(device={self.device_id}, alloc={self.alloc_id}, "
            f"offset={self.offset}, nbytes={self.nbytes})"
        )


def as_host_view(obj, *, writable: bool = False) -> memoryview:
    """Coerce a host buffer object to a flat byte view.

    Accepts any C-contiguous buffer-protocol object. ``writable`` demands a
    mutable buffer (required for device-to-host destinations).
    """
    if isinstance(obj, DevicePointer):
        raise InvalidArgumentError("expected a host buffer, got a DevicePointer")
    if isinstance(obj, np.ndarray) and not obj.flags.c_contiguous:
        raise InvalidArgumentError("host array must be C-contiguous")
    try:
        view = memoryview(obj)
    except TypeError as exc:
        raise InvalidArgumentError(
            f"object of type {type(obj).__name__} does not expose a buffer"
        ) from exc
    if writable and view.readonly:
        raise InvalidArgumentError("destination host buffer is read-only")
    try:
        return view.cast("B")
    except (TypeError, ValueError) as exc:
        raise InvalidArgumentError(f"host buffer is not byte-addressable: {exc}") from exc
