"""Request records: the unit of work queued on a stream.

A request's payload is consumed by the device executor and dropped on
completion; the request object itself stays in the stream's log so tests
and benchmarks can audit what was enqueued (kind, byte count, duration,
whether it was generated automatically by ``invoke`` marshalling).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable

from .memory import Allocation


class RequestKind(enum.Enum):
    ALLOC = "alloc"
    DEALLOC = "dealloc"
    TRANSFER_H2D = "h2d"
    TRANSFER_D2H = "d2h"
    TRANSFER_D2D = "d2d"
    INVOKE = "invoke"


TRANSFER_KINDS = frozenset(
    {RequestKind.TRANSFER_H2D, RequestKind.TRANSFER_D2H, RequestKind.TRANSFER_D2D}
)


class RequestStatus(enum.Enum):
    QUEUED = "queued"
    RUNNING = "running"
    DONE = "done"
    FAILED = "failed"


@dataclass(slots=True)
class DeviceView:
    """A (allocation, offset, nbytes) window a request operates on."""

    allocation: Allocation
    offset: int
    nbytes: int


@dataclass(slots=True)
class AllocOp:
    allocation: Allocation


@dataclass(slots=True)
class DeallocOp:
    allocation: Allocation


@dataclass(slots=True)
class H2DOp:
    host: memoryview
    dst: DeviceView
    nbytes: int
    offset_host: int
    offset_device: int


@dataclass(slots=True)
class D2HOp:
    src: DeviceView
    host: memoryview
    nbytes: int
    offset_device: int
    offset_host: int


@dataclass(slots=True)
class D2DOp:
    src: DeviceView
    dst: DeviceView
    nbytes: int
    offset_src: int
    offset_dst: int


@dataclass(slots=True)
class InvokeOp:
    kernel_name: str
    runner: Callable  # runner(buffers, addresses) -> None
    views: tuple[DeviceView, ...]


@dataclass(slots=True)
class Request:
    seq: int
    kind: RequestKind
    payload: object | None
    nbytes: int = 0
    auto: bool = False  # generated by invoke marshalling
    arg_kind: str | None = None  # 'host_array' | 'scalar' for auto transfers
    label: str = ""
    status: RequestStatus = RequestStatus.QUEUED
    error: Exception | None = field(default=None, repr=False)
    duration: float = 0.0
