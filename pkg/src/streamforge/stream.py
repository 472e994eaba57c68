"""Streams: ordered queues of asynchronous device requests.

Every operation below enqueues a request and returns immediately; ``sync``
blocks until everything previously enqueued has finished and surfaces the
first deferred failure, if any. Requests on one stream execute strictly in
enqueue order. After a request fails, the remaining queued requests on
that stream are skipped (also marked failed) so the post-error state is
bounded and deterministic; ``sync`` then raises the first failure and the
stream is usable again.

Concurrency contract: a stream may be handed between threads, but
concurrent enqueue on the same stream requires external serialization.
Requests touching one allocation from two different streams are unordered;
sync one stream before using the other.
"""
from __future__ import annotations

import itertools
from collections import deque

import numpy as np

from .errors import InvalidArgumentError, InvalidStateError
from .memory import (
    VALID_ALIGNMENTS,
    Allocation,
    DevicePointer,
    as_host_view,
)
from .request import (
    AllocOp,
    D2DOp,
    D2HOp,
    DeallocOp,
    DeviceView,
    H2DOp,
    Request,
    RequestKind,
)

_stream_ids = itertools.count(1)


class OffloadStream:
    """FIFO queue of asynchronous requests bound to one device."""

    def __init__(self, device):
        self.device = device
        self.stream_id = next(_stream_ids)
        self._pending: deque[Request] = deque()
        self._last_seq = 0
        self._completed_seq = 0
        self._error_slot: Exception | None = None
        self._poisoned = False
        self._log: list[Request] = []
        device._backend.register_stream(self)

    @property
    def device_id(self) -> int:
        return self.device.device_id

    def __repr__(self):
        return f"OffloadStream({self.stream_id}) on {self.device!r}"

    # -- queue machinery ----------------------------------------------------

    def _enqueue(
        self,
        kind: RequestKind,
        payload,
        *,
        nbytes: int = 0,
        auto: bool = False,
        arg_kind: str | None = None,
        label: str = "",
    ) -> Request:
        backend = self.device._backend
        with backend.cv:
            if backend.closed:
                raise InvalidStateError(f"device {self.device_id} is closed")
            self._last_seq += 1
            req = Request(
                seq=self._last_seq,
                kind=kind,
                payload=payload,
                nbytes=nbytes,
                auto=auto,
                arg_kind=arg_kind,
                label=label,
            )
            self._pending.append(req)
            self._log.append(req)
            backend.cv.notify_all()
        return req

    def sync(self) -> None:
        """Block until every previously enqueued request reached done or
        failed; raise the first asynchronous failure, if any."""
        backend = self.device._backend
        with backend.cv:
            target = self._last_seq
            backend.cv.wait_for(
                lambda: self._completed_seq >= target or backend.closed
            )
            incomplete = self._completed_seq < target
            err, self._error_slot = self._error_slot, None
            self._poisoned = False
        if err is not None:
            raise err
        if incomplete:
            raise InvalidStateError(
                f"device {self.device_id} closed with requests outstanding"
            )

    def request_log(self) -> list[Request]:
        """Snapshot of every request ever enqueued on this stream."""
        with self.device._backend.cv:
            return list(self._log)

    def log_marker(self) -> int:
        """Current log length; use with ``request_log()[marker:]`` to audit
        the requests generated by a code region."""
        with self.device._backend.cv:
            return len(self._log)

    # -- low-level memory interface ------------------------------------------

    def allocate_device_memory(self, nbytes: int, alignment: int = 64) -> DevicePointer:
        """Allocate ``nbytes`` of device memory with the given alignment.

        The handle is usable immediately as a payload in later requests on
        any stream of the same device; the backing storage materializes in
        stream order. Dropping the last reference to the returned pointer
        releases the device memory automatically.
        """
        return self._allocate(nbytes, alignment, label="alloc")

    def _allocate(
        self,
        nbytes: int,
        alignment: int = 64,
        *,
        auto: bool = False,
        arg_kind: str | None = None,
        label: str = "alloc",
    ) -> DevicePointer:
        if not isinstance(nbytes, (int, np.integer)) or nbytes < 1:
            raise InvalidArgumentError(f"nbytes must be a positive integer, got {nbytes!r}")
        if alignment not in VALID_ALIGNMENTS:
            raise InvalidArgumentError(
                f"alignment must be a power of two in [1, 4096], got {alignment!r}"
            )
        allocation = Allocation(int(nbytes), alignment, self)
        ptr = DevicePointer(allocation, 0, int(nbytes))
        self._enqueue(
            RequestKind.ALLOC,
            AllocOp(allocation),
            nbytes=int(nbytes),
            auto=auto,
            arg_kind=arg_kind,
            label=label,
        )
        return ptr

    def deallocate_device_memory(self, device_ptr: DevicePointer) -> None:
        """Release a device allocation. Double frees surface at sync."""
        self._deallocate(device_ptr, label="dealloc")

    def _deallocate(
        self,
        device_ptr: DevicePointer,
        *,
        auto: bool = False,
        arg_kind: str | None = None,
        label: str = "dealloc",
    ) -> None:
        if not isinstance(device_ptr, DevicePointer):
            raise InvalidArgumentError("expected a DevicePointer")
        if device_ptr.device_id != self.device_id:
            raise InvalidArgumentError(
                f"pointer belongs to device {device_ptr.device_id}, "
                f"stream is on device {self.device_id}"
            )
        allocation = device_ptr._allocation
        allocation.release_enqueued = True
        self._enqueue(
            RequestKind.DEALLOC,
            DeallocOp(allocation),
            auto=auto,
            arg_kind=arg_kind,
            label=label,
        )

    def _enqueue_auto_release(self, allocation: Allocation) -> None:
        allocation.release_enqueued = True
        self._enqueue(
            RequestKind.DEALLOC, DeallocOp(allocation), auto=True, label="auto-release"
        )

    # -- transfers -----------------------------------------------------------

    @staticmethod
    def _check_nbytes_offsets(nbytes, *offsets):
        if not isinstance(nbytes, (int, np.integer)) or nbytes < 0:
            raise InvalidArgumentError(f"invalid byte count: {nbytes!r}")
        for off in offsets:
            if not isinstance(off, (int, np.integer)) or off < 0:
                raise InvalidArgumentError(f"negative or malformed offset: {off!r}")

    def _check_device_ptr(self, ptr, role: str) -> DevicePointer:
        if not isinstance(ptr, DevicePointer):
            raise InvalidArgumentError(f"{role} must be a DevicePointer, got {type(ptr).__name__}")
        return ptr

    def transfer_host2device(
        self,
        host_ptr,
        device_ptr: DevicePointer,
        nbytes: int,
        offset_host: int = 0,
        offset_device: int = 0,
    ) -> None:
        """Copy ``nbytes`` from a host buffer into device memory.

        The host region is read at execution time and must stay valid and
        unmoved until the stream is synced. Out-of-bounds ranges surface as
        range errors at sync.
        """
        self._check_nbytes_offsets(nbytes, offset_host, offset_device)
        dst = self._check_device_ptr(device_ptr, "device_ptr")
        if dst.device_id != self.device_id:
            raise InvalidArgumentError(
                f"destination pointer is on device {dst.device_id}, "
                f"stream is on device {self.device_id}"
            )
        host = as_host_view(host_ptr)
        self._enqueue(
            RequestKind.TRANSFER_H2D,
            H2DOp(
                host,
                DeviceView(dst._allocation, dst.offset, dst.nbytes),
                int(nbytes),
                int(offset_host),
                int(offset_device),
            ),
            nbytes=int(nbytes),
            label="h2d",
        )

    def transfer_device2host(
        self,
        device_ptr: DevicePointer,
        host_ptr,
        nbytes: int,
        offset_device: int = 0,
        offset_host: int = 0,
    ) -> None:
        """Copy ``nbytes`` from device memory into a writable host buffer."""
        self._check_nbytes_offsets(nbytes, offset_device, offset_host)
        src = self._check_device_ptr(device_ptr, "device_ptr")
        if src.device_id != self.device_id:
            raise InvalidArgumentError(
                f"source pointer is on device {src.device_id}, "
                f"stream is on device {self.device_id}"
            )
        host = as_host_view(host_ptr, writable=True)
        self._enqueue(
            RequestKind.TRANSFER_D2H,
            D2HOp(
                DeviceView(src._allocation, src.offset, src.nbytes),
                host,
                int(nbytes),
                int(offset_device),
                int(offset_host),
            ),
            nbytes=int(nbytes),
            label="d2h",
        )

    def transfer_device2device(
        self,
        device_ptr_src: DevicePointer,
        device_ptr_dst: DevicePointer,
        nbytes: int,
        offset_device_src: int = 0,
        offset_device_dst: int = 0,
    ) -> None:
        """Copy between device allocations (also across devices).

        Overlapping source and destination ranges within one allocation are
        rejected at enqueue.
        """
        self._check_nbytes_offsets(nbytes, offset_device_src, offset_device_dst)
        src = self._check_device_ptr(device_ptr_src, "device_ptr_src")
        dst = self._check_device_ptr(device_ptr_dst, "device_ptr_dst")
        if self.device is not src._allocation._stream.device and (
            self.device is not dst._allocation._stream.device
        ):
            raise InvalidArgumentError(
                "device-to-device transfer must involve the stream's device"
            )
        if src._allocation is dst._allocation and nbytes > 0:
            a0 = src.offset + offset_device_src
            b0 = dst.offset + offset_device_dst
            if a0 < b0 + nbytes and b0 < a0 + nbytes:
                raise InvalidArgumentError(
                    "overlapping device-to-device ranges within one allocation"
                )
        self._enqueue(
            RequestKind.TRANSFER_D2D,
            D2DOp(
                DeviceView(src._allocation, src.offset, src.nbytes),
                DeviceView(dst._allocation, dst.offset, dst.nbytes),
                int(nbytes),
                int(offset_device_src),
                int(offset_device_dst),
            ),
            nbytes=int(nbytes),
            label="d2d",
        )

    # -- kernels and arrays ----------------------------------------------------

    def invoke(self, kernel, *args) -> None:
        """Enqueue a kernel invocation with copy-in/copy-out marshalling.

        Raw host arrays are staged with automatic copy-in before and
        copy-out after the kernel; scalars are copy-in only; OffloadArray
        and DevicePointer arguments receive no automatic transfers. Returns
        immediately after the requests have been enqueued.
        """
        from .kernels import enqueue_invoke

        enqueue_invoke(self, kernel, args)

    def bind(self, array, update_device: bool = True):
        """Bind a host array to a new device buffer (see OffloadArray)."""
        from .array import bind

        return bind(self, array, update_device=update_device)
