"""The emulated device backend: a private memory arena drained by one
dedicated executor thread, with an optional transfer-time model.

The executor processes each stream's queue in FIFO order and round-robins
across the device's streams at request granularity. Arena storage is only
touched while holding the arena lock, so a host thread never races the
executor on device bytes.
"""
from __future__ import annotations

import threading
import time
from dataclasses import dataclass

import numpy as np

from .errors import (
    InvalidHandleError,
    InvalidStateError,
    KernelExecutionError,
    OffloadError,
    RangeError,
)
from .memory import Arena, AllocationState
from .request import (
    Request,
    RequestKind,
    RequestStatus,
    TRANSFER_KINDS,
)

DEFAULT_ARENA_BYTES = 1 << 30


@dataclass(frozen=True)
class TimingModel:
    """Fixed per-request latency plus sustained transfer bandwidth.

    Affects reported request durations only; correctness never depends on
    it. With ``realistic_timing`` the backend additionally sleeps so wall
    clock approximates the model.
    """

    latency_us: float
    bandwidth_bytes_per_s: float

    def transfer_seconds(self, nbytes: int) -> float:
        return self.latency_us * 1e-6 + nbytes / self.bandwidth_bytes_per_s

    def request_seconds(self) -> float:
        return self.latency_us * 1e-6


class DeviceBackend:
    """Arena + executor for one emulated device."""

    def __init__(
        self,
        device_id: int,
        arena_bytes: int = DEFAULT_ARENA_BYTES,
        timing_model: TimingModel | None = None,
        realistic_timing: bool = False,
    ):
        self.device_id = device_id
        self.cv = threading.Condition(threading.RLock())
        self.arena_lock = threading.Lock()
        self.arena = Arena(arena_bytes)
        self.timing_model = timing_model
        self.realistic_timing = realistic_timing
        self.closed = False
        self._streams: list = []
        self._rr = 0
        self._thread = threading.Thread(
            target=self._run, name=f"streamforge-dev{device_id}", daemon=True
        )
        self._thread.start()

    # -- host-side control ------------------------------------------------

    def register_stream(self, stream) -> None:
        with self.cv:
            if self.closed:
                raise InvalidStateError(f"device {self.device_id} is closed")
            self._streams.append(stream)

    def configure(
        self,
        arena_bytes: int | None = None,
        timing_model: TimingModel | None | str = "keep",
        realistic_timing: bool | None = None,
    ) -> None:
        """Resize the arena and/or swap the timing model.

        Resizing requires that no allocations are live.
        """
        with self.cv:
            if arena_bytes is not None:
                with self.arena_lock:
                    if self.arena.bytes_in_use:
                        raise InvalidStateError(
                            "cannot resize the arena while allocations are live"
                        )
                    self.arena = Arena(arena_bytes)
            if timing_model != "keep":
                self.timing_model = timing_model
            if realistic_timing is not None:
                self.realistic_timing = realistic_timing

    def close(self) -> None:
        with self.cv:
            if self.closed:
                return
            self.closed = True
            self.cv.notify_all()
        self._thread.join()

    # -- introspection (tests and benchmarks) ------------------------------

    def bytes_in_use(self) -> int:
        with self.arena_lock:
            return self.arena.bytes_in_use

    def live_allocations(self) -> list[tuple[int, int, int]]:
        with self.arena_lock:
            return self.arena.live_ranges()

    def read_arena(self, base: int, nbytes: int) -> bytes:
        with self.arena_lock:
            return bytes(self.arena.storage[base : base + nbytes])

    # -- executor ----------------------------------------------------------

    def _next_locked(self):
        n = len(self._streams)
        for k in range(n):
            stream = self._streams[(self._rr + k) % n]
            if stream._pending:
                self._rr = (self._rr + k + 1) % n
                return stream, stream._pending.popleft()
        return None

    def _run(self):
        try:
            self._drain()
        finally:
            # an executor that stops for any reason must not strand sync()
            with self.cv:
                self.closed = True
                self.cv.notify_all()

    def _drain(self):
        cv = self.cv
        while True:
            with cv:
                while True:
                    if self.closed:
                        return
                    picked = self._next_locked()
                    if picked is not None:
                        break
                    cv.wait()
                stream, req = picked
                req.status = RequestStatus.RUNNING
                skipped = stream._poisoned
            if skipped:
                err: Exception | None = OffloadError(
                    f"skipped after an earlier failure on stream "
                    f"{stream.stream_id} [request seq={req.seq}]"
                )
                duration = 0.0
            else:
                err, duration = self._execute(req)
            with cv:
                req.duration = duration
                req.payload = None
                if err is None:
                    req.status = RequestStatus.DONE
                else:
                    req.status = RequestStatus.FAILED
                    req.error = err
                    if not skipped:
                        if stream._error_slot is None:
                            stream._error_slot = err
                        stream._poisoned = True
                stream._completed_seq = req.seq
                cv.notify_all()

    def _execute(self, req: Request) -> tuple[Exception | None, float]:
        err: Exception | None = None
        t0 = time.perf_counter()
        try:
            kind = req.kind
            op = req.payload
            if kind is RequestKind.ALLOC:
                self._do_alloc(op)
            elif kind is RequestKind.DEALLOC:
                self._do_dealloc(op)
            elif kind is RequestKind.TRANSFER_H2D:
                self._do_h2d(op)
            elif kind is RequestKind.TRANSFER_D2H:
                self._do_d2h(op)
            elif kind is RequestKind.TRANSFER_D2D:
                self._do_d2d(op)
            elif kind is RequestKind.INVOKE:
                self._do_invoke(op)
            else:  # pragma: no cover
                raise InvalidStateError(f"unknown request kind {kind}")
        except OffloadError as exc:
            err = type(exc)(f"{exc} [request seq={req.seq} kind={req.kind.value}]")
        except Exception as exc:  # foreign failure inside a kernel or numpy
            err = KernelExecutionError(
                f"{type(exc).__name__}: {exc} [request seq={req.seq} kind={req.kind.value}]"
            )
        wall = time.perf_counter() - t0
        duration = wall
        model = self.timing_model
        if model is not None and req.kind is not RequestKind.INVOKE:
            if req.kind in TRANSFER_KINDS:
                duration = model.transfer_seconds(req.nbytes)
            else:
                duration = model.request_seconds()
            if self.realistic_timing and duration > wall:
                time.sleep(duration - wall)
        return err, duration

    # -- request actions ----------------------------------------------------

    def _do_alloc(self, op):
        al = op.allocation
        with self.arena_lock:
            try:
                base, size = self.arena.allocate(al.alloc_id, al.nbytes, al.alignment)
            except OffloadError:
                al.state = AllocationState.FAILED
                raise
            al.base, al.size = base, size
            al.state = AllocationState.LIVE
            # deterministic debug fill for uninitialized device memory
            self.arena.storage[base : base + size] = 0xCD

    def _do_dealloc(self, op):
        al = op.allocation
        with self.arena_lock:
            if al.state is not AllocationState.LIVE:
                raise InvalidHandleError(
                    f"allocation {al.alloc_id} is {al.state.value}; cannot deallocate"
                )
            self.arena.release(al.alloc_id)
            al.state = AllocationState.FREED

    @staticmethod
    def _abs_range(view, offset: int, nbytes: int) -> int:
        al = view.allocation
        if al.state is not AllocationState.LIVE:
            raise InvalidHandleError(
                f"allocation {al.alloc_id} is {al.state.value}; cannot access"
            )
        if offset + nbytes > view.nbytes:
            raise RangeError(
                f"device range [{offset}, {offset + nbytes}) exceeds "
                f"view of {view.nbytes} bytes"
            )
        return al.base + view.offset + offset

    def _do_h2d(self, op):
        n = op.nbytes
        host = np.frombuffer(op.host, dtype=np.uint8)
        if op.offset_host + n > host.size:
            raise RangeError(
                f"host range [{op.offset_host}, {op.offset_host + n}) exceeds "
                f"buffer of {host.size} bytes"
            )
        with self.arena_lock:
            base = self._abs_range(op.dst, op.offset_device, n)
            self.arena.storage[base : base + n] = host[op.offset_host : op.offset_host + n]

    def _do_d2h(self, op):
        n = op.nbytes
        host = np.frombuffer(op.host, dtype=np.uint8)
        if op.offset_host + n > host.size:
            raise RangeError(
                f"host range [{op.offset_host}, {op.offset_host + n}) exceeds "
                f"buffer of {host.size} bytes"
            )
        with self.arena_lock:
            base = self._abs_range(op.src, op.offset_device, n)
            host[op.offset_host : op.offset_host + n] = self.arena.storage[base : base + n]

    def _do_d2d(self, op):
        n = op.nbytes
        # cross-device copies are staged internally; still one request
        # externally. Resolve each side's backend through its own allocation
        # so standalone devices (which may share ids) cannot be confused.
        src_backend = op.src.allocation._stream.device._backend
        dst_backend = op.dst.allocation._stream.device._backend
        backends = sorted(
            {id(b): b for b in (self, src_backend, dst_backend)}.values(),
            key=id,
        )
        for b in backends:
            b.arena_lock.acquire()
        try:
            src_base = self._abs_range(op.src, op.offset_src, n)
            dst_base = self._abs_range(op.dst, op.offset_dst, n)
            dst_backend.arena.storage[dst_base : dst_base + n] = src_backend.arena.storage[
                src_base : src_base + n
            ]
        finally:
            for b in reversed(backends):
                b.arena_lock.release()

    def _do_invoke(self, op):
        with self.arena_lock:
            storage = self.arena.storage
            arena_addr = storage.ctypes.data
            data = storage.data
            buffers = []
            addresses = []
            for view in op.views:
                start = self._abs_range(view, 0, view.nbytes)
                buffers.append(data[start : start + view.nbytes])
                addresses.append(arena_addr + start)
            try:
                op.runner(buffers, addresses)
            except OffloadError:
                raise
            except Exception as exc:
                raise KernelExecutionError(
                    f"kernel '{op.kernel_name}' failed: {type(exc).__name__}: {exc}"
                ) from exc
