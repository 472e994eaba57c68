"""Shared test utilities: host<->device shuttling and the serial reference
executor used as the oracle for stream-ordering properties."""
from __future__ import annotations

import numpy as np

from streamforge import RequestKind


def fetch_bytes(stream, ptr, nbytes=None) -> np.ndarray:
    """Synchronously read a device buffer back as uint8."""
    n = ptr.nbytes if nbytes is None else nbytes
    out = np.empty(n, dtype=np.uint8)
    stream.transfer_device2host(ptr, out, n)
    stream.sync()
    return out


def upload_bytes(stream, ptr, data) -> None:
    data = np.ascontiguousarray(data).view(np.uint8).reshape(-1)
    stream.transfer_host2device(data, ptr, data.size)
    stream.sync()


def transfers_in(log, *, auto=None, arg_kind="any"):
    picked = []
    for req in log:
        if req.kind not in (
            RequestKind.TRANSFER_H2D,
            RequestKind.TRANSFER_D2H,
            RequestKind.TRANSFER_D2D,
        ):
            continue
        if auto is not None and req.auto != auto:
            continue
        if arg_kind != "any" and req.arg_kind != arg_kind:
            continue
        picked.append(req)
    return picked


class SerialArenaModel:
    """Reference executor: the same operations applied synchronously,
    one by one, against a plain byte image with a first-fit allocator.

    Deliberately independent of the runtime: ~80 lines of direct state
    manipulation, no queues, no threads. Final memory states of the real
    device must match this byte for byte.
    """

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.storage = np.zeros(capacity, dtype=np.uint8)
        self.free = [(0, capacity)]
        self.live: dict[int, tuple[int, int]] = {}
        self.bytes_in_use = 0

    @staticmethod
    def _round_up(value, granule):
        return -(-value // granule) * granule

    def alloc(self, handle: int, nbytes: int, alignment: int) -> None:
        size = self._round_up(nbytes, alignment)
        for i, (start, end) in enumerate(self.free):
            base = self._round_up(start, alignment)
            if base + size <= end:
                repl = []
                if start < base:
                    repl.append((start, base))
                if base + size < end:
                    repl.append((base + size, end))
                self.free[i : i + 1] = repl
                self.live[handle] = (base, size)
                self.bytes_in_use += size
                self.storage[base : base + size] = 0xCD
                return
        raise MemoryError(f"model arena exhausted ({nbytes} bytes)")

    def dealloc(self, handle: int) -> None:
        base, size = self.live.pop(handle)
        self.bytes_in_use -= size
        self.free.append((base, base + size))
        self.free.sort()
        merged = []
        for start, end in self.free:
            if merged and start <= merged[-1][1]:
                merged[-1] = (merged[-1][0], max(merged[-1][1], end))
            else:
                merged.append((start, end))
        self.free = merged

    def h2d(self, handle, data: np.ndarray, nbytes, off_host=0, off_dev=0) -> None:
        base, _ = self.live[handle]
        self.storage[base + off_dev : base + off_dev + nbytes] = data[
            off_host : off_host + nbytes
        ]

    def d2h(self, handle, out: np.ndarray, nbytes, off_dev=0, off_host=0) -> None:
        base, _ = self.live[handle]
        out[off_host : off_host + nbytes] = self.storage[
            base + off_dev : base + off_dev + nbytes
        ]

    def d2d(self, src, dst, nbytes, off_src=0, off_dst=0) -> None:
        sbase, _ = self.live[src]
        dbase, _ = self.live[dst]
        self.storage[dbase + off_dst : dbase + off_dst + nbytes] = self.storage[
            sbase + off_src : sbase + off_src + nbytes
        ]

    def _f64(self, handle, count):
        base, _ = self.live[handle]
        return self.storage[base : base + 8 * count].view("<f8")

    def fill(self, handle, value: float, count: int) -> None:
        self._f64(handle, count)[:] = value

    def add(self, dst, src, count: int) -> None:
        x = self._f64(dst, count)
        y = self._f64(src, count)
        np.add(x, y, out=x)

    def multiply(self, dst, src, count: int) -> None:
        x = self._f64(dst, count)
        y = self._f64(src, count)
        np.multiply(x, y, out=x)

    def read(self, handle) -> bytes:
        base, size = self.live[handle]
        return bytes(self.storage[base : base + size])
