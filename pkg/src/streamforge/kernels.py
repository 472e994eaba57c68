"""Kernel libraries, symbol lookup, and invoke marshalling.

Two kernel providers sit behind one interface: an in-process intrinsic
registry (so the runtime is self-contained) and dynamically loaded native
shared modules. Both receive one device address per argument, in
positional order.

Kernel ABI (native modules): an exported symbol with C calling convention,
``void name(ptr0, ..., ptrN-1)`` where every parameter is the address of
argument storage on the device arena — arrays as contiguous typed buffers,
scalars as fixed little-endian encodings (8 bytes for int64/double,
16 bytes for double complex). Kernels return nothing and must not retain
addresses beyond the call. Argument arity and types cannot be validated;
the signature has to match the actual invoke arguments.

Intrinsic kernels are plain callables taking a sequence of per-argument
buffer views into the arena.
"""
from __future__ import annotations

import ctypes
import itertools
import os
import struct
import threading
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import (
    InvalidArgumentError,
    LibraryLoadError,
    SymbolNotFoundError,
)
from .memory import DevicePointer, as_host_view
from .request import DeviceView, InvokeOp, RequestKind

MAX_INVOKE_ARGS = 16

_SUPPORTED_ARRAY_DTYPES = {
    np.dtype(np.int64): "i64",
    np.dtype(np.float32): "f32",
    np.dtype(np.float64): "f64",
    np.dtype(np.complex128): "c128",
}

_library_ids = itertools.count(1)

_intrinsic_registry: dict[str, dict[str, Callable]] = {}
_registry_lock = threading.Lock()


def register_intrinsic_library(name: str, kernels: Mapping[str, Callable]) -> None:
    """Register an in-process kernel library under ``name``.

    Each kernel is a callable taking a sequence of buffer views (one per
    invoke argument). The name becomes loadable through ``load_library`` on
    any emulated device.
    """
    if not name or not isinstance(name, str):
        raise InvalidArgumentError("library name must be a non-empty string")
    table = dict(kernels)
    for sym, fn in table.items():
        if not callable(fn):
            raise InvalidArgumentError(f"kernel {sym!r} is not callable")
    with _registry_lock:
        if name in _intrinsic_registry:
            raise InvalidArgumentError(f"intrinsic library {name!r} already registered")
        _intrinsic_registry[name] = table


def registered_intrinsic_libraries() -> list[str]:
    with _registry_lock:
        return sorted(_intrinsic_registry)


@dataclass(frozen=True)
class KernelHandle:
    """A resolved kernel symbol; equal when library and name agree."""

    library_id: int
    name: str
    device_id: int = field(compare=False)
    call: Callable = field(compare=False, repr=False)  # call(buffers, addresses)
    arity: int | None = field(default=None, compare=False)


class KernelLibrary:
    """A loaded kernel provider bound to one device."""

    def __init__(self, device_id: int, source: str):
        self.library_id = next(_library_ids)
        self.device_id = device_id
        self.source = source
        self._handles: dict[str, KernelHandle] = {}

    def get_kernel(self, name: str) -> KernelHandle:
        handle = self._handles.get(name)
        if handle is None:
            handle = self._resolve(name)
            self._handles[name] = handle
        return handle

    def _resolve(self, name: str) -> KernelHandle:  # pragma: no cover - abstract
        raise NotImplementedError

    def symbols(self) -> tuple[str, ...]:  # pragma: no cover - abstract
        raise NotImplementedError

    def __getattr__(self, name: str) -> KernelHandle:
        if name.startswith("_"):
            raise AttributeError(name)
        return self.get_kernel(name)

    def __repr__(self):
        return f"{type(self).__name__}({self.source!r}, device={self.device_id})"


class IntrinsicLibrary(KernelLibrary):
    def __init__(self, device_id: int, name: str, table: dict[str, Callable]):
        super().__init__(device_id, name)
        self._table = table

    def _resolve(self, name: str) -> KernelHandle:
        fn = self._table.get(name)
        if fn is None:
            raise SymbolNotFoundError(
                f"no kernel {name!r} in intrinsic library {self.source!r}"
            )
        return KernelHandle(
            self.library_id,
            name,
            self.device_id,
            lambda buffers, addresses, _fn=fn: _fn(buffers),
        )

    def symbols(self) -> tuple[str, ...]:
        return tuple(sorted(self._table))


class NativeLibrary(KernelLibrary):
    """A shared module loaded through the dynamic linker.

    An optional sidecar file ``<module>.arity`` with ``name:arity`` lines
    enumerates the exported kernels for probing.
    """

    def __init__(self, device_id: int, path: str):
        super().__init__(device_id, path)
        try:
            self._cdll = ctypes.CDLL(os.path.abspath(path))
        except OSError as exc:
            raise LibraryLoadError(f"cannot load {path!r}: {exc}") from exc
        self._arity: dict[str, int] = {}
        sidecar = os.path.splitext(path)[0] + ".arity"
        if os.path.exists(sidecar):
            with open(sidecar, "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line or line.startswith("#"):
                        continue
                    sym, _, arity = line.partition(":")
                    self._arity[sym.strip()] = int(arity)

    def _resolve(self, name: str) -> KernelHandle:
        try:
            fn = getattr(self._cdll, name)
        except AttributeError as exc:
            raise SymbolNotFoundError(
                f"no symbol {name!r} in native module {self.source!r}"
            ) from exc
        fn.restype = None

        def call(buffers, addresses, _fn=fn):
            _fn(*(ctypes.c_void_p(addr) for addr in addresses))

        return KernelHandle(
            self.library_id, name, self.device_id, call, self._arity.get(name)
        )

    def symbols(self) -> tuple[str, ...]:
        return tuple(sorted(self._arity))


def load_library(device, path_or_name: str) -> KernelLibrary:
    """Load a kernel library onto ``device``.

    A registered intrinsic name loads the in-process provider; otherwise
    the argument must be the path of a native shared module built for the
    kernel ABI. Handles are reusable across all streams of the device.
    """
    with _registry_lock:
        table = _intrinsic_registry.get(path_or_name)
    if table is not None:
        return IntrinsicLibrary(device.device_id, path_or_name, table)
    if os.path.exists(path_or_name):
        return NativeLibrary(device.device_id, path_or_name)
    raise LibraryLoadError(
        f"{path_or_name!r} is neither a registered intrinsic library "
        f"nor an existing native module"
    )


# -- invoke marshalling -------------------------------------------------------


def encode_scalar(value) -> bytes:
    """Fixed ABI encoding of a scalar argument (little endian)."""
    if isinstance(value, (bool, np.bool_)):
        value = int(value)
    if isinstance(value, np.integer):
        value = int(value)
    elif isinstance(value, np.floating):
        value = float(value)
    elif isinstance(value, np.complexfloating):
        value = complex(value)
    try:
        if isinstance(value, int):
            return struct.pack("<q", value)
        if isinstance(value, float):
            return struct.pack("<d", value)
        if isinstance(value, complex):
            return struct.pack("<dd", value.real, value.imag)
    except struct.error as exc:
        raise InvalidArgumentError(f"scalar {value!r} does not fit the ABI: {exc}") from exc
    raise InvalidArgumentError(
        f"unsupported invoke argument of type {type(value).__name__}"
    )


def enqueue_invoke(stream, kernel: KernelHandle, args) -> None:
    from .array import OffloadArray

    if not isinstance(kernel, KernelHandle):
        raise InvalidArgumentError(f"expected a KernelHandle, got {type(kernel).__name__}")
    if kernel.device_id != stream.device_id:
        raise InvalidArgumentError(
            f"kernel {kernel.name!r} belongs to device {kernel.device_id}, "
            f"stream is on device {stream.device_id}"
        )
    if len(args) > MAX_INVOKE_ARGS:
        raise InvalidArgumentError(
            f"kernels take at most {MAX_INVOKE_ARGS} arguments, got {len(args)}"
        )

    # classify first; no request is enqueued if any argument is malformed
    host_arrays: list[tuple[int, memoryview, int]] = []  # (position, view, nbytes)
    scalars: list[tuple[int, bytes]] = []
    plan: list = [None] * len(args)
    for pos, arg in enumerate(args):
        if isinstance(arg, OffloadArray):
            if arg.device_ptr.device_id != stream.device_id:
                raise InvalidArgumentError(
                    f"argument {pos} lives on device {arg.device_ptr.device_id}"
                )
            plan[pos] = ("device", arg.device_ptr)
        elif isinstance(arg, DevicePointer):
            if arg.device_id != stream.device_id:
                raise InvalidArgumentError(
                    f"argument {pos} lives on device {arg.device_id}"
                )
            plan[pos] = ("device", arg)
        elif isinstance(arg, np.ndarray):
            if arg.dtype not in _SUPPORTED_ARRAY_DTYPES:
                raise InvalidArgumentError(
                    f"argument {pos}: unsupported array dtype {arg.dtype}"
                )
            if arg.size == 0:
                raise InvalidArgumentError(f"argument {pos}: empty array")
            view = as_host_view(arg, writable=True)  # copy-out requires writability
            host_arrays.append((pos, view, arg.nbytes))
            plan[pos] = ("host_array", None)
        else:
            scalars.append((pos, encode_scalar(arg)))
            plan[pos] = ("scalar", None)

    staged: list[tuple[DevicePointer, str]] = []
    # copy-in for raw host arrays, then scalars, each in positional order
    for pos, view, nbytes in host_arrays:
        ptr = stream._allocate(nbytes, auto=True, arg_kind="host_array", label="stage-alloc")
        stream._enqueue(
            RequestKind.TRANSFER_H2D,
            _h2d_op(view, ptr, nbytes),
            nbytes=nbytes,
            auto=True,
            arg_kind="host_array",
            label="copy-in",
        )
        plan[pos] = ("device", ptr)
        staged.append((ptr, "host_array"))
    for pos, packed in scalars:
        ptr = stream._allocate(len(packed), 8, auto=True, arg_kind="scalar", label="stage-alloc")
        stream._enqueue(
            RequestKind.TRANSFER_H2D,
            _h2d_op(memoryview(packed), ptr, len(packed)),
            nbytes=len(packed),
            auto=True,
            arg_kind="scalar",
            label="copy-in",
        )
        plan[pos] = ("device", ptr)
        staged.append((ptr, "scalar"))

    views = tuple(
        DeviceView(ptr._allocation, ptr.offset, ptr.nbytes) for _, ptr in plan
    )
    stream._enqueue(
        RequestKind.INVOKE,
        InvokeOp(kernel.name, kernel.call, views),
        label=f"invoke:{kernel.name}",
    )

    # copy-out for raw host arrays (positional order); scalars are copy-in only
    for (pos, view, nbytes), (ptr, _) in zip(host_arrays, staged):
        stream._enqueue(
            RequestKind.TRANSFER_D2H,
            _d2h_op(ptr, view, nbytes),
            nbytes=nbytes,
            auto=True,
            arg_kind="host_array",
            label="copy-out",
        )
    for ptr, arg_kind in staged:
        stream._deallocate(ptr, auto=True, arg_kind=arg_kind, label="stage-free")


def _h2d_op(view: memoryview, ptr: DevicePointer, nbytes: int):
    from .request import H2DOp

    return H2DOp(view, DeviceView(ptr._allocation, ptr.offset, ptr.nbytes), nbytes, 0, 0)


def _d2h_op(ptr: DevicePointer, view: memoryview, nbytes: int):
    from .request import D2HOp

    return D2HOp(DeviceView(ptr._allocation, ptr.offset, ptr.nbytes), view, nbytes, 0, 0)


# -- built-in intrinsic kernels --------------------------------------------------
#
# The element-wise and GEMM builtins use a pinned operation order so that a
# native implementation can reproduce them bit for bit: GEMM pre-scales C by
# beta (beta == 0 writes zeros), then accumulates (alpha*a[i,p])*b[p,j] over
# ascending p. Keep any alternative provider identical.


def _dec_i64(buf) -> int:
    return int(np.frombuffer(buf, dtype="<i8", count=1)[0])


def _dec_f64(buf) -> float:
    return float(np.frombuffer(buf, dtype="<f8", count=1)[0])


def _dec_c128(buf):
    return np.frombuffer(buf, dtype="<c16", count=1)[0]


_ELEMENTWISE_DTYPES = {
    "i64": (np.dtype(np.int64), _dec_i64),
    "f32": (np.dtype(np.float32), lambda buf: np.float32(_dec_f64(buf))),
    "f64": (np.dtype(np.float64), lambda buf: np.float64(_dec_f64(buf))),
    "c128": (np.dtype(np.complex128), _dec_c128),
}


def _make_elementwise(code: str) -> dict[str, Callable]:
    dtype, decode_value = _ELEMENTWISE_DTYPES[code]

    def _arr(buf, n):
        return np.frombuffer(buf, dtype=dtype, count=n)

    def fill(buffers):
        n = _dec_i64(buffers[2])
        _arr(buffers[0], n)[:] = decode_value(buffers[1])

    def zero(buffers):
        n = _dec_i64(buffers[1])
        _arr(buffers[0], n)[:] = 0

    def add(buffers):
        n = _dec_i64(buffers[2])
        x = _arr(buffers[0], n)
        y = _arr(buffers[1], n)
        np.add(x, y, out=x)

    def multiply(buffers):
        n = _dec_i64(buffers[2])
        x = _arr(buffers[0], n)
        y = _arr(buffers[1], n)
        if dtype.kind == "c":
            # componentwise with separate roundings; numpy's fused complex
            # multiply would diverge from the native kernels' fixed order
            re = x.real * y.real - x.imag * y.imag
            im = x.real * y.imag + x.imag * y.real
            x.real = re
            x.imag = im
        else:
            np.multiply(x, y, out=x)

    return {
        f"fill_{code}": fill,
        f"zero_{code}": zero,
        f"add_{code}": add,
        f"multiply_{code}": multiply,
    }


def _gemm_kernel(buffers, dtype):
    m = _dec_i64(buffers[3])
    n = _dec_i64(buffers[4])
    k = _dec_i64(buffers[5])
    alpha = dtype.type(_dec_f64(buffers[6]))
    beta = dtype.type(_dec_f64(buffers[7]))
    a = np.frombuffer(buffers[0], dtype=dtype, count=m * k).reshape(m, k)
    b = np.frombuffer(buffers[1], dtype=dtype, count=k * n).reshape(k, n)
    c = np.frombuffer(buffers[2], dtype=dtype, count=m * n).reshape(m, n)
    if beta == 0:
        c[:] = 0
    else:
        np.multiply(c, beta, out=c)
    scratch = np.empty_like(c)
    for p in range(k):
        np.multiply((alpha * a[:, p])[:, None], b[p, :], out=scratch)
        np.add(c, scratch, out=c)


def _register_builtins() -> None:
    table: dict[str, Callable] = {}
    for code in _ELEMENTWISE_DTYPES:
        table.update(_make_elementwise(code))
    register_intrinsic_library("builtin-elementwise", table)

    f64 = np.dtype(np.float64)
    f32 = np.dtype(np.float32)
    gemm_f64 = lambda buffers: _gemm_kernel(buffers, f64)
    gemm_f32 = lambda buffers: _gemm_kernel(buffers, f32)
    register_intrinsic_library(
        "builtin-gemm",
        {
            "gemm_f64": gemm_f64,
            "gemm_f32": gemm_f32,
            # canonical matrix-multiply entry points matching the native module
            "mydgemm": gemm_f64,
            "mysgemm": gemm_f32,
        },
    )


_register_builtins()


def get_builtin_kernel(device, library: str, name: str) -> KernelHandle:
    """Cached lookup of a built-in kernel on ``device``."""
    cache = device._kernel_cache
    key = (library, name)
    handle = cache.get(key)
    if handle is None:
        lib = cache.get(library)
        if lib is None:
            lib = load_library(device, library)
            cache[library] = lib
        handle = lib.get_kernel(name)
        cache[key] = handle
    return handle
