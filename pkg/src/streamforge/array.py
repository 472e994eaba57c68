"""Typed device buffers bound to host arrays.

An OffloadArray owns a device buffer sized for its dtype and shape, plus
(optionally) a bound host array. Transfers between the two are explicit:
``update_device``/``update_host`` enqueue full-buffer copies on the owning
stream. When such an array is passed to ``invoke``, no automatic
copy-in/copy-out happens — the kernel receives the persistent device
buffer directly.
"""
from __future__ import annotations

import numpy as np

from .errors import InvalidArgumentError, InvalidStateError
from .memory import DevicePointer

_DTYPE_CODES = {
    np.dtype(np.int64): "i64",
    np.dtype(np.float32): "f32",
    np.dtype(np.float64): "f64",
    np.dtype(np.complex128): "c128",
}


class OffloadArray:
    """A device buffer with dtype/shape metadata, optionally host-bound."""

    def __init__(self, stream, shape, dtype, device_ptr: DevicePointer, host=None):
        self._stream = stream
        self._shape = tuple(int(e) for e in shape)
        self._dtype = np.dtype(dtype)
        self._device_ptr = device_ptr
        self._host = host

    # metadata is immutable after creation
    @property
    def shape(self) -> tuple[int, ...]:
        return self._shape

    @property
    def dtype(self) -> np.dtype:
        return self._dtype

    @property
    def size(self) -> int:
        return int(np.prod(self._shape))

    @property
    def nbytes(self) -> int:
        return self.size * self._dtype.itemsize

    @property
    def device_ptr(self) -> DevicePointer:
        return self._device_ptr

    @property
    def stream(self):
        return self._stream

    @property
    def host_array(self):
        return self._host

    def __repr__(self):
        return (
            f"OffloadArray(shape={self._shape}, dtype={self._dtype}, "
            f"device={self._device_ptr.device_id})"
        )

    # -- transfers ---------------------------------------------------------

    def update_device(self) -> None:
        """Enqueue a host-to-device copy of the whole buffer."""
        if self._host is None:
            raise InvalidStateError("array has no host binding")
        self._stream.transfer_host2device(self._host, self._device_ptr, self.nbytes)

    def update_host(self) -> None:
        """Enqueue a device-to-host copy of the whole buffer."""
        if self._host is None:
            raise InvalidStateError("array has no host binding")
        self._stream.transfer_device2host(self._device_ptr, self._host, self.nbytes)

    # -- element-wise device operations -------------------------------------

    def _elementwise(self, name: str, *extra_args) -> None:
        from .kernels import get_builtin_kernel

        code = _DTYPE_CODES[self._dtype]
        kernel = get_builtin_kernel(
            self._stream.device, "builtin-elementwise", f"{name}_{code}"
        )
        self._stream.invoke(kernel, self, *extra_args, np.int64(self.size))

    def fill(self, value) -> None:
        """Set every element to ``value`` (in place, on the device)."""
        if self._dtype.kind == "i":
            value = int(value)
        elif self._dtype.kind == "c":
            value = complex(value)
        else:
            value = float(value)
        self._elementwise("fill", value)

    def zero(self) -> None:
        """Set every element to zero (in place, on the device)."""
        self._elementwise("zero")

    def add(self, other: "OffloadArray") -> None:
        """Element-wise in-place add of another array with identical
        dtype and shape."""
        self._check_pair(other)
        self._elementwise("add", other)

    def multiply(self, other: "OffloadArray") -> None:
        """Element-wise in-place multiply by another array with identical
        dtype and shape."""
        self._check_pair(other)
        self._elementwise("multiply", other)

    def _check_pair(self, other) -> None:
        if not isinstance(other, OffloadArray):
            raise InvalidArgumentError(
                f"expected an OffloadArray, got {type(other).__name__}"
            )
        if other.dtype != self._dtype or other.shape != self._shape:
            raise InvalidArgumentError(
                f"operand mismatch: {other.dtype}{other.shape} vs "
                f"{self._dtype}{self._shape}"
            )
        if other._device_ptr.device_id != self._device_ptr.device_id:
            raise InvalidArgumentError("operands live on different devices")


def bind(stream, host_array, update_device: bool = True) -> OffloadArray:
    """Bind a host array to a fresh device buffer on ``stream``.

    The host array must be C-contiguous with a supported dtype. With
    ``update_device`` (the default) a host-to-device populate is enqueued;
    otherwise the device buffer starts with the deterministic debug fill
    pattern (0xCD bytes).
    """
    if not isinstance(host_array, np.ndarray):
        raise InvalidArgumentError(
            f"only numpy arrays can be bound, got {type(host_array).__name__}"
        )
    if host_array.dtype not in _DTYPE_CODES:
        raise InvalidArgumentError(f"unsupported dtype {host_array.dtype}")
    if host_array.ndim == 0 or any(e < 1 for e in host_array.shape):
        raise InvalidArgumentError(f"degenerate shape {host_array.shape}")
    if not host_array.flags.c_contiguous:
        raise InvalidArgumentError("host array must be C-contiguous (row-major)")
    ptr = stream._allocate(host_array.nbytes, label="array-alloc")
    array = OffloadArray(stream, host_array.shape, host_array.dtype, ptr, host_array)
    if update_device:
        array.update_device()
    return array
