"""Exception hierarchy for the offload runtime."""


class OffloadError(Exception):
    """Base class for every error raised by the runtime."""


class DeviceNotFoundError(OffloadError, LookupError):
    """An operation referenced a device id that is not registered."""


class InvalidArgumentError(OffloadError, ValueError):
    """A request was malformed and rejected at enqueue time."""


class InvalidHandleError(OffloadError):
    """A device pointer was used after deallocation (or double freed)."""


class InvalidStateError(OffloadError):
    """The operation is not permitted in the object's current state."""


class RangeError(OffloadError):
    """A transfer touched bytes outside of a buffer's bounds."""


class OutOfDeviceMemoryError(OffloadError, MemoryError):
    """The device arena cannot satisfy an allocation request."""


class LibraryLoadError(OffloadError):
    """A kernel library could not be loaded."""


class SymbolNotFoundError(OffloadError, AttributeError):
    """A kernel name did not resolve inside its library."""


class KernelExecutionError(OffloadError):
    """A kernel raised (or trapped) while executing on the device."""


class CodegenError(OffloadError):
    """Kernel source generation failed (bad template, placeholder, ...)."""


class CompileError(OffloadError):
    """The native compiler rejected generated source.

    The captured compiler output is available as ``diagnostics``.
    """

    def __init__(self, message: str, diagnostics: str = ""):
        super().__init__(message)
        self.diagnostics = diagnostics


class NumericalDivergenceError(OffloadError):
    """The solver produced non-finite values."""
