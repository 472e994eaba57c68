"""streamforge: a stream-ordered accelerator-offload runtime.

Devices expose ordered asynchronous request streams (allocation, data
transfer, kernel invocation) against an emulated device arena, typed
offload buffers with explicit update transfers, a point-wise kernel
generator with runtime compilation, and a miniature flux-reconstruction
advection solver that exercises the whole stack.

>>> import streamforge as sf
>>> device = sf.devices[0]
>>> stream = device.get_default_stream()
>>> library = device.load_library("builtin-gemm")
>>> stream.invoke(library.mydgemm, a, b, c, m, n, k, alpha, beta)
>>> stream.sync()
"""

from .array import OffloadArray, bind
from .backend import DEFAULT_ARENA_BYTES, TimingModel
from .codegen import (
    DSL_FUNCTIONS,
    GeneratedSource,
    KernelContext,
    KernelParam,
    KernelSpec,
    PointwiseKernel,
    build_pointwise_kernel,
    compile_to_library,
    expand_body,
    generate_pointwise_source,
    prune_unused_params,
    suffix_float_constants,
)
from .device import (
    DeviceKind,
    OffloadDevice,
    configure_device,
    configure_devices,
    create_stream,
    devices,
    get_default_stream,
    get_device,
    list_devices,
)
from .errors import (
    CodegenError,
    CompileError,
    DeviceNotFoundError,
    InvalidArgumentError,
    InvalidHandleError,
    InvalidStateError,
    KernelExecutionError,
    LibraryLoadError,
    NumericalDivergenceError,
    OffloadError,
    OutOfDeviceMemoryError,
    RangeError,
    SymbolNotFoundError,
)
from .kernels import (
    KernelHandle,
    KernelLibrary,
    load_library,
    register_intrinsic_library,
    registered_intrinsic_libraries,
)
from .memory import DevicePointer
from .operators import FROperators, build_operators
from .request import Request, RequestKind, RequestStatus
from .solver import (
    AdvectionSolver,
    builtin_kernel_specs,
    SolutionState,
    SolverConfig,
    SolverResult,
    estimate_flops_per_step,
    per_step_array_transfers,
    run_simulation,
    upwind_flux,
)
from .stream import OffloadStream

__version__ = "0.1.0"

__all__ = [
    "AdvectionSolver",
    "CodegenError",
    "CompileError",
    "DEFAULT_ARENA_BYTES",
    "DSL_FUNCTIONS",
    "DeviceKind",
    "DeviceNotFoundError",
    "DevicePointer",
    "FROperators",
    "GeneratedSource",
    "InvalidArgumentError",
    "InvalidHandleError",
    "InvalidStateError",
    "KernelContext",
    "KernelExecutionError",
    "KernelHandle",
    "KernelLibrary",
    "KernelParam",
    "KernelSpec",
    "LibraryLoadError",
    "NumericalDivergenceError",
    "OffloadArray",
    "OffloadDevice",
    "OffloadError",
    "OffloadStream",
    "OutOfDeviceMemoryError",
    "PointwiseKernel",
    "RangeError",
    "Request",
    "RequestKind",
    "RequestStatus",
    "SolutionState",
    "SolverConfig",
    "SolverResult",
    "SymbolNotFoundError",
    "TimingModel",
    "bind",
    "build_operators",
    "build_pointwise_kernel",
    "builtin_kernel_specs",
    "compile_to_library",
    "configure_device",
    "configure_devices",
    "create_stream",
    "devices",
    "estimate_flops_per_step",
    "expand_body",
    "generate_pointwise_source",
    "get_default_stream",
    "get_device",
    "list_devices",
    "load_library",
    "per_step_array_transfers",
    "prune_unused_params",
    "register_intrinsic_library",
    "registered_intrinsic_libraries",
    "run_simulation",
    "suffix_float_constants",
    "upwind_flux",
]
