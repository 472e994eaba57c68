/*
 * Kernel ABI for native offload modules.
 *
 * Every exported kernel has C calling convention and the shape
 *
 *     void name(ptr0, ptr1, ..., ptrN-1);
 *
 * where each parameter is the address of one argument's storage on the
 * device arena:
 *
 *   - arrays arrive as contiguous typed buffers;
 *   - scalars arrive in fixed little-endian encodings: 8 bytes for
 *     int64_t and double, 16 bytes (two doubles, real then imaginary)
 *     for double complex.
 *
 * Kernels return nothing, must not retain any address beyond the call,
 * and are responsible for interpreting their pointers correctly: arity
 * and types cannot be validated across the boundary. A sidecar text file
 * `<module>.arity` lists `name:arity` per exported kernel for smoke
 * probes.
 *
 * Keep the arithmetic evaluation order of a kernel identical to its
 * in-process twin (see the gemm comment in gemm.c); the equivalence
 * suite compares the two bit for bit. Modules are compiled with
 * -ffp-contract=off for that reason.
 */
#ifndef STREAMFORGE_KERNEL_ABI_H
#define STREAMFORGE_KERNEL_ABI_H

#include <stdint.h>

#define SF_KERNEL __attribute__((visibility("default")))

typedef struct {
    double re;
    double im;
} sf_c128;

#endif /* STREAMFORGE_KERNEL_ABI_H */
