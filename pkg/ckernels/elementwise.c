/*
 * Element-wise array kernels: fill, zero, add, multiply for int64, float,
 * double, and double-complex buffers. The first argument is updated in
 * place; `n` is the element count.
 *
 * Complex multiply uses the plain componentwise formulas so results match
 * the in-process twin bit for bit (no Annex G special-casing).
 */
#include "kernel_abi.h"

#define EW_LOOP(body)                                    \
    do {                                                 \
        const int64_t count = *n;                        \
        _Pragma("omp parallel for schedule(static)")     \
        for (int64_t i = 0; i < count; ++i) {            \
            body;                                        \
        }                                                \
    } while (0)

/* --- int64 ----------------------------------------------------------- */

SF_KERNEL
void fill_i64(int64_t *x, const int64_t *value, const int64_t *n)
{
    const int64_t v = *value;
    EW_LOOP(x[i] = v);
}

SF_KERNEL
void zero_i64(int64_t *x, const int64_t *n)
{
    EW_LOOP(x[i] = 0);
}

SF_KERNEL
void add_i64(int64_t *x, const int64_t *y, const int64_t *n)
{
    EW_LOOP(x[i] = x[i] + y[i]);
}

SF_KERNEL
void multiply_i64(int64_t *x, const int64_t *y, const int64_t *n)
{
    EW_LOOP(x[i] = x[i] * y[i]);
}

/* --- float (value scalars arrive as 8-byte doubles) ------------------- */

SF_KERNEL
void fill_f32(float *x, const double *value, const int64_t *n)
{
    const float v = (float)*value;
    EW_LOOP(x[i] = v);
}

SF_KERNEL
void zero_f32(float *x, const int64_t *n)
{
    EW_LOOP(x[i] = 0.0f);
}

SF_KERNEL
void add_f32(float *x, const float *y, const int64_t *n)
{
    EW_LOOP(x[i] = x[i] + y[i]);
}

SF_KERNEL
void multiply_f32(float *x, const float *y, const int64_t *n)
{
    EW_LOOP(x[i] = x[i] * y[i]);
}

/* --- double ------------------------------------------------------------ */

SF_KERNEL
void fill_f64(double *x, const double *value, const int64_t *n)
{
    const double v = *value;
    EW_LOOP(x[i] = v);
}

SF_KERNEL
void zero_f64(double *x, const int64_t *n)
{
    EW_LOOP(x[i] = 0.0);
}

SF_KERNEL
void add_f64(double *x, const double *y, const int64_t *n)
{
    EW_LOOP(x[i] = x[i] + y[i]);
}

SF_KERNEL
void multiply_f64(double *x, const double *y, const int64_t *n)
{
    EW_LOOP(x[i] = x[i] * y[i]);
}

/* --- double complex ------------------------------------------------------ */

SF_KERNEL
void fill_c128(sf_c128 *x, const sf_c128 *value, const int64_t *n)
{
    const sf_c128 v = *value;
    EW_LOOP(x[i] = v);
}

SF_KERNEL
void zero_c128(sf_c128 *x, const int64_t *n)
{
    const sf_c128 v = {0.0, 0.0};
    EW_LOOP(x[i] = v);
}

SF_KERNEL
void add_c128(sf_c128 *x, const sf_c128 *y, const int64_t *n)
{
    EW_LOOP({
        x[i].re = x[i].re + y[i].re;
        x[i].im = x[i].im + y[i].im;
    });
}

SF_KERNEL
void multiply_c128(sf_c128 *x, const sf_c128 *y, const int64_t *n)
{
    EW_LOOP({
        const double re = x[i].re * y[i].re - x[i].im * y[i].im;
        const double im = x[i].re * y[i].im + x[i].im * y[i].re;
        x[i].re = re;
        x[i].im = im;
    });
}
