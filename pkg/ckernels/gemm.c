/*
 * Reference GEMM kernels: C <- alpha*A*B + beta*C, row major.
 *
 * The evaluation order is pinned so results match the in-process
 * implementation bit for bit:
 *
 *   1. scale pass: beta == 0 writes zeros, otherwise C[i,j] = beta*C[i,j];
 *   2. accumulate over ascending p: C[i,j] += (alpha*A[i,p]) * B[p,j].
 *
 * The loops are tiled over rows and the reduction index for locality;
 * tiling never reorders the per-element accumulation because p-tiles are
 * visited in ascending order. Parallelism splits whole row blocks, so
 * every element is owned by exactly one thread and results do not depend
 * on the thread count.
 *
 * Define CK_USE_CBLAS to delegate to a platform BLAS instead (faster, but
 * then bitwise equivalence with the in-process twin no longer holds).
 */
#include "kernel_abi.h"

#ifdef CK_USE_CBLAS
#include <cblas.h>
#endif

#define TILE 64

static void gemm_core_f64(const double *a, const double *b, double *c,
                          int64_t m, int64_t n, int64_t k,
                          double alpha, double beta)
{
#ifdef CK_USE_CBLAS
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans,
                m, n, k, alpha, a, k, b, n, beta, c, n);
#else
    #pragma omp parallel for schedule(static)
    for (int64_t ii = 0; ii < m; ii += TILE) {
        const int64_t imax = ii + TILE < m ? ii + TILE : m;
        for (int64_t i = ii; i < imax; ++i) {
            double *row = c + i * n;
            if (beta == 0.0) {
                for (int64_t j = 0; j < n; ++j)
                    row[j] = 0.0;
            } else {
                for (int64_t j = 0; j < n; ++j)
                    row[j] = beta * row[j];
            }
        }
        for (int64_t pp = 0; pp < k; pp += TILE) {
            const int64_t pmax = pp + TILE < k ? pp + TILE : k;
            for (int64_t i = ii; i < imax; ++i) {
                double *row = c + i * n;
                for (int64_t p = pp; p < pmax; ++p) {
                    const double scaled = alpha * a[i * k + p];
                    const double *brow = b + p * n;
                    for (int64_t j = 0; j < n; ++j)
                        row[j] += scaled * brow[j];
                }
            }
        }
    }
#endif
}

static void gemm_core_f32(const float *a, const float *b, float *c,
                          int64_t m, int64_t n, int64_t k,
                          float alpha, float beta)
{
#ifdef CK_USE_CBLAS
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans,
                m, n, k, alpha, a, k, b, n, beta, c, n);
#else
    #pragma omp parallel for schedule(static)
    for (int64_t ii = 0; ii < m; ii += TILE) {
        const int64_t imax = ii + TILE < m ? ii + TILE : m;
        for (int64_t i = ii; i < imax; ++i) {
            float *row = c + i * n;
            if (beta == 0.0f) {
                for (int64_t j = 0; j < n; ++j)
                    row[j] = 0.0f;
            } else {
                for (int64_t j = 0; j < n; ++j)
                    row[j] = beta * row[j];
            }
        }
        for (int64_t pp = 0; pp < k; pp += TILE) {
            const int64_t pmax = pp + TILE < k ? pp + TILE : k;
            for (int64_t i = ii; i < imax; ++i) {
                float *row = c + i * n;
                for (int64_t p = pp; p < pmax; ++p) {
                    const float scaled = alpha * a[i * k + p];
                    const float *brow = b + p * n;
                    for (int64_t j = 0; j < n; ++j)
                        row[j] += scaled * brow[j];
                }
            }
        }
    }
#endif
}

SF_KERNEL
void mydgemm(const double *a, const double *b, double *c,
             const int64_t *m, const int64_t *n, const int64_t *k,
             const double *alpha, const double *beta)
{
    gemm_core_f64(a, b, c, *m, *n, *k, *alpha, *beta);
}

SF_KERNEL
void mysgemm(const float *a, const float *b, float *c,
             const int64_t *m, const int64_t *n, const int64_t *k,
             const double *alpha, const double *beta)
{
    /* scalar arguments always arrive as 8-byte doubles */
    gemm_core_f32(a, b, c, *m, *n, *k, (float)*alpha, (float)*beta);
}

SF_KERNEL
void gemm_f64(const double *a, const double *b, double *c,
              const int64_t *m, const int64_t *n, const int64_t *k,
              const double *alpha, const double *beta)
{
    gemm_core_f64(a, b, c, *m, *n, *k, *alpha, *beta);
}

SF_KERNEL
void gemm_f32(const float *a, const float *b, float *c,
              const int64_t *m, const int64_t *n, const int64_t *k,
              const double *alpha, const double *beta)
{
    gemm_core_f32(a, b, c, *m, *n, *k, (float)*alpha, (float)*beta);
}
