#include "plab/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <cmath>
#include <cstring>

// AVX2 variants of the scalar kernels. Four doubles per lane group; lanes
// always carry independent output elements, so rounding matches the scalar
// reference exactly. _mm256_mul_pd + _mm256_add_pd round separately like
// scalar mul/add (no FMA; the TU is compiled without -mfma and with
// -ffp-contract=off so the compiler cannot fuse them either).

namespace plab {
namespace {

void matmul_avx2(double* dst, const double* a, const double* b,
                 std::int64_t m, std::int64_t k, std::int64_t n,
                 bool accumulate) {
    if (!accumulate) {
        std::memset(dst, 0, static_cast<std::size_t>(m * n) * sizeof(double));
    }
    const std::int64_t n4 = n & ~std::int64_t{3};
    for (std::int64_t i = 0; i < m; ++i) {
        double* drow = dst + i * n;
        const double* arow = a + i * k;
        for (std::int64_t l = 0; l < k; ++l) {
            const double av = arow[l];
            const double* brow = b + l * n;
            const __m256d avv = _mm256_set1_pd(av);
            std::int64_t j = 0;
            for (; j < n4; j += 4) {
                const __m256d bv = _mm256_loadu_pd(brow + j);
                const __m256d dv = _mm256_loadu_pd(drow + j);
                _mm256_storeu_pd(drow + j,
                                 _mm256_add_pd(dv, _mm256_mul_pd(avv, bv)));
            }
            for (; j < n; ++j) {
                drow[j] += av * brow[j];
            }
        }
    }
}

void add_avx2(double* dst, const double* a, const double* b, std::int64_t n) {
    const std::int64_t n4 = n & ~std::int64_t{3};
    std::int64_t i = 0;
    for (; i < n4; i += 4) {
        _mm256_storeu_pd(
            dst + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) dst[i] = a[i] + b[i];
}

void mul_avx2(double* dst, const double* a, const double* b, std::int64_t n) {
    const std::int64_t n4 = n & ~std::int64_t{3};
    std::int64_t i = 0;
    for (; i < n4; i += 4) {
        _mm256_storeu_pd(
            dst + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    }
    for (; i < n; ++i) dst[i] = a[i] * b[i];
}

void scale_avx2(double* dst, const double* a, double alpha, std::int64_t n) {
    const __m256d av = _mm256_set1_pd(alpha);
    const std::int64_t n4 = n & ~std::int64_t{3};
    std::int64_t i = 0;
    for (; i < n4; i += 4) {
        _mm256_storeu_pd(dst + i, _mm256_mul_pd(av, _mm256_loadu_pd(a + i)));
    }
    for (; i < n; ++i) dst[i] = alpha * a[i];
}

void axpy_avx2(double* dst, double alpha, const double* x, std::int64_t n) {
    const __m256d av = _mm256_set1_pd(alpha);
    const std::int64_t n4 = n & ~std::int64_t{3};
    std::int64_t i = 0;
    for (; i < n4; i += 4) {
        const __m256d dv = _mm256_loadu_pd(dst + i);
        _mm256_storeu_pd(
            dst + i, _mm256_add_pd(dv, _mm256_mul_pd(av, _mm256_loadu_pd(x + i))));
    }
    for (; i < n; ++i) dst[i] += alpha * x[i];
}

// Masked parameters fall back to the scalar loop; masks only occur on the
// (small) padded prompt tensors. _mm256_sqrt_pd and _mm256_div_pd are
// correctly rounded, so the vector path stays bit-exact.
void adam_avx2(double* param, double* m, double* v, const double* grad,
               const unsigned char* mask, std::int64_t n, double lr,
               double beta1, double beta2, double eps, double bc1,
               double bc2) {
    if (mask) {
        scalar_kernels().adam(param, m, v, grad, mask, n, lr, beta1, beta2,
                              eps, bc1, bc2);
        return;
    }
    const __m256d b1 = _mm256_set1_pd(beta1);
    const __m256d b2 = _mm256_set1_pd(beta2);
    const __m256d omb1 = _mm256_set1_pd(1.0 - beta1);
    const __m256d omb2 = _mm256_set1_pd(1.0 - beta2);
    const __m256d bc1v = _mm256_set1_pd(bc1);
    const __m256d bc2v = _mm256_set1_pd(bc2);
    const __m256d lrv = _mm256_set1_pd(lr);
    const __m256d epsv = _mm256_set1_pd(eps);
    const std::int64_t n4 = n & ~std::int64_t{3};
    std::int64_t i = 0;
    for (; i < n4; i += 4) {
        const __m256d g = _mm256_loadu_pd(grad + i);
        __m256d mv = _mm256_loadu_pd(m + i);
        __m256d vv = _mm256_loadu_pd(v + i);
        mv = _mm256_add_pd(_mm256_mul_pd(b1, mv), _mm256_mul_pd(omb1, g));
        vv = _mm256_add_pd(_mm256_mul_pd(b2, vv),
                           _mm256_mul_pd(omb2, _mm256_mul_pd(g, g)));
        _mm256_storeu_pd(m + i, mv);
        _mm256_storeu_pd(v + i, vv);
        const __m256d mhat = _mm256_div_pd(mv, bc1v);
        const __m256d vhat = _mm256_div_pd(vv, bc2v);
        const __m256d denom = _mm256_add_pd(_mm256_sqrt_pd(vhat), epsv);
        const __m256d step = _mm256_mul_pd(lrv, _mm256_div_pd(mhat, denom));
        _mm256_storeu_pd(param + i,
                         _mm256_sub_pd(_mm256_loadu_pd(param + i), step));
    }
    for (; i < n; ++i) {
        const double g = grad[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * (g * g);
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        param[i] -= lr * (mhat / (std::sqrt(vhat) + eps));
    }
}

}  // namespace

const Kernels& avx2_kernels() {
    static const Kernels k = {
        "avx2",     matmul_avx2, add_avx2, mul_avx2,
        scale_avx2, axpy_avx2,   adam_avx2,
    };
    return k;
}

bool avx2_supported() { return __builtin_cpu_supports("avx2"); }

}  // namespace plab

#endif  // x86_64
