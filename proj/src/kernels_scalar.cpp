#include "plab/kernels.hpp"

#include <cmath>
#include <cstring>

// Scalar reference kernels. These define the numeric behaviour of the
// project; every other variant must match them bit for bit.

namespace plab {
namespace {

void matmul_scalar(double* dst, const double* a, const double* b,
                   std::int64_t m, std::int64_t k, std::int64_t n,
                   bool accumulate) {
    if (!accumulate) {
        std::memset(dst, 0, static_cast<std::size_t>(m * n) * sizeof(double));
    }
    for (std::int64_t i = 0; i < m; ++i) {
        double* drow = dst + i * n;
        const double* arow = a + i * k;
        for (std::int64_t l = 0; l < k; ++l) {
            const double av = arow[l];
            const double* brow = b + l * n;
            for (std::int64_t j = 0; j < n; ++j) {
                drow[j] += av * brow[j];
            }
        }
    }
}

void add_scalar(double* dst, const double* a, const double* b,
                std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) dst[i] = a[i] + b[i];
}

void mul_scalar(double* dst, const double* a, const double* b,
                std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) dst[i] = a[i] * b[i];
}

void scale_scalar(double* dst, const double* a, double alpha,
                  std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) dst[i] = alpha * a[i];
}

void axpy_scalar(double* dst, double alpha, const double* x, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) dst[i] += alpha * x[i];
}

void adam_scalar(double* param, double* m, double* v, const double* grad,
                 const unsigned char* mask, std::int64_t n, double lr,
                 double beta1, double beta2, double eps, double bc1,
                 double bc2) {
    const double one_m_b1 = 1.0 - beta1;
    const double one_m_b2 = 1.0 - beta2;
    for (std::int64_t i = 0; i < n; ++i) {
        if (mask && !mask[i]) continue;
        const double g = grad[i];
        m[i] = beta1 * m[i] + one_m_b1 * g;
        v[i] = beta2 * v[i] + one_m_b2 * (g * g);
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        param[i] -= lr * (mhat / (std::sqrt(vhat) + eps));
    }
}

}  // namespace

const Kernels& scalar_kernels() {
    static const Kernels k = {
        "scalar",     matmul_scalar, add_scalar, mul_scalar,
        scale_scalar, axpy_scalar,   adam_scalar,
    };
    return k;
}

}  // namespace plab
