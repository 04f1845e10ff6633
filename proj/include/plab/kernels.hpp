#pragma once

#include <cstdint>
#include <string_view>

namespace plab {

// Hot inner loops behind the tensor ops, as a table of function pointers so
// the implementation can be swapped at runtime (scalar reference vs AVX2).
//
// Bit-exactness contract: every variant must produce bitwise-identical
// output to the scalar reference. SIMD variants therefore
//   - map vector lanes to independent output elements only,
//   - keep every reduction in the scalar loop order (matmul iterates k
//     sequentially and vectorizes across output columns),
//   - never use FMA (mul and add round separately, like the scalar code).
// tests/test_kernels.cpp enforces this down to the last bit.
struct Kernels {
    const char* name;

    // dst[m*n] (+)= a[m*k] * b[k*n], row-major, k summed in ascending order.
    void (*matmul)(double* dst, const double* a, const double* b,
                   std::int64_t m, std::int64_t k, std::int64_t n,
                   bool accumulate);

    // dst = a + b
    void (*add)(double* dst, const double* a, const double* b, std::int64_t n);
    // dst = a * b (elementwise)
    void (*mul)(double* dst, const double* a, const double* b, std::int64_t n);
    // dst = alpha * a
    void (*scale)(double* dst, const double* a, double alpha, std::int64_t n);
    // dst += alpha * x
    void (*axpy)(double* dst, double alpha, const double* x, std::int64_t n);

    // Bias-corrected Adam update over one parameter buffer. Entries where
    // mask[i] == 0 are left untouched (mask may be null = all trainable).
    // bc1/bc2 are the precomputed corrections 1 - beta^t.
    void (*adam)(double* param, double* m, double* v, const double* grad,
                 const unsigned char* mask, std::int64_t n, double lr,
                 double beta1, double beta2, double eps, double bc1,
                 double bc2);
};

const Kernels& scalar_kernels();

#if defined(__x86_64__) || defined(_M_X64)
const Kernels& avx2_kernels();
bool avx2_supported();
#endif

// Active table: AVX2 when the CPU has it, scalar otherwise. The PLAB_KERNELS
// environment variable ("scalar"/"avx2") overrides the automatic choice.
const Kernels& active_kernels();

// Select by name; returns false (and leaves the table unchanged) if the
// variant is unknown or unsupported on this CPU.
bool set_active_kernels(std::string_view name);

}  // namespace plab
