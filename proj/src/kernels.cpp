#include "plab/kernels.hpp"

#include <cstdlib>

namespace plab {
namespace {

const Kernels* pick_default() {
#if defined(__x86_64__) || defined(_M_X64)
    if (const char* env = std::getenv("PLAB_KERNELS")) {
        const std::string_view want(env);
        if (want == "scalar") return &scalar_kernels();
        if (want == "avx2" && avx2_supported()) return &avx2_kernels();
    }
    if (avx2_supported()) return &avx2_kernels();
#else
    if (const char* env = std::getenv("PLAB_KERNELS")) {
        const std::string_view want(env);
        if (want == "scalar") return &scalar_kernels();
    }
#endif
    return &scalar_kernels();
}

const Kernels*& active_slot() {
    static const Kernels* active = pick_default();
    return active;
}

}  // namespace

const Kernels& active_kernels() { return *active_slot(); }

bool set_active_kernels(std::string_view name) {
    if (name == "scalar") {
        active_slot() = &scalar_kernels();
        return true;
    }
#if defined(__x86_64__) || defined(_M_X64)
    if (name == "avx2" && avx2_supported()) {
        active_slot() = &avx2_kernels();
        return true;
    }
#endif
    return false;
}

}  // namespace plab
