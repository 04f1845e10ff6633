#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <vector>

namespace plab {

// Mersenne Twister 19937-64 (Matsumoto & Nishimura reference constants).
// Implemented locally instead of <random> so the state can be checkpointed
// as plain u64 words and the stream is identical on every toolchain.
class Mt64 {
public:
    explicit Mt64(std::uint64_t seed) { reseed(seed); }

    void reseed(std::uint64_t seed) {
        state_[0] = seed;
        for (int i = 1; i < kN; ++i) {
            state_[i] = 6364136223846793005ULL *
                            (state_[i - 1] ^ (state_[i - 1] >> 62)) +
                        static_cast<std::uint64_t>(i);
        }
        index_ = kN;
    }

    std::uint64_t next() {
        if (index_ >= kN) twist();
        std::uint64_t x = state_[index_++];
        x ^= (x >> 29) & 0x5555555555555555ULL;
        x ^= (x << 17) & 0x71D67FFFEDA60000ULL;
        x ^= (x << 37) & 0xFFF7EEE000000000ULL;
        x ^= x >> 43;
        return x;
    }

    static constexpr int kStateWords = 313;  // 312 state words + index

    void save(std::uint64_t* out) const {
        for (int i = 0; i < kN; ++i) out[i] = state_[i];
        out[kN] = static_cast<std::uint64_t>(index_);
    }
    void load(const std::uint64_t* in) {
        for (int i = 0; i < kN; ++i) state_[i] = in[i];
        index_ = static_cast<int>(in[kN]);
    }

private:
    static constexpr int kN = 312;
    static constexpr int kM = 156;

    void twist() {
        constexpr std::uint64_t kMatrixA = 0xB5026F5AA96619E9ULL;
        constexpr std::uint64_t kUpper = 0xFFFFFFFF80000000ULL;
        constexpr std::uint64_t kLower = 0x7FFFFFFFULL;
        for (int i = 0; i < kN; ++i) {
            const std::uint64_t x =
                (state_[i] & kUpper) | (state_[(i + 1) % kN] & kLower);
            std::uint64_t xa = x >> 1;
            if (x & 1ULL) xa ^= kMatrixA;
            state_[i] = state_[(i + kM) % kN] ^ xa;
        }
        index_ = 0;
    }

    std::array<std::uint64_t, kN> state_{};
    int index_ = kN;
};

// Splittable 64-bit mixer, used to derive independent sub-seeds
// (per task, per epoch, per class) from one master seed.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// RNG with explicitly specified distributions on top of Mt64, so sampled
// values are bit-reproducible everywhere (libstdc++/libc++ distributions
// are not pinned by the standard).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_.next(); }

    // [0, 1) with 53 random bits.
    double uniform01() {
        return static_cast<double>(gen_.next() >> 11) * (1.0 / 9007199254740992.0);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Standard normal via Box-Muller with a cached spare.
    double gauss() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform01();  // (0, 1]: keeps log() finite
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double t = 2.0 * kPi * u2;
        spare_ = r * std::sin(t);
        has_spare_ = true;
        return r * std::cos(t);
    }

    // Uniform integer in [0, n), rejection-sampled (unbiased).
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = ~0ULL - (~0ULL % n);
        std::uint64_t x;
        do {
            x = gen_.next();
        } while (x >= limit);
        return x % n;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // State layout: Mt64 words, has_spare flag, spare bits.
    static constexpr int kStateWords = Mt64::kStateWords + 2;

    std::vector<std::uint64_t> save_state() const {
        std::vector<std::uint64_t> w(kStateWords);
        gen_.save(w.data());
        w[Mt64::kStateWords] = has_spare_ ? 1 : 0;
        std::uint64_t bits;
        std::memcpy(&bits, &spare_, sizeof(bits));
        w[Mt64::kStateWords + 1] = bits;
        return w;
    }

    void load_state(const std::vector<std::uint64_t>& w) {
        gen_.load(w.data());
        has_spare_ = w[Mt64::kStateWords] != 0;
        const std::uint64_t bits = w[Mt64::kStateWords + 1];
        std::memcpy(&spare_, &bits, sizeof(bits));
    }

private:
    static constexpr double kPi = 3.141592653589793238462643383279502884;

    Mt64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace plab
