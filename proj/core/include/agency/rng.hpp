#ifndef AGENCY_RNG_HPP
#define AGENCY_RNG_HPP

#include <cmath>
#include <cstdint>
#include <numbers>

namespace agency {

// SplitMix64: tiny, fast, and splittable. Streams are derived from
// (seed, stream index), so path p reproduces bitwise no matter how work is
// scheduled across threads.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t state) : state_(state) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in (0, 1]; never returns 0 so log() is safe.
    double next_uniform() {
        return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    }

    static std::uint64_t scramble(std::uint64_t x) {
        SplitMix64 g(x);
        return g.next_u64();
    }

    // Independent stream for (seed, stream).
    static SplitMix64 stream(std::uint64_t seed, std::uint64_t stream_index) {
        const std::uint64_t a = scramble(seed);
        const std::uint64_t b = scramble(stream_index * 0xD2B74407B1CE6E93ULL + 0x8CB92BA72F3D8DD7ULL);
        return SplitMix64(a ^ b);
    }

private:
    std::uint64_t state_;
};

// Standard Gaussian draws via Box-Muller, pair-cached.
class GaussianStream {
public:
    explicit GaussianStream(SplitMix64 gen) : gen_(gen) {}

    double next() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = gen_.next_uniform();
        const double u2 = gen_.next_uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    // Forget a cached spare value. Called at step boundaries so that the
    // draw for (path, step) does not depend on the parity of earlier draws.
    void flush_pair() { have_spare_ = false; }

private:
    SplitMix64 gen_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace agency

#endif  // AGENCY_RNG_HPP
