#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace ancflow {

// Counter-free PCG32 (XSH-RR) generator. The raw integer stream for a given
// (seed, stream_id) pair is reproducible bit-for-bit across runs and
// platforms; distinct stream_ids select statistically independent substreams.
// A single stream must not be shared between threads; hand each unit of work
// its own substream instead.
class RandomStream {
public:
    RandomStream() : RandomStream(0, 0) {}

    RandomStream(std::uint64_t seed, std::uint64_t stream_id)
        : state_(0), inc_((stream_id << 1u) | 1u), seed_(seed), stream_id_(stream_id) {
        next_u32();
        state_ += seed;
        next_u32();
    }

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream_id() const { return stream_id_; }

    std::uint32_t next_u32() {
        const std::uint64_t old = state_;
        state_ = old * 6364136223846793005ULL + inc_;
        const std::uint32_t xorshifted =
            static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
        const std::uint32_t rot = static_cast<std::uint32_t>(old >> 59u);
        return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
    }

    std::uint64_t next_u64() {
        const std::uint64_t hi = next_u32();
        const std::uint64_t lo = next_u32();
        return (hi << 32u) | lo;
    }

    // Uniform in [0,1) with 53 random mantissa bits.
    double uniform01() {
        return static_cast<double>(next_u64() >> 11u) * 0x1.0p-53;
    }

    // Uniform in (0,1); zero draws are bumped to the smallest representable
    // step so logs stay finite.
    double uniform_pos() {
        const double u = uniform01();
        return u > 0.0 ? u : 0x1.0p-53;
    }

    // Uniform integer in [0, n).
    std::uint64_t uniform_below(std::uint64_t n) {
        // Rejection to kill modulo bias.
        const std::uint64_t threshold = (0ULL - n) % n;
        for (;;) {
            const std::uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    bool bernoulli(double p) { return uniform01() < p; }

    // Standard normal via the Marsaglia polar method (log/sqrt only).
    double normal() {
        for (;;) {
            const double u = 2.0 * uniform01() - 1.0;
            const double v = 2.0 * uniform01() - 1.0;
            const double s = u * u + v * v;
            if (s > 0.0 && s < 1.0) {
                return u * std::sqrt(-2.0 * std::log(s) / s);
            }
        }
    }

private:
    std::uint64_t state_;
    std::uint64_t inc_;
    std::uint64_t seed_;
    std::uint64_t stream_id_;
};

// FNV-1a 64-bit, used both for substream derivation and output digests.
inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 14695981039346656037ULL) {
    for (const char c : bytes) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::uint64_t fnv1a64_mix(std::uint64_t h, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        h ^= (v >> (8 * i)) & 0xffu;
        h *= 1099511628211ULL;
    }
    return h;
}

// Substream ids are derived from human-readable labels (stage name,
// family id, sequence index) so any unit of work can be regenerated in
// isolation.
inline std::uint64_t derive_stream_id(std::string_view stage,
                                      std::string_view key = {},
                                      std::uint64_t index = 0) {
    std::uint64_t h = fnv1a64(stage);
    h = fnv1a64(key, h);
    h = fnv1a64_mix(h, index);
    return h;
}

}  // namespace ancflow
