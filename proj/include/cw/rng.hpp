#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace cw {

// One stream per stochastic stage. Streams are seeded independently, so
// enabling or disabling one stage never shifts the draws of another.
enum class Stream : std::uint64_t {
    init = 1,
    dropout = 2,
    resample = 3,
    shuffle = 4,
    split = 5,
};

inline const char* stream_name(Stream s) {
    switch (s) {
        case Stream::init: return "init";
        case Stream::dropout: return "dropout";
        case Stream::resample: return "resample";
        case Stream::shuffle: return "shuffle";
        case Stream::split: return "split";
    }
    return "?";
}

// Counter-based generator (splitmix64 walk). The raw 64-bit output and every
// derived draw below are fully specified arithmetic, so identical
// (seed, stream) pairs give bit-identical sequences on any platform.
class RngStream {
public:
    RngStream(std::uint64_t seed, Stream stream)
        : state_(mix(seed + 0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(stream))) {}

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ull;
        return mix(state_);
    }

    // uniform on [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // uniform on the closed interval [0, 1]
    double uniform_closed() {
        return static_cast<double>(next_u64() >> 11) / static_cast<double>((1ull << 53) - 1);
    }

    // uniform integer in [0, n), n >= 1
    std::uint64_t uniform_int(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // standard normal via Box-Muller (deterministic two-draw form)
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    static std::uint64_t mix(std::uint64_t z) {
        z ^= z >> 30;
        z *= 0xBF58476D1CE4E5B9ull;
        z ^= z >> 27;
        z *= 0x94D049BB133111EBull;
        z ^= z >> 31;
        return z;
    }

    std::uint64_t state_;
};

}  // namespace cw
