#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace tvsr {

// Deterministic random source. All sampling is fully specified here
// (Box-Muller instead of std::normal_distribution) so that a given seed
// produces the same stream on every platform with the same libm.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [lo, hi] inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<std::int64_t>(engine_() % span);
    }

    bool bernoulli(double p = 0.5) { return uniform() < p; }

    // Standard normal via Box-Muller. No cached spare, so the stream
    // position is a pure function of the number of calls.
    double normal() {
        double u1 = static_cast<double>((engine_() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
        double u2 = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Normal(0, stddev) with samples outside +/- 2 stddev rejected.
    double trunc_normal(double stddev) {
        for (;;) {
            double z = normal();
            if (std::fabs(z) <= 2.0) return z * stddev;
        }
    }

    std::string serialize() const {
        std::ostringstream os;
        os << engine_;
        return os.str();
    }

    void deserialize(const std::string& s) {
        std::istringstream is(s);
        is >> engine_;
        if (is.fail()) throw std::invalid_argument("Rng::deserialize: malformed state");
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace tvsr
