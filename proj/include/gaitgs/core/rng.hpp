#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

namespace gaitgs {

/// Seeded random source with explicit, serializable state.
/// Distribution code is hand-rolled so draws depend only on the engine,
/// not on the standard library's unspecified distribution algorithms.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    /// Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [lo, hi] inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        if (hi < lo) throw std::invalid_argument("Rng::uniform_int: empty range");
        std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<std::int64_t>(gen_() % span);
    }

    /// Standard normal via Box-Muller (two engine draws per call).
    double normal() {
        double u1 = 1.0 - uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    bool bernoulli(double p) { return uniform() < p; }

    /// Split off an independent child stream; decorrelates via splitmix64.
    /// The child carries the mixed seed as its own lineage key, so children
    /// of children stay distinct across different parents.
    Rng child(std::uint64_t stream_id) const {
        std::uint64_t z = seed_mix_ ^ (stream_id + 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return seeded(z ^ (z >> 31));
    }

    std::string serialize() const {
        std::ostringstream os;
        os << gen_ << " " << seed_mix_;
        return os.str();
    }

    void deserialize(const std::string& s) {
        std::istringstream is(s);
        is >> gen_ >> seed_mix_;
        if (is.fail()) throw std::runtime_error("Rng::deserialize: malformed state string");
    }

private:
    std::mt19937_64 gen_;
    std::uint64_t seed_mix_ = 0;

public:
    // child() mixes the original seed rather than engine state so that child
    // streams are stable regardless of how many draws happened on the parent.
    static Rng seeded(std::uint64_t seed) {
        Rng r(seed);
        r.seed_mix_ = seed;
        return r;
    }
};

}  // namespace gaitgs
