#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace fbsee {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Malformed input: dimension mismatches, invalid values, broken invariants.
struct ValidationError : Error {
    using Error::Error;
};

/// A solve failed: singular step matrix, non-convergence, cap exceeded.
struct SolverError : Error {
    using Error::Error;
};

/// Configuration file problems (parse or schema).
struct ConfigError : Error {
    using Error::Error;
};

/// Deterministic RNG with a portable uniform, so that reports are
/// byte-identical across runs and toolchains for a fixed seed.
/// (std::uniform_real_distribution is not bit-reproducible across
/// standard library implementations.)
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

    /// Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next() >> 11) * 0x1.0p-53;
    }

    /// Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Vector with i.i.d. uniform[-1,1] entries.
    Vec uniform_vec(int n) {
        Vec v(n);
        for (int i = 0; i < n; ++i) v[i] = uniform(-1.0, 1.0);
        return v;
    }

    std::uint64_t next() {
        // splitmix64; small, fast, reproducible everywhere.
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

private:
    std::uint64_t state_;
};

inline void require(bool cond, const std::string& what) {
    if (!cond) throw ValidationError(what);
}

} // namespace fbsee
