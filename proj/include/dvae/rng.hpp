#ifndef DVAE_RNG_HPP
#define DVAE_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "dvae/matrix.hpp"

namespace dvae {

/// Deterministic random stream. Gaussian draws use a stateless Box-Muller
/// (two uniforms per normal, no cached spare) so the stream position is a
/// pure function of the draw count, which keeps checkpoint/resume exact.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    double uniform() {  // in (0, 1)
        // 53-bit mantissa; shifted away from 0 so log() below is safe
        const std::uint64_t r = engine_() >> 11;
        return (static_cast<double>(r) + 0.5) * (1.0 / 9007199254740992.0);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal() {
        const double u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    bool bernoulli(double p) { return uniform() < p; }

    std::uint64_t next_seed() { return engine_(); }

    Matrix normal_matrix(int rows, int cols) {
        Matrix m(rows, cols);
        for (long long i = 0; i < m.size(); ++i) m[i] = normal();
        return m;
    }

    Matrix uniform_matrix(int rows, int cols, double lo, double hi) {
        Matrix m(rows, cols);
        for (long long i = 0; i < m.size(); ++i) m[i] = uniform(lo, hi);
        return m;
    }

    std::string serialize() const {
        std::ostringstream os;
        os << engine_;
        return os.str();
    }

    void deserialize(const std::string& state) {
        std::istringstream is(state);
        is >> engine_;
    }

private:
    std::mt19937_64 engine_;
};

} // namespace dvae

#endif
