#ifndef DVAE_ERRORS_HPP
#define DVAE_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace dvae {

// Shape/contract violations on matrix operations.
class dim_error : public std::invalid_argument {
public:
    explicit dim_error(const std::string& msg) : std::invalid_argument(msg) {}
};

// Numerical failures (non-SPD factorization, singular pivot, non-finite values).
// `index` carries the failing pivot/step when known, -1 otherwise.
class numeric_error : public std::runtime_error {
public:
    explicit numeric_error(const std::string& msg, int index = -1)
        : std::runtime_error(msg), index(index) {}
    int index;
};

// Newton (or other iterative solve) failed to converge; `step` is the
// simulation/filter time index where it happened, -1 if not applicable.
class divergence_error : public std::runtime_error {
public:
    explicit divergence_error(const std::string& msg, int step = -1)
        : std::runtime_error(msg), step(step) {}
    int step;
};

class config_error : public std::runtime_error {
public:
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

class io_error : public std::runtime_error {
public:
    explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

class checkpoint_error : public std::runtime_error {
public:
    explicit checkpoint_error(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace dvae

#endif
