#ifndef DVAE_PARAMSET_HPP
#define DVAE_PARAMSET_HPP

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dvae/matrix.hpp"
#include "dvae/tape.hpp"

namespace dvae {

/// Ordered collection of named matrices (network weights, variational
/// parameters). Slot names and shapes are fixed once added; flatten and
/// unflatten round-trip exactly in slot insertion order.
class ParamSet {
public:
    void add(const std::string& name, Matrix value);
    bool has(const std::string& name) const;
    const Matrix& at(const std::string& name) const;
    void set(const std::string& name, Matrix value);  // shape must match

    size_t count() const { return slots_.size(); }
    const std::string& name(size_t i) const { return slots_[i].name; }
    const Matrix& value(size_t i) const { return slots_[i].value; }
    Matrix& value(size_t i) { return slots_[i].value; }

    long long total_size() const;
    std::vector<double> flatten() const;
    void unflatten(const std::vector<double>& flat);

    /// A ParamSet with the same slots, all zero.
    ParamSet zeros_like() const;

private:
    struct Slot {
        std::string name;
        Matrix value;
    };
    std::vector<Slot> slots_;
    std::map<std::string, size_t> index_;
};

/// Tape bindings for a ParamSet: every slot becomes an Input node.
struct BoundParams {
    std::map<std::string, ad::Var> vars;
    ad::Var at(const std::string& name) const;
};
BoundParams bind_inputs(ad::Tape& tape, const ParamSet& params);

/// Reverse-mode gradient of a scalar-valued function of a ParamSet.
/// `f` must build its result from tape primitives on the supplied bindings.
ParamSet gradient(const std::function<ad::Var(ad::Tape&, const BoundParams&)>& f,
                  const ParamSet& p);

} // namespace dvae

#endif
