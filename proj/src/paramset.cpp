#include "dvae/paramset.hpp"

#include "dvae/errors.hpp"

namespace dvae {

void ParamSet::add(const std::string& name, Matrix value) {
    if (index_.count(name)) throw dim_error("duplicate parameter slot '" + name + "'");
    index_[name] = slots_.size();
    slots_.push_back(Slot{name, std::move(value)});
}

bool ParamSet::has(const std::string& name) const { return index_.count(name) != 0; }

const Matrix& ParamSet::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw dim_error("unknown parameter slot '" + name + "'");
    return slots_[it->second].value;
}

void ParamSet::set(const std::string& name, Matrix value) {
    auto it = index_.find(name);
    if (it == index_.end()) throw dim_error("unknown parameter slot '" + name + "'");
    if (!slots_[it->second].value.same_shape(value))
        throw dim_error("slot '" + name + "' shape is immutable: " +
                        shape_str(slots_[it->second].value) + " vs " + shape_str(value));
    slots_[it->second].value = std::move(value);
}

long long ParamSet::total_size() const {
    long long n = 0;
    for (const auto& s : slots_) n += s.value.size();
    return n;
}

std::vector<double> ParamSet::flatten() const {
    std::vector<double> out;
    out.reserve(static_cast<size_t>(total_size()));
    for (const auto& s : slots_)
        out.insert(out.end(), s.value.storage().begin(), s.value.storage().end());
    return out;
}

void ParamSet::unflatten(const std::vector<double>& flat) {
    if (static_cast<long long>(flat.size()) != total_size())
        throw dim_error("unflatten length mismatch");
    size_t k = 0;
    for (auto& s : slots_) {
        for (long long i = 0; i < s.value.size(); ++i) s.value[i] = flat[k++];
    }
}

ParamSet ParamSet::zeros_like() const {
    ParamSet z;
    for (const auto& s : slots_) z.add(s.name, Matrix(s.value.rows(), s.value.cols()));
    return z;
}

ad::Var BoundParams::at(const std::string& name) const {
    auto it = vars.find(name);
    if (it == vars.end()) throw dim_error("unbound parameter '" + name + "'");
    return it->second;
}

BoundParams bind_inputs(ad::Tape& tape, const ParamSet& params) {
    BoundParams b;
    for (size_t i = 0; i < params.count(); ++i)
        b.vars[params.name(i)] = tape.input(params.value(i));
    return b;
}

ParamSet gradient(const std::function<ad::Var(ad::Tape&, const BoundParams&)>& f,
                  const ParamSet& p) {
    ad::Tape tape;
    BoundParams bound = bind_inputs(tape, p);
    ad::Var out = f(tape, bound);
    if (!tape.value(out).is_scalar())
        throw dim_error("gradient target must be scalar, got " + shape_str(tape.value(out)));
    tape.backward(out);
    ParamSet g = p.zeros_like();
    for (size_t i = 0; i < p.count(); ++i) {
        ad::Var v = bound.at(p.name(i));
        if (tape.has_grad(v)) g.value(i) = tape.grad(v);
    }
    return g;
}

} // namespace dvae
