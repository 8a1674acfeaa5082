#ifndef DVAE_CONFIG_HPP
#define DVAE_CONFIG_HPP

#include <map>
#include <string>
#include <vector>

#include "dvae/errors.hpp"
#include "dvae/matrix.hpp"

namespace dvae::cfg {

using KvMap = std::map<std::string, std::string>;

/// Flat key-value run configuration with dotted namespaces. Every key has a
/// per-experiment default; unknown keys are rejected with a list of
/// offenders. Files may be `key = value` text (# comments) or a flat JSON
/// object.
class RunConfig {
public:
    static RunConfig defaults(const std::string& experiment);
    static RunConfig from_map(const KvMap& entries);  // starts from defaults(entries["experiment"])

    void apply_file(const std::string& path);
    void apply_override(const std::string& key_eq_value);  // "k=v"
    void set(const std::string& key, const std::string& value);

    bool has(const std::string& key) const;
    const std::string& str(const std::string& key) const;
    double num(const std::string& key) const;
    int integer(const std::string& key) const;
    bool flag(const std::string& key) const;
    std::vector<double> num_list(const std::string& key) const;  // comma separated
    std::vector<std::string> str_list(const std::string& key) const;

    const KvMap& entries() const { return kv_; }
    std::string to_json() const;

private:
    void check_known(const std::string& key) const;
    KvMap kv_;
};

std::string format_g17(double v);

} // namespace dvae::cfg

#endif
