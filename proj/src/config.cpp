#include "dvae/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace dvae::cfg {

namespace {

void add_common(KvMap& kv) {
    kv["seed"] = "0";
    kv["data.export_pgm"] = "0";
    kv["train.epochs"] = "200";
    kv["train.m_lambda"] = "4";
    kv["train.clip"] = "100";
    kv["train.ckpt_every"] = "50";
    kv["eval.m_x"] = "4";
    kv["eval.m_lambda"] = "2";
    kv["codec.hidden"] = "128";
}

KvMap lorenz_defaults() {
    KvMap kv;
    kv["experiment"] = "lorenz";
    kv["mesh.n_u"] = "3";
    kv["mesh.s_min"] = "0";
    kv["mesh.s_max"] = "1";
    kv["dyn.scheme"] = "em";
    kv["dyn.dt"] = "0.001";
    kv["dyn.obs_stride"] = "40";
    kv["data.n_frames"] = "150";
    kv["data.noise_p"] = "0";
    kv["frame.width"] = "10";   // velocity grid resolution per axis
    kv["frame.height"] = "10";
    kv["frame.u_min"] = "-4";
    kv["frame.u_max"] = "4";
    kv["obs.n_x"] = "1";
    kv["noise.rho"] = "0";
    kv["noise.ell"] = "1";
    kv["noise.process_sd"] = "0.2";
    kv["noise.r_sd"] = "0.4";
    kv["prior.u0_sd"] = "0.4";
    kv["lambda.names"] = "sigma,r,b";
    kv["lambda.true"] = "10,28,2.6666666666666665";
    kv["lambda.free"] = "1,1,1";
    kv["lambda.prior_mean"] = "30,20,5";
    kv["lambda.prior_sd"] = "12,10,3";
    kv["ic.u0"] = "-3.7277,-3.8239,21.1507";
    kv["ic.center"] = "0";
    kv["ic.width"] = "0";
    kv["codec.type"] = "linear";
    kv["codec.eta"] = "0.005";
    kv["train.lr"] = "1e-4";
    add_common(kv);
    return kv;
}

KvMap advection_defaults() {
    KvMap kv;
    kv["experiment"] = "advection";
    kv["mesh.n_u"] = "64";
    kv["mesh.s_min"] = "0";
    kv["mesh.s_max"] = "1";
    kv["dyn.scheme"] = "cn";
    kv["dyn.dt"] = "0.02";
    kv["dyn.obs_stride"] = "10";
    kv["data.n_frames"] = "200";
    kv["data.noise_p"] = "0.05";
    kv["frame.width"] = "28";
    kv["frame.height"] = "28";
    kv["frame.u_min"] = "-0.2";
    kv["frame.u_max"] = "1.2";
    kv["obs.n_x"] = "64";
    kv["noise.rho"] = "0.02";
    kv["noise.ell"] = "0.1";
    kv["noise.process_sd"] = "0";
    kv["noise.r_sd"] = "0.1";
    kv["prior.u0_sd"] = "0.05";
    kv["lambda.names"] = "c";
    kv["lambda.true"] = "0.5";
    kv["lambda.free"] = "0";
    kv["lambda.prior_mean"] = "0.5";
    kv["lambda.prior_sd"] = "0.25";
    kv["ic.u0"] = "";
    kv["ic.center"] = "0.5";
    kv["ic.width"] = "0.1";
    kv["codec.type"] = "mlp_bernoulli";
    kv["codec.eta"] = "0.1";
    kv["train.lr"] = "0.001";
    add_common(kv);
    return kv;
}

KvMap kdv_defaults() {
    KvMap kv;
    kv["experiment"] = "kdv";
    kv["mesh.n_u"] = "600";
    kv["mesh.s_min"] = "0";
    kv["mesh.s_max"] = "2";
    kv["dyn.scheme"] = "cn";
    kv["dyn.dt"] = "0.01";
    kv["dyn.obs_stride"] = "1";
    kv["data.n_frames"] = "100";
    kv["data.noise_p"] = "0.05";
    kv["frame.width"] = "64";
    kv["frame.height"] = "28";
    kv["frame.u_min"] = "-2.5";
    kv["frame.u_max"] = "2.5";
    kv["obs.n_x"] = "40";
    kv["noise.rho"] = "0.01";
    kv["noise.ell"] = "0.2";
    kv["noise.process_sd"] = "0";
    kv["noise.r_sd"] = "0.05";
    kv["prior.u0_sd"] = "0.05";
    kv["lambda.names"] = "alpha,beta";
    kv["lambda.true"] = "1,0.000484";
    kv["lambda.free"] = "1,0";
    kv["lambda.prior_mean"] = "1.5,0.000484";
    kv["lambda.prior_sd"] = "0.3,1";
    kv["ic.u0"] = "";
    kv["ic.center"] = "0";
    kv["ic.width"] = "0";
    kv["codec.type"] = "mlp_bernoulli";
    kv["codec.eta"] = "0.1";
    kv["train.lr"] = "0.005";
    add_common(kv);
    return kv;
}

const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = [] {
        std::set<std::string> s;
        for (const auto& [k, v] : lorenz_defaults()) s.insert(k);
        for (const auto& [k, v] : advection_defaults()) s.insert(k);
        for (const auto& [k, v] : kdv_defaults()) s.insert(k);
        return s;
    }();
    return keys;
}

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    size_t b = s.find_last_not_of(" \t\r\n");
    return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

} // namespace

RunConfig RunConfig::defaults(const std::string& experiment) {
    RunConfig c;
    if (experiment == "lorenz")
        c.kv_ = lorenz_defaults();
    else if (experiment == "advection")
        c.kv_ = advection_defaults();
    else if (experiment == "kdv")
        c.kv_ = kdv_defaults();
    else
        throw config_error("unknown experiment '" + experiment +
                           "' (expected lorenz, advection, or kdv)");
    return c;
}

RunConfig RunConfig::from_map(const KvMap& entries) {
    auto it = entries.find("experiment");
    if (it == entries.end()) throw config_error("config is missing 'experiment'");
    RunConfig c = defaults(it->second);
    std::vector<std::string> bad;
    for (const auto& [k, v] : entries) {
        if (!known_keys().count(k)) {
            bad.push_back(k);
            continue;
        }
        c.kv_[k] = v;
    }
    if (!bad.empty()) {
        std::string msg = "unknown config keys:";
        for (const auto& k : bad) msg += " " + k;
        throw config_error(msg);
    }
    return c;
}

void RunConfig::check_known(const std::string& key) const {
    if (!known_keys().count(key)) throw config_error("unknown config key '" + key + "'");
}

void RunConfig::apply_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot read config file '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    std::string text = buf.str();
    std::string stripped = trim(text);
    std::vector<std::string> bad;
    if (!stripped.empty() && stripped[0] == '{') {
        auto j = nlohmann::json::parse(text);
        for (auto& [k, v] : j.items()) {
            if (!known_keys().count(k)) {
                bad.push_back(k);
                continue;
            }
            kv_[k] = v.is_string() ? v.get<std::string>() : v.dump();
        }
    } else {
        std::istringstream lines(text);
        std::string line;
        while (std::getline(lines, line)) {
            std::string l = trim(line);
            if (l.empty() || l[0] == '#') continue;
            size_t eq = l.find('=');
            if (eq == std::string::npos)
                throw config_error("bad config line (expected key = value): " + line);
            std::string k = trim(l.substr(0, eq));
            std::string v = trim(l.substr(eq + 1));
            if (!known_keys().count(k)) {
                bad.push_back(k);
                continue;
            }
            kv_[k] = v;
        }
    }
    if (!bad.empty()) {
        std::string msg = "unknown config keys in " + path + ":";
        for (const auto& k : bad) msg += " " + k;
        throw config_error(msg);
    }
}

void RunConfig::apply_override(const std::string& key_eq_value) {
    size_t eq = key_eq_value.find('=');
    if (eq == std::string::npos)
        throw config_error("override must be key=value, got '" + key_eq_value + "'");
    set(trim(key_eq_value.substr(0, eq)), trim(key_eq_value.substr(eq + 1)));
}

void RunConfig::set(const std::string& key, const std::string& value) {
    check_known(key);
    kv_[key] = value;
}

bool RunConfig::has(const std::string& key) const { return kv_.count(key) != 0; }

const std::string& RunConfig::str(const std::string& key) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) throw config_error("missing config key '" + key + "'");
    return it->second;
}

double RunConfig::num(const std::string& key) const {
    const std::string& s = str(key);
    try {
        size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw config_error("config key '" + key + "' is not a number: '" + s + "'");
    }
}

int RunConfig::integer(const std::string& key) const {
    const double v = num(key);
    const int i = static_cast<int>(v);
    if (static_cast<double>(i) != v)
        throw config_error("config key '" + key + "' is not an integer");
    return i;
}

bool RunConfig::flag(const std::string& key) const {
    const std::string& s = str(key);
    if (s == "1" || s == "true" || s == "yes") return true;
    if (s == "0" || s == "false" || s == "no" || s.empty()) return false;
    throw config_error("config key '" + key + "' is not a flag: '" + s + "'");
}

std::vector<double> RunConfig::num_list(const std::string& key) const {
    std::vector<double> out;
    for (const auto& tok : str_list(key)) {
        try {
            out.push_back(std::stod(tok));
        } catch (const std::exception&) {
            throw config_error("config key '" + key + "' has a bad number: '" + tok + "'");
        }
    }
    return out;
}

std::vector<std::string> RunConfig::str_list(const std::string& key) const {
    std::vector<std::string> out;
    std::istringstream ss(str(key));
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        std::string t = trim(tok);
        if (!t.empty()) out.push_back(t);
    }
    return out;
}

std::string RunConfig::to_json() const {
    nlohmann::json j;
    for (const auto& [k, v] : kv_) j[k] = v;
    return j.dump(2);
}

std::string format_g17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace dvae::cfg
