#include "dvae/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace dvae::ckpt {

namespace {
constexpr char kMagic[] = "DVAECKPT1\n";
constexpr size_t kMagicLen = sizeof(kMagic) - 1;

void write_u64(std::ofstream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::ifstream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

void write_matrix(std::ofstream& out, const Matrix& m) {
    std::vector<double> buf(m.storage());
    if constexpr (std::endian::native == std::endian::big) {
        for (double& d : buf) {
            std::uint64_t u;
            std::memcpy(&u, &d, 8);
            u = __builtin_bswap64(u);
            std::memcpy(&d, &u, 8);
        }
    }
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * 8));
}

Matrix read_matrix(std::ifstream& in, int rows, int cols) {
    std::vector<double> buf(static_cast<size_t>(rows) * cols);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 8));
    if (in.gcount() != static_cast<std::streamsize>(buf.size() * 8))
        throw checkpoint_error("truncated checkpoint payload");
    if constexpr (std::endian::native == std::endian::big) {
        for (double& d : buf) {
            std::uint64_t u;
            std::memcpy(&u, &d, 8);
            u = __builtin_bswap64(u);
            std::memcpy(&d, &u, 8);
        }
    }
    return Matrix(rows, cols, std::move(buf));
}
} // namespace

void save_checkpoint(const std::string& path, const Checkpoint& c) {
    nlohmann::json j;
    j["version"] = c.version;
    j["epochs_done"] = c.epochs_done;
    j["adam_t"] = c.adam.t;
    j["rng_state"] = c.rng_state;
    nlohmann::json cfg = nlohmann::json::object();
    for (const auto& [k, v] : c.config) cfg[k] = v;
    j["config"] = cfg;
    nlohmann::json slots = nlohmann::json::array();
    for (size_t i = 0; i < c.params.count(); ++i)
        slots.push_back({{"name", c.params.name(i)},
                         {"rows", c.params.value(i).rows()},
                         {"cols", c.params.value(i).cols()}});
    j["slots"] = slots;
    const std::string header = j.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot write checkpoint '" + path + "'");
    out.write(kMagic, static_cast<std::streamsize>(kMagicLen));
    write_u64(out, header.size());
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (size_t i = 0; i < c.params.count(); ++i) write_matrix(out, c.params.value(i));
    for (size_t i = 0; i < c.adam.m.count(); ++i) write_matrix(out, c.adam.m.value(i));
    for (size_t i = 0; i < c.adam.v.count(); ++i) write_matrix(out, c.adam.v.value(i));
    if (!out) throw io_error("short write on checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot read checkpoint '" + path + "'");
    char magic[kMagicLen];
    in.read(magic, static_cast<std::streamsize>(kMagicLen));
    if (in.gcount() != static_cast<std::streamsize>(kMagicLen) ||
        std::memcmp(magic, kMagic, kMagicLen) != 0)
        throw checkpoint_error("'" + path + "' is not a checkpoint file");
    const std::uint64_t hlen = read_u64(in);
    std::string header(hlen, '\0');
    in.read(header.data(), static_cast<std::streamsize>(hlen));
    nlohmann::json j = nlohmann::json::parse(header);
    if (j.value("version", -1) != 1) throw checkpoint_error("unsupported checkpoint version");

    Checkpoint c;
    c.version = 1;
    c.epochs_done = j["epochs_done"].get<int>();
    c.rng_state = j["rng_state"].get<std::string>();
    for (auto& [k, v] : j["config"].items()) c.config[k] = v.get<std::string>();
    for (const auto& s : j["slots"]) {
        c.params.add(s["name"].get<std::string>(),
                     read_matrix(in, s["rows"].get<int>(), s["cols"].get<int>()));
    }
    c.adam = opt::adam_init(c.params);
    c.adam.t = j["adam_t"].get<long long>();
    for (size_t i = 0; i < c.params.count(); ++i)
        c.adam.m.value(i) = read_matrix(in, c.params.value(i).rows(), c.params.value(i).cols());
    for (size_t i = 0; i < c.params.count(); ++i)
        c.adam.v.value(i) = read_matrix(in, c.params.value(i).rows(), c.params.value(i).cols());
    return c;
}

} // namespace dvae::ckpt
