#include "dvae/episode_io.hpp"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace dvae::data {

namespace fs = std::filesystem;

namespace {
static_assert(sizeof(double) == 8, "float64 payloads require 8-byte doubles");

void byteswap_if_needed(std::vector<double>& v) {
    if constexpr (std::endian::native == std::endian::big) {
        for (double& d : v) {
            std::uint64_t u;
            std::memcpy(&u, &d, 8);
            u = __builtin_bswap64(u);
            std::memcpy(&d, &u, 8);
        }
    }
}
} // namespace

void write_f64(const std::string& path, const Matrix& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot write '" + path + "'");
    std::vector<double> buf(m.storage());
    byteswap_if_needed(buf);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * 8));
    if (!out) throw io_error("short write to '" + path + "'");
}

Matrix read_f64(const std::string& path, int rows, int cols) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot read '" + path + "'");
    std::vector<double> buf(static_cast<size_t>(rows) * cols);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 8));
    if (in.gcount() != static_cast<std::streamsize>(buf.size() * 8))
        throw io_error("short read from '" + path + "'");
    byteswap_if_needed(buf);
    return Matrix(rows, cols, std::move(buf));
}

void write_pgm(const std::string& path, const Matrix& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot write '" + path + "'");
    out << "P5\n" << img.cols() << " " << img.rows() << "\n255\n";
    std::vector<unsigned char> bytes(static_cast<size_t>(img.size()));
    for (long long i = 0; i < img.size(); ++i) {
        double v = std::min(1.0, std::max(0.0, img[i]));
        bytes[static_cast<size_t>(i)] = static_cast<unsigned char>(v * 255.0 + 0.5);
    }
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

void write_episode(const std::string& dir, const Episode& episode, bool export_pgm) {
    fs::create_directories(dir);
    nlohmann::json j;
    j["format"] = "dvae-episode";
    j["version"] = 1;
    j["dtype"] = "float64";
    j["endianness"] = "little";
    j["shapes"]["y"] = {episode.y_seq.rows(), episode.y_seq.cols()};
    if (!episode.truth_u.empty())
        j["shapes"]["truth_u"] = {episode.truth_u.rows(), episode.truth_u.cols()};
    if (!episode.truth_x.empty())
        j["shapes"]["truth_x"] = {episode.truth_x.rows(), episode.truth_x.cols()};
    nlohmann::json cfg = nlohmann::json::object();
    for (const auto& [k, v] : episode.gen_config) cfg[k] = v;
    j["gen_config"] = cfg;
    nlohmann::json meta = nlohmann::json::object();
    for (const auto& [k, v] : episode.meta) meta[k] = v;
    j["meta"] = meta;

    std::ofstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw io_error("cannot write manifest in '" + dir + "'");
    mf << j.dump(2) << "\n";

    write_f64((fs::path(dir) / "y.f64").string(), episode.y_seq);
    if (!episode.truth_u.empty())
        write_f64((fs::path(dir) / "truth_u.f64").string(), episode.truth_u);
    if (!episode.truth_x.empty())
        write_f64((fs::path(dir) / "truth_x.f64").string(), episode.truth_x);

    if (export_pgm) {
        auto it = episode.gen_config.find("frame.width");
        auto ith = episode.gen_config.find("frame.height");
        if (it != episode.gen_config.end() && ith != episode.gen_config.end()) {
            const int w = std::stoi(it->second);
            const int h = std::stoi(ith->second);
            if (w * h == episode.y_seq.cols()) {
                fs::create_directories(fs::path(dir) / "frames");
                for (int n = 0; n < episode.y_seq.rows(); ++n) {
                    Matrix img(h, w);
                    for (long long i = 0; i < img.size(); ++i) img[i] = episode.y_seq(n, i);
                    char name[32];
                    std::snprintf(name, sizeof(name), "frame_%04d.pgm", n);
                    write_pgm((fs::path(dir) / "frames" / name).string(), img);
                }
            }
        }
    }
}

Episode read_episode(const std::string& dir) {
    std::ifstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw io_error("cannot read manifest in '" + dir + "'");
    nlohmann::json j;
    mf >> j;
    if (j.value("format", "") != "dvae-episode")
        throw io_error("'" + dir + "' is not an episode directory");
    Episode ep;
    for (auto& [k, v] : j["gen_config"].items()) ep.gen_config[k] = v.get<std::string>();
    if (j.contains("meta"))
        for (auto& [k, v] : j["meta"].items()) ep.meta[k] = v.get<std::string>();
    auto shape = [&](const char* key) {
        return std::pair<int, int>(j["shapes"][key][0].get<int>(),
                                   j["shapes"][key][1].get<int>());
    };
    auto [yr, yc] = shape("y");
    ep.y_seq = read_f64((fs::path(dir) / "y.f64").string(), yr, yc);
    if (j["shapes"].contains("truth_u")) {
        auto [r, c] = shape("truth_u");
        ep.truth_u = read_f64((fs::path(dir) / "truth_u.f64").string(), r, c);
    }
    if (j["shapes"].contains("truth_x")) {
        auto [r, c] = shape("truth_x");
        ep.truth_x = read_f64((fs::path(dir) / "truth_x.f64").string(), r, c);
    }
    return ep;
}

} // namespace dvae::data
