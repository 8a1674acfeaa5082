#ifndef DVAE_EPISODE_IO_HPP
#define DVAE_EPISODE_IO_HPP

#include <string>

#include "dvae/datagen.hpp"

namespace dvae::data {

/// Episode container directory:
///   manifest.json          resolved gen config, shapes, dtype, endianness
///   y.f64                  N x n_y, row-major little-endian float64
///   truth_u.f64, truth_x.f64   optional ground truth payloads
///   frames/frame_%04d.pgm  optional P5 exports for visual inspection
void write_episode(const std::string& dir, const Episode& episode, bool export_pgm = false);
Episode read_episode(const std::string& dir);

/// P5 PGM with maxval 255; values are clamped to [0, 1] then scaled.
void write_pgm(const std::string& path, const Matrix& img);

void write_f64(const std::string& path, const Matrix& m);
Matrix read_f64(const std::string& path, int rows, int cols);

} // namespace dvae::data

#endif
