#ifndef DVAE_DATAGEN_HPP
#define DVAE_DATAGEN_HPP

#include <string>

#include "dvae/config.hpp"
#include "dvae/experiment.hpp"
#include "dvae/matrix.hpp"
#include "dvae/mesh.hpp"
#include "dvae/rng.hpp"

namespace dvae::data {

/// Pixel frame geometry: `width` columns across the mesh domain, `height`
/// rows covering physical heights [u_min, u_max].
struct FrameGrid {
    int width = 28;
    int height = 28;
    double u_min = -0.2;
    double u_max = 1.2;
};

/// One generated sequence: observations plus retained ground truth and the
/// full resolved generation record (enough to regenerate bit-exactly).
struct Episode {
    Matrix y_seq;    // N x n_y
    Matrix truth_u;  // N x n_u (empty if withheld)
    Matrix truth_x;  // N x n_x (empty if withheld)
    cfg::KvMap gen_config;  // the resolved run configuration
    cfg::KvMap meta;        // derived shapes, layout notes, warnings
};

/// Planar velocity components of the streamfunction
/// psi(s1, s2) = u1 sin(pi s1 / 8) sin(pi s2 / 8) on an inclusive n x n grid
/// over [-4, 4]^2, flattened as [v_s1 at all points, v_s2 at all points].
Matrix lorenz_velocity_field(double u1, int grid_n = 10);

/// Binary frame: pixel (row, col) lights up when its physical height is
/// below u_h at the column's coordinate. Returns height x width of {0, 1}.
/// `clipped` (optional) reports whether the solution left the frame range.
Matrix render_frame(const Matrix& u_nodes, const Mesh1D& mesh, const FrameGrid& grid,
                    bool* clipped = nullptr);

/// Independent per-pixel flips with probability p.
Matrix salt_pepper(const Matrix& img, double p, Rng& rng);

/// Deterministic-truth episode for one experiment, per the resolved config.
Episode generate_dataset(const cfg::RunConfig& config);
Episode generate_dataset(const std::string& experiment, const cfg::KvMap& overrides,
                         std::uint64_t seed);

/// Clean reference sequence for reconstruction metrics: noiseless frames
/// re-rendered from the retained truth when available, otherwise the
/// observations themselves.
Matrix reference_frames(const cfg::RunConfig& config, const Episode& episode);

} // namespace dvae::data

#endif
