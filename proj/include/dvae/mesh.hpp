#ifndef DVAE_MESH_HPP
#define DVAE_MESH_HPP

#include "dvae/errors.hpp"

namespace dvae {

/// Uniform 1D mesh. For periodic meshes node n_u is identified with node 0,
/// so there are n_u elements of width h = (s_max - s_min) / n_u.
struct Mesh1D {
    int n_u = 0;
    double s_min = 0.0;
    double s_max = 1.0;
    bool periodic = true;

    double length() const { return s_max - s_min; }
    double h() const { return length() / n_u; }
    double node(int j) const { return s_min + j * h(); }

    void validate() const {
        if (n_u < 1) throw config_error("mesh needs at least one node");
        if (!(s_max > s_min)) throw config_error("mesh domain is empty");
    }
};

} // namespace dvae

#endif
