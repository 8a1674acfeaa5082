#ifndef DVAE_CHECKPOINT_HPP
#define DVAE_CHECKPOINT_HPP

#include <string>

#include "dvae/adam.hpp"
#include "dvae/config.hpp"

namespace dvae::ckpt {

/// Training snapshot: named parameter slots with shapes and row-major
/// float64 payloads, optimizer moments, RNG stream state, and the resolved
/// config, behind a versioned binary container.
struct Checkpoint {
    int version = 1;
    int epochs_done = 0;
    ParamSet params;
    opt::AdamState adam;
    std::string rng_state;
    cfg::KvMap config;
};

void save_checkpoint(const std::string& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::string& path);

} // namespace dvae::ckpt

#endif
