#pragma once

#include <string>

#include "cle/cl.hpp"

namespace cle {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Versioned binary container for everything needed to resume after a task
// boundary: config, posteriors with optimizer moments, masks, priors,
// coresets and the partial R matrix. save -> load -> save is byte-identical.
void checkpoint_save(const TrainerState& state, const std::string& path);
TrainerState checkpoint_load(const std::string& path);

}  // namespace cle
