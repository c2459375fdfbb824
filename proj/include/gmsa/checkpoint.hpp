#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gmsa/model.hpp"

namespace gmsa {

// Optimizer + trainer state carried alongside the weights so a run can
// resume mid-schedule and reproduce the uninterrupted loss trace.
struct TrainerState {
  int64_t step = 0;
  int64_t adam_t = 0;
  std::vector<uint64_t> rng_state;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> adam_mv;
};

// Single binary container: magic + version, a text header (config, tensor
// manifest, trainer scalars), raw little-endian f64 payloads, and a trailing
// FNV-1a checksum over everything before it. Save -> load -> save is
// byte-identical.
void save_checkpoint(const std::string& path, const Model& model,
                     const TrainerState* trainer_state = nullptr);

Model load_checkpoint(const std::string& path, std::optional<TrainerState>* trainer_state = nullptr);

}  // namespace gmsa
