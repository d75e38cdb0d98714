#pragma once

#include <cstdint>
#include <string>

#include "hanerf/optim.hpp"
#include "hanerf/rng.hpp"
#include "hanerf/trainer.hpp"

namespace hanerf {

// Binary checkpoint: magic "HANERF01", a little-endian u64 JSON-header
// length, the JSON header (version, config, iteration, optimizer step, RNG
// state, parameter names/shapes), then for each parameter in registration
// order its value, Adam m, and Adam v arrays as raw little-endian float32.

struct CheckpointHeader {
  int version = 1;
  TrainConfig config;
  CameraIntrinsics intrinsics;  // of the training dataset
  int64_t n_train_images = 0;
  int64_t iteration = 0;
  int64_t adam_step = 0;
  uint64_t rng_state = 0;
  uint64_t rng_inc = 0;
};

void save_checkpoint(const std::string& path, const ParameterSet<float>& ps,
                     const TrainConfig& cfg, const CameraIntrinsics& intr,
                     int64_t n_train_images, int64_t iteration,
                     const Rng& rng);

// Header only; use it to rebuild models before loading arrays.
CheckpointHeader read_checkpoint_header(const std::string& path);

// Loads arrays into an already-built parameter set. Names and shapes must
// match the set's registration order exactly.
CheckpointHeader load_checkpoint(const std::string& path,
                                 ParameterSet<float>& ps);

}  // namespace hanerf
