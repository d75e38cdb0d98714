#pragma once

#include <memory>
#include <string>

#include "hanerf/checkpoint.hpp"
#include "hanerf/metrics.hpp"
#include "hanerf/trainer.hpp"

namespace hanerf {

// A checkpoint rebuilt into live models; `models` views `ps`.
struct LoadedRun {
  CheckpointHeader header;
  ParameterSet<float> ps;
  Models<float> models;

  explicit LoadedRun(const std::string& checkpoint_path);
  LoadedRun(const LoadedRun&) = delete;
  LoadedRun& operator=(const LoadedRun&) = delete;
};

std::unique_ptr<LoadedRun> load_run(const std::string& checkpoint_path);

// Renders every test view and scores it:
//   - clean:    appearance encoded from the clean test image (appearance
//               modes) or the zero vector, scored against the clean image;
//   - transfer: appearance encoded from the perturbed variant, scored
//               against that variant;
//   - visibility: per-training-image IoU of {M < 0.5} against the stored
//               occluder mask (visibility modes only).
// When out_dir is non-empty, writes render_<id>.png, transfer_<id>.png,
// report.json and report.csv there.
EvalReport evaluate(const LoadedRun& run, const std::string& manifest_path,
                    const std::string& out_dir = "");

EvalReport evaluate_checkpoint(const std::string& checkpoint_path,
                               const std::string& manifest_path,
                               const std::string& out_dir = "");

}  // namespace hanerf
