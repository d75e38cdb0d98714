#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hanerf/tensor.hpp"

namespace hanerf {

// Peak signal-to-noise ratio in dB over all channels, capped at 99.
double psnr(const Tensor<float>& a, const Tensor<float>& b);

// Structural similarity on luminance: 11x11 Gaussian window (sigma 1.5),
// K1=0.01, K2=0.03, dynamic range 1, averaged over fully-valid windows.
// Accepts [H,W,3] (converted) or [H,W] images.
double ssim(const Tensor<float>& a, const Tensor<float>& b);

// Intersection over union of binarized (>0.5) masks; two empty masks -> 1.
double mask_iou(const Tensor<float>& predicted, const Tensor<float>& truth);

double mean_of(const std::vector<double>& xs);
double median_of(std::vector<double> xs);

struct ImageScore {
  int64_t frame_id = 0;
  double psnr = 0;
  double ssim = 0;
};

struct IouScore {
  int64_t train_index = 0;
  double iou = 0;
};

// Evaluation results for one trained model on one dataset.
struct EvalReport {
  std::string mode;
  std::string config_json;          // config snapshot, verbatim
  std::vector<ImageScore> clean;    // test renders vs clean ground truth
  std::vector<ImageScore> transfer; // appearance-transfer renders vs variants
  std::vector<IouScore> visibility; // per-train-image occluder IoU

  double mean_clean_psnr() const;
  double median_clean_psnr() const;
  double mean_clean_ssim() const;
  double mean_transfer_psnr() const;
  double median_visibility_iou() const;
};

void save_report_json(const EvalReport& r, const std::string& path);
void save_report_csv(const EvalReport& r, const std::string& path);
EvalReport load_report_json(const std::string& path);

}  // namespace hanerf
