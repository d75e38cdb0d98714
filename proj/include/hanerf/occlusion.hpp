#pragma once

#include <array>
#include <string>
#include <vector>

#include "hanerf/autodiff.hpp"
#include "hanerf/optim.hpp"
#include "hanerf/rng.hpp"
#include "hanerf/tensor.hpp"

namespace hanerf {

struct VisibilityConfig {
  int pixel_freqs = 10;
  bool include_raw = true;
  int width = 256;
  int layers = 5;        // total fully-connected layers including the head
  int embed_dim = 128;   // transient embedding size
  double embed_stddev = 0.01;
};

// Image-conditioned 2D visibility field: sigmoid MLP over the positional
// encoding of the normalized pixel location concatenated with that image's
// transient embedding. Training-only; rendering never consults it.
template <class T>
class VisibilityModel {
 public:
  VisibilityModel(const VisibilityConfig& cfg, int64_t n_images,
                  int64_t image_width, int64_t image_height,
                  ParameterSet<T>& ps, const std::string& prefix, Rng& rng);

  // enc_pixels: [R, enc_dim] encoded normalized pixels (host tensor, no
  // gradient). One embedding row gathered per entry of image_ids.
  // Returns M in (0,1) as a [R] tape variable.
  Var evaluate(Tape<T>& tape, const Tensor<T>& enc_pixels,
               const std::vector<int64_t>& image_ids) const;

  // Single-query convenience. pixel must lie in the image, image_id < N.
  double visibility(double u, double v, int64_t image_id) const;

  // Full-lattice map at pixel centers of an H x W grid; [H,W] in (0,1).
  Tensor<T> visibility_map(int64_t image_id, int64_t h, int64_t w) const;

  // Positional encoding of pixel coordinates normalized to [0,1]^2.
  Tensor<T> encode_pixels(const std::vector<std::array<double, 2>>& uv,
                          double image_w, double image_h) const;

  int64_t n_images() const { return n_images_; }
  int64_t enc_dim() const;
  const VisibilityConfig& config() const { return cfg_; }

 private:
  VisibilityConfig cfg_;
  int64_t n_images_, img_w_, img_h_;
  Tensor<T>* table_;
  std::string table_name_;
  std::vector<Tensor<T>*> w_, b_;
  std::vector<std::string> wn_, bn_;
};

// Per-ray occlusion loss: M ||C - C_hat||^2 + lambda_o (1 - M)^2.
// m: [R]; observed/rendered: [R,3]. Returns a [R] tape variable; gradients
// flow through both M and the rendered color.
template <class T>
Var occlusion_loss(Tape<T>& tape, Var m, Var observed, Var rendered,
                   double lambda_o);

// Scalar oracle-style evaluation used by callers that have plain numbers.
double occlusion_loss_value(double m, const std::array<double, 3>& observed,
                            const std::array<double, 3>& rendered,
                            double lambda_o);

using VisibilityF = VisibilityModel<float>;
using VisibilityD = VisibilityModel<double>;

}  // namespace hanerf
