#pragma once

#include <string>
#include <vector>

#include "hanerf/autodiff.hpp"
#include "hanerf/optim.hpp"
#include "hanerf/rng.hpp"
#include "hanerf/tensor.hpp"

namespace hanerf {

struct EncoderConfig {
  std::vector<int64_t> channels = {32, 64, 128, 256, 256};
  int appearance_dim = 48;
  // Hard floor on H and W. Real dataset images are always >= 32; the lower
  // floor admits small grid-assembled hallucination renders.
  int64_t min_input = 8;
};

// CNN appearance encoder: five 3x3 stride-2 convolutions with ReLU, global
// average pooling, then one fully-connected layer down to the latent.
// Output dimension is fixed regardless of input size.
template <class T>
class EncoderModel {
 public:
  EncoderModel(const EncoderConfig& cfg, ParameterSet<T>& ps,
               const std::string& prefix, Rng& rng);

  // image: [1,3,H,W] tape variable with values in [0,1]. Returns [1, dim].
  Var encode(Tape<T>& tape, Var image) const;

  // Forward-only convenience for [H,W,3] host images. Returns [dim].
  Tensor<T> encode_value(const Tensor<T>& image_hw3) const;

  const EncoderConfig& config() const { return cfg_; }

 private:
  EncoderConfig cfg_;
  std::vector<Tensor<T>*> conv_w_, conv_b_;
  std::vector<std::string> conv_wn_, conv_bn_;
  Tensor<T>*fc_w_, *fc_b_;
  std::string fc_wn_, fc_bn_;
};

// [H,W,3] host image -> [1,3,H,W] tensor.
template <class T>
Tensor<T> to_nchw(const Tensor<T>& image_hw3);

// L1 view-consistency loss, summed over components:
// || E(I_r) - appearance ||_1 with I_r the grid-assembled render.
// grid_rows: [S*S,3] tape variable in row-major grid order; appearance:
// [1, dim]. Returns a scalar tape variable.
template <class T>
Var view_consistent_loss(Tape<T>& tape, const EncoderModel<T>& encoder,
                         Var grid_rows, int s, Var appearance);

// (1-t) a + t b, elementwise.
template <class T>
Tensor<T> interpolate_appearance(const Tensor<T>& a, const Tensor<T>& b,
                                 double t);

using EncoderF = EncoderModel<float>;
using EncoderD = EncoderModel<double>;

}  // namespace hanerf
