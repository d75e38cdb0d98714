#pragma once

#include <string>

#include "hanerf/autodiff.hpp"
#include "hanerf/optim.hpp"
#include "hanerf/rng.hpp"
#include "hanerf/tensor.hpp"

namespace hanerf {

struct PositionalEncodingConfig {
  int freqs = 10;
  bool include_raw = true;
};

// Frequency encoding of a batch of k-vectors. Output layout per row:
// [raw components (if kept), then for each band j = 0..L-1: sin(2^j pi p)
// for all components, cos(2^j pi p) for all components]. Output width is
// k * (2L + include_raw). Inputs are expected in [-1, 1] per axis.
template <class T>
Tensor<T> encode(const Tensor<T>& values, int freqs, bool include_raw);

inline int64_t encoded_dim(int64_t k, int freqs, bool include_raw) {
  return k * (2 * freqs + (include_raw ? 1 : 0));
}

struct FieldConfig {
  int pos_freqs = 10;        // L for positions
  int dir_freqs = 4;         // L for directions
  bool include_raw = true;
  int depth = 8;             // trunk layers
  int width = 256;
  int skip_layer = 4;        // trunk layer whose input re-concatenates gx
  int color_hidden = 128;
  int appearance_dim = 48;

  int64_t gx_dim() const { return encoded_dim(3, pos_freqs, include_raw); }
  int64_t gd_dim() const { return encoded_dim(3, dir_freqs, include_raw); }
};

// Static radiance field. The trunk maps encoded position to a density and a
// feature vector; the color head maps (encoded direction, feature,
// appearance latent) to sigmoid RGB. Density never sees the direction or
// the latent, so it is appearance-invariant by construction.
template <class T>
class FieldModel {
 public:
  struct Output {
    Var sigma;  // [B], softplus-activated
    Var rgb;    // [B,3], sigmoid-activated
    Var z;      // [B,width] trunk features
  };

  FieldModel(const FieldConfig& cfg, ParameterSet<T>& ps,
             const std::string& prefix, Rng& rng);

  // gx: [B, gx_dim] encoded positions (built with encode(), outside the
  // tape). Returns density and features only.
  std::pair<Var, Var> density(Tape<T>& tape, Var gx) const;

  // Full evaluation. gd: [B, gd_dim]; appearance: [B, appearance_dim].
  Output evaluate(Tape<T>& tape, Var gx, Var gd, Var appearance) const;

  const FieldConfig& config() const { return cfg_; }

 private:
  Var trunk(Tape<T>& tape, Var gx) const;

  FieldConfig cfg_;
  std::vector<Tensor<T>*> trunk_w_, trunk_b_;
  std::vector<std::string> trunk_wn_, trunk_bn_;
  Tensor<T>*sigma_w_, *sigma_b_;
  Tensor<T>*color1_w_, *color1_b_;
  Tensor<T>*color2_w_, *color2_b_;
  std::string sigma_wn_, sigma_bn_, color1_wn_, color1_bn_, color2_wn_,
      color2_bn_;
};

// Uniform fan-in init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <class T>
Tensor<T> linear_init(int64_t fan_in, int64_t fan_out, Rng& rng);

using FieldF = FieldModel<float>;
using FieldD = FieldModel<double>;

}  // namespace hanerf
