#include "hanerf/field.hpp"

#include <cmath>

#include "hanerf/errors.hpp"

namespace hanerf {

template <class T>
Tensor<T> encode(const Tensor<T>& values, int freqs, bool include_raw) {
  if (freqs < 1) throw ConfigError("encoding frequency count must be >= 1");
  if (values.rank() != 2) throw ConfigError("encode expects [M,k]");
  int64_t m = values.shape[0], k = values.shape[1];
  int64_t out_dim = encoded_dim(k, freqs, include_raw);
  Tensor<T> out({m, out_dim});
  constexpr double kPi = 3.14159265358979323846;
  for (int64_t r = 0; r < m; ++r) {
    const T* in = values.ptr() + r * k;
    T* o = out.ptr() + r * out_dim;
    int64_t c = 0;
    if (include_raw)
      for (int64_t i = 0; i < k; ++i) o[c++] = in[i];
    double scale = kPi;
    for (int j = 0; j < freqs; ++j) {
      for (int64_t i = 0; i < k; ++i)
        o[c + i] = static_cast<T>(std::sin(scale * in[i]));
      for (int64_t i = 0; i < k; ++i)
        o[c + k + i] = static_cast<T>(std::cos(scale * in[i]));
      c += 2 * k;
      scale *= 2.0;
    }
  }
  return out;
}

template Tensor<float> encode(const Tensor<float>&, int, bool);
template Tensor<double> encode(const Tensor<double>&, int, bool);

template <class T>
Tensor<T> linear_init(int64_t fan_in, int64_t fan_out, Rng& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return Tensor<T>::uniform({fan_in, fan_out}, rng, -bound, bound);
}

template Tensor<float> linear_init(int64_t, int64_t, Rng&);
template Tensor<double> linear_init(int64_t, int64_t, Rng&);

namespace {

template <class T>
Tensor<T> bias_init(int64_t fan_in, int64_t n, Rng& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return Tensor<T>::uniform({n}, rng, -bound, bound);
}

}  // namespace

template <class T>
FieldModel<T>::FieldModel(const FieldConfig& cfg, ParameterSet<T>& ps,
                          const std::string& prefix, Rng& rng)
    : cfg_(cfg) {
  if (cfg.depth < 2 || cfg.skip_layer <= 0 || cfg.skip_layer >= cfg.depth)
    throw ConfigError("field trunk depth/skip configuration invalid");
  int64_t gx = cfg.gx_dim();
  for (int l = 0; l < cfg.depth; ++l) {
    int64_t in = l == 0 ? gx : cfg.width;
    if (l == cfg.skip_layer) in += gx;
    std::string wn = prefix + ".trunk" + std::to_string(l) + ".w";
    std::string bn = prefix + ".trunk" + std::to_string(l) + ".b";
    trunk_w_.push_back(ps.add(wn, linear_init<T>(in, cfg.width, rng)));
    trunk_b_.push_back(ps.add(bn, bias_init<T>(in, cfg.width, rng)));
    trunk_wn_.push_back(wn);
    trunk_bn_.push_back(bn);
  }
  sigma_wn_ = prefix + ".sigma.w";
  sigma_bn_ = prefix + ".sigma.b";
  sigma_w_ = ps.add(sigma_wn_, linear_init<T>(cfg.width, 1, rng));
  sigma_b_ = ps.add(sigma_bn_, bias_init<T>(cfg.width, 1, rng));
  int64_t cin = cfg.gd_dim() + cfg.width + cfg.appearance_dim;
  color1_wn_ = prefix + ".color1.w";
  color1_bn_ = prefix + ".color1.b";
  color1_w_ = ps.add(color1_wn_, linear_init<T>(cin, cfg.color_hidden, rng));
  color1_b_ = ps.add(color1_bn_, bias_init<T>(cin, cfg.color_hidden, rng));
  color2_wn_ = prefix + ".color2.w";
  color2_bn_ = prefix + ".color2.b";
  color2_w_ =
      ps.add(color2_wn_, linear_init<T>(cfg.color_hidden, 3, rng));
  color2_b_ = ps.add(color2_bn_, bias_init<T>(cfg.color_hidden, 3, rng));
}

template <class T>
Var FieldModel<T>::trunk(Tape<T>& tape, Var gx) const {
  Var h = gx;
  for (int l = 0; l < cfg_.depth; ++l) {
    if (l == cfg_.skip_layer) h = tape.concat_cols({h, gx});
    h = tape.relu(tape.affine(h, tape.param(trunk_wn_[l], trunk_w_[l]),
                              tape.param(trunk_bn_[l], trunk_b_[l])));
  }
  return h;
}

template <class T>
std::pair<Var, Var> FieldModel<T>::density(Tape<T>& tape, Var gx) const {
  if (tape.value(gx).rank() != 2 || tape.value(gx).shape[1] != cfg_.gx_dim())
    throw ConfigError("encoded position width mismatch");
  Var z = trunk(tape, gx);
  Var raw = tape.affine(z, tape.param(sigma_wn_, sigma_w_),
                        tape.param(sigma_bn_, sigma_b_));
  Var sigma =
      tape.reshape(tape.softplus(raw), {tape.value(gx).shape[0]});
  return {sigma, z};
}

template <class T>
typename FieldModel<T>::Output FieldModel<T>::evaluate(Tape<T>& tape, Var gx,
                                                       Var gd,
                                                       Var appearance) const {
  auto [sigma, z] = density(tape, gx);
  const Tensor<T>& gdv = tape.value(gd);
  if (gdv.rank() != 2 || gdv.shape[1] != cfg_.gd_dim())
    throw ConfigError("encoded direction width mismatch");
  if (tape.value(appearance).shape !=
      Shape{gdv.shape[0], cfg_.appearance_dim})
    throw ConfigError("appearance latent batch shape mismatch");
  Var cin = tape.concat_cols({gd, z, appearance});
  Var h = tape.relu(tape.affine(cin, tape.param(color1_wn_, color1_w_),
                                tape.param(color1_bn_, color1_b_)));
  Var rgb = tape.sigmoid(tape.affine(h, tape.param(color2_wn_, color2_w_),
                                     tape.param(color2_bn_, color2_b_)));
  return {sigma, rgb, z};
}

template class FieldModel<float>;
template class FieldModel<double>;

}  // namespace hanerf
