#include "hanerf/appearance.hpp"

#include <cmath>

#include "hanerf/errors.hpp"
#include "hanerf/field.hpp"

namespace hanerf {

template <class T>
EncoderModel<T>::EncoderModel(const EncoderConfig& cfg, ParameterSet<T>& ps,
                              const std::string& prefix, Rng& rng)
    : cfg_(cfg) {
  if (cfg.channels.empty()) throw ConfigError("encoder needs conv layers");
  int64_t cin = 3;
  for (size_t l = 0; l < cfg.channels.size(); ++l) {
    int64_t cout = cfg.channels[l];
    int64_t fan_in = cin * 9;
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::string wn = prefix + ".conv" + std::to_string(l) + ".w";
    std::string bn = prefix + ".conv" + std::to_string(l) + ".b";
    conv_w_.push_back(
        ps.add(wn, Tensor<T>::uniform({cout, fan_in}, rng, -bound, bound)));
    conv_b_.push_back(
        ps.add(bn, Tensor<T>::uniform({cout}, rng, -bound, bound)));
    conv_wn_.push_back(wn);
    conv_bn_.push_back(bn);
    cin = cout;
  }
  fc_wn_ = prefix + ".fc.w";
  fc_bn_ = prefix + ".fc.b";
  fc_w_ = ps.add(fc_wn_, linear_init<T>(cin, cfg.appearance_dim, rng));
  double bound = 1.0 / std::sqrt(static_cast<double>(cin));
  fc_b_ = ps.add(fc_bn_, Tensor<T>::uniform({cfg.appearance_dim}, rng, -bound,
                                            bound));
}

template <class T>
Var EncoderModel<T>::encode(Tape<T>& tape, Var image) const {
  const Tensor<T>& v = tape.value(image);
  if (v.rank() != 4 || v.shape[0] != 1 || v.shape[1] != 3)
    throw ConfigError("encoder expects a [1,3,H,W] image");
  if (v.shape[2] < cfg_.min_input || v.shape[3] < cfg_.min_input)
    throw InputError("encoder input smaller than " +
                     std::to_string(cfg_.min_input) + " px");
  Var h = image;
  for (size_t l = 0; l < conv_w_.size(); ++l)
    h = tape.relu(tape.conv2d(h, tape.param(conv_wn_[l], conv_w_[l]),
                              tape.param(conv_bn_[l], conv_b_[l]), 2, 1));
  Var pooled = tape.global_avg_pool(h);
  return tape.affine(pooled, tape.param(fc_wn_, fc_w_),
                     tape.param(fc_bn_, fc_b_));
}

template <class T>
Tensor<T> EncoderModel<T>::encode_value(const Tensor<T>& image_hw3) const {
  Tape<T> tape;
  Var out = encode(tape, tape.constant(to_nchw(image_hw3)));
  Tensor<T> v = tape.value(out);
  v.shape = {cfg_.appearance_dim};
  return v;
}

template class EncoderModel<float>;
template class EncoderModel<double>;

template <class T>
Tensor<T> to_nchw(const Tensor<T>& image_hw3) {
  if (image_hw3.rank() != 3 || image_hw3.shape[2] != 3)
    throw ConfigError("expected an [H,W,3] image");
  int64_t h = image_hw3.shape[0], w = image_hw3.shape[1];
  Tensor<T> out({1, 3, h, w});
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t p = 0; p < h * w; ++p)
      out.ptr()[c * h * w + p] = image_hw3.ptr()[p * 3 + c];
  return out;
}

template Tensor<float> to_nchw(const Tensor<float>&);
template Tensor<double> to_nchw(const Tensor<double>&);

template <class T>
Var view_consistent_loss(Tape<T>& tape, const EncoderModel<T>& encoder,
                         Var grid_rows, int s, Var appearance) {
  Var img = tape.image_from_rows(grid_rows, s, s);
  Var re = encoder.encode(tape, img);
  return tape.sum(tape.abs_op(tape.sub(re, appearance)));
}

template Var view_consistent_loss(Tape<float>&, const EncoderModel<float>&,
                                  Var, int, Var);
template Var view_consistent_loss(Tape<double>&, const EncoderModel<double>&,
                                  Var, int, Var);

template <class T>
Tensor<T> interpolate_appearance(const Tensor<T>& a, const Tensor<T>& b,
                                 double t) {
  if (a.shape != b.shape)
    throw ConfigError("appearance vectors differ in shape");
  if (t < 0 || t > 1) throw InputError("interpolation parameter outside [0,1]");
  Tensor<T> out(a.shape);
  for (int64_t i = 0; i < a.numel(); ++i)
    out[i] = static_cast<T>((1.0 - t) * a[i] + t * b[i]);
  return out;
}

template Tensor<float> interpolate_appearance(const Tensor<float>&,
                                              const Tensor<float>&, double);
template Tensor<double> interpolate_appearance(const Tensor<double>&,
                                               const Tensor<double>&, double);

}  // namespace hanerf
