#include "hanerf/occlusion.hpp"

#include <cmath>

#include "hanerf/errors.hpp"
#include "hanerf/field.hpp"

namespace hanerf {

template <class T>
VisibilityModel<T>::VisibilityModel(const VisibilityConfig& cfg,
                                    int64_t n_images, int64_t image_width,
                                    int64_t image_height, ParameterSet<T>& ps,
                                    const std::string& prefix, Rng& rng)
    : cfg_(cfg), n_images_(n_images), img_w_(image_width),
      img_h_(image_height) {
  if (n_images <= 0) throw ConfigError("visibility needs at least one image");
  if (cfg.layers < 2) throw ConfigError("visibility needs >= 2 layers");
  table_name_ = prefix + ".embeddings";
  table_ = ps.add(table_name_,
                  Tensor<T>::normal({n_images, cfg.embed_dim}, rng,
                                    cfg.embed_stddev));
  int64_t in = enc_dim() + cfg.embed_dim;
  for (int l = 0; l < cfg.layers; ++l) {
    int64_t out = (l + 1 == cfg.layers) ? 1 : cfg.width;
    std::string wn = prefix + ".fc" + std::to_string(l) + ".w";
    std::string bn = prefix + ".fc" + std::to_string(l) + ".b";
    double bound = 1.0 / std::sqrt(static_cast<double>(in));
    w_.push_back(ps.add(wn, Tensor<T>::uniform({in, out}, rng, -bound, bound)));
    b_.push_back(ps.add(bn, Tensor<T>::uniform({out}, rng, -bound, bound)));
    wn_.push_back(wn);
    bn_.push_back(bn);
    in = out;
  }
}

template <class T>
int64_t VisibilityModel<T>::enc_dim() const {
  return encoded_dim(2, cfg_.pixel_freqs, cfg_.include_raw);
}

template <class T>
Tensor<T> VisibilityModel<T>::encode_pixels(
    const std::vector<std::array<double, 2>>& uv, double image_w,
    double image_h) const {
  Tensor<T> norm({static_cast<int64_t>(uv.size()), 2});
  for (size_t i = 0; i < uv.size(); ++i) {
    norm.at2(static_cast<int64_t>(i), 0) = static_cast<T>(uv[i][0] / image_w);
    norm.at2(static_cast<int64_t>(i), 1) = static_cast<T>(uv[i][1] / image_h);
  }
  return encode(norm, cfg_.pixel_freqs, cfg_.include_raw);
}

template <class T>
Var VisibilityModel<T>::evaluate(Tape<T>& tape, const Tensor<T>& enc_pixels,
                                 const std::vector<int64_t>& image_ids) const {
  if (enc_pixels.rank() != 2 || enc_pixels.shape[1] != enc_dim())
    throw ConfigError("encoded pixel width mismatch");
  if (enc_pixels.shape[0] != static_cast<int64_t>(image_ids.size()))
    throw ConfigError("one image id required per pixel");
  for (int64_t id : image_ids)
    if (id < 0 || id >= n_images_)
      throw InputError("image id " + std::to_string(id) +
                       " has no transient embedding");
  Var emb = tape.gather_rows(tape.param(table_name_, table_),
                             std::vector<int64_t>(image_ids));
  Var h = tape.concat_cols({tape.constant(enc_pixels), emb});
  for (size_t l = 0; l < w_.size(); ++l) {
    h = tape.affine(h, tape.param(wn_[l], w_[l]), tape.param(bn_[l], b_[l]));
    if (l + 1 < w_.size()) h = tape.relu(h);
  }
  return tape.reshape(tape.sigmoid(h), {enc_pixels.shape[0]});
}

template <class T>
double VisibilityModel<T>::visibility(double u, double v,
                                      int64_t image_id) const {
  if (u < 0 || u >= static_cast<double>(img_w_) || v < 0 ||
      v >= static_cast<double>(img_h_))
    throw InputError("pixel outside image bounds");
  if (image_id < 0 || image_id >= n_images_)
    throw InputError("image id has no transient embedding");
  Tape<T> tape;
  Tensor<T> enc = encode_pixels({{u, v}}, static_cast<double>(img_w_),
                                static_cast<double>(img_h_));
  Var m = evaluate(tape, enc, {image_id});
  return static_cast<double>(tape.value(m)[0]);
}

template <class T>
Tensor<T> VisibilityModel<T>::visibility_map(int64_t image_id, int64_t h,
                                             int64_t w) const {
  if (image_id < 0 || image_id >= n_images_)
    throw InputError("image id has no transient embedding");
  if (h <= 0 || w <= 0) throw InputError("map size must be positive");
  std::vector<std::array<double, 2>> uv;
  uv.reserve(static_cast<size_t>(h * w));
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      uv.push_back({x + 0.5, y + 0.5});
  Tape<T> tape;
  Tensor<T> enc =
      encode_pixels(uv, static_cast<double>(w), static_cast<double>(h));
  Var m = evaluate(tape, enc, std::vector<int64_t>(uv.size(), image_id));
  Tensor<T> out = tape.value(m);
  out.shape = {h, w};
  return out;
}

template class VisibilityModel<float>;
template class VisibilityModel<double>;

template <class T>
Var occlusion_loss(Tape<T>& tape, Var m, Var observed, Var rendered,
                   double lambda_o) {
  const Tensor<T>& mv = tape.value(m);
  if (mv.rank() != 1) throw ConfigError("occlusion loss expects M as [R]");
  if (tape.value(observed).shape != tape.value(rendered).shape)
    throw ConfigError("observed/rendered shape mismatch");
  Var resid = tape.sum_axis1(tape.square(tape.sub(observed, rendered)));
  Var data_term = tape.mul(m, resid);
  Var reg = tape.axpb(tape.square(tape.axpb(m, T(-1), T(1))),
                      static_cast<T>(lambda_o), T(0));
  return tape.add(data_term, reg);
}

template Var occlusion_loss(Tape<float>&, Var, Var, Var, double);
template Var occlusion_loss(Tape<double>&, Var, Var, Var, double);

double occlusion_loss_value(double m, const std::array<double, 3>& observed,
                            const std::array<double, 3>& rendered,
                            double lambda_o) {
  double r2 = 0;
  for (int c = 0; c < 3; ++c) {
    double d = observed[c] - rendered[c];
    r2 += d * d;
  }
  return m * r2 + lambda_o * (1.0 - m) * (1.0 - m);
}

}  // namespace hanerf
