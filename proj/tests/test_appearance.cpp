#include <doctest.h>

#include <cmath>
#include <cstring>

#include "hanerf/appearance.hpp"
#include "hanerf/gradcheck.hpp"
#include "hanerf/rng.hpp"

using namespace hanerf;

namespace {

EncoderConfig micro_encoder() {
  EncoderConfig cfg;
  cfg.channels = {4, 4, 8, 8, 8};
  return cfg;
}

Tensor<float> noise_image(int64_t h, int64_t w, uint64_t seed) {
  Rng rng(seed);
  Tensor<float> img({h, w, 3});
  for (int64_t i = 0; i < img.numel(); ++i)
    img[i] = static_cast<float>(rng.uniform());
  return img;
}

}  // namespace

TEST_SUITE("appearance") {

TEST_CASE("the latent is 48-dimensional regardless of input size") {
  ParameterSet<float> ps;
  Rng rng(1);
  EncoderModel<float> enc(micro_encoder(), ps, "encoder", rng);
  Tensor<float> a = enc.encode_value(noise_image(64, 64, 2));
  Tensor<float> b = enc.encode_value(noise_image(48, 48, 3));
  Tensor<float> c = enc.encode_value(noise_image(8, 12, 4));
  CHECK(a.shape == Shape{48});
  CHECK(b.shape == Shape{48});
  CHECK(c.shape == Shape{48});
}

TEST_CASE("encoding is deterministic") {
  ParameterSet<float> ps;
  Rng rng(5);
  EncoderModel<float> enc(micro_encoder(), ps, "encoder", rng);
  Tensor<float> img = noise_image(32, 32, 6);
  Tensor<float> a = enc.encode_value(img);
  Tensor<float> b = enc.encode_value(img);
  CHECK(std::memcmp(a.ptr(), b.ptr(), sizeof(float) * 48) == 0);
}

TEST_CASE("undersized images are rejected") {
  ParameterSet<float> ps;
  Rng rng(7);
  EncoderModel<float> enc(micro_encoder(), ps, "encoder", rng);
  CHECK_THROWS_AS(enc.encode_value(noise_image(4, 4, 8)), InputError);
  CHECK_THROWS_AS(enc.encode_value(noise_image(8, 4, 8)), InputError);
}

TEST_CASE("tape and host encodings of the same image agree") {
  ParameterSet<float> ps;
  Rng rng(9);
  EncoderModel<float> enc(micro_encoder(), ps, "encoder", rng);
  Tensor<float> img = noise_image(16, 16, 10);
  Tensor<float> host = enc.encode_value(img);
  Tape<float> t;
  Var v = enc.encode(t, t.constant(to_nchw(img)));
  const Tensor<float>& tape_out = t.value(v);
  REQUIRE(tape_out.shape == Shape{1, 48});
  for (int64_t i = 0; i < 48; ++i)
    CHECK(tape_out[i] == doctest::Approx(host[i]).epsilon(1e-6));
}

TEST_CASE("view consistency of an image with its own encoding is zero") {
  ParameterSet<float> ps;
  Rng rng(11);
  EncoderModel<float> enc(micro_encoder(), ps, "encoder", rng);
  const int s = 8;
  Tensor<float> img = noise_image(s, s, 12);
  Tensor<float> self = enc.encode_value(img);
  Tensor<float> rows({static_cast<int64_t>(s) * s, 3});
  std::copy(img.ptr(), img.ptr() + img.numel(), rows.ptr());
  Tensor<float> app({1, 48});
  std::copy(self.ptr(), self.ptr() + 48, app.ptr());
  Tape<float> t;
  Var loss =
      view_consistent_loss(t, enc, t.constant(rows), s, t.constant(app));
  CHECK(t.value(loss)[0] == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("a uniform latent offset of 0.01 gives a loss of exactly 0.48") {
  ParameterSet<float> ps;
  Rng rng(13);
  EncoderModel<float> enc(micro_encoder(), ps, "encoder", rng);
  const int s = 8;
  Tensor<float> img = noise_image(s, s, 14);
  Tensor<float> self = enc.encode_value(img);
  Tensor<float> rows({static_cast<int64_t>(s) * s, 3});
  std::copy(img.ptr(), img.ptr() + img.numel(), rows.ptr());
  Tensor<float> app({1, 48});
  for (int64_t i = 0; i < 48; ++i) app[i] = self[i] + 0.01f;
  Tape<float> t;
  Var loss =
      view_consistent_loss(t, enc, t.constant(rows), s, t.constant(app));
  // Sum over 48 components of |0.01| = 0.48.
  CHECK(t.value(loss)[0] == doctest::Approx(0.48).epsilon(1e-4));
}

TEST_CASE("the view-consistency loss is symmetric in its arguments") {
  ParameterSet<float> ps;
  Rng rng(15);
  EncoderModel<float> enc(micro_encoder(), ps, "encoder", rng);
  const int s = 8;
  Tensor<float> img = noise_image(s, s, 16);
  Tensor<float> e = enc.encode_value(img);
  Tensor<float> rows({static_cast<int64_t>(s) * s, 3});
  std::copy(img.ptr(), img.ptr() + img.numel(), rows.ptr());
  Rng arng(17);
  Tensor<float> app = Tensor<float>::uniform({1, 48}, arng, -0.5, 0.5);
  Tape<float> t;
  Var fwd =
      view_consistent_loss(t, enc, t.constant(rows), s, t.constant(app));
  // |E(I) - a| summed equals |a - E(I)| summed, computed by hand.
  double byhand = 0;
  for (int64_t i = 0; i < 48; ++i)
    byhand += std::abs(static_cast<double>(app[i]) -
                       static_cast<double>(e[i]));
  CHECK(t.value(fwd)[0] == doctest::Approx(byhand).epsilon(1e-5));
}

TEST_CASE("interpolation endpoints are bit-exact and midpoints cancel") {
  Rng rng(19);
  Tensor<float> a = Tensor<float>::uniform({48}, rng, -1.0, 1.0);
  Tensor<float> b = Tensor<float>::uniform({48}, rng, -1.0, 1.0);
  Tensor<float> t0 = interpolate_appearance(a, b, 0.0);
  Tensor<float> t1 = interpolate_appearance(a, b, 1.0);
  CHECK(std::memcmp(t0.ptr(), a.ptr(), sizeof(float) * 48) == 0);
  CHECK(std::memcmp(t1.ptr(), b.ptr(), sizeof(float) * 48) == 0);

  Tensor<float> neg = a;
  for (int64_t i = 0; i < 48; ++i) neg[i] = -neg[i];
  Tensor<float> mid = interpolate_appearance(a, neg, 0.5);
  for (int64_t i = 0; i < 48; ++i)
    CHECK(mid[i] == doctest::Approx(0.0).epsilon(1e-7));
}

TEST_CASE("interpolation at a quarter matches the affine formula") {
  Tensor<float> a({2});
  Tensor<float> b({2});
  a[0] = 1.0f; a[1] = -2.0f;
  b[0] = 3.0f; b[1] = 2.0f;
  Tensor<float> q = interpolate_appearance(a, b, 0.25);
  CHECK(q[0] == doctest::Approx(1.5));
  CHECK(q[1] == doctest::Approx(-1.0));
}

TEST_CASE("interpolation validates its parameter and shapes") {
  Tensor<float> a({4}, 0.0f), b({4}, 1.0f), c({5}, 1.0f);
  CHECK_THROWS_AS(interpolate_appearance(a, b, -0.1), InputError);
  CHECK_THROWS_AS(interpolate_appearance(a, b, 1.1), InputError);
  CHECK_THROWS_AS(interpolate_appearance(a, c, 0.5), ConfigError);
}

TEST_CASE("latents shift little under a small spatial translation") {
  // Soft diagnostic only: global average pooling should damp small shifts.
  ParameterSet<float> ps;
  Rng rng(21);
  EncoderModel<float> enc(micro_encoder(), ps, "encoder", rng);
  Tensor<float> big = noise_image(40, 40, 22);
  auto crop = [&](int64_t y0, int64_t x0) {
    Tensor<float> out({32, 32, 3});
    for (int64_t y = 0; y < 32; ++y)
      for (int64_t x = 0; x < 32; ++x)
        for (int64_t c = 0; c < 3; ++c)
          out[(y * 32 + x) * 3 + c] = big[((y + y0) * 40 + (x + x0)) * 3 + c];
    return out;
  };
  Tensor<float> e0 = enc.encode_value(crop(0, 0));
  Tensor<float> e4 = enc.encode_value(crop(0, 4));
  double shift_d = 0, base = 0;
  for (int64_t i = 0; i < 48; ++i) {
    shift_d += std::abs(e0[i] - e4[i]);
    base += std::abs(e0[i]);
  }
  MESSAGE("4px-shift L1 distance " << shift_d << " vs latent norm " << base);
  CHECK(shift_d >= 0.0);  // informational; no tightness asserted
}

TEST_CASE("encoder gradients agree with finite differences") {
  EncoderConfig cfg;
  cfg.channels = {4, 4, 4, 4, 4};
  ParameterSet<double> ps;
  Rng rng(23);
  EncoderModel<double> enc(cfg, ps, "encoder", rng);
  Tensor<double> img = Tensor<double>::uniform({1, 3, 12, 12}, rng, 0.0, 1.0);
  auto build = [&](Tape<double>& t) {
    return t.sum(enc.encode(t, t.constant(img)));
  };
  Rng probe(24);
  GradCheckReport rep = gradient_check(ps, build, 8, probe);
  CHECK(rep.max_rel_err < 1e-4);
}

}  // TEST_SUITE
