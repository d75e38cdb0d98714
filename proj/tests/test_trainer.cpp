#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <vector>

#include "hanerf/checkpoint.hpp"
#include "hanerf/hashing.hpp"
#include "hanerf/scene.hpp"
#include "hanerf/trainer.hpp"

using namespace hanerf;
namespace fs = std::filesystem;

namespace {

TrainConfig micro_config(Mode mode) {
  TrainConfig cfg;
  cfg.mode = mode;
  cfg.k = 4;
  cfg.ray_batch = 32;
  cfg.grid_s = 8;
  cfg.iterations = 20;
  cfg.log_every = 1;
  cfg.checkpoint_every = 10;
  cfg.seed = 5;
  cfg.field.pos_freqs = 2;
  cfg.field.dir_freqs = 2;
  cfg.field.depth = 2;
  cfg.field.width = 16;
  cfg.field.skip_layer = 1;
  cfg.field.color_hidden = 8;
  cfg.encoder.channels = {4, 4, 8, 8, 8};
  cfg.visibility.pixel_freqs = 2;
  cfg.visibility.width = 16;
  cfg.visibility.layers = 3;
  cfg.visibility.embed_dim = 8;
  return cfg;
}

// One tiny on-disk dataset shared by the suite; generated once.
const std::string& micro_dataset() {
  static std::string manifest = [] {
    std::string dir = "trainer_ds";
    fs::remove_all(dir);
    Rng rng(71);
    SyntheticScene scene = random_scene(rng);
    generate_dataset(scene, 6, 2, 16, 16, PerturbationSpec{}, 73, dir);
    return dir + "/manifest.json";
  }();
  return manifest;
}

struct LoadedSetup {
  ParameterSet<float> ps;
  DatasetCache data;
};

// Shared rebuild helper mirroring train()'s construction order.
Models<float> build_models(const TrainConfig& cfg, LoadedSetup& s) {
  Rng init = Rng(cfg.seed).fork(7);
  s.data = load_train_cache(micro_dataset());
  return make_models(cfg, static_cast<int64_t>(s.data.images.size()),
                     s.data.intrinsics.width, s.data.intrinsics.height, s.ps,
                     init);
}

std::vector<std::vector<double>> read_csv_rows(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in);
  std::string line;
  std::getline(in, line);  // header
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(row);
  }
  return rows;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("mode names round trip and bad names are listed") {
  for (Mode m : {Mode::kNerf, Mode::kNerfA, Mode::kNerfT, Mode::kHaNerf})
    CHECK(parse_mode(mode_name(m)) == m);
  CHECK_THROWS_WITH_AS(parse_mode("nerf-w"),
                       doctest::Contains("nerf, nerf-a, nerf-t, ha-nerf"),
                       InputError);
}

TEST_CASE("learning rate decays geometrically") {
  TrainConfig cfg;
  cfg.iterations = 1000;
  cfg.lr_start = 5e-4;
  cfg.lr_end = 5e-5;
  CHECK(cfg.learning_rate(0) == doctest::Approx(5e-4));
  CHECK(cfg.learning_rate(1000) == doctest::Approx(5e-5));
  CHECK(cfg.learning_rate(500) == doctest::Approx(std::sqrt(5e-4 * 5e-5)));
  for (int64_t it = 1; it <= 1000; ++it)
    CHECK(cfg.learning_rate(it) < cfg.learning_rate(it - 1));
}

TEST_CASE("the visibility regularizer anneals to its final value") {
  TrainConfig cfg;
  cfg.iterations = 1000;
  cfg.lambda_o = 6e-3;
  cfg.lambda_o_warm = 0.15;
  cfg.lambda_o_anneal = 0.9;
  CHECK(cfg.lambda_o_at(0) == doctest::Approx(0.15));
  CHECK(cfg.lambda_o_at(900) == doctest::Approx(6e-3));
  CHECK(cfg.lambda_o_at(1000) == doctest::Approx(6e-3));
  // Geometric midpoint halfway through the annealed span.
  CHECK(cfg.lambda_o_at(450) == doctest::Approx(std::sqrt(0.15 * 6e-3)));
  for (int64_t it = 1; it <= 1000; ++it)
    CHECK(cfg.lambda_o_at(it) <= cfg.lambda_o_at(it - 1) + 1e-15);
  // Equal warm and final values disable the schedule entirely.
  cfg.lambda_o_warm = cfg.lambda_o;
  CHECK(cfg.lambda_o_at(0) == 6e-3);
  CHECK(cfg.lambda_o_at(500) == 6e-3);
}

TEST_CASE("config json round trips exactly") {
  TrainConfig cfg = micro_config(Mode::kNerfT);
  cfg.lambda = 2e-3;
  cfg.lambda_o_warm = 0.2;
  cfg.lambda_o_anneal = 0.75;
  cfg.max_grad_norm = 1.5;
  std::string text = to_json_string(cfg);
  TrainConfig back = train_config_from_json(text);
  CHECK(to_json_string(back) == text);
  CHECK(back.mode == Mode::kNerfT);
  CHECK(back.lambda_o_warm == 0.2);
  CHECK(back.lambda_o_anneal == 0.75);
  CHECK(back.encoder.channels == std::vector<int64_t>{4, 4, 8, 8, 8});
}

TEST_CASE("invalid configurations are rejected") {
  auto broken = [](auto mutate) {
    TrainConfig cfg;
    mutate(cfg);
    return cfg;
  };
  CHECK_THROWS_AS(broken([](TrainConfig& c) { c.lambda = 0; }).validate(),
                  ConfigError);
  CHECK_THROWS_AS(broken([](TrainConfig& c) { c.lambda_o = -1; }).validate(),
                  ConfigError);
  CHECK_THROWS_AS(
      broken([](TrainConfig& c) { c.lambda_o_warm = c.lambda_o / 2; })
          .validate(),
      ConfigError);
  CHECK_THROWS_AS(
      broken([](TrainConfig& c) { c.lambda_o_anneal = 0; }).validate(),
      ConfigError);
  CHECK_THROWS_AS(
      broken([](TrainConfig& c) { c.lambda_o_anneal = 1.2; }).validate(),
      ConfigError);
  CHECK_THROWS_AS(broken([](TrainConfig& c) { c.k = 1; }).validate(),
                  ConfigError);
  CHECK_THROWS_AS(broken([](TrainConfig& c) { c.grid_s = 1; }).validate(),
                  ConfigError);
  CHECK_THROWS_AS(broken([](TrainConfig& c) { c.iterations = -1; }).validate(),
                  ConfigError);
  CHECK_THROWS_AS(broken([](TrainConfig& c) { c.lr_end = 0; }).validate(),
                  ConfigError);
  CHECK_THROWS_AS(broken([](TrainConfig& c) { c.tnear = 2.0; c.tfar = 1.0; })
                      .validate(),
                  ConfigError);
  CHECK_THROWS_AS(broken([](TrainConfig& c) { c.log_every = 0; }).validate(),
                  ConfigError);
  CHECK_NOTHROW(TrainConfig{}.validate());
}

TEST_CASE("total loss equals data plus weighted view consistency") {
  TrainConfig cfg = micro_config(Mode::kHaNerf);
  LoadedSetup s;
  Models<float> models = build_models(cfg, s);
  Rng rng(81);
  TrainBatch<float> batch = make_train_batch(s.data, models, cfg, rng);
  Tape<float> tape;
  LossParts parts = build_total_loss(tape, models, batch, cfg, cfg.iterations);
  double total = tape.value(parts.total)[0];
  CHECK(std::abs(total - (parts.data + cfg.lambda * parts.lv)) < 1e-6);
  CHECK(parts.lv > 0);
  // And the worked example: data 0.1 with a 0.48 consistency sum.
  CHECK(0.1 + 1e-3 * 0.48 == doctest::Approx(0.10048).epsilon(1e-12));
}

TEST_CASE("nerf mode is a pure data loss") {
  TrainConfig cfg = micro_config(Mode::kNerf);
  LoadedSetup s;
  Models<float> models = build_models(cfg, s);
  Rng rng(82);
  TrainBatch<float> batch = make_train_batch(s.data, models, cfg, rng);
  Tape<float> tape;
  LossParts parts = build_total_loss(tape, models, batch, cfg, 0);
  CHECK(tape.value(parts.total)[0] == doctest::Approx(parts.data));
  CHECK(parts.lv == 0);
}

TEST_CASE("ablated ha-nerf reproduces the nerf loss on an identical batch") {
  TrainConfig ha_cfg = micro_config(Mode::kHaNerf);
  LoadedSetup s;
  Models<float> models = build_models(ha_cfg, s);
  // Freeze the encoder at zero output and the visibility mask at one.
  s.ps.value("encoder.fc.w").fill(0.0f);
  s.ps.value("encoder.fc.b").fill(0.0f);
  s.ps.value("visibility.fc2.w").fill(0.0f);
  s.ps.value("visibility.fc2.b").fill(50.0f);  // sigmoid saturates to 1.0f
  Rng rng(83);
  TrainBatch<float> batch = make_train_batch(s.data, models, ha_cfg, rng);

  Tape<float> ha_tape;
  LossParts ha = build_total_loss(ha_tape, models, batch, ha_cfg, 0);

  TrainConfig nerf_cfg = ha_cfg;
  nerf_cfg.mode = Mode::kNerf;
  Tape<float> nerf_tape;
  LossParts nerf = build_total_loss(nerf_tape, models, batch, nerf_cfg, 0);

  CHECK(ha.lv == doctest::Approx(0.0));
  CHECK(ha.data == doctest::Approx(nerf.data).epsilon(1e-7));
  CHECK(static_cast<double>(ha_tape.value(ha.total)[0]) ==
        doctest::Approx(nerf_tape.value(nerf.total)[0]).epsilon(1e-7));
  CHECK(ha.psnr_probe == doctest::Approx(nerf.psnr_probe).epsilon(1e-9));
}

TEST_CASE("batches are deterministic and reference real pixels") {
  TrainConfig cfg = micro_config(Mode::kHaNerf);
  LoadedSetup s;
  Models<float> models = build_models(cfg, s);
  Rng rng_a(84), rng_b(84);
  TrainBatch<float> a = make_train_batch(s.data, models, cfg, rng_a);
  TrainBatch<float> b = make_train_batch(s.data, models, cfg, rng_b);
  CHECK(a.image_ids == b.image_ids);
  CHECK(std::memcmp(a.observed.ptr(), b.observed.ptr(),
                    sizeof(float) * static_cast<size_t>(a.observed.numel())) ==
        0);
  CHECK(std::memcmp(a.render.gx.ptr(), b.render.gx.ptr(),
                    sizeof(float) * static_cast<size_t>(a.render.gx.numel())) ==
        0);

  int64_t w = s.data.intrinsics.width, h = s.data.intrinsics.height;
  for (int64_t i = 0; i < cfg.ray_batch; ++i) {
    // With raw coordinates kept, the first two encoded-pixel columns are the
    // normalized (u, v) of the sampled pixel.
    double u = a.enc_pixels.at2(i, 0) * static_cast<double>(w);
    double v = a.enc_pixels.at2(i, 1) * static_cast<double>(h);
    int64_t x = static_cast<int64_t>(u - 0.5 + 1e-9);
    int64_t y = static_cast<int64_t>(v - 0.5 + 1e-9);
    REQUIRE(x >= 0);
    REQUIRE(x < w);
    REQUIRE(y >= 0);
    REQUIRE(y < h);
    const float* px =
        s.data.images[a.image_ids[static_cast<size_t>(i)]].ptr() +
        (y * w + x) * 3;
    for (int64_t c = 0; c < 3; ++c)
      CHECK(a.observed.at2(i, c) == doctest::Approx(px[c]).epsilon(1e-6));
    // Every ray's slot points back at its own image.
    CHECK(a.distinct_ids[static_cast<size_t>(
              a.ray_slot[static_cast<size_t>(i)])] ==
          a.image_ids[static_cast<size_t>(i)]);
  }
  // First-appearance order: distinct ids match scanning image_ids in order.
  std::vector<int64_t> expect;
  for (int64_t id : a.image_ids)
    if (std::find(expect.begin(), expect.end(), id) == expect.end())
      expect.push_back(id);
  CHECK(a.distinct_ids == expect);
  CHECK(a.has_hallucination);
  CHECK(a.grid_render.rays == cfg.grid_s * cfg.grid_s);
}

TEST_CASE("zero-iteration training writes the untouched initialization") {
  TrainConfig cfg = micro_config(Mode::kHaNerf);
  cfg.iterations = 0;
  fs::remove_all("trainer_zero");
  TrainResult res = train(micro_dataset(), cfg, "trainer_zero");
  CHECK(res.iterations_run == 0);

  LoadedSetup expected;
  Models<float> models = build_models(cfg, expected);
  LoadedSetup loaded;
  Models<float> models2 = build_models(cfg, loaded);
  // Perturb before loading so the load provably overwrites.
  loaded.ps.value("field.sigma.b").fill(3.0f);
  CheckpointHeader h = load_checkpoint(res.final_checkpoint, loaded.ps);
  CHECK(h.iteration == 0);
  CHECK(h.config.mode == Mode::kHaNerf);
  CHECK(h.n_train_images == 6);
  REQUIRE(loaded.ps.size() == expected.ps.size());
  for (size_t i = 0; i < expected.ps.size(); ++i) {
    const auto& a = expected.ps.at(i);
    const auto& b = loaded.ps.at(i);
    CHECK(a.name == b.name);
    REQUIRE(a.value.numel() == b.value.numel());
    CHECK(std::memcmp(a.value.ptr(), b.value.ptr(),
                      sizeof(float) * static_cast<size_t>(a.value.numel())) ==
          0);
  }
}

TEST_CASE("short training reduces the loss substantially") {
  TrainConfig cfg = micro_config(Mode::kNerf);
  cfg.iterations = 300;
  cfg.lr_start = 5e-3;
  cfg.lr_end = 1e-3;
  fs::remove_all("trainer_smoke");
  TrainResult res = train(micro_dataset(), cfg, "trainer_smoke");
  CHECK(res.iterations_run == 300);
  auto rows = read_csv_rows(res.metrics_csv);
  REQUIRE(rows.size() == 300);
  double first = 0, last = 0;
  for (int i = 0; i < 10; ++i) {
    first += rows[static_cast<size_t>(i)][1];
    last += rows[rows.size() - 10 + static_cast<size_t>(i)][1];
  }
  CHECK(last < 0.5 * first);
}

TEST_CASE("resumed training is bit-identical to an uninterrupted run") {
  TrainConfig cfg = micro_config(Mode::kHaNerf);
  cfg.iterations = 8;
  cfg.checkpoint_every = 6;
  fs::remove_all("trainer_straight");
  fs::remove_all("trainer_resumed");
  TrainResult straight = train(micro_dataset(), cfg, "trainer_straight");
  // The latest checkpoint sits at iteration 6; continue it elsewhere.
  TrainResult resumed = train(micro_dataset(), cfg, "trainer_resumed",
                              "trainer_straight/ckpt_latest.bin");
  CHECK(resumed.iterations_run == 2);
  CHECK(sha256_file(straight.final_checkpoint) ==
        sha256_file(resumed.final_checkpoint));
}

TEST_CASE("checkpoints survive a save/load round trip") {
  TrainConfig cfg = micro_config(Mode::kNerfT);
  LoadedSetup s;
  Models<float> models = build_models(cfg, s);
  fs::create_directories("trainer_ckpt");
  Rng rng(85);
  save_checkpoint("trainer_ckpt/rt.bin", s.ps, cfg, s.data.intrinsics,
                  static_cast<int64_t>(s.data.images.size()), 17, rng);
  CheckpointHeader head = read_checkpoint_header("trainer_ckpt/rt.bin");
  CHECK(head.version == 1);
  CHECK(head.iteration == 17);
  CHECK(head.config.mode == Mode::kNerfT);
  CHECK(head.rng_state == rng.state());
  CHECK(head.rng_inc == rng.inc());
  CHECK(head.intrinsics.width == s.data.intrinsics.width);

  LoadedSetup other;
  Models<float> models2 = build_models(cfg, other);
  other.ps.value("field.trunk0.w").fill(-2.0f);
  load_checkpoint("trainer_ckpt/rt.bin", other.ps);
  for (size_t i = 0; i < s.ps.size(); ++i) {
    const auto& a = s.ps.at(i);
    const auto& b = other.ps.at(i);
    CHECK(std::memcmp(a.value.ptr(), b.value.ptr(),
                      sizeof(float) * static_cast<size_t>(a.value.numel())) ==
          0);
    CHECK(std::memcmp(a.m.ptr(), b.m.ptr(),
                      sizeof(float) * static_cast<size_t>(a.m.numel())) == 0);
  }
}

TEST_CASE("corrupted checkpoints are diagnosed") {
  TrainConfig cfg = micro_config(Mode::kNerf);
  LoadedSetup s;
  Models<float> models = build_models(cfg, s);
  fs::create_directories("trainer_ckpt");
  Rng rng(86);
  std::string path = "trainer_ckpt/corrupt.bin";
  save_checkpoint(path, s.ps, cfg, s.data.intrinsics, 6, 3, rng);

  auto clone_with = [&](const std::string& dst, auto mutate) {
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
    mutate(bytes);
    std::ofstream out(dst, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  };

  std::string bad_magic = "trainer_ckpt/bad_magic.bin";
  clone_with(bad_magic, [](std::string& b) { b[0] = 'X'; });
  LoadedSetup t1;
  Models<float> m1 = build_models(cfg, t1);
  CHECK_THROWS_AS(load_checkpoint(bad_magic, t1.ps), FormatError);

  std::string truncated = "trainer_ckpt/truncated.bin";
  clone_with(truncated, [](std::string& b) { b.resize(b.size() / 2); });
  LoadedSetup t2;
  Models<float> m2 = build_models(cfg, t2);
  CHECK_THROWS_AS(load_checkpoint(truncated, t2.ps), FormatError);

  std::string version = "trainer_ckpt/version.bin";
  clone_with(version, [](std::string& b) {
    size_t at = b.find("\"version\":1");
    REQUIRE(at != std::string::npos);
    b[at + 10] = '2';  // same length, different version
  });
  LoadedSetup t3;
  Models<float> m3 = build_models(cfg, t3);
  CHECK_THROWS_AS(load_checkpoint(version, t3.ps), FormatError);

  LoadedSetup t4;
  Models<float> m4 = build_models(cfg, t4);
  CHECK_THROWS_AS(load_checkpoint("trainer_ckpt/not_there.bin", t4.ps),
                  ArtifactError);
}

TEST_CASE("resuming under a different mode is refused") {
  TrainConfig cfg = micro_config(Mode::kNerf);
  cfg.iterations = 2;
  cfg.checkpoint_every = 1;
  fs::remove_all("trainer_modeswap");
  train(micro_dataset(), cfg, "trainer_modeswap");
  TrainConfig other = micro_config(Mode::kHaNerf);
  other.iterations = 4;
  CHECK_THROWS_WITH_AS(
      train(micro_dataset(), other, "trainer_modeswap2",
            "trainer_modeswap/ckpt_final.bin"),
      doctest::Contains("trained in mode"), ArtifactError);
  // Same mode but a different architecture is also incompatible.
  TrainConfig widened = micro_config(Mode::kNerf);
  widened.iterations = 4;
  widened.field.width = 32;
  CHECK_THROWS_AS(train(micro_dataset(), widened, "trainer_modeswap3",
                        "trainer_modeswap/ckpt_final.bin"),
                  ArtifactError);
}

TEST_CASE("an absurd learning rate raises a divergence error") {
  TrainConfig cfg = micro_config(Mode::kNerf);
  cfg.iterations = 6;
  cfg.lr_start = 1e20;
  cfg.lr_end = 1e20;
  fs::remove_all("trainer_blowup");
  CHECK_THROWS_AS(train(micro_dataset(), cfg, "trainer_blowup"),
                  DivergenceError);
}

}  // TEST_SUITE
