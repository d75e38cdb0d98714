#include "hanerf/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "hanerf/errors.hpp"

namespace hanerf {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'H', 'A', 'N', 'E', 'R', 'F', '0', '1'};

void write_u64(std::ostream& out, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw FormatError("checkpoint truncated in header length");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

json header_json(const ParameterSet<float>& ps, const TrainConfig& cfg,
                 const CameraIntrinsics& intr, int64_t n_train_images,
                 int64_t iteration, const Rng& rng) {
  json j;
  j["version"] = 1;
  j["mode"] = mode_name(cfg.mode);
  j["config"] = json::parse(to_json_string(cfg));
  j["intrinsics"] = {{"fx", intr.focal},
                     {"cx", intr.cx},
                     {"cy", intr.cy},
                     {"w", intr.width},
                     {"h", intr.height}};
  j["n_train_images"] = n_train_images;
  j["iteration"] = iteration;
  j["adam_step"] = ps.step_count();
  j["rng"] = {{"state", rng.state()}, {"inc", rng.inc()}};
  j["params"] = json::array();
  for (size_t i = 0; i < ps.size(); ++i) {
    const auto& rec = ps.at(i);
    j["params"].push_back({{"name", rec.name}, {"shape", rec.value.shape}});
  }
  return j;
}

CheckpointHeader parse_header(const json& j) {
  CheckpointHeader h;
  try {
    h.version = j.at("version");
    if (h.version != 1)
      throw FormatError("unsupported checkpoint version " +
                        std::to_string(h.version));
    h.config = train_config_from_json(j.at("config").dump());
    const json& in = j.at("intrinsics");
    h.intrinsics.focal = in.at("fx");
    h.intrinsics.cx = in.at("cx");
    h.intrinsics.cy = in.at("cy");
    h.intrinsics.width = in.at("w");
    h.intrinsics.height = in.at("h");
    h.n_train_images = j.at("n_train_images");
    h.iteration = j.at("iteration");
    h.adam_step = j.at("adam_step");
    h.rng_state = j.at("rng").at("state");
    h.rng_inc = j.at("rng").at("inc");
  } catch (const json::exception& e) {
    throw FormatError("checkpoint header field error: " +
                      std::string(e.what()));
  }
  return h;
}

json read_header_json(std::istream& in, const std::string& path) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw FormatError("bad checkpoint magic in " + path);
  uint64_t len = read_u64(in);
  if (len == 0 || len > (1ull << 30))
    throw FormatError("implausible checkpoint header length in " + path);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw FormatError("checkpoint truncated in header: " + path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError("checkpoint header parse failure: " +
                      std::string(e.what()));
  }
}

}  // namespace

void save_checkpoint(const std::string& path, const ParameterSet<float>& ps,
                     const TrainConfig& cfg, const CameraIntrinsics& intr,
                     int64_t n_train_images, int64_t iteration,
                     const Rng& rng) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  std::string header =
      header_json(ps, cfg, intr, n_train_images, iteration, rng).dump();
  out.write(kMagic, 8);
  write_u64(out, header.size());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (size_t i = 0; i < ps.size(); ++i) {
    const auto& rec = ps.at(i);
    auto dump = [&](const Tensor<float>& t) {
      out.write(reinterpret_cast<const char*>(t.ptr()),
                static_cast<std::streamsize>(t.numel() * sizeof(float)));
    };
    dump(rec.value);
    dump(rec.m);
    dump(rec.v);
  }
  if (!out) throw IoError("write failed for " + path);
}

CheckpointHeader read_checkpoint_header(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("checkpoint not found: " + path);
  return parse_header(read_header_json(in, path));
}

CheckpointHeader load_checkpoint(const std::string& path,
                                 ParameterSet<float>& ps) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("checkpoint not found: " + path);
  json j = read_header_json(in, path);
  CheckpointHeader h = parse_header(j);
  const json& params = j.at("params");
  if (params.size() != ps.size())
    throw ArtifactError("checkpoint holds " + std::to_string(params.size()) +
                        " parameters, model expects " +
                        std::to_string(ps.size()));
  for (size_t i = 0; i < ps.size(); ++i) {
    auto& rec = ps.at(i);
    std::string name = params[i].at("name");
    Shape shape = params[i].at("shape").get<Shape>();
    if (name != rec.name)
      throw ArtifactError("checkpoint parameter order mismatch: " + name +
                          " vs " + rec.name);
    if (shape != rec.value.shape)
      throw ArtifactError("checkpoint shape mismatch for " + name + ": " +
                          shape_str(shape) + " vs " +
                          shape_str(rec.value.shape));
    auto slurp = [&](Tensor<float>& t) {
      in.read(reinterpret_cast<char*>(t.ptr()),
              static_cast<std::streamsize>(t.numel() * sizeof(float)));
      if (!in) throw FormatError("checkpoint truncated in arrays: " + path);
    };
    slurp(rec.value);
    slurp(rec.m);
    slurp(rec.v);
  }
  ps.set_step_count(h.adam_step);
  return h;
}

}  // namespace hanerf
