#include "hanerf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "hanerf/errors.hpp"
#include "hanerf/image.hpp"

namespace hanerf {

using nlohmann::json;

double psnr(const Tensor<float>& a, const Tensor<float>& b) {
  if (a.shape != b.shape) throw InputError("psnr: image dimensions differ");
  if (a.numel() == 0) throw InputError("psnr: empty image");
  double mse = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    double d = static_cast<double>(a[i]) - b[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.numel());
  if (mse <= 0) return 99.0;
  return std::min(-10.0 * std::log10(mse), 99.0);
}

namespace {

Tensor<float> to_gray(const Tensor<float>& img) {
  if (img.rank() == 2) return img;
  if (img.rank() == 3 && img.shape[2] == 3) return luminance(img);
  throw InputError("ssim expects [H,W] or [H,W,3]");
}

}  // namespace

double ssim(const Tensor<float>& a_in, const Tensor<float>& b_in) {
  if (a_in.shape != b_in.shape) throw InputError("ssim: image dimensions differ");
  Tensor<float> a = to_gray(a_in), b = to_gray(b_in);
  constexpr int kWin = 11;
  constexpr double kSigma = 1.5;
  int64_t h = a.shape[0], w = a.shape[1];
  if (h < kWin || w < kWin)
    throw InputError("ssim: image smaller than the 11x11 window");

  double kernel[kWin][kWin];
  double ksum = 0;
  for (int i = 0; i < kWin; ++i)
    for (int j = 0; j < kWin; ++j) {
      double dy = i - kWin / 2, dx = j - kWin / 2;
      kernel[i][j] = std::exp(-(dx * dx + dy * dy) / (2 * kSigma * kSigma));
      ksum += kernel[i][j];
    }
  for (auto& row : kernel)
    for (double& v : row) v /= ksum;

  constexpr double kC1 = 0.01 * 0.01, kC2 = 0.03 * 0.03;
  double acc = 0;
  int64_t windows = 0;
  for (int64_t y = 0; y + kWin <= h; ++y)
    for (int64_t x = 0; x + kWin <= w; ++x) {
      double mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
      for (int i = 0; i < kWin; ++i)
        for (int j = 0; j < kWin; ++j) {
          double pa = a[(y + i) * w + (x + j)];
          double pb = b[(y + i) * w + (x + j)];
          double k = kernel[i][j];
          mx += k * pa;
          my += k * pb;
          mxx += k * pa * pa;
          myy += k * pb * pb;
          mxy += k * pa * pb;
        }
      double vx = mxx - mx * mx, vy = myy - my * my, cov = mxy - mx * my;
      double s = ((2 * mx * my + kC1) * (2 * cov + kC2)) /
                 ((mx * mx + my * my + kC1) * (vx + vy + kC2));
      acc += s;
      ++windows;
    }
  return acc / static_cast<double>(windows);
}

double mask_iou(const Tensor<float>& predicted, const Tensor<float>& truth) {
  if (predicted.shape != truth.shape)
    throw InputError("mask_iou: dimensions differ");
  int64_t inter = 0, uni = 0;
  for (int64_t i = 0; i < predicted.numel(); ++i) {
    bool p = predicted[i] > 0.5f, t = truth[i] > 0.5f;
    inter += p && t;
    uni += p || t;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double mean_of(const std::vector<double>& xs) {
  if (xs.empty()) return 0;
  double s = 0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double median_of(std::vector<double> xs) {
  if (xs.empty()) return 0;
  std::sort(xs.begin(), xs.end());
  size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

namespace {

std::vector<double> collect_psnr(const std::vector<ImageScore>& s) {
  std::vector<double> out;
  for (const auto& e : s) out.push_back(e.psnr);
  return out;
}

}  // namespace

double EvalReport::mean_clean_psnr() const { return mean_of(collect_psnr(clean)); }
double EvalReport::median_clean_psnr() const {
  return median_of(collect_psnr(clean));
}
double EvalReport::mean_clean_ssim() const {
  std::vector<double> v;
  for (const auto& e : clean) v.push_back(e.ssim);
  return mean_of(v);
}
double EvalReport::mean_transfer_psnr() const {
  return mean_of(collect_psnr(transfer));
}
double EvalReport::median_visibility_iou() const {
  std::vector<double> v;
  for (const auto& e : visibility) v.push_back(e.iou);
  return median_of(v);
}

void save_report_json(const EvalReport& r, const std::string& path) {
  json j;
  j["mode"] = r.mode;
  j["config"] =
      r.config_json.empty() ? json::object() : json::parse(r.config_json);
  auto scores = [](const std::vector<ImageScore>& s) {
    json arr = json::array();
    for (const auto& e : s)
      arr.push_back({{"id", e.frame_id}, {"psnr", e.psnr}, {"ssim", e.ssim}});
    return arr;
  };
  j["clean"] = scores(r.clean);
  j["transfer"] = scores(r.transfer);
  j["visibility"] = json::array();
  for (const auto& e : r.visibility)
    j["visibility"].push_back({{"train_index", e.train_index}, {"iou", e.iou}});
  j["aggregates"] = {{"mean_clean_psnr", r.mean_clean_psnr()},
                     {"median_clean_psnr", r.median_clean_psnr()},
                     {"mean_clean_ssim", r.mean_clean_ssim()},
                     {"mean_transfer_psnr", r.mean_transfer_psnr()},
                     {"median_visibility_iou", r.median_visibility_iou()}};
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(2) << "\n";
}

void save_report_csv(const EvalReport& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "mode,metric,mean,median\n";
  out << r.mode << ",clean_psnr," << r.mean_clean_psnr() << ","
      << r.median_clean_psnr() << "\n";
  out << r.mode << ",clean_ssim," << r.mean_clean_ssim() << ","
      << r.mean_clean_ssim() << "\n";
  if (!r.transfer.empty())
    out << r.mode << ",transfer_psnr," << r.mean_transfer_psnr() << ","
        << r.mean_transfer_psnr() << "\n";
  if (!r.visibility.empty())
    out << r.mode << ",visibility_iou,,"
        << r.median_visibility_iou() << "\n";
}

EvalReport load_report_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ArtifactError("report not found: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError("report parse failure: " + std::string(e.what()));
  }
  EvalReport r;
  try {
    r.mode = j.at("mode");
    r.config_json = j.at("config").dump();
    for (const json& e : j.at("clean"))
      r.clean.push_back({e.at("id"), e.at("psnr"), e.at("ssim")});
    for (const json& e : j.at("transfer"))
      r.transfer.push_back({e.at("id"), e.at("psnr"), e.at("ssim")});
    for (const json& e : j.at("visibility"))
      r.visibility.push_back({e.at("train_index"), e.at("iou")});
  } catch (const json::exception& e) {
    throw FormatError("report field error: " + std::string(e.what()));
  }
  return r;
}

}  // namespace hanerf
