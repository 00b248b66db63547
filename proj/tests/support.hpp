#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "pal/image.hpp"

namespace testsupport {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("pal_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline pal::BinaryMask random_mask(int w, int h, double density, std::mt19937_64& rng) {
  std::bernoulli_distribution b(density);
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(w) * h);
  for (auto& x : bits) x = b(rng) ? 1 : 0;
  return pal::BinaryMask(w, h, std::move(bits));
}

inline pal::Image random_image(int w, int h, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<float> d(static_cast<std::size_t>(w) * h);
  for (auto& x : d) x = u(rng);
  return pal::Image(w, h, std::move(d));
}

inline pal::BinaryMask block_mask(int w, int h, int x0, int y0, int bw, int bh) {
  pal::BinaryMask m(w, h);
  for (int y = y0; y < y0 + bh; ++y)
    for (int x = x0; x < x0 + bw; ++x) m.set(x, y, true);
  return m;
}

// Smooth textured square of side `side` at (ox + dx, oy + dy) on a flat background. The texture
// moves with the square, so frame pairs differ by a pure translation.
inline pal::Image textured_block(int w, int h, int ox, int oy, int side, double dx, double dy) {
  pal::Image img(w, h, 0.3f);
  const double k = 2.0 * std::numbers::pi / 16.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double u = x - ox - dx, v = y - oy - dy;
      if (u >= 0 && u < side && v >= 0 && v < side)
        img.set(x, y, static_cast<float>(0.6 + 0.2 * std::sin(k * u) * std::cos(k * v)));
    }
  return img;
}

}  // namespace testsupport

namespace testsupport {

// Elementwise relative error between an analytic gradient and central differences of `f`
// around `x`. Coordinates where both are below `floor` in magnitude are compared against the
// floor instead, so exact zeros do not turn rounding noise into huge ratios.
template <class F>
double max_fd_rel_error(std::vector<double>& x, const std::vector<double>& analytic, F&& f, double h = 1e-4,
                        double floor = 1e-6, std::size_t* worst_index = nullptr) {
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f();
    x[i] = keep - h;
    const double dn = f();
    x[i] = keep;
    const double numeric = (up - dn) / (2.0 * h);
    const double scale = std::max({std::abs(numeric), std::abs(analytic[i]), floor});
    const double rel = std::abs(numeric - analytic[i]) / scale;
    if (rel > worst) {
      worst = rel;
      if (worst_index) *worst_index = i;
    }
  }
  return worst;
}

}  // namespace testsupport

#include "pal/flow.hpp"
#include "pal/policy.hpp"

namespace testsupport {

inline pal::flow::PatchSample random_patch(int side, std::mt19937_64& rng, double density = 0.3) {
  pal::flow::PatchSample p;
  p.region = pal::Rect{0, 0, side, side};
  p.appearance = random_image(side, side, rng);
  p.prior = random_mask(side, side, density, rng);
  return p;
}

inline std::vector<double> random_vector(int n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = g(rng);
  return v;
}

// Fills every parameter block, biases included, with small random values.
inline pal::policy::PolicyParams random_policy(std::uint64_t seed, const pal::policy::PolicyDims& dims = {}) {
  auto p = pal::policy::init_policy(seed, dims);
  std::mt19937_64 rng(seed * 7919 + 1);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (auto b : {pal::policy::kFusionB, pal::policy::kHeadB1, pal::policy::kHeadB2})
    for (double& x : p.set.block(b)) x = u(rng);
  // A larger output layer than the init keeps p_select away from 0.5 so every block matters.
  for (double& x : p.set.block(pal::policy::kHeadW2)) x = 4.0 * u(rng);
  return p;
}

// Dense attention read written straight from the definition, no shared code with the library.
struct DenseRead {
  std::vector<double> output, attention;
};
inline DenseRead dense_read(const pal::policy::PolicyParams& p, const std::vector<std::vector<double>>& entries,
                            const std::vector<double>& e) {
  const int d = p.dims.memory, f = p.dims.feature;
  auto W = [&](pal::policy::PolicyBlock b, int r, int c) { return p.set.block(b)[static_cast<std::size_t>(r) * f + c]; };
  DenseRead out;
  out.output.assign(static_cast<std::size_t>(d), 0.0);
  if (entries.empty()) return out;
  std::vector<double> logits;
  for (const auto& m : entries) {
    double s = 0.0;
    for (int r = 0; r < d; ++r) {
      double h = 0.0, k = 0.0;
      for (int c = 0; c < f; ++c) {
        h += W(pal::policy::kQuery, r, c) * e[c];
        k += W(pal::policy::kKey, r, c) * m[c];
      }
      s += h * k;
    }
    logits.push_back(s);
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  for (double l : logits) out.attention.push_back(std::exp(l - mx) / z);
  for (std::size_t l = 0; l < entries.size(); ++l)
    for (int r = 0; r < d; ++r) {
      double v = 0.0;
      for (int c = 0; c < f; ++c) v += W(pal::policy::kValue, r, c) * entries[l][c];
      out.output[r] += out.attention[l] * v;
    }
  return out;
}

}  // namespace testsupport
