#include <algorithm>

#include "pal/errors.hpp"
#include "pal/kernels.hpp"

namespace pal::kernels::ref {

namespace {

double tap(const Tensor& t, int ch, int y, int x) {
  if (y < 0 || x < 0 || y >= t.h || x >= t.w) return 0.0;
  return t.v[(static_cast<std::size_t>(ch) * t.h + y) * t.w + x];
}

std::size_t widx(int o, int i, int in_ch, int ky, int kx) {
  return ((static_cast<std::size_t>(o) * in_ch + i) * 3 + ky) * 3 + kx;
}

double clamped(const std::vector<double>& f, int w, int h, int x, int y) {
  x = std::clamp(x, 0, w - 1);
  y = std::clamp(y, 0, h - 1);
  return f[static_cast<std::size_t>(y) * w + x];
}

}  // namespace

void conv3x3_forward(const Tensor& in, std::span<const double> weights, std::span<const double> bias,
                     int out_channels, Tensor& out) {
  if (weights.size() != static_cast<std::size_t>(out_channels) * in.c * 9)
    throw DimensionError("conv3x3: weight count mismatch");
  out = Tensor(out_channels, in.h, in.w);
  for (int o = 0; o < out_channels; ++o)
    for (int y = 0; y < in.h; ++y)
      for (int x = 0; x < in.w; ++x) {
        double s = bias.empty() ? 0.0 : bias[o];
        for (int i = 0; i < in.c; ++i)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int sy = y + ky - 1, sx = x + kx - 1;
              if (sy < 0 || sx < 0 || sy >= in.h || sx >= in.w) continue;
              s += weights[widx(o, i, in.c, ky, kx)] * tap(in, i, sy, sx);
            }
        out.v[(static_cast<std::size_t>(o) * in.h + y) * in.w + x] = s;
      }
}

void conv3x3_backward(const Tensor& in, std::span<const double> weights, const Tensor& gout, Tensor* gin,
                      std::span<double> gw, std::span<double> gb) {
  const int oc = gout.c;
  for (int o = 0; o < oc; ++o) {
    if (!gb.empty()) {
      double s = 0.0;
      for (int y = 0; y < gout.h; ++y)
        for (int x = 0; x < gout.w; ++x) s += tap(gout, o, y, x);
      gb[o] += s;
    }
    for (int i = 0; i < in.c; ++i)
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          double s = 0.0;
          for (int y = 0; y < gout.h; ++y)
            for (int x = 0; x < gout.w; ++x) s += tap(gout, o, y, x) * tap(in, i, y + ky - 1, x + kx - 1);
          gw[widx(o, i, in.c, ky, kx)] += s;
        }
  }
  if (gin == nullptr) return;
  *gin = Tensor(in.c, in.h, in.w);
  for (int i = 0; i < in.c; ++i)
    for (int y = 0; y < in.h; ++y)
      for (int x = 0; x < in.w; ++x) {
        double s = 0.0;
        for (int o = 0; o < oc; ++o)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx)
              s += weights[widx(o, i, in.c, ky, kx)] * tap(gout, o, y - ky + 1, x - kx + 1);
        gin->v[(static_cast<std::size_t>(i) * in.h + y) * in.w + x] = s;
      }
}

FlowTerms flow_terms(std::span<const float> a, std::span<const float> b, int width, int height) {
  FlowTerms t;
  t.width = width;
  t.height = height;
  const std::size_t n = static_cast<std::size_t>(width) * height;
  std::vector<double> avg(n);
  for (std::size_t k = 0; k < n; ++k) avg[k] = 0.5 * (static_cast<double>(a[k]) + static_cast<double>(b[k]));
  t.ix.resize(n);
  t.iy.resize(n);
  t.it.resize(n);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const std::size_t k = static_cast<std::size_t>(y) * width + x;
      t.ix[k] = 0.5 * (clamped(avg, width, height, x + 1, y) - clamped(avg, width, height, x - 1, y));
      t.iy[k] = 0.5 * (clamped(avg, width, height, x, y + 1) - clamped(avg, width, height, x, y - 1));
      t.it[k] = static_cast<double>(b[k]) - static_cast<double>(a[k]);
    }
  return t;
}

void horn_schunck(const FlowTerms& terms, double smoothness, int iterations, std::vector<double>& u,
                  std::vector<double>& v) {
  const int w = terms.width, h = terms.height;
  std::vector<double> nu(u.size()), nv(v.size());
  for (int it = 0; it < iterations; ++it) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t k = static_cast<std::size_t>(y) * w + x;
        const double ub = (clamped(u, w, h, x - 1, y) + clamped(u, w, h, x + 1, y) + clamped(u, w, h, x, y - 1) +
                           clamped(u, w, h, x, y + 1)) / 6.0 +
                          (clamped(u, w, h, x - 1, y - 1) + clamped(u, w, h, x + 1, y - 1) +
                           clamped(u, w, h, x - 1, y + 1) + clamped(u, w, h, x + 1, y + 1)) / 12.0;
        const double vb = (clamped(v, w, h, x - 1, y) + clamped(v, w, h, x + 1, y) + clamped(v, w, h, x, y - 1) +
                           clamped(v, w, h, x, y + 1)) / 6.0 +
                          (clamped(v, w, h, x - 1, y - 1) + clamped(v, w, h, x + 1, y - 1) +
                           clamped(v, w, h, x - 1, y + 1) + clamped(v, w, h, x + 1, y + 1)) / 12.0;
        const double gx = terms.ix[k], gy = terms.iy[k];
        const double r = (gx * ub + gy * vb + terms.it[k]) / (smoothness + gx * gx + gy * gy);
        nu[k] = ub - gx * r;
        nv[k] = vb - gy * r;
      }
    u.swap(nu);
    v.swap(nv);
  }
}

}  // namespace pal::kernels::ref
