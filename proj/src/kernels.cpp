#include "pal/kernels.hpp"

#include <algorithm>
#include <vector>

#include "pal/errors.hpp"

namespace pal::kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr long kParallelWork = 1L << 15;

// Copy with a one-pixel zero border so the 3x3 taps of a row fold into one branch-free pass.
struct Padded {
  int c = 0, h = 0, w = 0;
  std::vector<double> v;

  explicit Padded(const Tensor& t) : c(t.c), h(t.h + 2), w(t.w + 2), v(static_cast<std::size_t>(c) * h * w, 0.0) {
    for (int ch = 0; ch < t.c; ++ch)
      for (int y = 0; y < t.h; ++y) {
        const double* src = t.plane(ch) + static_cast<std::size_t>(y) * t.w;
        std::copy(src, src + t.w, row(ch, y + 1) + 1);
      }
  }
  double* row(int ch, int y) { return v.data() + (static_cast<std::size_t>(ch) * h + y) * w; }
  const double* row(int ch, int y) const { return v.data() + (static_cast<std::size_t>(ch) * h + y) * w; }
};

}  // namespace

void conv3x3_forward(const Tensor& in, std::span<const double> weights, std::span<const double> bias,
                     int out_channels, Tensor& out) {
  if (weights.size() != static_cast<std::size_t>(out_channels) * in.c * 9)
    throw DimensionError("conv3x3: weight count mismatch");
  if (!bias.empty() && bias.size() != static_cast<std::size_t>(out_channels))
    throw DimensionError("conv3x3: bias count mismatch");
  if (out.c != out_channels || out.h != in.h || out.w != in.w) out = Tensor(out_channels, in.h, in.w);
  const int h = in.h, w = in.w, ic = in.c;
  const long work = static_cast<long>(h) * w * ic * out_channels * 9;
  const Padded p(in);

#pragma omp parallel for schedule(static) if (work > kParallelWork)
  for (int o = 0; o < out_channels; ++o) {
    double* op = out.plane(o);
    std::fill(op, op + out.plane_size(), bias.empty() ? 0.0 : bias[o]);
    for (int i = 0; i < ic; ++i) {
      const double* k = weights.data() + (static_cast<std::size_t>(o) * ic + i) * 9;
      for (int y = 0; y < h; ++y) {
        double* orow = op + static_cast<std::size_t>(y) * w;
        const double* r0 = p.row(i, y);
        const double* r1 = p.row(i, y + 1);
        const double* r2 = p.row(i, y + 2);
#pragma omp simd
        for (int x = 0; x < w; ++x)
          orow[x] += k[0] * r0[x] + k[1] * r0[x + 1] + k[2] * r0[x + 2] + k[3] * r1[x] + k[4] * r1[x + 1] +
                     k[5] * r1[x + 2] + k[6] * r2[x] + k[7] * r2[x + 1] + k[8] * r2[x + 2];
      }
    }
  }
}

void conv3x3_backward(const Tensor& in, std::span<const double> weights, const Tensor& gout, Tensor* gin,
                      std::span<double> gw, std::span<double> gb) {
  const int h = in.h, w = in.w, ic = in.c, oc = gout.c;
  if (gout.h != h || gout.w != w) throw DimensionError("conv3x3 backward: gradient shape mismatch");
  if (gw.size() != static_cast<std::size_t>(oc) * ic * 9) throw DimensionError("conv3x3 backward: weight grad size");
  const long work = static_cast<long>(h) * w * ic * oc * 9;

  if (!gb.empty()) {
    for (int o = 0; o < oc; ++o) {
      const double* gp = gout.plane(o);
      double s = 0.0;
#pragma omp simd reduction(+ : s)
      for (std::size_t k = 0; k < gout.plane_size(); ++k) s += gp[k];
      gb[o] += s;
    }
  }

  const Padded pin(in);
#pragma omp parallel for collapse(2) schedule(static) if (work > kParallelWork)
  for (int o = 0; o < oc; ++o)
    for (int i = 0; i < ic; ++i) {
      const double* gp = gout.plane(o);
      double s0 = 0, s1 = 0, s2 = 0, s3 = 0, s4 = 0, s5 = 0, s6 = 0, s7 = 0, s8 = 0;
      for (int y = 0; y < h; ++y) {
        const double* g = gp + static_cast<std::size_t>(y) * w;
        const double* r0 = pin.row(i, y);
        const double* r1 = pin.row(i, y + 1);
        const double* r2 = pin.row(i, y + 2);
#pragma omp simd reduction(+ : s0, s1, s2, s3, s4, s5, s6, s7, s8)
        for (int x = 0; x < w; ++x) {
          s0 += g[x] * r0[x];
          s1 += g[x] * r0[x + 1];
          s2 += g[x] * r0[x + 2];
          s3 += g[x] * r1[x];
          s4 += g[x] * r1[x + 1];
          s5 += g[x] * r1[x + 2];
          s6 += g[x] * r2[x];
          s7 += g[x] * r2[x + 1];
          s8 += g[x] * r2[x + 2];
        }
      }
      double* dst = gw.data() + (static_cast<std::size_t>(o) * ic + i) * 9;
      dst[0] += s0, dst[1] += s1, dst[2] += s2, dst[3] += s3, dst[4] += s4;
      dst[5] += s5, dst[6] += s6, dst[7] += s7, dst[8] += s8;
    }

  if (gin == nullptr) return;
  if (!gin->same_shape(in)) *gin = Tensor(ic, h, w);

  // Input gradient is the correlation of the output gradient with the spatially flipped kernel.
  const Padded pg(gout);
#pragma omp parallel for schedule(static) if (work > kParallelWork)
  for (int i = 0; i < ic; ++i) {
    double* dp = gin->plane(i);
    std::fill(dp, dp + gin->plane_size(), 0.0);
    for (int o = 0; o < oc; ++o) {
      const double* k = weights.data() + (static_cast<std::size_t>(o) * ic + i) * 9;
      for (int y = 0; y < h; ++y) {
        double* drow = dp + static_cast<std::size_t>(y) * w;
        const double* r0 = pg.row(o, y);
        const double* r1 = pg.row(o, y + 1);
        const double* r2 = pg.row(o, y + 2);
#pragma omp simd
        for (int x = 0; x < w; ++x)
          drow[x] += k[8] * r0[x] + k[7] * r0[x + 1] + k[6] * r0[x + 2] + k[5] * r1[x] + k[4] * r1[x + 1] +
                     k[3] * r1[x + 2] + k[2] * r2[x] + k[1] * r2[x + 1] + k[0] * r2[x + 2];
      }
    }
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
#pragma omp parallel for schedule(static) if (n > 4096)
  for (int y = 0; y < height; ++y) {
    const double* row = avg.data() + static_cast<std::size_t>(y) * width;
    const double* up = avg.data() + static_cast<std::size_t>(std::max(y - 1, 0)) * width;
    const double* dn = avg.data() + static_cast<std::size_t>(std::min(y + 1, height - 1)) * width;
    for (int x = 0; x < width; ++x) {
      const std::size_t k = static_cast<std::size_t>(y) * width + x;
      t.ix[k] = 0.5 * (row[std::min(x + 1, width - 1)] - row[std::max(x - 1, 0)]);
      t.iy[k] = 0.5 * (dn[x] - up[x]);
      t.it[k] = static_cast<double>(b[k]) - static_cast<double>(a[k]);
    }
  }
  return t;
}

void horn_schunck(const FlowTerms& terms, double smoothness, int iterations, std::vector<double>& u,
                  std::vector<double>& v) {
  const int w = terms.width, h = terms.height;
  std::vector<double> nu(u.size()), nv(v.size());
  for (int it = 0; it < iterations; ++it) {
#pragma omp parallel for schedule(static) if (static_cast<long>(w) * h > 4096)
    for (int y = 0; y < h; ++y) {
      const std::size_t r0 = static_cast<std::size_t>(std::max(y - 1, 0)) * w;
      const std::size_t r1 = static_cast<std::size_t>(y) * w;
      const std::size_t r2 = static_cast<std::size_t>(std::min(y + 1, h - 1)) * w;
      for (int x = 0; x < w; ++x) {
        const int xm = std::max(x - 1, 0), xp = std::min(x + 1, w - 1);
        const std::size_t k = r1 + x;
        const double ub = (u[r1 + xm] + u[r1 + xp] + u[r0 + x] + u[r2 + x]) / 6.0 +
                          (u[r0 + xm] + u[r0 + xp] + u[r2 + xm] + u[r2 + xp]) / 12.0;
        const double vb = (v[r1 + xm] + v[r1 + xp] + v[r0 + x] + v[r2 + x]) / 6.0 +
                          (v[r0 + xm] + v[r0 + xp] + v[r2 + xm] + v[r2 + xp]) / 12.0;
        const double gx = terms.ix[k], gy = terms.iy[k];
        const double r = (gx * ub + gy * vb + terms.it[k]) / (smoothness + gx * gx + gy * gy);
        nu[k] = ub - gx * r;
        nv[k] = vb - gy * r;
      }
    }
    u.swap(nu);
    v.swap(nv);
  }
}

}  // namespace pal::kernels
