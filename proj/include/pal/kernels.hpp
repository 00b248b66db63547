#pragma once

#include <span>
#include <vector>

namespace pal::nn {

/// Dense channel-major activation volume (C×H×W).
struct Tensor {
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(int channels, int height, int width, double fill = 0.0)
      : c(channels), h(height), w(width), v(static_cast<std::size_t>(channels) * height * width, fill) {}

  std::size_t plane_size() const { return static_cast<std::size_t>(h) * w; }
  double* plane(int ch) { return v.data() + ch * plane_size(); }
  const double* plane(int ch) const { return v.data() + ch * plane_size(); }
  bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }
};

}  // namespace pal::nn

// Hot loops. The top-level versions are OpenMP-parallel; pal::kernels::ref holds the
// serial per-element implementations they are tested and benchmarked against.
namespace pal::kernels {

using nn::Tensor;

/// 3×3 "same" convolution with zero padding. Weights are [out][in][3][3]; bias may be empty.
void conv3x3_forward(const Tensor& in, std::span<const double> weights, std::span<const double> bias,
                     int out_channels, Tensor& out);

/// Accumulates weight/bias gradients into gw/gb (gb may be empty) and, when gin is non-null,
/// overwrites *gin with the gradient w.r.t. the input.
void conv3x3_backward(const Tensor& in, std::span<const double> weights, const Tensor& gout, Tensor* gin,
                      std::span<double> gw, std::span<double> gb);

/// Coefficients of the linearized brightness-constancy constraint, one per pixel.
struct FlowTerms {
  int width = 0;
  int height = 0;
  std::vector<double> ix, iy, it;
};

/// Central-difference spatial gradients of the frame average and the temporal difference b−a.
FlowTerms flow_terms(std::span<const float> a, std::span<const float> b, int width, int height);

/// Runs Jacobi Horn–Schunck sweeps in place on (u, v).
void horn_schunck(const FlowTerms& terms, double smoothness, int iterations, std::vector<double>& u,
                  std::vector<double>& v);

namespace ref {

void conv3x3_forward(const Tensor& in, std::span<const double> weights, std::span<const double> bias,
                     int out_channels, Tensor& out);
void conv3x3_backward(const Tensor& in, std::span<const double> weights, const Tensor& gout, Tensor* gin,
                      std::span<double> gw, std::span<double> gb);
FlowTerms flow_terms(std::span<const float> a, std::span<const float> b, int width, int height);
void horn_schunck(const FlowTerms& terms, double smoothness, int iterations, std::vector<double>& u,
                  std::vector<double>& v);

}  // namespace ref
}  // namespace pal::kernels
