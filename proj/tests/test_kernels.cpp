#include <random>

#include "doctest.h"
#include "pal/errors.hpp"
#include "pal/kernels.hpp"
#include "support.hpp"

using namespace pal;
using nn::Tensor;

namespace {

Tensor random_tensor(int c, int h, int w, std::mt19937_64& rng) {
  Tensor t(c, h, w);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& x : t.v) x = u(rng);
  return t;
}

double max_diff(std::span<const double> a, std::span<const double> b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("parallel conv agrees with the serial reference") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  struct Shape {
    int ic, oc, h, w;
  };
  for (const auto s : {Shape{1, 8, 32, 32}, Shape{8, 16, 64, 64}, Shape{16, 8, 5, 17}, Shape{3, 1, 1, 1},
                       Shape{2, 3, 2, 9}}) {
    const auto in = random_tensor(s.ic, s.h, s.w, rng);
    std::vector<double> w(static_cast<std::size_t>(s.oc) * s.ic * 9), b(static_cast<std::size_t>(s.oc));
    for (auto& x : w) x = u(rng);
    for (auto& x : b) x = u(rng);
    Tensor fast, slow;
    kernels::conv3x3_forward(in, w, b, s.oc, fast);
    kernels::ref::conv3x3_forward(in, w, b, s.oc, slow);
    CHECK(max_diff(fast.v, slow.v) < 1e-12);

    const auto gout = random_tensor(s.oc, s.h, s.w, rng);
    std::vector<double> gw1(w.size(), 0.5), gw2(w.size(), 0.5), gb1(b.size()), gb2(b.size());
    Tensor gi1, gi2;
    kernels::conv3x3_backward(in, w, gout, &gi1, gw1, gb1);
    kernels::ref::conv3x3_backward(in, w, gout, &gi2, gw2, gb2);
    CHECK(max_diff(gw1, gw2) < 1e-10);
    CHECK(max_diff(gb1, gb2) < 1e-10);
    CHECK(max_diff(gi1.v, gi2.v) < 1e-12);
  }
}

TEST_CASE("conv backward is the adjoint of forward") {
  // <conv(x), g> = <x, conv^T(g)> for the input gradient, and linear in the weights.
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const auto x = random_tensor(3, 7, 6, rng);
  const auto g = random_tensor(4, 7, 6, rng);
  std::vector<double> w(4 * 3 * 9);
  for (auto& v : w) v = u(rng);
  Tensor y, gx;
  kernels::conv3x3_forward(x, w, {}, 4, y);
  std::vector<double> gw(w.size(), 0.0);
  kernels::conv3x3_backward(x, w, g, &gx, gw, {});
  double lhs = 0.0, rhs = 0.0, rw = 0.0;
  for (std::size_t i = 0; i < y.v.size(); ++i) lhs += y.v[i] * g.v[i];
  for (std::size_t i = 0; i < x.v.size(); ++i) rhs += x.v[i] * gx.v[i];
  for (std::size_t i = 0; i < w.size(); ++i) rw += w[i] * gw[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  CHECK(lhs == doctest::Approx(rw).epsilon(1e-12));
}

TEST_CASE("conv shape checks") {
  const Tensor in(2, 4, 4);
  Tensor out;
  std::vector<double> w(17);
  CHECK_THROWS_AS(kernels::conv3x3_forward(in, w, {}, 1, out), DimensionError);
  std::vector<double> w2(18), b(2);
  CHECK_THROWS_AS(kernels::conv3x3_forward(in, w2, b, 1, out), DimensionError);
  std::vector<double> gw(18);
  CHECK_THROWS_AS(kernels::conv3x3_backward(in, w2, Tensor(1, 4, 5), nullptr, gw, {}), DimensionError);
}

TEST_CASE("parallel Horn-Schunck agrees with the serial reference") {
  std::mt19937_64 rng(3);
  for (const auto& [w, h] : {std::pair{64, 64}, std::pair{17, 9}, std::pair{1, 5}}) {
    const auto a = testsupport::random_image(w, h, rng);
    const auto b = testsupport::random_image(w, h, rng);
    const auto t1 = kernels::flow_terms(a.data(), b.data(), w, h);
    const auto t2 = kernels::ref::flow_terms(a.data(), b.data(), w, h);
    CHECK(t1.ix == t2.ix);
    CHECK(t1.iy == t2.iy);
    CHECK(t1.it == t2.it);
    std::vector<double> u1(a.size(), 0.0), v1(a.size(), 0.0), u2 = u1, v2 = v1;
    kernels::horn_schunck(t1, 0.05, 50, u1, v1);
    kernels::ref::horn_schunck(t2, 0.05, 50, u2, v2);
    CHECK(max_diff(u1, u2) < 1e-12);
    CHECK(max_diff(v1, v2) < 1e-12);
  }
}
