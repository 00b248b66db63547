// Times the OpenMP kernels against the serial reference on segmenter- and flow-sized inputs.
#include <omp.h>

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pal/kernels.hpp"

namespace {

using pal::nn::Tensor;
namespace k = pal::kernels;

double best_ms(int reps, const std::function<void()>& fn) {
  fn();  // warm caches and thread pool
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    best = std::min(best, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  return best;
}

void report(const std::string& name, double serial, double parallel) {
  std::printf("%-28s %10.3f %10.3f %8.2fx\n", name.c_str(), serial, parallel, serial / parallel);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Kernel benchmark: serial reference vs OpenMP"};
  int size = 64, reps = 5, hs_iters = 200;
  app.add_option("--size", size, "square input side")->check(CLI::Range(8, 4096));
  app.add_option("--reps", reps, "timed repetitions, best is reported")->check(CLI::PositiveNumber);
  app.add_option("--hs-iters", hs_iters, "Horn-Schunck iterations")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  auto fill = [&](std::vector<double>& v) {
    for (auto& x : v) x = u(rng);
  };

  std::printf("threads %d, input %dx%d, best of %d\n", omp_get_max_threads(), size, size, reps);
  std::printf("%-28s %10s %10s %9s\n", "kernel", "serial ms", "omp ms", "speedup");

  // Segmenter middle layer shape.
  for (auto [ic, oc] : {std::pair{8, 16}, std::pair{16, 8}}) {
    Tensor in(ic, size, size);
    fill(in.v);
    std::vector<double> w(static_cast<std::size_t>(oc) * ic * 9), b(static_cast<std::size_t>(oc));
    fill(w);
    fill(b);
    Tensor out, gout(oc, size, size), gin;
    fill(gout.v);
    std::vector<double> gw(w.size()), gb(b.size());
    const std::string tag = std::to_string(ic) + "->" + std::to_string(oc);
    report("conv3x3 forward " + tag, best_ms(reps, [&] { k::ref::conv3x3_forward(in, w, b, oc, out); }),
           best_ms(reps, [&] { k::conv3x3_forward(in, w, b, oc, out); }));
    report("conv3x3 backward " + tag, best_ms(reps, [&] { k::ref::conv3x3_backward(in, w, gout, &gin, gw, gb); }),
           best_ms(reps, [&] { k::conv3x3_backward(in, w, gout, &gin, gw, gb); }));
  }

  std::vector<float> a(static_cast<std::size_t>(size) * size), bimg(a.size());
  std::uniform_real_distribution<float> uf(0.0f, 1.0f);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = uf(rng), bimg[i] = uf(rng);
  report("flow terms", best_ms(reps, [&] { (void)k::ref::flow_terms(a, bimg, size, size); }),
         best_ms(reps, [&] { (void)k::flow_terms(a, bimg, size, size); }));
  const auto terms = k::flow_terms(a, bimg, size, size);
  std::vector<double> fu, fv;
  auto reset = [&] { fu.assign(a.size(), 0.0), fv.assign(a.size(), 0.0); };
  report("horn-schunck x" + std::to_string(hs_iters),
         best_ms(reps, [&] { reset(); k::ref::horn_schunck(terms, 0.05, hs_iters, fu, fv); }),
         best_ms(reps, [&] { reset(); k::horn_schunck(terms, 0.05, hs_iters, fu, fv); }));
  return 0;
}
