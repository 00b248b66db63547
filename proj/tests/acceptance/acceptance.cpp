// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.
// Usage: acceptance [P1 P2 ...]   (no arguments runs everything)
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "../support.hpp"
#include "pal/experiment.hpp"
#include "pal/rlloop.hpp"

using namespace pal;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// Shared by P6, P7 and P8: one default run, trained once.
struct Run {
  experiment::RunConfig cfg;
  experiment::Data data;
  seg::SegmenterParams theta0;
  rl::TrainResult trained;
};

Run& main_run() {
  static std::optional<Run> run;
  if (run) return *run;
  const auto t0 = Clock::now();
  experiment::RunConfig cfg;
  auto data = experiment::prepare(cfg, synth::generate_benchmark(cfg.scene, cfg.transform, cfg.seed));
  auto theta0 = experiment::pretrain(cfg, data);
  std::printf("  [run] theta0 IoU: source holdout %.3f, target %.3f; pools %zu / %zu patches\n",
              seg::seg_eval(theta0, data.source_holdout), seg::seg_eval(theta0, data.target_eval),
              data.source_pool.patches.size(), data.target_pool.patches.size());
  std::fflush(stdout);
  auto trained = experiment::train(cfg, data, theta0, [&](const rl::EpisodeLog& r) {
    if ((r.episode + 1) % 250 == 0) {
      std::printf("  [run] episode %d, %.0fs\n", r.episode + 1, seconds_since(t0));
      std::fflush(stdout);
    }
  });
  run = Run{cfg, std::move(data), std::move(theta0), std::move(trained)};
  return *run;
}

// ---- P1 ----------------------------------------------------------------------------------------

std::vector<seg::Sample> random_batch(int n, int side, std::mt19937_64& rng) {
  std::vector<seg::Sample> out;
  for (int i = 0; i < n; ++i)
    out.push_back({testsupport::random_image(side, side, rng), testsupport::random_mask(side, side, 0.4, rng)});
  return out;
}

Verdict p1() {
  const auto t0 = Clock::now();
  double worst_seg = 0.0, worst_pol = 0.0;
  for (std::uint64_t seed : {101u, 102u, 103u}) {
    std::mt19937_64 rng(seed);
    // Segmenter: every weight and bias, loss with ReLU gates frozen at the base point.
    auto sp = seg::init_segmenter(seed);
    std::uniform_real_distribution<double> u(-0.1, 0.1);
    for (std::size_t b = 1; b < sp.set.blocks().size(); b += 2)
      for (double& x : sp.set.block(b)) x = u(rng);
    const auto batch = random_batch(2, 10, rng);
    const auto an = seg::seg_loss_grad(sp, batch).grad.values();
    seg::ref::ActivationPattern sg;
    seg::ref::seg_loss(sp, batch, nullptr, &sg);
    worst_seg = std::max(worst_seg, testsupport::max_fd_rel_error(sp.set.values(), an,
                                                                  [&] { return seg::ref::seg_loss(sp, batch, &sg); }));

    // Policy: log pi of one decision against a half-full memory, every block.
    policy::PolicyDims dims;
    dims.patch = 8;
    auto pp = testsupport::random_policy(seed, dims);
    policy::MemoryState mem(dims.slots);
    for (int i = 0; i < 4; ++i) mem = mem.write(testsupport::random_vector(dims.feature, rng));
    const policy::Decision dec{testsupport::random_patch(dims.patch, rng), mem, static_cast<int>(seed % 2)};
    const auto g = policy::logpi_grad(pp, std::vector<policy::Decision>{dec}).values();
    policy::ref::ActivationPattern pg;
    policy::ref::log_pi(pp, dec, nullptr, &pg);
    worst_pol = std::max(worst_pol, testsupport::max_fd_rel_error(pp.set.values(), g,
                                                                  [&] { return policy::ref::log_pi(pp, dec, &pg); }));
  }
  const double t = seconds_since(t0);
  return {worst_seg < 1e-4 && worst_pol < 1e-4 && t < 60.0,
          fmt("max rel err segmenter %.2e, policy %.2e; %.1fs", worst_seg, worst_pol, t)};
}

// ---- P2 ----------------------------------------------------------------------------------------

Verdict p2() {
  std::mt19937_64 rng(202);
  int bad = 0;
  double worst = 0.0;
  policy::PolicyDims dims;
  dims.patch = 8;
  for (int c = 0; c < 1000; ++c) {
    const auto p = testsupport::random_policy(1000 + c, dims);
    const int fill = std::uniform_int_distribution<int>(0, dims.slots)(rng);
    const double scale = std::uniform_real_distribution<double>(0.1, 3.0)(rng);
    policy::MemoryState mem(dims.slots);
    for (int i = 0; i < fill; ++i) mem = mem.write(testsupport::random_vector(dims.feature, rng, scale));
    const auto e = testsupport::random_vector(dims.feature, rng, scale);
    const auto r = policy::memory_read(p, mem, e);
    if (fill == 0) {
      bad += !(r.cold && r.attention.empty() && std::all_of(r.output.begin(), r.output.end(), [](double x) { return x == 0.0; }));
      continue;
    }
    // weights form a distribution
    double sum = 0.0;
    for (double a : r.attention) {
      bad += !(a >= 0.0 && a <= 1.0);
      sum += a;
    }
    bad += static_cast<int>(r.attention.size()) != fill;
    worst = std::max(worst, std::abs(sum - 1.0));
    // the read is the weighted sum of value rows, and matches a dense recomputation
    const auto dense = testsupport::dense_read(p, mem.entries(), e);
    for (int l = 0; l < fill; ++l) worst = std::max(worst, std::abs(r.attention[l] - dense.attention[l]));
    for (int k = 0; k < dims.memory; ++k) {
      const double ref = dense.output[k];
      worst = std::max(worst, std::abs(r.output[k] - ref) / std::max(1.0, std::abs(ref)));
    }
    // each output coordinate lies inside the hull of the value rows
    const int f = dims.feature;
    for (int k = 0; k < dims.memory; ++k) {
      double lo = INFINITY, hi = -INFINITY;
      for (const auto& m : mem.entries()) {
        double v = 0.0;
        for (int j = 0; j < f; ++j) v += p.set.block(policy::kValue)[static_cast<std::size_t>(k) * f + j] * m[j];
        lo = std::min(lo, v), hi = std::max(hi, v);
      }
      const double tol = 1e-9 * std::max(1.0, std::max(std::abs(lo), std::abs(hi)));
      bad += !(r.output[k] >= lo - tol && r.output[k] <= hi + tol);
    }
  }
  return {bad == 0 && worst < 1e-9, fmt("1000 cases, %d violations, max deviation %.1e", bad, worst)};
}

// ---- P3 ----------------------------------------------------------------------------------------

Verdict p3() {
  int bad = 0;
  std::mt19937_64 rng(303);
  for (int cap : {1, 2, 8}) {
    std::vector<std::vector<double>> written;
    policy::MemoryState mem(cap);
    for (int i = 0; i < 3 * cap + 2; ++i) {
      written.push_back(testsupport::random_vector(4, rng));
      const auto before = mem;
      mem = policy::memory_write(mem, written.back());
      bad += before.fill() != std::min(i, cap);  // writes leave the old state alone
      const std::size_t n = std::min<std::size_t>(written.size(), cap);
      const std::vector<std::vector<double>> expect(written.end() - n, written.end());
      bad += mem.entries() != expect;
    }
  }

  // Episode traces: memory before each decision holds exactly the features of earlier selections.
  std::mt19937_64 prng(313);
  std::vector<flow::PatchSample> cands;
  for (int i = 0; i < 40; ++i) cands.push_back(testsupport::random_patch(16, prng, 0.2));
  std::vector<seg::Sample> holdout{{testsupport::random_image(16, 16, prng), testsupport::random_mask(16, 16, 0.3, prng)}};
  int checked = 0;
  for (int cap : {1, 2, 8}) {
    policy::PolicyDims dims;
    dims.patch = 16;
    dims.slots = cap;
    const auto phi = testsupport::random_policy(330 + cap, dims);
    rl::EpisodeConfig ec;
    ec.budget = 12;
    ec.finetune_steps = 0;
    const rl::RewardBaseline bl({}, 0.0);
    const auto res = rl::run_episode(phi, seg::init_segmenter(1), cands, holdout, ec, bl, {7u + cap, 1});
    std::vector<std::vector<double>> selected;
    for (const auto& d : res.trace) {
      const std::size_t n = std::min<std::size_t>(selected.size(), cap);
      const std::vector<std::vector<double>> expect(selected.end() - n, selected.end());
      bad += d.memory.entries() != expect;
      if (d.action == 1) selected.push_back(policy::encode(phi, d.patch));
      ++checked;
    }
    bad += static_cast<int>(selected.size()) != static_cast<int>(res.selected.size());
  }
  return {bad == 0, fmt("capacities 1, 2, 8; %d episode decisions checked; %d violations", checked, bad)};
}

// ---- P4 ----------------------------------------------------------------------------------------

Verdict p4() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  const std::vector<std::pair<double, double>> shifts{{0.5, 0},   {1, 0},    {2, 0},  {0, 1},    {0, -2},
                                                      {1, 1},     {-1.5, 1}, {1.4, -1.4}, {-2, 0}, {0.7, 1.8}};
  for (const auto& [dx, dy] : shifts) {
    if (std::hypot(dx, dy) > 2.0 + 1e-12) continue;
    const auto a = testsupport::textured_block(64, 64, 24, 24, 16, 0, 0);
    const auto b = testsupport::textured_block(64, 64, 24, 24, 16, dx, dy);
    const auto f = flow::estimate_flow(a, b);
    double e = 0.0;
    int n = 0;
    for (int y = 28; y < 36; ++y)
      for (int x = 28; x < 36; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * 64 + x;
        e += std::hypot(f.u[i] - dx, f.v[i] - dy);
        ++n;
      }
    worst = std::max(worst, e / n);
  }
  experiment::RunConfig cfg;
  const auto data = experiment::prepare(cfg, synth::generate_benchmark(cfg.scene, cfg.transform, cfg.seed));
  const double prec = pipeline::mean_frame_precision(data.source_pool);
  const double t = seconds_since(t0);
  return {worst < 0.5 && prec >= 0.7 && t < 120.0,
          fmt("worst interior EPE %.3f px; mean source prior precision %.3f; %.1fs", worst, prec, t)};
}

// ---- P5 ----------------------------------------------------------------------------------------

Verdict p5() {
  std::mt19937_64 rng(505);
  std::vector<flow::PatchSample> cands;
  for (int i = 0; i < 30; ++i) cands.push_back(testsupport::random_patch(16, rng, 0.3));
  std::vector<seg::Sample> holdout;
  for (int i = 0; i < 2; ++i) holdout.push_back({testsupport::random_image(16, 16, rng), testsupport::random_mask(16, 16, 0.3, rng)});
  policy::PolicyDims dims;
  dims.patch = 16;
  auto eager = policy::init_policy(5, dims);
  for (double& x : eager.set.block(policy::kHeadB2)) x = 60.0;
  const auto theta0 = seg::init_segmenter(3);
  const auto theta_copy = theta0;
  std::vector<std::string> fails;

  // budget: an always-select policy stops after exactly b decisions
  rl::EpisodeConfig ec;
  ec.budget = 7;
  ec.finetune_steps = 2;
  ec.finetune_batch = 2;
  const rl::RewardBaseline bl({}, 0.0);
  const auto r1 = rl::run_episode(eager, theta0, cands, holdout, ec, bl, {1, 2});
  if (r1.selected.size() != 7 || r1.trace.size() != 7) fails.push_back("budget");

  // reset: theta0 untouched, every episode starts from an empty memory
  const auto r2 = rl::run_episode(eager, theta0, cands, holdout, ec, bl, {3, 4});
  if (!(theta0 == theta_copy)) fails.push_back("theta0 modified");
  if (!r1.trace.front().memory.empty() || !r2.trace.front().memory.empty()) fails.push_back("memory carried over");

  // uniform reward: with no finetuning every episode scores IoU(theta0), so the advantage is zero
  // and the policy does not move
  rl::EpisodeConfig flat = ec;
  flat.finetune_steps = 0;
  flat.baseline.mode = rl::BaselineMode::InitialTheta;
  flat.max_episodes = 5;
  flat.validate_every = 0;
  flat.seed = 9;
  const auto phi0 = testsupport::random_policy(6, dims);
  const auto flat_run = rl::train_policy(phi0, theta0, cands, holdout, flat);
  for (const auto& row : flat_run.log)
    if (row.reward != 0.0) fails.push_back("non-zero reward");
  if (!(flat_run.last == phi0)) fails.push_back("policy moved under zero reward");

  // determinism: same seeds, same everything
  rl::EpisodeConfig det = ec;
  det.max_episodes = 4;
  det.validate_every = 2;
  det.seed = 11;
  det.seg_lr = 1e-2;
  const auto a = rl::train_policy(phi0, theta0, cands, holdout, det);
  const auto b = rl::train_policy(phi0, theta0, cands, holdout, det);
  bool same = a.last == b.last && a.best == b.best && a.log.size() == b.log.size();
  for (std::size_t i = 0; same && i < a.log.size(); ++i)
    same = a.log[i].reward == b.log[i].reward && a.log[i].selections == b.log[i].selections;
  if (!same) fails.push_back("non-deterministic");

  std::string detail = "budget, reset, zero-advantage and determinism checks";
  if (!fails.empty()) {
    detail = "failed:";
    for (const auto& f : fails) detail += " " + f + ";";
  }
  return {fails.empty(), detail};
}

// ---- P6 ----------------------------------------------------------------------------------------

Verdict p6() {
  auto& run = main_run();
  const int b = 16;
  auto cfg = run.cfg;
  cfg.adapt.seeds = 10;
  const auto adapted = experiment::adapt_target(cfg, run.data, run.theta0, run.trained.best, b);
  const auto rep = experiment::score(cfg, run.data, run.theta0, adapted, b);
  const auto& pal = rep.method("pal");
  const auto& rnd = rep.method("random");
  const auto& orc = rep.method("oracle");
  const auto& src = rep.method("source-only");
  int beats_random = 0, beats_source = 0;
  for (std::size_t s = 0; s < pal.ious.size(); ++s) {
    beats_random += pal.ious[s] > rnd.ious[s];
    beats_source += pal.ious[s] > src.ious[s];
  }
  const double gap = 100.0 * (pal.mean - rnd.mean);
  std::printf("%s", adapt::to_table(rep).c_str());
  const bool ok = orc.mean >= pal.mean && pal.mean >= rnd.mean && gap >= 2.0 && beats_random >= 8 && beats_source == 10;
  return {ok, fmt("oracle %.1f, PAL %.1f, random %.1f, source-only %.1f; PAL-random %+.1f pts; "
                  "PAL>random %d/10, PAL>source-only %d/10",
                  100 * orc.mean, 100 * pal.mean, 100 * rnd.mean, 100 * src.mean, gap, beats_random, beats_source)};
}

// ---- P7 ----------------------------------------------------------------------------------------

double window_mean(const std::vector<rl::EpisodeLog>& log, std::size_t first, std::size_t n) {
  n = std::min(n, log.size() - std::min(first, log.size()));
  double s = 0.0;
  for (std::size_t i = first; i < first + n; ++i) s += log[i].reward;
  return n ? s / static_cast<double>(n) : 0.0;
}

Verdict p7() {
  auto& run = main_run();
  int improved = 0;
  std::string detail;
  for (int k = 0; k < 3; ++k) {
    rl::TrainResult other;
    const rl::TrainResult* tr = &run.trained;
    if (k > 0) {
      auto cfg = run.cfg;
      cfg.seed = run.cfg.seed + static_cast<std::uint64_t>(k);  // only the policy streams change
      other = experiment::train(cfg, run.data, run.theta0);
      tr = &other;
    }
    const auto& log = tr->log;
    const double lead = window_mean(log, 0, 100);
    const double trail = window_mean(log, log.size() - std::min<std::size_t>(100, log.size()), 100);
    improved += trail > lead;
    // Not part of the verdict: the first 100 rewards are measured against the theta0 anchor for
    // the warmup episodes, so a window that starts after warmup shows learning on its own.
    const std::size_t warm = static_cast<std::size_t>(std::max(0, run.cfg.train.baseline.warmup));
    const double after = window_mean(log, warm, 100);
    const auto line = fmt("seed %d: first-100 %.4f, last-100 %.4f (episodes %zu-%zu: %.4f)", k, lead, trail, warm + 1,
                          warm + 100, after);
    detail += (k ? "; " : "") + line;
    std::printf("  [P7] %s\n", line.c_str());
    std::fflush(stdout);
  }
  return {improved >= 2, fmt("%d/3 improved; ", improved) + detail};
}

// ---- P8 ----------------------------------------------------------------------------------------

Verdict p8() {
  auto& run = main_run();
  auto cfg = run.cfg;
  cfg.adapt.seeds = 5;
  cfg.adapt.methods = {"pal"};
  std::vector<double> means;
  std::string detail;
  for (int b : {4, 8, 16, 32}) {
    const auto adapted = experiment::adapt_target(cfg, run.data, run.theta0, run.trained.best, b);
    means.push_back(experiment::score(cfg, run.data, run.theta0, adapted, b).method("pal").mean);
    detail += fmt("%sb=%d %.1f", detail.empty() ? "" : ", ", b, 100 * means.back());
  }
  const bool ok = std::is_sorted(means.begin(), means.end());
  return {ok, "PAL IoU " + detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> all{
      {"P1", p1}, {"P2", p2}, {"P3", p3}, {"P4", p4}, {"P5", p5}, {"P6", p6}, {"P7", p7}, {"P8", p8}};
  std::set<std::string> wanted(argv + 1, argv + argc);
  for (const auto& w : wanted)
    if (std::none_of(all.begin(), all.end(), [&](const auto& c) { return c.first == w; })) {
      std::fprintf(stderr, "unknown criterion %s\n", w.c_str());
      return 2;
    }
  int failed = 0;
  for (const auto& [id, fn] : all) {
    if (!wanted.empty() && !wanted.count(id)) continue;
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failed += !v.pass;
    std::printf("%s %s  %s\n", id.c_str(), v.pass ? "PASS" : "FAIL", v.detail.c_str());
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
