#include "pal/rlloop.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include "pal/errors.hpp"

namespace pal::rl {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr int kValidationOrders = 3;

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return splitmix(splitmix(splitmix(seed) ^ a) ^ b);
}

RewardBaseline::RewardBaseline(const BaselineConfig& cfg, double theta0_iou)
    : cfg_(cfg), anchor_(theta0_iou), ema_(theta0_iou) {
  if (!(cfg.decay > 0.0 && cfg.decay < 1.0)) throw UsageError("baseline decay must lie in (0,1)");
  if (cfg.warmup < 0) throw UsageError("baseline warmup must be >= 0");
}

double RewardBaseline::value() const {
  if (cfg_.mode == BaselineMode::InitialTheta || observed_ < cfg_.warmup) return anchor_;
  return ema_;
}

void RewardBaseline::observe(double episode_iou) {
  ema_ = cfg_.decay * ema_ + (1.0 - cfg_.decay) * episode_iou;
  ++observed_;
}

double reward(std::span<const seg::Sample> holdout, const seg::SegmenterParams& theta, const RewardBaseline& baseline) {
  return seg::seg_eval(theta, holdout) - baseline.value();
}

std::vector<seg::Sample> pseudo_labels(std::span<const flow::PatchSample> patches) {
  std::vector<seg::Sample> out;
  out.reserve(patches.size());
  for (const auto& p : patches) out.push_back({p.appearance, p.prior});
  return out;
}

EpisodeResult run_episode(const policy::PolicyParams& policy, const seg::SegmenterParams& theta0,
                          std::span<const flow::PatchSample> candidates, std::span<const seg::Sample> holdout,
                          const EpisodeConfig& cfg, const RewardBaseline& baseline, const EpisodeSeeds& seeds,
                          policy::ActMode mode) {
  if (candidates.empty()) throw UsageError("run_episode: empty candidate stream");
  if (holdout.empty()) throw UsageError("run_episode: empty holdout set");
  if (cfg.budget < 1) throw UsageError("run_episode: budget must be >= 1");
  const auto t0 = std::chrono::steady_clock::now();

  EpisodeResult res;
  std::mt19937_64 rng(seeds.actions);
  policy::MemoryState mem(policy.dims.slots);
  std::vector<flow::PatchSample> chosen;
  double entropy_sum = 0.0;
  int warm_reads = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (static_cast<int>(chosen.size()) == cfg.budget) break;
    const auto& patch = candidates[i];
    auto out = policy::act(policy, mem, patch, rng, mode);
    if (!out.cold) {
      entropy_sum += policy::attention_entropy(out.attention);
      ++warm_reads;
    }
    res.trace.push_back({patch, mem, out.action});
    if (out.action == 1) {
      mem = mem.write(std::move(out.feature));
      chosen.push_back(patch);
      res.selected.emplace_back(patch.frame_index, patch.patch_index);
      res.selected_index.push_back(i);
      res.corrupted_selected += patch.corrupted ? 1 : 0;
    }
  }
  res.mean_attention_entropy = warm_reads > 0 ? entropy_sum / warm_reads : 0.0;

  res.no_selection = chosen.empty();
  if (res.no_selection || cfg.finetune_steps == 0) {
    res.iou = seg::seg_eval(theta0, holdout);
  } else {
    const auto samples = pseudo_labels(chosen);
    seg::TrainOptions opt{cfg.seg_lr, cfg.finetune_steps, cfg.finetune_batch, seeds.finetune};
    const auto theta = seg::seg_train(theta0, samples, opt);
    res.iou = seg::seg_eval(theta, holdout);
  }
  res.reward = res.iou - baseline.value();
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

policy::PolicyParams policy_update(const policy::PolicyParams& policy, std::span<const policy::Decision> trace, double r,
                                   double lr) {
  if (!std::isfinite(r)) throw NumericError("policy_update: non-finite reward");
  auto next = policy;
  if (trace.empty() || r == 0.0) return next;
  const auto g = policy::logpi_grad(policy, trace);
  if (!g.all_finite()) throw NumericError("policy_update: non-finite policy gradient");
  const double scale = lr * r / static_cast<double>(trace.size());
  auto& v = next.set.values();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] += scale * g.values()[i];
  return next;
}

std::vector<std::size_t> episode_order(std::size_t pool_size, std::uint64_t seed, int episode) {
  std::vector<std::size_t> order(pool_size);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(derive_seed(seed, 0x5eed, static_cast<std::uint64_t>(episode)));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

namespace {

std::vector<flow::PatchSample> reorder(std::span<const flow::PatchSample> pool, const std::vector<std::size_t>& order) {
  std::vector<flow::PatchSample> out;
  out.reserve(order.size());
  for (auto i : order) out.push_back(pool[i]);
  return out;
}

// Mean holdout IoU of greedy selection over a few fixed candidate orders.
double validate(const policy::PolicyParams& policy, const seg::SegmenterParams& theta0,
                std::span<const flow::PatchSample> pool, std::span<const seg::Sample> holdout, const EpisodeConfig& cfg,
                const RewardBaseline& baseline) {
  double sum = 0.0;
  for (int v = 0; v < kValidationOrders; ++v) {
    const auto order = episode_order(pool.size(), derive_seed(cfg.seed, 0xa11d), v);
    const auto cands = reorder(pool, order);
    EpisodeSeeds seeds{derive_seed(cfg.seed, 0xa11d, 100 + v), derive_seed(cfg.seed, 0xa11d, 200 + v)};
    sum += run_episode(policy, theta0, cands, holdout, cfg, baseline, seeds, policy::ActMode::Greedy).iou;
  }
  return sum / kValidationOrders;
}

}  // namespace

TrainResult train_policy(const policy::PolicyParams& initial, const seg::SegmenterParams& theta0,
                         std::span<const flow::PatchSample> pool, std::span<const seg::Sample> holdout,
                         const EpisodeConfig& cfg, const std::function<void(const EpisodeLog&)>& on_episode) {
  if (cfg.max_episodes < 0) throw UsageError("train_policy: max_episodes must be >= 0");
  if (!(cfg.policy_lr > 0.0)) throw UsageError("train_policy: policy learning rate must be > 0");
  TrainResult out{initial, initial, {}, 0, 0.0};
  if (cfg.max_episodes == 0) return out;
  if (pool.empty()) throw UsageError("train_policy: empty candidate pool");

  RewardBaseline baseline(cfg.baseline, seg::seg_eval(theta0, holdout));
  auto phi = initial;
  nn::Adam adam(cfg.policy_lr);
  const bool track = cfg.validate_every > 0;
  out.best_validation = track ? validate(phi, theta0, pool, holdout, cfg, baseline)
                              : -std::numeric_limits<double>::infinity();

  for (int ep = 0; ep < cfg.max_episodes; ++ep) {
    const auto cands = reorder(pool, episode_order(pool.size(), cfg.seed, ep));
    EpisodeSeeds seeds{derive_seed(cfg.seed, 0xac7, static_cast<std::uint64_t>(ep)),
                       derive_seed(cfg.seed, 0xf17e, static_cast<std::uint64_t>(ep))};
    const double base = baseline.value();
    auto res = run_episode(phi, theta0, cands, holdout, cfg, baseline, seeds);

    if (cfg.optimizer == PolicyOptimizer::Sgd) {
      phi = policy_update(phi, res.trace, res.reward, cfg.policy_lr);
    } else if (!res.trace.empty()) {
      auto g = policy::logpi_grad(phi, res.trace);
      if (!g.all_finite()) throw NumericError("train_policy: non-finite policy gradient at episode " + std::to_string(ep));
      // Adam descends, so feed it the negated ascent direction.
      const double scale = -res.reward / static_cast<double>(res.trace.size());
      for (double& x : g.values()) x *= scale;
      adam.step(phi.set.values(), g.values());
    }
    if (!phi.set.all_finite()) throw NumericError("train_policy: policy diverged at episode " + std::to_string(ep));
    baseline.observe(res.iou);

    EpisodeLog row{ep,
                   res.reward,
                   res.iou,
                   static_cast<int>(res.selected.size()),
                   static_cast<int>(res.trace.size()),
                   res.corrupted_selected,
                   base,
                   res.mean_attention_entropy,
                   res.seconds};
    out.log.push_back(row);
    if (on_episode) on_episode(row);

    if (track && (ep + 1) % cfg.validate_every == 0) {
      const double v = validate(phi, theta0, pool, holdout, cfg, baseline);
      if (v > out.best_validation) {
        out.best_validation = v;
        out.best = phi;
        out.best_episode = ep + 1;
      }
    }
  }
  out.last = phi;
  if (!track) out.best = phi, out.best_episode = cfg.max_episodes;
  return out;
}

}  // namespace pal::rl
