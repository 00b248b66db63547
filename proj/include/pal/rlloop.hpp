#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "pal/flow.hpp"
#include "pal/policy.hpp"
#include "pal/segmenter.hpp"

namespace pal::rl {

enum class BaselineMode { InitialTheta, MovingAverage };

struct BaselineConfig {
  BaselineMode mode = BaselineMode::MovingAverage;
  double decay = 0.9;
  int warmup = 50;  // episodes anchored on IoU(holdout; theta0) before switching to the EMA
};

/// Value subtracted from the episode IoU. The EMA starts at the theta0 anchor and is
/// updated by every observed episode, warmup included.
class RewardBaseline {
 public:
  RewardBaseline(const BaselineConfig& cfg, double theta0_iou);

  double value() const;
  void observe(double episode_iou);

  double ema() const { return ema_; }
  double anchor() const { return anchor_; }
  int observed() const { return observed_; }

 private:
  BaselineConfig cfg_;
  double anchor_;
  double ema_;
  int observed_ = 0;
};

/// IoU(holdout; theta) minus the baseline value.
double reward(std::span<const seg::Sample> holdout, const seg::SegmenterParams& theta, const RewardBaseline& baseline);

enum class PolicyOptimizer { Adam, Sgd };

struct EpisodeConfig {
  int budget = 16;
  int finetune_steps = 100;
  int finetune_batch = 4;
  double seg_lr = 1e-3;
  double policy_lr = 1e-4;
  PolicyOptimizer optimizer = PolicyOptimizer::Adam;
  BaselineConfig baseline;
  int max_episodes = 1500;
  int validate_every = 100;  // 0 disables best-by-validation tracking
  std::uint64_t seed = 0;
};

struct EpisodeResult {
  std::vector<std::pair<int, int>> selected;  // (frame k, patch n)
  std::vector<std::size_t> selected_index;    // positions in the candidate stream
  double reward = 0.0;
  double iou = 0.0;
  policy::Trace trace;
  double seconds = 0.0;
  bool no_selection = false;
  int corrupted_selected = 0;
  double mean_attention_entropy = 0.0;
};

/// Seeds of one episode: action sampling and finetuning minibatch order.
struct EpisodeSeeds {
  std::uint64_t actions = 0;
  std::uint64_t finetune = 0;
};

/// One episode: stream candidates through the policy until the budget trips, finetune a copy of
/// theta0 on the selected (patch, prior) pairs, score it on the holdout. theta0 is never modified.
EpisodeResult run_episode(const policy::PolicyParams& policy, const seg::SegmenterParams& theta0,
                          std::span<const flow::PatchSample> candidates, std::span<const seg::Sample> holdout,
                          const EpisodeConfig& cfg, const RewardBaseline& baseline, const EpisodeSeeds& seeds,
                          policy::ActMode mode = policy::ActMode::Sample);

/// Training pairs (appearance, prior) of the selected patches.
std::vector<seg::Sample> pseudo_labels(std::span<const flow::PatchSample> patches);

/// phi + lr * r * grad(sum log pi) / #decisions (gradient ascent, discount 1).
policy::PolicyParams policy_update(const policy::PolicyParams& policy, std::span<const policy::Decision> trace, double r,
                                   double lr);

struct EpisodeLog {
  int episode = 0;
  double reward = 0.0;
  double iou = 0.0;
  int selections = 0;
  int decisions = 0;
  int corrupted_selected = 0;
  double baseline = 0.0;
  double attention_entropy = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  policy::PolicyParams best;
  policy::PolicyParams last;
  std::vector<EpisodeLog> log;
  int best_episode = 0;
  double best_validation = 0.0;
};

/// Episodic REINFORCE over a reshuffled candidate pool. `on_episode` (optional) sees each log row.
TrainResult train_policy(const policy::PolicyParams& initial, const seg::SegmenterParams& theta0,
                         std::span<const flow::PatchSample> pool, std::span<const seg::Sample> holdout,
                         const EpisodeConfig& cfg, const std::function<void(const EpisodeLog&)>& on_episode = {});

/// Candidate order of episode `episode` under run seed `seed`.
std::vector<std::size_t> episode_order(std::size_t pool_size, std::uint64_t seed, int episode);

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

}  // namespace pal::rl
