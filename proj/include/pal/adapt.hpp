#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "pal/flow.hpp"
#include "pal/policy.hpp"
#include "pal/segmenter.hpp"

namespace pal::adapt {

/// Patches chosen to serve as pseudo ground truth on the target domain.
struct StrongPriorSet {
  std::string method;
  int budget = 0;
  std::vector<flow::PatchSample> patches;
  std::vector<std::size_t> pool_index;  // positions in the pool the set was drawn from
  std::vector<double> scores;           // p_select (PAL) or precision (oracle); empty for random
};

struct SelectOptions {
  policy::ActMode mode = policy::ActMode::Greedy;
  bool pad_to_budget = true;
  std::uint64_t seed = 0;  // only used in Sample mode
};

/// Single memory-backed pass over the pool in the given order, no reward and no update.
/// Greedy mode selects p_select > 0.5; if the budget is not met, the set is padded with the
/// highest-scoring rejected patches.
StrongPriorSet select_target(const policy::PolicyParams& policy, std::span<const flow::PatchSample> pool, int budget,
                             const SelectOptions& opt = {});

/// seg_train from theta0 on the set's (appearance, prior) pairs.
seg::SegmenterParams finetune_target(const seg::SegmenterParams& theta0, const StrongPriorSet& strong,
                                     const seg::TrainOptions& opt);

/// Uniform sample of min(b, |pool|) patches without replacement.
StrongPriorSet baseline_random(std::span<const flow::PatchSample> pool, int budget, std::mt19937_64& rng);

/// Top-b patches by prior precision against ground truth; ties go to the larger prior, then to (k, n) order.
/// `gt_frames[k]` is the full-frame ground truth of frame index k.
StrongPriorSet baseline_oracle(std::span<const flow::PatchSample> pool, int budget,
                               std::span<const BinaryMask> gt_frames);

struct MethodResult {
  std::string method;
  std::vector<double> ious;  // one per seed
  double mean = 0.0;
  double stddev = 0.0;
};

struct AdaptReport {
  double source_only = 0.0;
  int budget = 0;
  std::vector<std::uint64_t> seeds;
  std::vector<MethodResult> methods;  // sorted by mean IoU, best first

  const MethodResult& method(const std::string& name) const;
};

/// Scores every adapted segmenter on the labeled target set. `variants[name]` holds one
/// segmenter per seed.
AdaptReport evaluate_crossdomain(const seg::SegmenterParams& theta0,
                                 const std::map<std::string, std::vector<seg::SegmenterParams>>& variants,
                                 std::span<const seg::Sample> target_eval, int budget, std::vector<std::uint64_t> seeds);

nlohmann::json to_json(const AdaptReport& report);
std::string to_table(const AdaptReport& report);

/// Manifest rows (frame k, rect, prior bits as a string) for inspecting a strong-prior set.
nlohmann::json to_json(const StrongPriorSet& set);

}  // namespace pal::adapt
