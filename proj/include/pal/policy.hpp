#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

#include "pal/flow.hpp"
#include "pal/params.hpp"

namespace pal::policy {

struct PolicyDims {
  int patch = 32;     // square patch side the encoder accepts
  int feature = 64;   // e: fused content feature length
  int memory = 32;    // d: key/value/query embedding length
  int slots = 8;      // L: memory capacity
  int hidden = 32;    // action-head hidden width
  int app1 = 4, app2 = 8;     // appearance stream channels
  int prior1 = 8, prior2 = 16;  // prior stream channels (twice the appearance stream)

  bool operator==(const PolicyDims&) const = default;
};

/// Encoder streams, fusion, memory projections and action head in one flat parameter set.
struct PolicyParams {
  PolicyDims dims;
  nn::ParamSet set;

  bool operator==(const PolicyParams&) const = default;
};

// Block indices in PolicyParams::set.
enum PolicyBlock : std::size_t {
  kAppConv1,
  kAppConv2,
  kPriorConv1,
  kPriorConv2,
  kFusionW,
  kFusionB,
  kKey,
  kValue,
  kQuery,
  kHeadW1,
  kHeadB1,
  kHeadW2,
  kHeadB2,
  kPolicyBlockCount
};

PolicyParams make_policy(const PolicyDims& dims = {});                        // all zeros
PolicyParams init_policy(std::uint64_t seed, const PolicyDims& dims = {});

/// Content feature e_k of a patch.
std::vector<double> encode(const PolicyParams& params, const flow::PatchSample& patch);

/// FIFO buffer of raw features of previously selected patches, oldest first.
/// Writes return a new state and leave the original untouched.
class MemoryState {
 public:
  explicit MemoryState(int capacity = 8);

  int capacity() const { return capacity_; }
  int fill() const { return static_cast<int>(entries_.size()); }
  bool empty() const { return entries_.empty(); }
  const std::vector<std::vector<double>>& entries() const { return entries_; }

  [[nodiscard]] MemoryState write(std::vector<double> feature) const;

  bool operator==(const MemoryState&) const = default;

 private:
  int capacity_;
  std::vector<std::vector<double>> entries_;
};

struct MemoryRead {
  std::vector<double> output;     // o_k, length d
  std::vector<double> attention;  // p_{k,l} over filled slots
  bool cold = false;              // empty memory: output is all zeros
};

MemoryRead memory_read(const PolicyParams& params, const MemoryState& mem, std::span<const double> feature);

/// Functional form of the write: identical to mem.write(feature).
MemoryState memory_write(const MemoryState& mem, std::vector<double> feature);

enum class ActMode { Sample, Greedy };

struct ActionOutcome {
  double p_select = 0.5;
  int action = 0;
  double log_pi = 0.0;
  std::vector<double> attention;
  bool cold = false;
  std::vector<double> feature;  // e_k, ready to be written if the patch is selected
};

inline constexpr double kLogClamp = 1e-7;

/// Scores a patch against the memory and draws (Sample) or thresholds at 0.5 (Greedy) the action.
ActionOutcome act(const PolicyParams& params, const MemoryState& mem, const flow::PatchSample& patch,
                  std::mt19937_64& rng, ActMode mode = ActMode::Sample);

/// Selection probability without drawing an action.
double select_probability(const PolicyParams& params, const MemoryState& mem, const flow::PatchSample& patch);

/// One recorded decision: the patch, the memory it was read against, and the action taken.
struct Decision {
  flow::PatchSample patch;
  MemoryState memory;
  int action = 0;
};
using Trace = std::vector<Decision>;

/// log pi(action | patch, memory) for one decision.
double log_pi(const PolicyParams& params, const Decision& d);

/// Gradient of the sum of log pi over the trace. Memory entries are constants.
nn::ParamSet logpi_grad(const PolicyParams& params, std::span<const Decision> trace);

/// Shannon entropy (nats) of an attention distribution; 0 for a cold read.
double attention_entropy(std::span<const double> attention);

void save_policy(const std::filesystem::path& path, const PolicyParams& params, const nlohmann::json& meta);
PolicyParams load_policy(const std::filesystem::path& path, nlohmann::json* meta = nullptr);

namespace ref {

using ActivationPattern = std::vector<std::vector<std::uint8_t>>;

/// Serial reference log pi; with `frozen`, encoder ReLU gates replay the given pattern.
double log_pi(const PolicyParams& params, const Decision& d, const ActivationPattern* frozen = nullptr,
              ActivationPattern* record = nullptr);

}  // namespace ref
}  // namespace pal::policy
