#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "pal/adapt.hpp"
#include "pal/pipeline.hpp"
#include "pal/rlloop.hpp"
#include "pal/synth.hpp"

// Stage wiring shared by the CLI and the acceptance suite: one config, one seed tree.
namespace pal::experiment {

struct PretrainConfig {
  double lr = 1e-3;
  int steps = 40;
  int batch = 8;
  int frames = 8;  // labeled source frames drawn from source_train; 0 uses all of them
};

struct AdaptConfig {
  std::vector<int> budgets{16};
  int seeds = 10;
  double lr = 1e-3;
  int steps = 300;
  int batch = 4;
  std::vector<std::string> methods{"pal", "random", "oracle", "source-only"};
  bool use_best_policy = true;  // best-by-validation checkpoint rather than the last one
};

struct RunConfig {
  std::uint64_t seed = 1;
  synth::SceneSpec scene;
  synth::DomainTransform transform;
  pipeline::PriorConfig priors;
  PretrainConfig pretrain;
  policy::PolicyDims policy;
  rl::EpisodeConfig train;  // train.seed is ignored; the run seed drives everything
  AdaptConfig adapt;
};

/// Every field, defaults materialized.
nlohmann::json to_json(const RunConfig& cfg);
/// Missing keys keep their defaults. Unknown keys, wrong types and out-of-range values raise one
/// ConfigError naming all of them.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);
void validate(const RunConfig& cfg);

/// Seed of a named random stream; `index` separates repetitions (episodes, evaluation seeds).
std::uint64_t stream_seed(const RunConfig& cfg, const std::string& stream, std::uint64_t index = 0);

struct Data {
  synth::Benchmark bench;
  std::vector<seg::Sample> source_train;
  std::vector<seg::Sample> source_holdout;
  std::vector<seg::Sample> target_eval;
  pipeline::CandidatePool source_pool;
  pipeline::CandidatePool target_pool;
};

/// Labeled sets of the benchmark plus both candidate pools.
Data prepare(const RunConfig& cfg, synth::Benchmark bench);
/// Labeled sets only; pools are attached separately (e.g. loaded from disk).
Data labeled_sets(synth::Benchmark bench);

seg::SegmenterParams pretrain(const RunConfig& cfg, const Data& data);
policy::PolicyParams initial_policy(const RunConfig& cfg);
rl::TrainResult train(const RunConfig& cfg, const Data& data, const seg::SegmenterParams& theta0,
                      const std::function<void(const rl::EpisodeLog&)>& on_episode = {});

/// Candidate order of the target pool under evaluation seed index `s`.
std::vector<flow::PatchSample> target_stream(const RunConfig& cfg, const Data& data, int s);

struct Adapted {
  std::map<std::string, std::vector<seg::SegmenterParams>> thetas;       // method -> one per evaluation seed
  std::map<std::string, std::vector<adapt::StrongPriorSet>> selections;  // empty for source-only
};

/// Runs every configured method for `cfg.adapt.seeds` evaluation seeds at one budget.
Adapted adapt_target(const RunConfig& cfg, const Data& data, const seg::SegmenterParams& theta0,
                     const policy::PolicyParams& policy, int budget);

adapt::AdaptReport score(const RunConfig& cfg, const Data& data, const seg::SegmenterParams& theta0,
                         const Adapted& adapted, int budget);

/// Pool on disk: per-patch frame index, rect, corruption flag and prior bits; appearance is
/// re-cropped from the benchmark frames on load.
nlohmann::json to_json(const pipeline::CandidatePool& pool);
pipeline::CandidatePool pool_from_json(const nlohmann::json& j, std::span<const synth::Video> videos);

}  // namespace pal::experiment
