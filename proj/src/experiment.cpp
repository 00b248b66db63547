#include "pal/experiment.hpp"

#include <algorithm>
#include <fstream>
#include <optional>
#include <random>
#include <set>

#include "pal/errors.hpp"

namespace pal::experiment {

namespace {

using json = nlohmann::json;

// Collects schema problems so one ConfigError can report all of them.
class Reader {
 public:
  explicit Reader(std::vector<std::string>& errors) : errors_(errors) {}

  // Section `name` of `j`; reports it when present but not an object.
  const json* section(const json& j, const std::string& name) {
    if (!j.contains(name)) return nullptr;
    if (!j.at(name).is_object()) {
      errors_.push_back(name + ": expected an object");
      return nullptr;
    }
    return &j.at(name);
  }

  void known(const json* sec, const std::string& path, std::initializer_list<const char*> keys) {
    if (!sec) return;
    for (const auto& [k, v] : sec->items())
      if (std::none_of(keys.begin(), keys.end(), [&](const char* x) { return k == x; }))
        errors_.push_back(path + "." + k + ": unknown field");
  }

  template <class T>
  void get(const json* sec, const std::string& path, const char* key, T& out) {
    if (!sec || !sec->contains(key)) return;
    const auto& v = sec->at(key);
    const std::string where = path + "." + key;
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) return bad(where, "a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) return bad(where, "an integer");
      if constexpr (std::is_unsigned_v<T>)
        if (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0) return bad(where, "a non-negative integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) return bad(where, "a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) return bad(where, "a string");
    } else {
      try {
        out = v.get<T>();
      } catch (const json::exception&) {
        bad(where, "a value of the right type");
      }
      return;
    }
    out = v.get<T>();
  }

  void error(const std::string& msg) { errors_.push_back(msg); }

 private:
  void bad(const std::string& where, const char* what) { errors_.push_back(where + ": expected " + what); }
  std::vector<std::string>& errors_;
};

[[noreturn]] void raise(const std::vector<std::string>& errors) {
  std::string msg = "invalid configuration:";
  for (const auto& e : errors) msg += "\n  " + e;
  throw ConfigError(msg);
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

const std::set<std::string> kMethods{"pal", "random", "oracle", "source-only"};

std::string optimizer_name(rl::PolicyOptimizer o) { return o == rl::PolicyOptimizer::Sgd ? "sgd" : "adam"; }
std::string baseline_name(rl::BaselineMode m) { return m == rl::BaselineMode::InitialTheta ? "initial" : "moving_average"; }

}  // namespace

json to_json(const RunConfig& c) {
  const auto& t = c.train;
  return {{"seed", c.seed},
          {"scene", synth::to_json(c.scene)},
          {"transform", synth::to_json(c.transform)},
          {"priors",
           {{"tau", c.priors.tau},
            {"patch_size", c.priors.patch},
            {"hs_lambda", c.priors.flow.smoothness},
            {"hs_iters", c.priors.flow.iterations},
            {"corrupt_fraction", c.priors.corrupt_fraction}}},
          {"pretrain",
           {{"lr", c.pretrain.lr},
            {"steps", c.pretrain.steps},
            {"batch", c.pretrain.batch},
            {"frames", c.pretrain.frames}}},
          {"policy",
           {{"feature", c.policy.feature},
            {"memory", c.policy.memory},
            {"slots", c.policy.slots},
            {"hidden", c.policy.hidden}}},
          {"train",
           {{"episodes", t.max_episodes},
            {"budget", t.budget},
            {"finetune_steps", t.finetune_steps},
            {"finetune_batch", t.finetune_batch},
            {"seg_lr", t.seg_lr},
            {"policy_lr", t.policy_lr},
            {"optimizer", optimizer_name(t.optimizer)},
            {"baseline", baseline_name(t.baseline.mode)},
            {"baseline_decay", t.baseline.decay},
            {"baseline_warmup", t.baseline.warmup},
            {"validate_every", t.validate_every}}},
          {"adapt",
           {{"budgets", c.adapt.budgets},
            {"seeds", c.adapt.seeds},
            {"lr", c.adapt.lr},
            {"steps", c.adapt.steps},
            {"batch", c.adapt.batch},
            {"methods", c.adapt.methods},
            {"policy", c.adapt.use_best_policy ? "best" : "last"}}}};
}

RunConfig config_from_json(const json& j) {
  std::vector<std::string> errors;
  if (!j.is_object()) raise({"top level: expected an object"});
  Reader r(errors);
  RunConfig c;
  r.known(&j, "config", {"seed", "scene", "transform", "priors", "pretrain", "policy", "train", "adapt"});
  r.get(&j, "config", "seed", c.seed);

  if (const auto* s = r.section(j, "scene")) {
    const auto defaults = synth::to_json(synth::SceneSpec{});
    for (const auto& [k, v] : s->items()) {
      if (!defaults.contains(k)) errors.push_back("scene." + k + ": unknown field");
      else if (!v.is_number()) errors.push_back("scene." + k + ": expected a number");
    }
    if (errors.empty()) {
      try {
        c.scene = synth::scene_from_json(*s);
      } catch (const std::exception& e) {
        errors.push_back(std::string("scene: ") + e.what());
      }
    }
  }
  if (const auto* s = r.section(j, "transform")) {
    r.known(s, "transform", {"kind", "gamma", "noise_sigma"});
    try {
      c.transform = synth::transform_from_json(*s);
    } catch (const std::exception& e) {
      errors.push_back(std::string("transform: ") + e.what());
    }
  }
  if (const auto* s = r.section(j, "priors")) {
    r.known(s, "priors", {"tau", "patch_size", "hs_lambda", "hs_iters", "corrupt_fraction"});
    r.get(s, "priors", "tau", c.priors.tau);
    r.get(s, "priors", "patch_size", c.priors.patch);
    r.get(s, "priors", "hs_lambda", c.priors.flow.smoothness);
    r.get(s, "priors", "hs_iters", c.priors.flow.iterations);
    r.get(s, "priors", "corrupt_fraction", c.priors.corrupt_fraction);
  }
  if (const auto* s = r.section(j, "pretrain")) {
    r.known(s, "pretrain", {"lr", "steps", "batch", "frames"});
    r.get(s, "pretrain", "lr", c.pretrain.lr);
    r.get(s, "pretrain", "steps", c.pretrain.steps);
    r.get(s, "pretrain", "batch", c.pretrain.batch);
    r.get(s, "pretrain", "frames", c.pretrain.frames);
  }
  if (const auto* s = r.section(j, "policy")) {
    r.known(s, "policy", {"feature", "memory", "slots", "hidden"});
    r.get(s, "policy", "feature", c.policy.feature);
    r.get(s, "policy", "memory", c.policy.memory);
    r.get(s, "policy", "slots", c.policy.slots);
    r.get(s, "policy", "hidden", c.policy.hidden);
  }
  if (const auto* s = r.section(j, "train")) {
    auto& t = c.train;
    r.known(s, "train",
            {"episodes", "budget", "finetune_steps", "finetune_batch", "seg_lr", "policy_lr", "optimizer", "baseline",
             "baseline_decay", "baseline_warmup", "validate_every"});
    r.get(s, "train", "episodes", t.max_episodes);
    r.get(s, "train", "budget", t.budget);
    r.get(s, "train", "finetune_steps", t.finetune_steps);
    r.get(s, "train", "finetune_batch", t.finetune_batch);
    r.get(s, "train", "seg_lr", t.seg_lr);
    r.get(s, "train", "policy_lr", t.policy_lr);
    r.get(s, "train", "baseline_decay", t.baseline.decay);
    r.get(s, "train", "baseline_warmup", t.baseline.warmup);
    r.get(s, "train", "validate_every", t.validate_every);
    std::string opt = optimizer_name(t.optimizer), base = baseline_name(t.baseline.mode);
    r.get(s, "train", "optimizer", opt);
    r.get(s, "train", "baseline", base);
    if (opt == "adam") t.optimizer = rl::PolicyOptimizer::Adam;
    else if (opt == "sgd") t.optimizer = rl::PolicyOptimizer::Sgd;
    else errors.push_back("train.optimizer: expected \"adam\" or \"sgd\"");
    if (base == "moving_average") t.baseline.mode = rl::BaselineMode::MovingAverage;
    else if (base == "initial") t.baseline.mode = rl::BaselineMode::InitialTheta;
    else errors.push_back("train.baseline: expected \"moving_average\" or \"initial\"");
  }
  if (const auto* s = r.section(j, "adapt")) {
    auto& a = c.adapt;
    r.known(s, "adapt", {"budgets", "seeds", "lr", "steps", "batch", "methods", "policy"});
    r.get(s, "adapt", "budgets", a.budgets);
    r.get(s, "adapt", "seeds", a.seeds);
    r.get(s, "adapt", "lr", a.lr);
    r.get(s, "adapt", "steps", a.steps);
    r.get(s, "adapt", "batch", a.batch);
    r.get(s, "adapt", "methods", a.methods);
    std::string which = a.use_best_policy ? "best" : "last";
    r.get(s, "adapt", "policy", which);
    if (which == "best" || which == "last") a.use_best_policy = which == "best";
    else errors.push_back("adapt.policy: expected \"best\" or \"last\"");
  }
  if (!errors.empty()) raise(errors);
  validate(c);
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

void validate(const RunConfig& c) {
  std::vector<std::string> e;
  try {
    synth::validate(c.scene);
  } catch (const UsageError& x) {
    e.push_back(x.what());
  }
  if (c.scene.width < c.priors.patch || c.scene.height < c.priors.patch)
    e.push_back("priors.patch_size: larger than the frame");
  if (!(c.priors.tau >= 0.0)) e.push_back("priors.tau: must be >= 0");
  if (c.priors.patch < 4) e.push_back("priors.patch_size: must be >= 4");
  if (!(c.priors.flow.smoothness > 0.0)) e.push_back("priors.hs_lambda: must be > 0");
  if (c.priors.flow.iterations < 1) e.push_back("priors.hs_iters: must be >= 1");
  if (!(c.priors.corrupt_fraction >= 0.0 && c.priors.corrupt_fraction <= 1.0))
    e.push_back("priors.corrupt_fraction: must lie in [0,1]");
  if (!(c.pretrain.lr > 0.0)) e.push_back("pretrain.lr: must be > 0");
  if (c.pretrain.steps < 0) e.push_back("pretrain.steps: must be >= 0");
  if (c.pretrain.batch < 1) e.push_back("pretrain.batch: must be >= 1");
  if (c.pretrain.frames < 0) e.push_back("pretrain.frames: must be >= 0");
  if (c.policy.feature < 1 || c.policy.memory < 1 || c.policy.slots < 1 || c.policy.hidden < 1)
    e.push_back("policy: feature, memory, slots and hidden must be >= 1");
  const auto& t = c.train;
  if (t.max_episodes < 0) e.push_back("train.episodes: must be >= 0");
  if (t.budget < 1) e.push_back("train.budget: must be >= 1");
  if (t.finetune_steps < 0) e.push_back("train.finetune_steps: must be >= 0");
  if (t.finetune_batch < 1) e.push_back("train.finetune_batch: must be >= 1");
  if (!(t.seg_lr > 0.0)) e.push_back("train.seg_lr: must be > 0");
  if (!(t.policy_lr > 0.0)) e.push_back("train.policy_lr: must be > 0");
  if (!(t.baseline.decay > 0.0 && t.baseline.decay < 1.0)) e.push_back("train.baseline_decay: must lie in (0,1)");
  if (t.baseline.warmup < 0) e.push_back("train.baseline_warmup: must be >= 0");
  if (t.validate_every < 0) e.push_back("train.validate_every: must be >= 0");
  const auto& a = c.adapt;
  if (a.budgets.empty()) e.push_back("adapt.budgets: must not be empty");
  for (int b : a.budgets)
    if (b < 1) e.push_back("adapt.budgets: every budget must be >= 1");
  if (a.seeds < 1) e.push_back("adapt.seeds: must be >= 1");
  if (!(a.lr > 0.0)) e.push_back("adapt.lr: must be > 0");
  if (a.steps < 0) e.push_back("adapt.steps: must be >= 0");
  if (a.batch < 1) e.push_back("adapt.batch: must be >= 1");
  for (const auto& m : a.methods)
    if (!kMethods.contains(m)) e.push_back("adapt.methods: unknown method \"" + m + "\"");
  if (!e.empty()) raise(e);
}

std::uint64_t stream_seed(const RunConfig& cfg, const std::string& stream, std::uint64_t index) {
  return rl::derive_seed(cfg.seed, fnv1a(stream), index);
}

Data labeled_sets(synth::Benchmark bench) {
  Data d;
  d.bench = std::move(bench);
  d.source_train = pipeline::labeled_frames(d.bench.split(synth::Split::SourceTrain));
  d.source_holdout = pipeline::labeled_frames(d.bench.split(synth::Split::SourceHoldout));
  d.target_eval = pipeline::labeled_frames(d.bench.split(synth::Split::TargetEval));
  return d;
}

Data prepare(const RunConfig& cfg, synth::Benchmark bench) {
  auto d = labeled_sets(std::move(bench));
  d.source_pool = pipeline::build_pool(d.bench.split(synth::Split::SourceVideos), cfg.priors,
                                       stream_seed(cfg, "corrupt-source"));
  d.target_pool = pipeline::build_pool(d.bench.split(synth::Split::TargetVideos), cfg.priors,
                                       stream_seed(cfg, "corrupt-target"));
  return d;
}

seg::SegmenterParams pretrain(const RunConfig& cfg, const Data& data) {
  if (data.source_train.empty()) throw UsageError("pretrain: the source_train split is empty");
  const seg::TrainOptions opt{cfg.pretrain.lr, cfg.pretrain.steps, cfg.pretrain.batch, stream_seed(cfg, "pretrain")};
  auto labeled = data.source_train;
  if (cfg.pretrain.frames > 0 && static_cast<std::size_t>(cfg.pretrain.frames) < labeled.size()) {
    std::mt19937_64 rng(stream_seed(cfg, "pretrain-frames"));
    std::shuffle(labeled.begin(), labeled.end(), rng);
    labeled.resize(static_cast<std::size_t>(cfg.pretrain.frames));
  }
  return seg::seg_train(seg::init_segmenter(stream_seed(cfg, "segmenter-init")), labeled, opt);
}

policy::PolicyParams initial_policy(const RunConfig& cfg) {
  auto dims = cfg.policy;
  dims.patch = cfg.priors.patch;
  return policy::init_policy(stream_seed(cfg, "policy-init"), dims);
}

rl::TrainResult train(const RunConfig& cfg, const Data& data, const seg::SegmenterParams& theta0,
                      const std::function<void(const rl::EpisodeLog&)>& on_episode) {
  auto ecfg = cfg.train;
  ecfg.seed = stream_seed(cfg, "policy-train");
  return rl::train_policy(initial_policy(cfg), theta0, data.source_pool.patches, data.source_holdout, ecfg, on_episode);
}

std::vector<flow::PatchSample> target_stream(const RunConfig& cfg, const Data& data, int s) {
  const auto& pool = data.target_pool.patches;
  const auto order = rl::episode_order(pool.size(), stream_seed(cfg, "target-order", static_cast<std::uint64_t>(s)), 0);
  std::vector<flow::PatchSample> out;
  out.reserve(order.size());
  for (auto i : order) out.push_back(pool[i]);
  return out;
}

Adapted adapt_target(const RunConfig& cfg, const Data& data, const seg::SegmenterParams& theta0,
                     const policy::PolicyParams& policy, int budget) {
  if (data.target_pool.patches.empty()) throw UsageError("adapt: the target candidate pool is empty");
  Adapted out;
  const auto& pool = data.target_pool.patches;
  const auto wants = [&](const char* m) {
    return std::find(cfg.adapt.methods.begin(), cfg.adapt.methods.end(), m) != cfg.adapt.methods.end();
  };
  std::optional<adapt::StrongPriorSet> oracle;
  if (wants("oracle")) oracle = adapt::baseline_oracle(pool, budget, data.target_pool.gt);

  for (int s = 0; s < cfg.adapt.seeds; ++s) {
    const seg::TrainOptions opt{cfg.adapt.lr, cfg.adapt.steps, cfg.adapt.batch,
                                stream_seed(cfg, "target-finetune", static_cast<std::uint64_t>(s))};
    auto run = [&](const std::string& name, adapt::StrongPriorSet set) {
      out.thetas[name].push_back(adapt::finetune_target(theta0, set, opt));
      out.selections[name].push_back(std::move(set));
    };
    if (wants("pal")) run("pal", adapt::select_target(policy, target_stream(cfg, data, s), budget));
    if (wants("random")) {
      std::mt19937_64 rng(stream_seed(cfg, "random", static_cast<std::uint64_t>(s)));
      run("random", adapt::baseline_random(pool, budget, rng));
    }
    if (oracle) run("oracle", *oracle);
    if (wants("source-only")) out.thetas["source-only"].push_back(theta0);
  }
  return out;
}

adapt::AdaptReport score(const RunConfig& cfg, const Data& data, const seg::SegmenterParams& theta0,
                         const Adapted& adapted, int budget) {
  std::vector<std::uint64_t> seeds;
  for (int s = 0; s < cfg.adapt.seeds; ++s) seeds.push_back(static_cast<std::uint64_t>(s));
  return adapt::evaluate_crossdomain(theta0, adapted.thetas, data.target_eval, budget, std::move(seeds));
}

json to_json(const pipeline::CandidatePool& pool) {
  auto bits = [](const BinaryMask& m) {
    std::string s;
    s.reserve(m.size());
    for (auto b : m.bits()) s.push_back(b ? '1' : '0');
    return s;
  };
  json frames = json::array(), patches = json::array();
  for (std::size_t k = 0; k < pool.frames.size(); ++k)
    frames.push_back({{"video_id", pool.frames[k].video_id},
                      {"frame", pool.frames[k].frame},
                      {"width", pool.priors[k].width()},
                      {"height", pool.priors[k].height()},
                      {"prior", bits(pool.priors[k])}});
  for (const auto& p : pool.patches)
    patches.push_back({{"frame_index", p.frame_index},
                       {"patch_index", p.patch_index},
                       {"rect", {p.region.x0, p.region.y0, p.region.w, p.region.h}},
                       {"corrupted", p.corrupted},
                       {"prior", bits(p.prior)}});
  return {{"format", "pal-pool-1"}, {"frames", frames}, {"patches", patches}};
}

pipeline::CandidatePool pool_from_json(const json& j, std::span<const synth::Video> videos) {
  auto mask = [](int w, int h, const std::string& s) {
    if (s.size() != static_cast<std::size_t>(w) * h) throw IoError("pool file: mask bit string has the wrong length");
    std::vector<std::uint8_t> b(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) b[i] = s[i] == '1' ? 1 : 0;
    return BinaryMask(w, h, std::move(b));
  };
  auto find = [&](int id) -> const synth::Video& {
    for (const auto& v : videos)
      if (v.id == id) return v;
    throw IoError("pool file refers to video " + std::to_string(id) + " which the benchmark does not contain");
  };
  pipeline::CandidatePool pool;
  try {
    if (j.at("format") != "pal-pool-1") throw IoError("pool file: unknown format");
    for (const auto& f : j.at("frames")) {
      const pipeline::FrameRef ref{f.at("video_id").get<int>(), f.at("frame").get<int>()};
      const auto& v = find(ref.video_id);
      if (ref.frame < 0 || static_cast<std::size_t>(ref.frame) >= v.frames.size())
        throw IoError("pool file: frame index out of range for video " + std::to_string(ref.video_id));
      pool.frames.push_back(ref);
      pool.gt.push_back(v.masks.at(static_cast<std::size_t>(ref.frame)));
      pool.priors.push_back(mask(f.at("width"), f.at("height"), f.at("prior").get<std::string>()));
    }
    for (const auto& p : j.at("patches")) {
      flow::PatchSample s;
      s.frame_index = p.at("frame_index");
      s.patch_index = p.at("patch_index");
      const auto r = p.at("rect").get<std::vector<int>>();
      if (r.size() != 4) throw IoError("pool file: rect needs 4 numbers");
      s.region = Rect{r[0], r[1], r[2], r[3]};
      s.corrupted = p.at("corrupted");
      if (s.frame_index < 0 || static_cast<std::size_t>(s.frame_index) >= pool.frames.size())
        throw IoError("pool file: patch frame index out of range");
      const auto& ref = pool.frames[static_cast<std::size_t>(s.frame_index)];
      s.appearance = crop(find(ref.video_id).frames[static_cast<std::size_t>(ref.frame)], s.region);
      s.prior = mask(r[2], r[3], p.at("prior").get<std::string>());
      pool.patches.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed pool file: ") + e.what());
  }
  return pool;
}

}  // namespace pal::experiment
