// Experiment runner: generate -> extract-priors -> pretrain -> train-policy -> adapt -> report.
// Every stage works inside one run directory and rewrites <out>/config.json with the resolved config.
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "pal/errors.hpp"
#include "pal/experiment.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pal;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<double> tau;
  std::optional<int> patch;
  std::optional<double> hs_lambda;
  std::optional<int> hs_iters;
  std::optional<int> episodes;
  std::optional<int> budget;
};

struct Paths {
  fs::path root;
  fs::path config() const { return root / "config.json"; }
  fs::path bench() const { return root / "bench"; }
  fs::path priors() const { return root / "priors"; }
  fs::path source_pool() const { return priors() / "source_pool.json"; }
  fs::path target_pool() const { return priors() / "target_pool.json"; }
  fs::path theta0() const { return root / "theta0.bin"; }
  fs::path policy_dir() const { return root / "policy"; }
  fs::path policy(bool best) const { return policy_dir() / (best ? "best.bin" : "last.bin"); }
  fs::path adapt_dir(int b) const { return root / "adapt" / ("b" + std::to_string(b)); }
  fs::path adapted(int b, const std::string& m, int s) const {
    return adapt_dir(b) / (m + "_s" + std::to_string(s) + ".bin");
  }
  fs::path report_dir() const { return root / "report"; }
};

void write_text(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::binary);
  if (!os) throw IoError("cannot write " + p.string());
  os << text;
  if (!os) throw IoError("write failed: " + p.string());
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

json read_json(const fs::path& p) {
  std::ifstream is(p);
  if (!is) throw IoError("cannot read " + p.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw IoError("malformed JSON in " + p.string() + ": " + e.what());
  }
}

void require(const fs::path& p, const char* what, const char* stage) {
  if (!fs::exists(p))
    throw IoError("missing " + std::string(what) + " (" + p.string() + "); run `pal " + stage + "` first");
}

// --config wins, then the run directory's config, then defaults; flags override all three.
experiment::RunConfig resolve(const Options& o, const Paths& paths) {
  json j = json::object();
  if (!o.config.empty()) {
    if (!fs::exists(o.config)) throw ConfigError("config file not found: " + o.config);
    std::ifstream is(o.config);
    try {
      j = json::parse(is);
    } catch (const json::exception& e) {
      throw ConfigError("config file " + o.config + " is not valid JSON: " + e.what());
    }
  } else if (fs::exists(paths.config())) {
    j = read_json(paths.config());
  }
  auto cfg = experiment::config_from_json(j);
  if (o.seed) cfg.seed = *o.seed;
  if (o.tau) cfg.priors.tau = *o.tau;
  if (o.patch) cfg.priors.patch = *o.patch;
  if (o.hs_lambda) cfg.priors.flow.smoothness = *o.hs_lambda;
  if (o.hs_iters) cfg.priors.flow.iterations = *o.hs_iters;
  if (o.episodes) cfg.train.max_episodes = *o.episodes;
  if (o.budget) cfg.train.budget = *o.budget, cfg.adapt.budgets = {*o.budget};
  experiment::validate(cfg);
  fs::create_directories(paths.root);
  write_json(paths.config(), experiment::to_json(cfg));
  return cfg;
}

synth::Benchmark load_bench(const Paths& p) {
  require(p.bench() / "manifest.json", "benchmark", "generate");
  return synth::load_benchmark(p.bench());
}

experiment::Data load_data(const Paths& p, bool with_pools) {
  auto data = experiment::labeled_sets(load_bench(p));
  if (with_pools) {
    require(p.source_pool(), "source candidate pool", "extract-priors");
    require(p.target_pool(), "target candidate pool", "extract-priors");
    data.source_pool =
        experiment::pool_from_json(read_json(p.source_pool()), data.bench.split(synth::Split::SourceVideos));
    data.target_pool =
        experiment::pool_from_json(read_json(p.target_pool()), data.bench.split(synth::Split::TargetVideos));
  }
  return data;
}

seg::SegmenterParams load_theta0(const Paths& p) {
  require(p.theta0(), "pretrained segmenter", "pretrain");
  return seg::load_segmenter(p.theta0());
}

int corrupted_count(const pipeline::CandidatePool& pool) {
  int n = 0;
  for (const auto& s : pool.patches) n += s.corrupted ? 1 : 0;
  return n;
}

void cmd_generate(const experiment::RunConfig& cfg, const Paths& p) {
  synth::generate(cfg.scene, cfg.transform, cfg.seed, p.bench());
  std::cout << "benchmark written to " << p.bench().string() << "\n";
}

void cmd_extract_priors(const experiment::RunConfig& cfg, const Paths& p) {
  const auto data = experiment::prepare(cfg, load_bench(p));
  write_json(p.source_pool(), experiment::to_json(data.source_pool));
  write_json(p.target_pool(), experiment::to_json(data.target_pool));
  json summary = json::object();
  for (auto [name, pool] : {std::pair{"source", &data.source_pool}, std::pair{"target", &data.target_pool}}) {
    summary[name] = {{"frames", pool->frames.size()},
                     {"patches", pool->patches.size()},
                     {"corrupted", corrupted_count(*pool)},
                     {"mean_frame_precision", pipeline::mean_frame_precision(*pool)}};
    std::cout << name << ": " << pool->patches.size() << " patches (" << corrupted_count(*pool)
              << " corrupted), mean prior precision " << std::fixed << std::setprecision(3)
              << pipeline::mean_frame_precision(*pool) << "\n";
  }
  write_json(p.priors() / "summary.json", summary);
}

void cmd_pretrain(const experiment::RunConfig& cfg, const Paths& p) {
  const auto data = load_data(p, false);
  const auto theta0 = experiment::pretrain(cfg, data);
  const double src = seg::seg_eval(theta0, data.source_holdout);
  const double tgt = seg::seg_eval(theta0, data.target_eval);
  seg::save_segmenter(p.theta0(), theta0, {{"stage", "pretrain"}, {"seed", cfg.seed}});
  std::cout << std::fixed << std::setprecision(3) << "theta0: source holdout IoU " << src << ", target IoU " << tgt
            << "\n";
}

void cmd_train_policy(const experiment::RunConfig& cfg, const Paths& p) {
  const auto data = load_data(p, true);
  const auto theta0 = load_theta0(p);
  fs::create_directories(p.policy_dir());
  std::ofstream log(p.policy_dir() / "train_log.csv");
  if (!log) throw IoError("cannot write " + (p.policy_dir() / "train_log.csv").string());
  log << "episode,reward,iou,selections,decisions,corrupted_selected,baseline,attention_entropy,seconds\n";
  log << std::setprecision(10);
  double window = 0.0;
  const auto res = experiment::train(cfg, data, theta0, [&](const rl::EpisodeLog& r) {
    log << r.episode << ',' << r.reward << ',' << r.iou << ',' << r.selections << ',' << r.decisions << ','
        << r.corrupted_selected << ',' << r.baseline << ',' << r.attention_entropy << ',' << r.seconds << '\n';
    window += r.reward;
    if ((r.episode + 1) % 50 == 0) {
      std::cerr << "episode " << r.episode + 1 << "  mean reward (last 50) " << std::fixed << std::setprecision(4)
                << window / 50.0 << "\n";
      window = 0.0;
    }
  });
  const json meta = {{"stage", "train-policy"}, {"seed", cfg.seed}, {"episodes", cfg.train.max_episodes}};
  policy::save_policy(p.policy(false), res.last, meta);
  auto best_meta = meta;
  best_meta["best_episode"] = res.best_episode;
  best_meta["best_validation"] = res.best_validation;
  policy::save_policy(p.policy(true), res.best, best_meta);
  std::cout << "policy written to " << p.policy_dir().string() << " (best at episode " << res.best_episode << ")\n";
}

void cmd_adapt(const experiment::RunConfig& cfg, const Paths& p) {
  const auto data = load_data(p, true);
  const auto theta0 = load_theta0(p);
  const bool pal = std::find(cfg.adapt.methods.begin(), cfg.adapt.methods.end(), "pal") != cfg.adapt.methods.end();
  policy::PolicyParams phi;
  if (pal) {
    require(p.policy(cfg.adapt.use_best_policy), "trained policy", "train-policy");
    phi = policy::load_policy(p.policy(cfg.adapt.use_best_policy));
  }
  for (int b : cfg.adapt.budgets) {
    const auto adapted = experiment::adapt_target(cfg, data, theta0, phi, b);
    fs::create_directories(p.adapt_dir(b));
    for (const auto& [method, thetas] : adapted.thetas)
      for (std::size_t s = 0; s < thetas.size(); ++s) {
        const json meta = {{"stage", "adapt"}, {"method", method}, {"budget", b}, {"eval_seed", s}};
        seg::save_segmenter(p.adapted(b, method, static_cast<int>(s)), thetas[s], meta);
        if (auto it = adapted.selections.find(method); it != adapted.selections.end())
          write_json(p.adapt_dir(b) / (method + "_s" + std::to_string(s) + ".json"), adapt::to_json(it->second[s]));
      }
    std::cout << "budget " << b << ": " << adapted.thetas.size() << " methods x " << cfg.adapt.seeds
              << " seeds written to " << p.adapt_dir(b).string() << "\n";
  }
}

void cmd_report(const experiment::RunConfig& cfg, const Paths& p) {
  const auto data = load_data(p, false);
  const auto theta0 = load_theta0(p);
  json budgets = json::array();
  std::ostringstream csv, curve, tables;
  csv << "budget,method,mean_iou,std_iou";
  for (int s = 0; s < cfg.adapt.seeds; ++s) csv << ",seed_" << s;
  csv << "\n" << std::setprecision(10);
  curve << "# budget";
  for (const auto& m : cfg.adapt.methods) curve << ' ' << m << "_mean " << m << "_std";
  curve << "\n" << std::setprecision(10);

  for (int b : cfg.adapt.budgets) {
    experiment::Adapted adapted;
    for (const auto& m : cfg.adapt.methods)
      for (int s = 0; s < cfg.adapt.seeds; ++s) {
        require(p.adapted(b, m, s), "adapted segmenter", "adapt");
        adapted.thetas[m].push_back(seg::load_segmenter(p.adapted(b, m, s)));
      }
    const auto rep = experiment::score(cfg, data, theta0, adapted, b);
    budgets.push_back(adapt::to_json(rep));
    tables << adapt::to_table(rep) << "\n";
    curve << b;
    for (const auto& m : cfg.adapt.methods) {
      const auto& r = rep.method(m);
      csv << b << ',' << m << ',' << r.mean << ',' << r.stddev;
      for (double v : r.ious) csv << ',' << v;
      csv << '\n';
      curve << ' ' << r.mean << ' ' << r.stddev;
    }
    curve << '\n';
  }
  const json out = {{"domains", {{"source", "synthetic"}, {"target", synth::to_json(cfg.transform)}}},
                    {"source_only_iou", seg::seg_eval(theta0, data.target_eval)},
                    {"budgets", budgets}};
  write_json(p.report_dir() / "report.json", out);
  write_text(p.report_dir() / "report.csv", csv.str());
  write_text(p.report_dir() / "budget_curve.dat", curve.str());
  write_text(p.report_dir() / "table.txt", tables.str());
  std::cout << tables.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Policy-selected motion priors for cross-domain segmentation"};
  app.require_subcommand(1);
  Options o;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON run configuration");
    sub->add_option("--out", o.out, "run directory")->required();
    sub->add_option("--seed", o.seed, "run seed");
    sub->add_option("--tau", o.tau, "flow-magnitude threshold, pixels");
    sub->add_option("--patch-size", o.patch, "candidate patch side");
    sub->add_option("--hs-lambda", o.hs_lambda, "Horn-Schunck smoothness weight");
    sub->add_option("--hs-iters", o.hs_iters, "Horn-Schunck iterations");
    sub->add_option("--episodes", o.episodes, "policy training episodes");
    sub->add_option("--budget", o.budget, "selection budget (training and a single adaptation budget)");
  };
  using Stage = void (*)(const experiment::RunConfig&, const Paths&);
  const std::vector<std::tuple<const char*, const char*, Stage>> stages{
      {"generate", "write the synthetic benchmark", cmd_generate},
      {"extract-priors", "compute motion priors and candidate pools", cmd_extract_priors},
      {"pretrain", "pretrain the segmenter on labeled source frames", cmd_pretrain},
      {"train-policy", "train the selection policy on source videos", cmd_train_policy},
      {"adapt", "select target priors and finetune, per method and seed", cmd_adapt},
      {"report", "score adapted segmenters and write tables and curves", cmd_report}};
  for (const auto& [name, help, fn] : stages) add_common(app.add_subcommand(name, help));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  const Paths paths{o.out};
  try {
    const auto cfg = resolve(o, paths);
    for (const auto& [name, help, fn] : stages)
      if (app.got_subcommand(name)) fn(cfg, paths);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "stage error: " << e.what() << "\n";
    return kExitStage;
  }
  return 0;
}
