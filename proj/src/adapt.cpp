#include "pal/adapt.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "pal/errors.hpp"
#include "pal/rlloop.hpp"

namespace pal::adapt {

StrongPriorSet select_target(const policy::PolicyParams& policy, std::span<const flow::PatchSample> pool, int budget,
                             const SelectOptions& opt) {
  if (budget < 1) throw UsageError("select_target: budget must be >= 1");
  StrongPriorSet out;
  out.method = "pal";
  out.budget = budget;
  if (pool.empty()) return out;

  std::mt19937_64 rng(opt.seed);
  policy::MemoryState mem(policy.dims.slots);
  std::vector<std::pair<double, std::size_t>> rejected;
  for (std::size_t i = 0; i < pool.size() && static_cast<int>(out.patches.size()) < budget; ++i) {
    auto a = policy::act(policy, mem, pool[i], rng, opt.mode);
    if (a.action == 1) {
      mem = mem.write(std::move(a.feature));
      out.patches.push_back(pool[i]);
      out.pool_index.push_back(i);
      out.scores.push_back(a.p_select);
    } else {
      rejected.emplace_back(a.p_select, i);
    }
  }
  if (opt.pad_to_budget && static_cast<int>(out.patches.size()) < budget) {
    std::stable_sort(rejected.begin(), rejected.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (const auto& [p, i] : rejected) {
      if (static_cast<int>(out.patches.size()) == budget) break;
      out.patches.push_back(pool[i]);
      out.pool_index.push_back(i);
      out.scores.push_back(p);
    }
  }
  return out;
}

seg::SegmenterParams finetune_target(const seg::SegmenterParams& theta0, const StrongPriorSet& strong,
                                     const seg::TrainOptions& opt) {
  if (strong.patches.empty()) throw UsageError("finetune_target: empty strong-prior set");
  const auto samples = rl::pseudo_labels(strong.patches);
  return seg::seg_train(theta0, samples, opt);
}

StrongPriorSet baseline_random(std::span<const flow::PatchSample> pool, int budget, std::mt19937_64& rng) {
  if (budget < 1) throw UsageError("baseline_random: budget must be >= 1");
  StrongPriorSet out;
  out.method = "random";
  out.budget = budget;
  std::vector<std::size_t> idx(pool.size());
  std::iota(idx.begin(), idx.end(), 0);
  const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(budget), pool.size());
  for (std::size_t i = 0; i < take; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
    out.pool_index.push_back(idx[i]);
    out.patches.push_back(pool[idx[i]]);
  }
  return out;
}

StrongPriorSet baseline_oracle(std::span<const flow::PatchSample> pool, int budget,
                               std::span<const BinaryMask> gt_frames) {
  if (budget < 1) throw UsageError("baseline_oracle: budget must be >= 1");
  struct Scored {
    double precision;
    std::size_t area;
    int k, n;
    std::size_t index;
  };
  std::vector<Scored> scored;
  scored.reserve(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const auto& p = pool[i];
    if (p.frame_index < 0 || static_cast<std::size_t>(p.frame_index) >= gt_frames.size())
      throw UsageError("baseline_oracle: no ground truth for frame " + std::to_string(p.frame_index));
    const auto gt = crop(gt_frames[static_cast<std::size_t>(p.frame_index)], p.region);
    scored.push_back({flow::prior_precision(p.prior, gt), p.prior.count(), p.frame_index, p.patch_index, i});
  }
  std::sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
    if (a.precision != b.precision) return a.precision > b.precision;
    if (a.area != b.area) return a.area > b.area;
    if (a.k != b.k) return a.k < b.k;
    if (a.n != b.n) return a.n < b.n;
    return a.index < b.index;
  });
  StrongPriorSet out;
  out.method = "oracle";
  out.budget = budget;
  for (std::size_t i = 0; i < scored.size() && static_cast<int>(i) < budget; ++i) {
    out.patches.push_back(pool[scored[i].index]);
    out.pool_index.push_back(scored[i].index);
    out.scores.push_back(scored[i].precision);
  }
  return out;
}

const MethodResult& AdaptReport::method(const std::string& name) const {
  for (const auto& m : methods)
    if (m.method == name) return m;
  throw UsageError("report has no method " + name);
}

AdaptReport evaluate_crossdomain(const seg::SegmenterParams& theta0,
                                 const std::map<std::string, std::vector<seg::SegmenterParams>>& variants,
                                 std::span<const seg::Sample> target_eval, int budget, std::vector<std::uint64_t> seeds) {
  AdaptReport rep;
  rep.source_only = seg::seg_eval(theta0, target_eval);
  rep.budget = budget;
  rep.seeds = std::move(seeds);
  for (const auto& [name, thetas] : variants) {
    MethodResult m;
    m.method = name;
    for (const auto& t : thetas) m.ious.push_back(seg::seg_eval(t, target_eval));
    if (!m.ious.empty()) {
      m.mean = std::accumulate(m.ious.begin(), m.ious.end(), 0.0) / static_cast<double>(m.ious.size());
      double ss = 0.0;
      for (double v : m.ious) ss += (v - m.mean) * (v - m.mean);
      m.stddev = m.ious.size() > 1 ? std::sqrt(ss / static_cast<double>(m.ious.size() - 1)) : 0.0;
    }
    rep.methods.push_back(std::move(m));
  }
  std::stable_sort(rep.methods.begin(), rep.methods.end(),
                   [](const MethodResult& a, const MethodResult& b) { return a.mean > b.mean; });
  return rep;
}

nlohmann::json to_json(const AdaptReport& r) {
  nlohmann::json methods = nlohmann::json::array();
  for (const auto& m : r.methods)
    methods.push_back({{"method", m.method}, {"mean_iou", m.mean}, {"std_iou", m.stddev}, {"per_seed_iou", m.ious}});
  return {{"source_only_iou", r.source_only}, {"budget", r.budget}, {"seeds", r.seeds}, {"methods", methods}};
}

std::string to_table(const AdaptReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1);
  os << "method        IoU(%)   +/-    budget\n";
  const bool listed = std::any_of(r.methods.begin(), r.methods.end(),
                                  [](const MethodResult& m) { return m.method == "source-only"; });
  if (!listed) os << "source-only   " << std::setw(6) << 100.0 * r.source_only << "    -     " << r.budget << "\n";
  for (const auto& m : r.methods)
    os << std::left << std::setw(14) << m.method << std::right << std::setw(6) << 100.0 * m.mean << "  "
       << std::setw(5) << 100.0 * m.stddev << "   " << r.budget << "\n";
  return os.str();
}

nlohmann::json to_json(const StrongPriorSet& set) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < set.patches.size(); ++i) {
    const auto& p = set.patches[i];
    std::string bits;
    bits.reserve(p.prior.size());
    for (auto b : p.prior.bits()) bits.push_back(b ? '1' : '0');
    nlohmann::json row = {{"frame", p.frame_index},
                          {"patch", p.patch_index},
                          {"rect", {p.region.x0, p.region.y0, p.region.w, p.region.h}},
                          {"prior", bits}};
    if (i < set.scores.size()) row["score"] = set.scores[i];
    rows.push_back(std::move(row));
  }
  return {{"method", set.method}, {"budget", set.budget}, {"patches", rows}};
}

}  // namespace pal::adapt
