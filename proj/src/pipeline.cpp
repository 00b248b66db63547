#include "pal/pipeline.hpp"

#include "pal/errors.hpp"

namespace pal::pipeline {

CandidatePool build_pool(std::span<const synth::Video> videos, const PriorConfig& cfg, std::uint64_t corrupt_seed) {
  CandidatePool pool;
  for (const auto& v : videos)
    for (std::size_t f = 0; f + 1 < v.frames.size(); ++f) {
      pool.frames.push_back({v.id, static_cast<int>(f)});
      pool.gt.push_back(v.masks.at(f));
    }
  const int nframes = static_cast<int>(pool.frames.size());
  pool.priors.resize(pool.frames.size());
  std::vector<std::vector<flow::PatchSample>> per_frame(pool.frames.size());

  // Map frame index back to its video.
  std::vector<const synth::Video*> owner;
  owner.reserve(pool.frames.size());
  for (const auto& v : videos)
    for (std::size_t f = 0; f + 1 < v.frames.size(); ++f) owner.push_back(&v);

#pragma omp parallel for schedule(dynamic)
  for (int k = 0; k < nframes; ++k) {
    const auto& v = *owner[static_cast<std::size_t>(k)];
    const int f = pool.frames[static_cast<std::size_t>(k)].frame;
    const auto fl = flow::estimate_flow(v.frames[f], v.frames[f + 1], cfg.flow);
    auto prior = flow::binarize(fl, cfg.tau);
    per_frame[k] = flow::extract_patches(v.frames[f], prior, cfg.patch, k);
    pool.priors[k] = std::move(prior.mask);
  }
  for (auto& ps : per_frame)
    for (auto& p : ps) pool.patches.push_back(std::move(p));
  if (cfg.corrupt_fraction > 0.0) synth::corrupt_pool(pool.patches, cfg.corrupt_fraction, corrupt_seed);
  return pool;
}

std::vector<seg::Sample> labeled_frames(std::span<const synth::Video> videos) {
  std::vector<seg::Sample> out;
  for (const auto& v : videos)
    for (std::size_t f = 0; f < v.frames.size(); ++f) out.push_back({v.frames[f], v.masks.at(f)});
  return out;
}

double mean_frame_precision(const CandidatePool& pool) {
  double sum = 0.0;
  int n = 0;
  for (std::size_t k = 0; k < pool.priors.size(); ++k) {
    if (pool.priors[k].count() == 0) continue;
    sum += flow::prior_precision(pool.priors[k], pool.gt[k]);
    ++n;
  }
  if (n == 0) throw UsageError("mean_frame_precision: no frame has a non-empty prior");
  return sum / n;
}

}  // namespace pal::pipeline
