#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pal/flow.hpp"
#include "pal/segmenter.hpp"
#include "pal/synth.hpp"

namespace pal::pipeline {

struct PriorConfig {
  flow::FlowConfig flow;
  double tau = 0.75;
  int patch = 32;
  double corrupt_fraction = 0.3;
};

struct FrameRef {
  int video_id = 0;
  int frame = 0;
};

/// Candidate patches of a set of videos plus the per-frame data they index into.
/// Frame index k of a patch refers to `frames[k]`, `gt[k]` and `priors[k]`.
struct CandidatePool {
  std::vector<flow::PatchSample> patches;
  std::vector<FrameRef> frames;
  std::vector<BinaryMask> gt;
  std::vector<BinaryMask> priors;  // uncorrupted full-frame priors
};

/// Forward flow on (t, t+1), prior attached to frame t, tiled and background-filtered,
/// then `corrupt_fraction` of the patches degraded with `corrupt_seed`.
CandidatePool build_pool(std::span<const synth::Video> videos, const PriorConfig& cfg, std::uint64_t corrupt_seed);

/// Every (frame, ground truth) pair of the videos.
std::vector<seg::Sample> labeled_frames(std::span<const synth::Video> videos);

/// Mean over frames with a non-empty prior of the full-frame prior precision.
double mean_frame_precision(const CandidatePool& pool);

}  // namespace pal::pipeline
