#pragma once

#include <filesystem>
#include <vector>

#include "pal/image.hpp"

namespace pal::flow {

/// Per-pixel displacement in pixels from frame t to frame t+1.
struct FlowField {
  int width = 0;
  int height = 0;
  std::vector<double> u;
  std::vector<double> v;

  double magnitude(std::size_t i) const;
};

struct FlowConfig {
  double smoothness = 0.05;  // Horn–Schunck regularizer weight, intensities in [0,1]
  int iterations = 200;
};

/// Horn–Schunck flow, zero initialization, fixed iteration budget.
FlowField estimate_flow(const Image& frame_a, const Image& frame_b, const FlowConfig& cfg = {});

struct MotionPrior {
  BinaryMask mask;
  double tau = 0.75;
};

/// mask[i] = 1 iff |flow_i| > tau.
MotionPrior binarize(const FlowField& flow, double tau);

/// One candidate unit of selection: a patch of frame `frame_index` with its cropped prior.
struct PatchSample {
  int frame_index = 0;
  int patch_index = 0;
  Rect region;
  Image appearance;
  BinaryMask prior;
  // Set when the synthetic benchmark degraded this prior; diagnostics only, never read by selectors.
  bool corrupted = false;
};

/// Tiles the frame with a non-overlapping grid (partial last row/column dropped),
/// numbers tiles row-major, and keeps only tiles whose prior has a foreground pixel.
std::vector<PatchSample> extract_patches(const Image& frame, const MotionPrior& prior, int patch_size,
                                         int frame_index = 0);

/// TP/(TP+FP) of a prior patch against ground truth; 0 for an empty prior.
double prior_precision(const BinaryMask& prior_patch, const BinaryMask& gt_patch);

/// "PFL1" file: 16-byte header (magic, width, height, reserved) then u and v as float32 planes.
void write_flow(const std::filesystem::path& path, const FlowField& flow);
FlowField read_flow(const std::filesystem::path& path);

}  // namespace pal::flow
