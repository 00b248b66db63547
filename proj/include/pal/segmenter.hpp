#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "pal/image.hpp"
#include "pal/params.hpp"

namespace pal::seg {

/// Four 3×3 "same" conv layers, channels 1→8→16→8→1, ReLU between, sigmoid output.
struct SegmenterParams {
  nn::ParamSet set;

  bool operator==(const SegmenterParams&) const = default;
};

SegmenterParams make_segmenter();                   // all zeros
SegmenterParams init_segmenter(std::uint64_t seed);  // He-uniform weights, zero biases

struct ProbMap {
  int width = 0;
  int height = 0;
  std::vector<double> p;
};

/// Per-pixel foreground probability; throws NumericError on non-finite weights.
ProbMap seg_forward(const SegmenterParams& params, const Image& img);

/// Foreground where p > threshold.
BinaryMask threshold(const ProbMap& probs, double t = 0.5);

/// One training or evaluation pair. Targets are human labels or motion-prior pseudo-labels.
struct Sample {
  Image image;
  BinaryMask target;
};

struct LossGrad {
  double loss = 0.0;
  nn::ParamSet grad;
};

inline constexpr double kProbClamp = 1e-7;

/// Mean binary cross-entropy over every pixel of the batch, and its exact gradient.
LossGrad seg_loss_grad(const SegmenterParams& params, std::span<const Sample> batch);

struct TrainOptions {
  double lr = 1e-4;
  int steps = 100;
  int batch_size = 4;
  std::uint64_t seed = 0;
};

/// Adam on shuffled minibatches. `on_step` (optional) sees (step, loss) before each update.
SegmenterParams seg_train(const SegmenterParams& params, std::span<const Sample> data, const TrainOptions& opt,
                          const std::function<void(int, double)>& on_step = {});

/// Mean foreground IoU of thresholded predictions.
double seg_eval(const SegmenterParams& params, std::span<const Sample> eval_set, double t = 0.5);

void save_segmenter(const std::filesystem::path& path, const SegmenterParams& params, const nlohmann::json& meta);
SegmenterParams load_segmenter(const std::filesystem::path& path, nlohmann::json* meta = nullptr);

namespace ref {

/// ReLU on/off state per layer per sample, recorded or replayed by the reference loss.
using ActivationPattern = std::vector<std::vector<std::uint8_t>>;

/// Serial reference loss. With `frozen`, ReLU gates follow that pattern instead of the sign of
/// the pre-activation, which makes the loss smooth around a point for finite differencing.
double seg_loss(const SegmenterParams& params, std::span<const Sample> batch, const ActivationPattern* frozen = nullptr,
                ActivationPattern* record = nullptr);

}  // namespace ref
}  // namespace pal::seg
