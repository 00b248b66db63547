#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace pal::nn {

struct Block {
  std::string name;
  std::vector<int> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

/// Named parameter blocks laid out in one flat vector, so optimizers and
/// checkpoints treat every model the same way.
class ParamSet {
 public:
  std::size_t add(std::string name, std::vector<int> shape);

  std::span<double> block(std::size_t i) { return {values_.data() + blocks_[i].offset, blocks_[i].size}; }
  std::span<const double> block(std::size_t i) const {
    return {values_.data() + blocks_[i].offset, blocks_[i].size};
  }
  std::size_t index_of(std::string_view name) const;

  const std::vector<Block>& blocks() const { return blocks_; }
  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }
  std::size_t size() const { return values_.size(); }

  bool all_finite() const;
  /// Same block names and shapes.
  bool same_layout(const ParamSet& other) const;
  /// A zero-filled set with this layout, used as a gradient accumulator.
  ParamSet zeros_like() const;

  bool operator==(const ParamSet& other) const { return same_layout(other) && values_ == other.values_; }

 private:
  std::vector<Block> blocks_;
  std::vector<double> values_;
};

/// Adam on a flat vector; step() descends along grad.
class Adam {
 public:
  Adam() = default;
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(std::span<double> params, std::span<const double> grad);
  long steps() const { return t_; }
  double lr() const { return lr_; }

 private:
  double lr_ = 1e-4, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  std::vector<double> m_, v_;
  long t_ = 0;
};

/// Flat little-endian float32 blob at `path` plus `path.json` with the block
/// layout and caller-supplied metadata.
void save_checkpoint(const std::filesystem::path& path, const ParamSet& params, const nlohmann::json& meta);

struct LoadedCheckpoint {
  ParamSet params;
  nlohmann::json meta;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Rounds every value through float32 so in-memory parameters equal what a checkpoint round trip yields.
void round_to_float(ParamSet& params);

}  // namespace pal::nn
