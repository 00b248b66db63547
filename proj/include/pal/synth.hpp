#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "pal/flow.hpp"
#include "pal/image.hpp"

namespace pal::synth {

struct SceneSpec {
  int width = 64;
  int height = 64;
  int min_blobs = 1;
  int max_blobs = 2;
  double min_radius = 9.0;   // ellipse semi-axes, pixels
  double max_radius = 14.0;
  double min_speed = 1.0;    // px/frame
  double max_speed = 1.6;
  double turn_probability = 0.15;
  std::uint64_t background_seed = 7;
  int frames_per_video = 8;
  double contrast_margin = 0.05;
  // Videos per split, in SplitManifest role order.
  int source_train_videos = 25;
  int source_video_videos = 8;
  int source_holdout_videos = 3;
  int target_video_videos = 8;
  int target_eval_videos = 4;
};

enum class TransformKind { Identity, InversionGamma, Noise };

/// Per-pixel intensity mapping applied to target-domain frames; output clamped to [0,1].
struct DomainTransform {
  TransformKind kind = TransformKind::InversionGamma;
  double gamma = 1.6;
  double noise_sigma = 0.05;

  static DomainTransform identity() { return {TransformKind::Identity, 1.0, 0.0}; }
};

/// Throws UsageError when the spec cannot produce a valid benchmark.
void validate(const SceneSpec& spec);

/// Roles of the five splits, in on-disk order.
enum class Split { SourceTrain, SourceVideos, SourceHoldout, TargetVideos, TargetEval };
inline constexpr std::array<Split, 5> kAllSplits = {Split::SourceTrain, Split::SourceVideos, Split::SourceHoldout,
                                                     Split::TargetVideos, Split::TargetEval};
std::string split_name(Split s);
Split split_from_name(const std::string& name);
bool split_is_target(Split s);
bool split_is_labeled(Split s);

/// One blob's geometry and texture at a given frame.
struct BlobState {
  double cx = 0, cy = 0;  // center, pixel coordinates
  double rx = 0, ry = 0;  // semi-axes
  double base = 0.8;      // mean intensity
  double amp = 0.1;       // texture amplitude
  double wavelength = 9.0;
  double theta = 0.0;     // texture orientation
  double phase = 0.0;
};

struct Video {
  int id = 0;
  Split split = Split::SourceTrain;
  std::vector<Image> frames;
  std::vector<BinaryMask> masks;
  std::vector<std::vector<BlobState>> blobs;  // per frame, drawing order
};

/// Renders one video. A pure function of (spec, transform, seed, video_id, split domain).
Video render_video(const SceneSpec& spec, const DomainTransform& transform, std::uint64_t seed, int video_id,
                   Split split);

/// Source-domain background intensity at (x, y) for a video, before any transform.
double background_at(const SceneSpec& spec, int video_id, double x, double y);

/// Rasterizes the union of blob supports: pixel centers inside any ellipse.
BinaryMask rasterize(const std::vector<BlobState>& blobs, int width, int height);

struct SplitEntry {
  int video_id = 0;
  std::vector<std::string> frames;  // paths relative to the benchmark root
  std::vector<std::string> masks;
};

struct SplitManifest {
  std::uint64_t seed = 0;
  SceneSpec spec;
  DomainTransform transform;
  std::array<std::vector<SplitEntry>, 5> splits;

  const std::vector<SplitEntry>& entries(Split s) const { return splits[static_cast<std::size_t>(s)]; }
};

struct Benchmark {
  SplitManifest manifest;
  std::array<std::vector<Video>, 5> videos;

  const std::vector<Video>& split(Split s) const { return videos[static_cast<std::size_t>(s)]; }
};

/// Builds every split in memory. Video ids are assigned consecutively across splits.
Benchmark generate_benchmark(const SceneSpec& spec, const DomainTransform& transform, std::uint64_t seed);

/// Writes `<root>/<split>/<video_id>/frame_%03d.pgm`, `mask_%03d.psm` and `<root>/manifest.json`.
SplitManifest generate(const SceneSpec& spec, const DomainTransform& transform, std::uint64_t seed,
                       const std::filesystem::path& root);

/// Reads a benchmark previously written by generate(); blob tracks are not stored and stay empty.
Benchmark load_benchmark(const std::filesystem::path& root);

nlohmann::json to_json(const SceneSpec& spec);
SceneSpec scene_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DomainTransform& t);
DomainTransform transform_from_json(const nlohmann::json& j);

enum class CorruptMode { Dilate, Erode, Shift, Speckle };
std::string corrupt_mode_name(CorruptMode m);

struct Corruption {
  CorruptMode mode = CorruptMode::Dilate;
  double magnitude = 0.0;  // disk radius (dilate/erode), pixels (shift), flip probability (speckle)
  double angle = 0.0;      // shift direction, radians; 0 = +x
  std::uint64_t seed = 0;  // speckle pattern
};

/// Deterministic degradation of a patch mask; magnitude 0 is the identity.
BinaryMask corrupt_prior(const BinaryMask& mask, const Corruption& c);

/// Degrades the prior of roughly `fraction` of the patches (dilate, shift or speckle at a random
/// magnitude) and flags them. Corruptions that would leave an empty mask are skipped.
void corrupt_pool(std::vector<flow::PatchSample>& pool, double fraction, std::uint64_t seed);

}  // namespace pal::synth
