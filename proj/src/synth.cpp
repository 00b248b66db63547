#include "pal/synth.hpp"

#include <algorithm>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "pal/errors.hpp"

namespace pal::synth {

namespace fs = std::filesystem;

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0) {
  return splitmix(splitmix(splitmix(a) ^ b) ^ c);
}

float quantize(double v) { return static_cast<float>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)) / 255.0f; }

struct Background {
  double a1, l1, p1, a2, l2, p2;
};

Background background_params(const SceneSpec& spec, int video_id) {
  std::mt19937_64 rng(mix(spec.background_seed, static_cast<std::uint64_t>(video_id), 0xb9));
  std::uniform_real_distribution<double> ang(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> l1(6.0, 10.0), l2(3.0, 6.0);
  Background b{};
  b.a1 = ang(rng);
  b.l1 = l1(rng);
  b.p1 = ang(rng);
  b.a2 = ang(rng);
  b.l2 = l2(rng);
  b.p2 = ang(rng);
  return b;
}

double background_value(const Background& b, double x, double y) {
  const double tau = 2.0 * std::numbers::pi;
  return 0.25 + 0.11 * std::sin(tau * (x * std::cos(b.a1) + y * std::sin(b.a1)) / b.l1 + b.p1) +
         0.06 * std::sin(tau * (x * std::cos(b.a2) + y * std::sin(b.a2)) / b.l2 + b.p2);
}

double rho(const BlobState& s, double x, double y) {
  const double dx = (x - s.cx) / s.rx, dy = (y - s.cy) / s.ry;
  return std::sqrt(dx * dx + dy * dy);
}

double blob_texture(const BlobState& s, double x, double y) {
  const double u = x - s.cx, v = y - s.cy;
  return s.base +
         s.amp * std::sin(2.0 * std::numbers::pi * (u * std::cos(s.theta) + v * std::sin(s.theta)) / s.wavelength + s.phase);
}

double apply_transform(const DomainTransform& t, double x, std::mt19937_64& noise) {
  std::normal_distribution<double> n(0.0, 1.0);
  switch (t.kind) {
    case TransformKind::Identity:
      return x;
    case TransformKind::InversionGamma:
      x = std::pow(1.0 - x, t.gamma);
      break;
    case TransformKind::Noise:
      break;
  }
  if (t.noise_sigma > 0.0) x += t.noise_sigma * n(noise);
  return std::clamp(x, 0.0, 1.0);
}

int videos_in(const SceneSpec& s, Split split) {
  switch (split) {
    case Split::SourceTrain: return s.source_train_videos;
    case Split::SourceVideos: return s.source_video_videos;
    case Split::SourceHoldout: return s.source_holdout_videos;
    case Split::TargetVideos: return s.target_video_videos;
    case Split::TargetEval: return s.target_eval_videos;
  }
  return 0;
}

std::string numbered(const char* fmt, int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, fmt, i);
  return buf;
}

}  // namespace

void validate(const SceneSpec& s) {
  if (s.width < 8 || s.height < 8) throw UsageError("scene: frame must be at least 8x8");
  if (s.min_blobs < 1 || s.max_blobs < s.min_blobs) throw UsageError("scene: blob count range invalid");
  if (s.min_radius < 1.0 || s.max_radius < s.min_radius) throw UsageError("scene: radius range invalid");
  if (2.0 * s.max_radius + 4.0 > std::min(s.width, s.height)) throw UsageError("scene: blobs do not fit the frame");
  if (s.min_speed < 0.0 || s.max_speed < s.min_speed || s.max_speed > 3.0)
    throw UsageError("scene: speeds must lie in [0, 3] px/frame");
  if (s.frames_per_video < 2) throw UsageError("scene: need at least 2 frames per video");
  if (s.source_train_videos < 0 || s.source_video_videos < 0 || s.source_holdout_videos < 0 ||
      s.target_video_videos < 0 || s.target_eval_videos < 0)
    throw UsageError("scene: split sizes must be non-negative");
}

std::string split_name(Split s) {
  switch (s) {
    case Split::SourceTrain: return "source_train";
    case Split::SourceVideos: return "source_videos";
    case Split::SourceHoldout: return "source_holdout";
    case Split::TargetVideos: return "target_videos";
    case Split::TargetEval: return "target_eval";
  }
  return "";
}

Split split_from_name(const std::string& name) {
  for (auto s : kAllSplits)
    if (split_name(s) == name) return s;
  throw UsageError("unknown split: " + name);
}

bool split_is_target(Split s) { return s == Split::TargetVideos || s == Split::TargetEval; }
bool split_is_labeled(Split s) { return s == Split::SourceTrain || s == Split::SourceHoldout || s == Split::TargetEval; }

double background_at(const SceneSpec& spec, int video_id, double x, double y) {
  return background_value(background_params(spec, video_id), x, y);
}

BinaryMask rasterize(const std::vector<BlobState>& blobs, int width, int height) {
  BinaryMask m(width, height);
  for (const auto& b : blobs)
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        if (rho(b, x, y) <= 1.0) m.set(x, y, true);
  return m;
}

Video render_video(const SceneSpec& spec, const DomainTransform& transform, std::uint64_t seed, int video_id,
                   Split split) {
  validate(spec);
  std::mt19937_64 rng(mix(seed, static_cast<std::uint64_t>(video_id), 1));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  const int nblobs = spec.min_blobs + static_cast<int>(unit(rng) * (spec.max_blobs - spec.min_blobs + 1));
  std::vector<BlobState> blobs(static_cast<std::size_t>(std::min(nblobs, spec.max_blobs)));
  std::vector<double> vx(blobs.size()), vy(blobs.size());
  for (std::size_t i = 0; i < blobs.size(); ++i) {
    auto& b = blobs[i];
    b.rx = uni(spec.min_radius, spec.max_radius);
    b.ry = uni(spec.min_radius, spec.max_radius);
    b.cx = uni(b.rx + 1.0, spec.width - b.rx - 2.0);
    b.cy = uni(b.ry + 1.0, spec.height - b.ry - 2.0);
    b.base = uni(0.72, 0.84);
    b.amp = uni(0.12, 0.16);
    b.wavelength = uni(5.0, 8.0);
    b.theta = uni(0.0, std::numbers::pi);
    b.phase = uni(0.0, 2.0 * std::numbers::pi);
    const double speed = uni(spec.min_speed, spec.max_speed);
    const double dir = uni(0.0, 2.0 * std::numbers::pi);
    vx[i] = speed * std::cos(dir);
    vy[i] = speed * std::sin(dir);
  }

  const auto bg = background_params(spec, video_id);
  const bool target = split_is_target(split);
  Video video;
  video.id = video_id;
  video.split = split;
  for (int f = 0; f < spec.frames_per_video; ++f) {
    std::vector<float> px(static_cast<std::size_t>(spec.width) * spec.height);
    std::mt19937_64 noise(mix(seed, static_cast<std::uint64_t>(video_id), 1000 + static_cast<std::uint64_t>(f)));
    for (int y = 0; y < spec.height; ++y)
      for (int x = 0; x < spec.width; ++x) {
        double v = background_value(bg, x, y);
        for (const auto& b : blobs) {
          const double d = (rho(b, x, y) - 1.0) * std::min(b.rx, b.ry);
          const double alpha = std::clamp(0.5 - d, 0.0, 1.0);
          if (alpha > 0.0) v = (1.0 - alpha) * v + alpha * blob_texture(b, x, y);
        }
        if (target) v = apply_transform(transform, quantize(v), noise);
        px[static_cast<std::size_t>(y) * spec.width + x] = quantize(v);
      }
    video.frames.emplace_back(spec.width, spec.height, std::move(px));
    video.masks.push_back(rasterize(blobs, spec.width, spec.height));
    video.blobs.push_back(blobs);

    for (std::size_t i = 0; i < blobs.size(); ++i) {
      auto& b = blobs[i];
      if (unit(rng) < spec.turn_probability) {
        const double speed = std::hypot(vx[i], vy[i]);
        const double dir = uni(0.0, 2.0 * std::numbers::pi);
        vx[i] = speed * std::cos(dir);
        vy[i] = speed * std::sin(dir);
      }
      const double lo_x = b.rx + 1.0, hi_x = spec.width - b.rx - 2.0;
      const double lo_y = b.ry + 1.0, hi_y = spec.height - b.ry - 2.0;
      if (b.cx + vx[i] < lo_x || b.cx + vx[i] > hi_x) vx[i] = -vx[i];
      if (b.cy + vy[i] < lo_y || b.cy + vy[i] > hi_y) vy[i] = -vy[i];
      b.cx = std::clamp(b.cx + vx[i], lo_x, hi_x);
      b.cy = std::clamp(b.cy + vy[i], lo_y, hi_y);
    }
  }
  return video;
}

Benchmark generate_benchmark(const SceneSpec& spec, const DomainTransform& transform, std::uint64_t seed) {
  validate(spec);
  Benchmark bm;
  bm.manifest.seed = seed;
  bm.manifest.spec = spec;
  bm.manifest.transform = transform;
  int next_id = 0;
  for (auto split : kAllSplits) {
    const auto si = static_cast<std::size_t>(split);
    for (int i = 0; i < videos_in(spec, split); ++i) {
      const int vid = next_id++;
      bm.videos[si].push_back(render_video(spec, transform, seed, vid, split));
      SplitEntry e;
      e.video_id = vid;
      const std::string dir = split_name(split) + "/" + numbered("%04d", vid) + "/";
      for (int f = 0; f < spec.frames_per_video; ++f) {
        e.frames.push_back(dir + numbered("frame_%03d.pgm", f));
        e.masks.push_back(dir + numbered("mask_%03d.psm", f));
      }
      bm.manifest.splits[si].push_back(std::move(e));
    }
  }
  return bm;
}

nlohmann::json to_json(const SceneSpec& s) {
  return {{"width", s.width},
          {"height", s.height},
          {"min_blobs", s.min_blobs},
          {"max_blobs", s.max_blobs},
          {"min_radius", s.min_radius},
          {"max_radius", s.max_radius},
          {"min_speed", s.min_speed},
          {"max_speed", s.max_speed},
          {"turn_probability", s.turn_probability},
          {"background_seed", s.background_seed},
          {"frames_per_video", s.frames_per_video},
          {"contrast_margin", s.contrast_margin},
          {"source_train_videos", s.source_train_videos},
          {"source_video_videos", s.source_video_videos},
          {"source_holdout_videos", s.source_holdout_videos},
          {"target_video_videos", s.target_video_videos},
          {"target_eval_videos", s.target_eval_videos}};
}

SceneSpec scene_from_json(const nlohmann::json& j) {
  SceneSpec s;
  s.width = j.value("width", s.width);
  s.height = j.value("height", s.height);
  s.min_blobs = j.value("min_blobs", s.min_blobs);
  s.max_blobs = j.value("max_blobs", s.max_blobs);
  s.min_radius = j.value("min_radius", s.min_radius);
  s.max_radius = j.value("max_radius", s.max_radius);
  s.min_speed = j.value("min_speed", s.min_speed);
  s.max_speed = j.value("max_speed", s.max_speed);
  s.turn_probability = j.value("turn_probability", s.turn_probability);
  s.background_seed = j.value("background_seed", s.background_seed);
  s.frames_per_video = j.value("frames_per_video", s.frames_per_video);
  s.contrast_margin = j.value("contrast_margin", s.contrast_margin);
  s.source_train_videos = j.value("source_train_videos", s.source_train_videos);
  s.source_video_videos = j.value("source_video_videos", s.source_video_videos);
  s.source_holdout_videos = j.value("source_holdout_videos", s.source_holdout_videos);
  s.target_video_videos = j.value("target_video_videos", s.target_video_videos);
  s.target_eval_videos = j.value("target_eval_videos", s.target_eval_videos);
  validate(s);
  return s;
}

nlohmann::json to_json(const DomainTransform& t) {
  const char* kind = t.kind == TransformKind::Identity ? "identity"
                     : t.kind == TransformKind::Noise  ? "noise"
                                                       : "inversion_gamma";
  return {{"kind", kind}, {"gamma", t.gamma}, {"noise_sigma", t.noise_sigma}};
}

DomainTransform transform_from_json(const nlohmann::json& j) {
  DomainTransform t;
  const auto kind = j.value("kind", std::string("inversion_gamma"));
  if (kind == "identity") t = DomainTransform::identity();
  else if (kind == "noise") t.kind = TransformKind::Noise;
  else if (kind == "inversion_gamma") t.kind = TransformKind::InversionGamma;
  else throw UsageError("unknown domain transform: " + kind);
  t.gamma = j.value("gamma", t.gamma);
  t.noise_sigma = j.value("noise_sigma", t.noise_sigma);
  if (!(t.gamma > 0.0) || t.noise_sigma < 0.0) throw UsageError("domain transform: gamma > 0 and sigma >= 0 required");
  return t;
}

SplitManifest generate(const SceneSpec& spec, const DomainTransform& transform, std::uint64_t seed, const fs::path& root) {
  auto bm = generate_benchmark(spec, transform, seed);
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw IoError("cannot create " + root.string() + ": " + ec.message());
  nlohmann::json splits = nlohmann::json::object();
  for (auto split : kAllSplits) {
    const auto si = static_cast<std::size_t>(split);
    auto& arr = splits[split_name(split)] = nlohmann::json::array();
    for (std::size_t v = 0; v < bm.videos[si].size(); ++v) {
      const auto& video = bm.videos[si][v];
      const auto& entry = bm.manifest.splits[si][v];
      fs::create_directories((root / entry.frames.front()).parent_path(), ec);
      if (ec) throw IoError("cannot create directory for " + entry.frames.front() + ": " + ec.message());
      for (std::size_t f = 0; f < video.frames.size(); ++f) {
        write_pgm(root / entry.frames[f], video.frames[f]);
        write_psm(root / entry.masks[f], video.masks[f]);
      }
      arr.push_back({{"video_id", entry.video_id}, {"frames", entry.frames}, {"masks", entry.masks}});
    }
  }
  nlohmann::json manifest = {{"format", "pal-synth-1"},
                             {"seed", seed},
                             {"scene", to_json(spec)},
                             {"transform", to_json(transform)},
                             {"splits", splits}};
  std::ofstream os(root / "manifest.json");
  if (!os) throw IoError("cannot write " + (root / "manifest.json").string());
  os << manifest.dump(2) << "\n";
  return bm.manifest;
}

Benchmark load_benchmark(const fs::path& root) {
  const auto mpath = root / "manifest.json";
  std::ifstream is(mpath);
  if (!is) throw IoError("missing benchmark manifest: " + mpath.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed manifest " + mpath.string() + ": " + e.what());
  }
  Benchmark bm;
  bm.manifest.seed = j.at("seed");
  bm.manifest.spec = scene_from_json(j.at("scene"));
  bm.manifest.transform = transform_from_json(j.at("transform"));
  for (auto split : kAllSplits) {
    const auto si = static_cast<std::size_t>(split);
    for (const auto& ev : j.at("splits").at(split_name(split))) {
      SplitEntry e;
      e.video_id = ev.at("video_id");
      e.frames = ev.at("frames").get<std::vector<std::string>>();
      e.masks = ev.at("masks").get<std::vector<std::string>>();
      Video v;
      v.id = e.video_id;
      v.split = split;
      for (const auto& f : e.frames) v.frames.push_back(read_pgm(root / f));
      for (const auto& m : e.masks) v.masks.push_back(read_psm(root / m));
      bm.videos[si].push_back(std::move(v));
      bm.manifest.splits[si].push_back(std::move(e));
    }
  }
  return bm;
}

std::string corrupt_mode_name(CorruptMode m) {
  switch (m) {
    case CorruptMode::Dilate: return "dilate";
    case CorruptMode::Erode: return "erode";
    case CorruptMode::Shift: return "shift";
    case CorruptMode::Speckle: return "speckle";
  }
  return "";
}

BinaryMask corrupt_prior(const BinaryMask& mask, const Corruption& c) {
  if (!(c.magnitude >= 0.0)) throw UsageError("corrupt_prior: magnitude must be >= 0");
  const int w = mask.width(), h = mask.height();
  if (c.magnitude == 0.0) return mask;
  BinaryMask out(w, h);
  switch (c.mode) {
    case CorruptMode::Dilate:
    case CorruptMode::Erode: {
      const int r = static_cast<int>(std::lround(c.magnitude));
      const bool dilate = c.mode == CorruptMode::Dilate;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          bool v = !dilate;
          for (int dy = -r; dy <= r && v != dilate; ++dy)
            for (int dx = -r; dx <= r; ++dx) {
              if (dx * dx + dy * dy > r * r) continue;
              const int sx = x + dx, sy = y + dy;
              // Outside the patch counts as foreground for erosion and is ignored for dilation.
              const bool s = (sx < 0 || sy < 0 || sx >= w || sy >= h) ? !dilate : mask.at(sx, sy);
              if (dilate && s) { v = true; break; }
              if (!dilate && !s) { v = false; break; }
            }
          out.set(x, y, v);
        }
      break;
    }
    case CorruptMode::Shift: {
      const int dx = static_cast<int>(std::lround(c.magnitude * std::cos(c.angle)));
      const int dy = static_cast<int>(std::lround(c.magnitude * std::sin(c.angle)));
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const int tx = x + dx, ty = y + dy;
          if (mask.at(x, y) && tx >= 0 && ty >= 0 && tx < w && ty < h) out.set(tx, ty, true);
        }
      break;
    }
    case CorruptMode::Speckle: {
      std::mt19937_64 rng(c.seed);
      std::uniform_real_distribution<double> u(0.0, 1.0);
      const double p = std::min(c.magnitude, 1.0);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out.set(x, y, u(rng) < p ? !mask.at(x, y) : mask.at(x, y));
      break;
    }
  }
  return out;
}

void corrupt_pool(std::vector<flow::PatchSample>& pool, double fraction, std::uint64_t seed) {
  if (fraction < 0.0 || fraction > 1.0) throw UsageError("corrupt_pool: fraction must lie in [0,1]");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& patch : pool) {
    if (u(rng) >= fraction) continue;
    Corruption c;
    // Erosion is left out: it raises precision, so it never turns a prior into a weak one.
    constexpr CorruptMode kModes[] = {CorruptMode::Dilate, CorruptMode::Shift, CorruptMode::Speckle};
    c.mode = kModes[static_cast<int>(u(rng) * 3.0) % 3];
    switch (c.mode) {
      case CorruptMode::Dilate: c.magnitude = 6.0 + std::floor(u(rng) * 5.0); break;
      case CorruptMode::Shift: c.magnitude = 10.0 + 6.0 * u(rng); break;
      default: c.magnitude = 0.45 + 0.05 * u(rng); break;
    }
    c.angle = 2.0 * std::numbers::pi * u(rng);
    c.seed = rng();
    auto m = corrupt_prior(patch.prior, c);
    if (m.count() == 0) continue;
    patch.prior = std::move(m);
    patch.corrupted = true;
  }
}

}  // namespace pal::synth
