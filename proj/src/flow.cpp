#include "pal/flow.hpp"

#include <cmath>

#include "pal/binio.hpp"
#include "pal/errors.hpp"
#include "pal/kernels.hpp"

namespace pal::flow {

double FlowField::magnitude(std::size_t i) const { return std::sqrt(u[i] * u[i] + v[i] * v[i]); }

FlowField estimate_flow(const Image& frame_a, const Image& frame_b, const FlowConfig& cfg) {
  if (frame_a.width() != frame_b.width() || frame_a.height() != frame_b.height())
    throw DimensionError("estimate_flow: frame shapes differ");
  if (cfg.iterations < 1) throw UsageError("estimate_flow: iterations must be >= 1");
  if (!(cfg.smoothness > 0.0)) throw UsageError("estimate_flow: smoothness weight must be > 0");
  const auto terms = kernels::flow_terms(frame_a.data(), frame_b.data(), frame_a.width(), frame_a.height());
  FlowField f;
  f.width = frame_a.width();
  f.height = frame_a.height();
  f.u.assign(frame_a.size(), 0.0);
  f.v.assign(frame_a.size(), 0.0);
  kernels::horn_schunck(terms, cfg.smoothness, cfg.iterations, f.u, f.v);
  return f;
}

MotionPrior binarize(const FlowField& flow, double tau) {
  if (!(tau >= 0.0)) throw UsageError("binarize: tau must be >= 0");
  std::vector<std::uint8_t> bits(flow.u.size());
  for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = flow.magnitude(i) > tau ? 1 : 0;
  return MotionPrior{BinaryMask(flow.width, flow.height, std::move(bits)), tau};
}

std::vector<PatchSample> extract_patches(const Image& frame, const MotionPrior& prior, int patch_size,
                                         int frame_index) {
  if (frame.width() != prior.mask.width() || frame.height() != prior.mask.height())
    throw DimensionError("extract_patches: frame and prior shapes differ");
  if (patch_size <= 0 || patch_size > frame.width() || patch_size > frame.height())
    throw UsageError("extract_patches: patch size must be in [1, frame extent]");
  const int cols = frame.width() / patch_size;
  const int rows = frame.height() / patch_size;
  std::vector<PatchSample> out;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const Rect region{c * patch_size, r * patch_size, patch_size, patch_size};
      auto m = crop(prior.mask, region);
      if (m.count() == 0) continue;
      out.push_back(PatchSample{frame_index, r * cols + c, region, crop(frame, region), std::move(m), false});
    }
  return out;
}

double prior_precision(const BinaryMask& prior_patch, const BinaryMask& gt_patch) {
  if (prior_patch.width() != gt_patch.width() || prior_patch.height() != gt_patch.height())
    throw DimensionError("prior_precision: shapes differ");
  std::size_t tp = 0, pos = 0;
  auto p = prior_patch.bits();
  auto g = gt_patch.bits();
  for (std::size_t i = 0; i < p.size(); ++i) {
    pos += p[i];
    tp += p[i] & g[i];
  }
  return pos == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(pos);
}

void write_flow(const std::filesystem::path& path, const FlowField& flow) {
  auto os = binio::open_out(path.string());
  os.write("PFL1", 4);
  binio::put_u32(os, static_cast<std::uint32_t>(flow.width));
  binio::put_u32(os, static_cast<std::uint32_t>(flow.height));
  binio::put_u32(os, 0);
  for (double x : flow.u) binio::put_f32(os, static_cast<float>(x));
  for (double x : flow.v) binio::put_f32(os, static_cast<float>(x));
  if (!os) throw IoError("write failed: " + path.string());
}

FlowField read_flow(const std::filesystem::path& path) {
  auto is = binio::open_in(path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "PFL1") throw IoError("bad PFL magic: " + path.string());
  FlowField f;
  f.width = static_cast<int>(binio::get_u32(is));
  f.height = static_cast<int>(binio::get_u32(is));
  binio::get_u32(is);
  if (f.width <= 0 || f.height <= 0 || f.width > (1 << 16) || f.height > (1 << 16))
    throw IoError("bad PFL extent: " + path.string());
  const std::size_t n = static_cast<std::size_t>(f.width) * f.height;
  f.u.resize(n);
  f.v.resize(n);
  for (auto& x : f.u) x = binio::get_f32(is);
  for (auto& x : f.v) x = binio::get_f32(is);
  if (!is) throw IoError("truncated PFL: " + path.string());
  for (std::size_t i = 0; i < n; ++i)
    if (!std::isfinite(f.u[i]) || !std::isfinite(f.v[i])) throw IoError("non-finite flow in " + path.string());
  return f;
}

}  // namespace pal::flow
