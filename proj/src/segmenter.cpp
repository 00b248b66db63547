#include "pal/segmenter.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "pal/errors.hpp"
#include "pal/kernels.hpp"

namespace pal::seg {

using nn::Tensor;

namespace {

constexpr int kChannels[] = {1, 8, 16, 8, 1};
constexpr int kLayers = 4;

std::size_t wblock(int layer) { return static_cast<std::size_t>(2 * layer); }
std::size_t bblock(int layer) { return static_cast<std::size_t>(2 * layer + 1); }

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

Tensor to_tensor(const Image& img) {
  Tensor t(1, img.height(), img.width());
  auto d = img.data();
  std::copy(d.begin(), d.end(), t.v.begin());
  return t;
}

struct Cache {
  Tensor z[kLayers];  // pre-activations
  Tensor a[kLayers];  // a[0] is the input; a[l] = relu(z[l-1]) for l ≥ 1
};

void forward(const SegmenterParams& params, const Image& img, Cache& c) {
  c.a[0] = to_tensor(img);
  for (int l = 0; l < kLayers; ++l) {
    kernels::conv3x3_forward(c.a[l], params.set.block(wblock(l)), params.set.block(bblock(l)), kChannels[l + 1], c.z[l]);
    if (l + 1 < kLayers) {
      c.a[l + 1] = c.z[l];
      for (double& x : c.a[l + 1].v) x = x > 0.0 ? x : 0.0;
    }
  }
}

// dL/dz for the clamped cross-entropy of one pixel.
double bce_dlogit(double p, bool target) {
  if (p < kProbClamp || p > 1.0 - kProbClamp) return 0.0;
  return p - (target ? 1.0 : 0.0);
}

double bce(double p, bool target) {
  const double pc = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
  return target ? -std::log(pc) : -std::log(1.0 - pc);
}

void check_sample(const Sample& s) {
  if (s.image.width() != s.target.width() || s.image.height() != s.target.height())
    throw DimensionError("segmenter: image and target shapes differ");
}

}  // namespace

SegmenterParams make_segmenter() {
  SegmenterParams p;
  for (int l = 0; l < kLayers; ++l) {
    p.set.add("conv" + std::to_string(l + 1) + ".weight", {kChannels[l + 1], kChannels[l], 3, 3});
    p.set.add("conv" + std::to_string(l + 1) + ".bias", {kChannels[l + 1]});
  }
  return p;
}

SegmenterParams init_segmenter(std::uint64_t seed) {
  auto p = make_segmenter();
  std::mt19937_64 rng(seed);
  for (int l = 0; l < kLayers; ++l) {
    const double bound = std::sqrt(6.0 / (kChannels[l] * 9.0));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& w : p.set.block(wblock(l))) w = dist(rng);
  }
  return p;
}

ProbMap seg_forward(const SegmenterParams& params, const Image& img) {
  if (!params.set.all_finite()) throw NumericError("seg_forward: non-finite segmenter weights");
  Cache c;
  forward(params, img, c);
  ProbMap out{img.width(), img.height(), std::vector<double>(img.size())};
  const auto& z = c.z[kLayers - 1].v;
  for (std::size_t i = 0; i < z.size(); ++i) out.p[i] = sigmoid(z[i]);
  return out;
}

BinaryMask threshold(const ProbMap& probs, double t) {
  std::vector<std::uint8_t> bits(probs.p.size());
  for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = probs.p[i] > t ? 1 : 0;
  return BinaryMask(probs.width, probs.height, std::move(bits));
}

LossGrad seg_loss_grad(const SegmenterParams& params, std::span<const Sample> batch) {
  if (batch.empty()) throw UsageError("seg_loss_grad: empty batch");
  std::size_t total = 0;
  for (const auto& s : batch) {
    check_sample(s);
    total += s.image.size();
  }
  const double inv_n = 1.0 / static_cast<double>(total);
  LossGrad out{0.0, params.set.zeros_like()};
  Cache c;
  Tensor g, gin;
  for (const auto& s : batch) {
    forward(params, s.image, c);
    const auto& z = c.z[kLayers - 1];
    g = Tensor(1, z.h, z.w);
    auto bits = s.target.bits();
    for (std::size_t i = 0; i < z.v.size(); ++i) {
      const double p = sigmoid(z.v[i]);
      out.loss += bce(p, bits[i] != 0) * inv_n;
      g.v[i] = bce_dlogit(p, bits[i] != 0) * inv_n;
    }
    for (int l = kLayers - 1; l >= 0; --l) {
      kernels::conv3x3_backward(c.a[l], params.set.block(wblock(l)), g, l > 0 ? &gin : nullptr,
                                out.grad.block(wblock(l)), out.grad.block(bblock(l)));
      if (l == 0) break;
      const auto& zp = c.z[l - 1].v;
      for (std::size_t i = 0; i < gin.v.size(); ++i)
        if (!(zp[i] > 0.0)) gin.v[i] = 0.0;
      std::swap(g, gin);
    }
  }
  return out;
}

SegmenterParams seg_train(const SegmenterParams& params, std::span<const Sample> data, const TrainOptions& opt,
                          const std::function<void(int, double)>& on_step) {
  if (!(opt.lr > 0.0)) throw UsageError("seg_train: learning rate must be > 0");
  if (opt.steps < 0 || opt.batch_size < 1) throw UsageError("seg_train: steps >= 0 and batch size >= 1 required");
  SegmenterParams cur = params;
  if (opt.steps == 0) return cur;
  if (data.empty()) throw UsageError("seg_train: empty training set");

  std::mt19937_64 rng(opt.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  const std::size_t bs = std::min<std::size_t>(static_cast<std::size_t>(opt.batch_size), data.size());
  std::vector<Sample> batch;
  batch.reserve(bs);
  nn::Adam adam(opt.lr);

  for (int step = 0; step < opt.steps; ++step) {
    batch.clear();
    if (bs == data.size()) {
      batch.assign(data.begin(), data.end());
    } else {
      while (batch.size() < bs) {
        if (cursor == order.size()) {
          std::shuffle(order.begin(), order.end(), rng);
          cursor = 0;
        }
        batch.push_back(data[order[cursor++]]);
      }
    }
    auto lg = seg_loss_grad(cur, batch);
    if (!std::isfinite(lg.loss) || !lg.grad.all_finite())
      throw NumericError("seg_train: non-finite loss at step " + std::to_string(step));
    if (on_step) on_step(step, lg.loss);
    adam.step(cur.set.values(), lg.grad.values());
  }
  if (!cur.set.all_finite()) throw NumericError("seg_train: parameters diverged after " + std::to_string(opt.steps) + " steps");
  return cur;
}

double seg_eval(const SegmenterParams& params, std::span<const Sample> eval_set, double t) {
  if (eval_set.empty()) throw UsageError("seg_eval: empty evaluation set");
  double sum = 0.0;
  for (const auto& s : eval_set) {
    check_sample(s);
    sum += iou(threshold(seg_forward(params, s.image), t), s.target);
  }
  return sum / static_cast<double>(eval_set.size());
}

void save_segmenter(const std::filesystem::path& path, const SegmenterParams& params, const nlohmann::json& meta) {
  nlohmann::json m = meta;
  m["model"] = "segmenter";
  nn::save_checkpoint(path, params.set, m);
}

SegmenterParams load_segmenter(const std::filesystem::path& path, nlohmann::json* meta) {
  auto ck = nn::load_checkpoint(path);
  SegmenterParams p;
  p.set = std::move(ck.params);
  if (!p.set.same_layout(make_segmenter().set)) throw IoError("checkpoint is not a segmenter: " + path.string());
  if (meta) *meta = std::move(ck.meta);
  return p;
}

namespace ref {

double seg_loss(const SegmenterParams& params, std::span<const Sample> batch, const ActivationPattern* frozen,
                ActivationPattern* record) {
  std::size_t total = 0;
  for (const auto& s : batch) total += s.image.size();
  if (record) record->clear();
  double loss = 0.0;
  std::size_t gate = 0;
  for (const auto& s : batch) {
    Tensor a = to_tensor(s.image), z;
    for (int l = 0; l < kLayers; ++l) {
      kernels::ref::conv3x3_forward(a, params.set.block(wblock(l)), params.set.block(bblock(l)), kChannels[l + 1], z);
      if (l + 1 == kLayers) break;
      std::vector<std::uint8_t> on(z.v.size());
      for (std::size_t i = 0; i < z.v.size(); ++i)
        on[i] = frozen ? (*frozen)[gate][i] : static_cast<std::uint8_t>(z.v[i] > 0.0);
      if (record) record->push_back(on);
      ++gate;
      a = z;
      for (std::size_t i = 0; i < a.v.size(); ++i) a.v[i] = on[i] ? z.v[i] : 0.0;
    }
    auto bits = s.target.bits();
    for (std::size_t i = 0; i < z.v.size(); ++i) loss += bce(sigmoid(z.v[i]), bits[i] != 0);
  }
  return loss / static_cast<double>(total);
}

}  // namespace ref
}  // namespace pal::seg
