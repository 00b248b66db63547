#include "pal/policy.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pal/errors.hpp"
#include "pal/kernels.hpp"

namespace pal::policy {

using nn::Tensor;

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// y = W x (+ b), W row-major [rows][cols].
void matvec(std::span<const double> w, std::span<const double> x, int rows, int cols, std::vector<double>& y,
            std::span<const double> b = {}) {
  y.assign(static_cast<std::size_t>(rows), 0.0);
  for (int r = 0; r < rows; ++r) {
    double s = b.empty() ? 0.0 : b[r];
    const double* wr = w.data() + static_cast<std::size_t>(r) * cols;
    for (int c = 0; c < cols; ++c) s += wr[c] * x[c];
    y[r] = s;
  }
}

// x += Wᵀ g
void matvec_t_acc(std::span<const double> w, std::span<const double> g, int rows, int cols, std::span<double> x) {
  for (int r = 0; r < rows; ++r) {
    const double* wr = w.data() + static_cast<std::size_t>(r) * cols;
    for (int c = 0; c < cols; ++c) x[c] += wr[c] * g[r];
  }
}

// G += g xᵀ
void outer_acc(std::span<double> gw, std::span<const double> g, std::span<const double> x, int rows, int cols) {
  for (int r = 0; r < rows; ++r) {
    double* gr = gw.data() + static_cast<std::size_t>(r) * cols;
    for (int c = 0; c < cols; ++c) gr[c] += g[r] * x[c];
  }
}

Tensor to_tensor(std::span<const float> v, int side) {
  Tensor t(1, side, side);
  std::copy(v.begin(), v.end(), t.v.begin());
  return t;
}

Tensor to_tensor(std::span<const std::uint8_t> v, int side) {
  Tensor t(1, side, side);
  for (std::size_t i = 0; i < v.size(); ++i) t.v[i] = v[i];
  return t;
}

void check_patch(const PolicyDims& dims, const flow::PatchSample& patch) {
  const int s = dims.patch;
  if (patch.appearance.width() != s || patch.appearance.height() != s || patch.prior.width() != s ||
      patch.prior.height() != s)
    throw DimensionError("policy: patch must be " + std::to_string(s) + "x" + std::to_string(s));
}

struct StreamCache {
  Tensor in, z1, a1, z2, a2;
  std::vector<double> pooled;
};

using Conv = void (*)(const Tensor&, std::span<const double>, std::span<const double>, int, Tensor&);

// conv → relu → conv → relu → global average pool. `gates` (optional) overrides the relu on/off pattern.
void run_stream(Conv conv, const Tensor& in, std::span<const double> w1, int c1, std::span<const double> w2, int c2,
                StreamCache& sc, const std::vector<std::uint8_t>* gate1 = nullptr,
                const std::vector<std::uint8_t>* gate2 = nullptr, std::vector<std::uint8_t>* rec1 = nullptr,
                std::vector<std::uint8_t>* rec2 = nullptr) {
  sc.in = in;
  auto relu = [](const Tensor& z, Tensor& a, const std::vector<std::uint8_t>* gate, std::vector<std::uint8_t>* rec) {
    a = z;
    if (rec) rec->resize(z.v.size());
    for (std::size_t i = 0; i < z.v.size(); ++i) {
      const bool on = gate ? (*gate)[i] != 0 : z.v[i] > 0.0;
      if (rec) (*rec)[i] = on;
      a.v[i] = on ? z.v[i] : 0.0;
    }
  };
  conv(sc.in, w1, {}, c1, sc.z1);
  relu(sc.z1, sc.a1, gate1, rec1);
  conv(sc.a1, w2, {}, c2, sc.z2);
  relu(sc.z2, sc.a2, gate2, rec2);
  sc.pooled.assign(static_cast<std::size_t>(c2), 0.0);
  const double inv = 1.0 / static_cast<double>(sc.a2.plane_size());
  for (int c = 0; c < c2; ++c) {
    const double* p = sc.a2.plane(c);
    double s = 0.0;
    for (std::size_t k = 0; k < sc.a2.plane_size(); ++k) s += p[k];
    sc.pooled[c] = s * inv;
  }
}

void stream_backward(const StreamCache& sc, std::span<const double> w1, std::span<const double> w2,
                     std::span<const double> gpooled, std::span<double> gw1, std::span<double> gw2) {
  Tensor g(sc.a2.c, sc.a2.h, sc.a2.w);
  const double inv = 1.0 / static_cast<double>(sc.a2.plane_size());
  for (int c = 0; c < g.c; ++c) {
    double* gp = g.plane(c);
    const double* zp = sc.z2.plane(c);
    for (std::size_t k = 0; k < g.plane_size(); ++k) gp[k] = zp[k] > 0.0 ? gpooled[c] * inv : 0.0;
  }
  Tensor ga1;
  kernels::conv3x3_backward(sc.a1, w2, g, &ga1, gw2, {});
  for (std::size_t i = 0; i < ga1.v.size(); ++i)
    if (!(sc.z1.v[i] > 0.0)) ga1.v[i] = 0.0;
  kernels::conv3x3_backward(sc.in, w1, ga1, nullptr, gw1, {});
}

// Full forward for one decision with everything the backward pass needs.
struct Forward {
  StreamCache app, pri;
  std::vector<double> concat;  // pooled features [app; prior]
  std::vector<double> e;       // fused feature
  std::vector<double> h;       // query
  std::vector<std::vector<double>> keys, values;
  MemoryRead read;
  std::vector<double> x;       // head input [e; o]
  std::vector<double> hidden;  // tanh activations
  double logit = 0.0;
};

void memory_forward(const PolicyParams& params, const MemoryState& mem, std::span<const double> e, Forward* f,
                    MemoryRead& read) {
  const auto& d = params.dims;
  read = MemoryRead{};
  read.output.assign(static_cast<std::size_t>(d.memory), 0.0);
  if (mem.empty()) {
    read.cold = true;
    return;
  }
  std::vector<double> h, k, v;
  matvec(params.set.block(kQuery), e, d.memory, d.feature, h);
  const int n = mem.fill();
  std::vector<double> logits(static_cast<std::size_t>(n));
  std::vector<std::vector<double>> keys(n), values(n);
  for (int l = 0; l < n; ++l) {
    matvec(params.set.block(kKey), mem.entries()[l], d.memory, d.feature, keys[l]);
    matvec(params.set.block(kValue), mem.entries()[l], d.memory, d.feature, values[l]);
    double s = 0.0;
    for (int j = 0; j < d.memory; ++j) s += h[j] * keys[l][j];
    logits[l] = s;
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  read.attention.resize(static_cast<std::size_t>(n));
  double z = 0.0;
  for (int l = 0; l < n; ++l) z += (read.attention[l] = std::exp(logits[l] - mx));
  for (auto& p : read.attention) p /= z;
  for (int l = 0; l < n; ++l)
    for (int j = 0; j < d.memory; ++j) read.output[j] += read.attention[l] * values[l][j];
  if (f) {
    f->h = std::move(h);
    f->keys = std::move(keys);
    f->values = std::move(values);
  }
}

void head_forward(const PolicyParams& params, Forward& f) {
  const auto& d = params.dims;
  f.x = f.e;
  f.x.insert(f.x.end(), f.read.output.begin(), f.read.output.end());
  matvec(params.set.block(kHeadW1), f.x, d.hidden, d.feature + d.memory, f.hidden, params.set.block(kHeadB1));
  for (double& v : f.hidden) v = std::tanh(v);
  double s = params.set.block(kHeadB2)[0];
  auto w2 = params.set.block(kHeadW2);
  for (int j = 0; j < d.hidden; ++j) s += w2[j] * f.hidden[j];
  f.logit = s;
}

void fuse(const PolicyParams& params, Forward& f) {
  const auto& d = params.dims;
  f.concat = f.app.pooled;
  f.concat.insert(f.concat.end(), f.pri.pooled.begin(), f.pri.pooled.end());
  matvec(params.set.block(kFusionW), f.concat, d.feature, d.app2 + d.prior2, f.e, params.set.block(kFusionB));
}

void full_forward(const PolicyParams& params, const MemoryState& mem, const flow::PatchSample& patch, Forward& f) {
  check_patch(params.dims, patch);
  const auto& d = params.dims;
  run_stream(kernels::conv3x3_forward, to_tensor(patch.appearance.data(), d.patch), params.set.block(kAppConv1),
             d.app1, params.set.block(kAppConv2), d.app2, f.app);
  run_stream(kernels::conv3x3_forward, to_tensor(patch.prior.bits(), d.patch), params.set.block(kPriorConv1), d.prior1,
             params.set.block(kPriorConv2), d.prior2, f.pri);
  fuse(params, f);
  memory_forward(params, mem, f.e, &f, f.read);
  head_forward(params, f);
  if (!std::isfinite(f.logit)) throw NumericError("policy: non-finite logit");
}

double clamped_log_pi(double p, int action) {
  const double pc = std::clamp(p, kLogClamp, 1.0 - kLogClamp);
  return action == 1 ? std::log(pc) : std::log(1.0 - pc);
}

void init_uniform(std::span<double> w, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& x : w) x = dist(rng);
}

}  // namespace

PolicyParams make_policy(const PolicyDims& dims) {
  if (dims.patch < 1 || dims.feature < 1 || dims.memory < 1 || dims.slots < 1 || dims.hidden < 1)
    throw UsageError("policy dimensions must be positive");
  PolicyParams p;
  p.dims = dims;
  auto& s = p.set;
  s.add("app.conv1.weight", {dims.app1, 1, 3, 3});
  s.add("app.conv2.weight", {dims.app2, dims.app1, 3, 3});
  s.add("prior.conv1.weight", {dims.prior1, 1, 3, 3});
  s.add("prior.conv2.weight", {dims.prior2, dims.prior1, 3, 3});
  s.add("fusion.weight", {dims.feature, dims.app2 + dims.prior2});
  s.add("fusion.bias", {dims.feature});
  s.add("memory.key", {dims.memory, dims.feature});
  s.add("memory.value", {dims.memory, dims.feature});
  s.add("memory.query", {dims.memory, dims.feature});
  s.add("head.w1", {dims.hidden, dims.feature + dims.memory});
  s.add("head.b1", {dims.hidden});
  s.add("head.w2", {1, dims.hidden});
  s.add("head.b2", {1});
  return p;
}

PolicyParams init_policy(std::uint64_t seed, const PolicyDims& dims) {
  auto p = make_policy(dims);
  std::mt19937_64 rng(seed);
  auto he = [](int fan_in) { return std::sqrt(6.0 / fan_in); };
  auto glorot = [](int fan_in, int fan_out) { return std::sqrt(6.0 / (fan_in + fan_out)); };
  init_uniform(p.set.block(kAppConv1), he(9), rng);
  init_uniform(p.set.block(kAppConv2), he(9 * dims.app1), rng);
  init_uniform(p.set.block(kPriorConv1), he(9), rng);
  init_uniform(p.set.block(kPriorConv2), he(9 * dims.prior1), rng);
  init_uniform(p.set.block(kFusionW), glorot(dims.app2 + dims.prior2, dims.feature), rng);
  const double proj = std::sqrt(3.0 / dims.feature);
  init_uniform(p.set.block(kKey), proj, rng);
  init_uniform(p.set.block(kValue), proj, rng);
  init_uniform(p.set.block(kQuery), proj, rng);
  init_uniform(p.set.block(kHeadW1), glorot(dims.feature + dims.memory, dims.hidden), rng);
  // Small output layer: the untrained policy starts close to p_select = 0.5.
  init_uniform(p.set.block(kHeadW2), 0.1 * glorot(dims.hidden, 1), rng);
  return p;
}

std::vector<double> encode(const PolicyParams& params, const flow::PatchSample& patch) {
  check_patch(params.dims, patch);
  const auto& d = params.dims;
  Forward f;
  run_stream(kernels::conv3x3_forward, to_tensor(patch.appearance.data(), d.patch), params.set.block(kAppConv1),
             d.app1, params.set.block(kAppConv2), d.app2, f.app);
  run_stream(kernels::conv3x3_forward, to_tensor(patch.prior.bits(), d.patch), params.set.block(kPriorConv1), d.prior1,
             params.set.block(kPriorConv2), d.prior2, f.pri);
  fuse(params, f);
  return f.e;
}

MemoryState::MemoryState(int capacity) : capacity_(capacity) {
  if (capacity < 1) throw UsageError("memory capacity must be >= 1");
}

MemoryState MemoryState::write(std::vector<double> feature) const {
  MemoryState next = *this;
  if (next.fill() == capacity_) next.entries_.erase(next.entries_.begin());
  next.entries_.push_back(std::move(feature));
  return next;
}

MemoryState memory_write(const MemoryState& mem, std::vector<double> feature) { return mem.write(std::move(feature)); }

MemoryRead memory_read(const PolicyParams& params, const MemoryState& mem, std::span<const double> feature) {
  if (feature.size() != static_cast<std::size_t>(params.dims.feature))
    throw DimensionError("memory_read: feature length mismatch");
  MemoryRead r;
  memory_forward(params, mem, feature, nullptr, r);
  return r;
}

ActionOutcome act(const PolicyParams& params, const MemoryState& mem, const flow::PatchSample& patch,
                  std::mt19937_64& rng, ActMode mode) {
  Forward f;
  full_forward(params, mem, patch, f);
  ActionOutcome out;
  out.p_select = sigmoid(f.logit);
  if (mode == ActMode::Greedy) {
    out.action = out.p_select > 0.5 ? 1 : 0;
  } else {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    out.action = u(rng) < out.p_select ? 1 : 0;
  }
  out.log_pi = clamped_log_pi(out.p_select, out.action);
  out.attention = std::move(f.read.attention);
  out.cold = f.read.cold;
  out.feature = std::move(f.e);
  return out;
}

double select_probability(const PolicyParams& params, const MemoryState& mem, const flow::PatchSample& patch) {
  Forward f;
  full_forward(params, mem, patch, f);
  return sigmoid(f.logit);
}

double log_pi(const PolicyParams& params, const Decision& d) {
  Forward f;
  full_forward(params, d.memory, d.patch, f);
  return clamped_log_pi(sigmoid(f.logit), d.action);
}

nn::ParamSet logpi_grad(const PolicyParams& params, std::span<const Decision> trace) {
  const auto& dm = params.dims;
  auto grad = params.set.zeros_like();
  const int nx = dm.feature + dm.memory;
  for (const auto& dec : trace) {
    Forward f;
    full_forward(params, dec.memory, dec.patch, f);
    const double p = sigmoid(f.logit);
    if (p < kLogClamp || p > 1.0 - kLogClamp) continue;  // clamped log: flat in the logit
    const double g = static_cast<double>(dec.action) - p;

    // head
    auto w2 = params.set.block(kHeadW2);
    auto gw2 = grad.block(kHeadW2);
    std::vector<double> gpre(static_cast<std::size_t>(dm.hidden));
    for (int j = 0; j < dm.hidden; ++j) {
      gw2[j] += g * f.hidden[j];
      gpre[j] = g * w2[j] * (1.0 - f.hidden[j] * f.hidden[j]);
    }
    grad.block(kHeadB2)[0] += g;
    outer_acc(grad.block(kHeadW1), gpre, f.x, dm.hidden, nx);
    auto gb1 = grad.block(kHeadB1);
    for (int j = 0; j < dm.hidden; ++j) gb1[j] += gpre[j];
    std::vector<double> gx(static_cast<std::size_t>(nx), 0.0);
    matvec_t_acc(params.set.block(kHeadW1), gpre, dm.hidden, nx, gx);
    std::vector<double> ge(gx.begin(), gx.begin() + dm.feature);
    std::span<const double> go(gx.data() + dm.feature, static_cast<std::size_t>(dm.memory));

    // attention read
    if (!f.read.cold) {
      const int n = dec.memory.fill();
      const auto& p_att = f.read.attention;
      std::vector<double> gp(static_cast<std::size_t>(n));
      double mean = 0.0;
      for (int l = 0; l < n; ++l) {
        double s = 0.0;
        for (int j = 0; j < dm.memory; ++j) s += go[j] * f.values[l][j];
        gp[l] = s;
        mean += p_att[l] * s;
      }
      std::vector<double> gh(static_cast<std::size_t>(dm.memory), 0.0), tmp(static_cast<std::size_t>(dm.memory));
      for (int l = 0; l < n; ++l) {
        const auto& entry = dec.memory.entries()[l];
        for (int j = 0; j < dm.memory; ++j) tmp[j] = p_att[l] * go[j];
        outer_acc(grad.block(kValue), tmp, entry, dm.memory, dm.feature);
        const double gs = p_att[l] * (gp[l] - mean);
        for (int j = 0; j < dm.memory; ++j) {
          gh[j] += gs * f.keys[l][j];
          tmp[j] = gs * f.h[j];
        }
        outer_acc(grad.block(kKey), tmp, entry, dm.memory, dm.feature);
      }
      outer_acc(grad.block(kQuery), gh, f.e, dm.memory, dm.feature);
      matvec_t_acc(params.set.block(kQuery), gh, dm.memory, dm.feature, ge);
    }

    // fusion
    const int nc = dm.app2 + dm.prior2;
    outer_acc(grad.block(kFusionW), ge, f.concat, dm.feature, nc);
    auto gbf = grad.block(kFusionB);
    for (int j = 0; j < dm.feature; ++j) gbf[j] += ge[j];
    std::vector<double> gc(static_cast<std::size_t>(nc), 0.0);
    matvec_t_acc(params.set.block(kFusionW), ge, dm.feature, nc, gc);

    // encoder streams
    stream_backward(f.app, params.set.block(kAppConv1), params.set.block(kAppConv2),
                    std::span<const double>(gc.data(), static_cast<std::size_t>(dm.app2)), grad.block(kAppConv1),
                    grad.block(kAppConv2));
    stream_backward(f.pri, params.set.block(kPriorConv1), params.set.block(kPriorConv2),
                    std::span<const double>(gc.data() + dm.app2, static_cast<std::size_t>(dm.prior2)),
                    grad.block(kPriorConv1), grad.block(kPriorConv2));
  }
  return grad;
}

double attention_entropy(std::span<const double> attention) {
  double h = 0.0;
  for (double p : attention)
    if (p > 0.0) h -= p * std::log(p);
  return h;
}

void save_policy(const std::filesystem::path& path, const PolicyParams& params, const nlohmann::json& meta) {
  nlohmann::json m = meta;
  const auto& d = params.dims;
  m["model"] = "policy";
  m["dims"] = {{"patch", d.patch},   {"e", d.feature},     {"d", d.memory},        {"L", d.slots},
               {"hidden", d.hidden}, {"app", {d.app1, d.app2}}, {"prior", {d.prior1, d.prior2}}};
  nn::save_checkpoint(path, params.set, m);
}

PolicyParams load_policy(const std::filesystem::path& path, nlohmann::json* meta) {
  auto ck = nn::load_checkpoint(path);
  PolicyDims d;
  try {
    const auto& j = ck.meta.at("dims");
    d.patch = j.at("patch");
    d.feature = j.at("e");
    d.memory = j.at("d");
    d.slots = j.at("L");
    d.hidden = j.at("hidden");
    d.app1 = j.at("app")[0];
    d.app2 = j.at("app")[1];
    d.prior1 = j.at("prior")[0];
    d.prior2 = j.at("prior")[1];
  } catch (const nlohmann::json::exception& e) {
    throw IoError("policy checkpoint sidecar lacks dims (" + path.string() + "): " + e.what());
  }
  auto p = make_policy(d);
  if (!p.set.same_layout(ck.params)) throw IoError("checkpoint layout is not a policy with the stated dims: " + path.string());
  p.set = std::move(ck.params);
  if (meta) *meta = std::move(ck.meta);
  return p;
}

namespace ref {

double log_pi(const PolicyParams& params, const Decision& dec, const ActivationPattern* frozen,
              ActivationPattern* record) {
  check_patch(params.dims, dec.patch);
  const auto& d = params.dims;
  if (record) record->assign(4, {});
  auto gate = [&](int i) { return frozen ? &(*frozen)[i] : nullptr; };
  auto rec = [&](int i) { return record ? &(*record)[i] : nullptr; };
  Forward f;
  run_stream(kernels::ref::conv3x3_forward, to_tensor(dec.patch.appearance.data(), d.patch), params.set.block(kAppConv1),
             d.app1, params.set.block(kAppConv2), d.app2, f.app, gate(0), gate(1), rec(0), rec(1));
  run_stream(kernels::ref::conv3x3_forward, to_tensor(dec.patch.prior.bits(), d.patch), params.set.block(kPriorConv1),
             d.prior1, params.set.block(kPriorConv2), d.prior2, f.pri, gate(2), gate(3), rec(2), rec(3));
  fuse(params, f);
  memory_forward(params, dec.memory, f.e, &f, f.read);
  head_forward(params, f);
  return clamped_log_pi(sigmoid(f.logit), dec.action);
}

}  // namespace ref
}  // namespace pal::policy
