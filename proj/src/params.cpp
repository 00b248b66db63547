#include "pal/params.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "pal/binio.hpp"
#include "pal/errors.hpp"

namespace pal::nn {

std::size_t ParamSet::add(std::string name, std::vector<int> shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw DimensionError("parameter block " + name + " has a non-positive dimension");
    n *= static_cast<std::size_t>(d);
  }
  blocks_.push_back(Block{std::move(name), std::move(shape), values_.size(), n});
  values_.resize(values_.size() + n, 0.0);
  return blocks_.size() - 1;
}

std::size_t ParamSet::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < blocks_.size(); ++i)
    if (blocks_[i].name == name) return i;
  throw UsageError("no parameter block named " + std::string(name));
}

bool ParamSet::all_finite() const {
  for (double v : values_)
    if (!std::isfinite(v)) return false;
  return true;
}

bool ParamSet::same_layout(const ParamSet& other) const {
  if (blocks_.size() != other.blocks_.size()) return false;
  for (std::size_t i = 0; i < blocks_.size(); ++i)
    if (blocks_[i].name != other.blocks_[i].name || blocks_[i].shape != other.blocks_[i].shape) return false;
  return true;
}

ParamSet ParamSet::zeros_like() const {
  ParamSet z = *this;
  std::fill(z.values_.begin(), z.values_.end(), 0.0);
  return z;
}

void Adam::step(std::span<double> params, std::span<const double> grad) {
  if (params.size() != grad.size()) throw DimensionError("adam: gradient size mismatch");
  if (m_.size() != params.size()) {
    m_.assign(params.size(), 0.0);
    v_.assign(params.size(), 0.0);
    t_ = 0;
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
    params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
}

void save_checkpoint(const std::filesystem::path& path, const ParamSet& params, const nlohmann::json& meta) {
  {
    auto os = binio::open_out(path.string());
    for (double v : params.values()) binio::put_f32(os, static_cast<float>(v));
    if (!os) throw IoError("write failed: " + path.string());
  }
  nlohmann::json side = meta;
  side["blocks"] = nlohmann::json::array();
  for (const auto& b : params.blocks()) side["blocks"].push_back({{"name", b.name}, {"shape", b.shape}});
  side["count"] = params.size();
  const auto side_path = path.string() + ".json";
  std::ofstream js(side_path);
  if (!js) throw IoError("cannot open for writing: " + side_path);
  js << side.dump(2) << "\n";
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  const auto side_path = path.string() + ".json";
  std::ifstream js(side_path);
  if (!js) throw IoError("missing checkpoint sidecar: " + side_path);
  nlohmann::json side;
  try {
    js >> side;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint sidecar " + side_path + ": " + e.what());
  }
  LoadedCheckpoint out;
  for (const auto& b : side.at("blocks")) out.params.add(b.at("name"), b.at("shape").get<std::vector<int>>());
  if (side.at("count").get<std::size_t>() != out.params.size())
    throw IoError("checkpoint sidecar count disagrees with layout: " + side_path);
  auto is = binio::open_in(path.string());
  for (double& v : out.params.values()) v = binio::get_f32(is);
  if (!is) throw IoError("truncated checkpoint: " + path.string());
  side.erase("blocks");
  side.erase("count");
  out.meta = std::move(side);
  return out;
}

void round_to_float(ParamSet& params) {
  for (double& v : params.values()) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace pal::nn
