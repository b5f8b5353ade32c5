#include "onevl/params.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <set>
#include <stdexcept>

namespace onevl {

std::string Parameter::group() const { return name.substr(0, name.find('/')); }

Parameter& ParamStore::add(std::string name, Tensor value, bool decay) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter " + name);
  value.set_requires_grad(true);
  index_.emplace(name, params_.size());
  params_.push_back(Parameter{std::move(name), std::move(value), true, decay});
  return params_.back();
}

Parameter& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
  return params_[it->second];
}

const Parameter& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
  return params_[it->second];
}

std::vector<std::string> ParamStore::groups() const {
  std::vector<std::string> out;
  for (const auto& p : params_) {
    auto g = p.group();
    if (std::find(out.begin(), out.end(), g) == out.end()) out.push_back(g);
  }
  return out;
}

void ParamStore::set_group_trainable(const std::string& group, bool on) {
  for (auto& p : params_) {
    if (p.group() != group) continue;
    p.trainable = on;
    p.value.set_requires_grad(on);
  }
}

bool ParamStore::group_trainable(const std::string& group) const {
  return std::any_of(params_.begin(), params_.end(),
                     [&](const Parameter& p) { return p.group() == group && p.trainable; });
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

std::size_t ParamStore::count(const std::string& group) const {
  std::size_t n = 0;
  for (const auto& p : params_) {
    if (group.empty() || p.group() == group) n += p.value.numel();
  }
  return n;
}

ParamStore ParamStore::clone() const {
  ParamStore out;
  for (const auto& p : params_) {
    auto& q = out.add(p.name, p.value.detach(), p.decay);
    q.trainable = p.trainable;
    q.value.set_requires_grad(p.trainable);
  }
  return out;
}

void adamw_step(Parameter& param, AdamState& state, double lr, const AdamWConfig& cfg) {
  if (!param.trainable) return;
  auto values = param.value.mutable_data();
  const std::size_t n = values.size();
  if (state.m.empty() && state.v.empty()) {
    state.m.assign(n, 0.0);
    state.v.assign(n, 0.0);
  }
  if (state.m.size() != n || state.v.size() != n) {
    throw ShapeError("adamw_step: optimizer state for " + param.name + " has " +
                     std::to_string(state.m.size()) + " entries, parameter has " + std::to_string(n));
  }
  auto grad = param.value.grad();
  ++state.steps;
  const double t = static_cast<double>(state.steps);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  const double wd = param.decay ? cfg.weight_decay : 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grad.empty() ? 0.0 : grad[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    values[i] -= lr * (mhat / (std::sqrt(vhat) + cfg.eps) + wd * values[i]);
  }
}

void AdamW::step(ParamStore& store, double lr) {
  for (auto& p : store.all()) {
    if (!p.trainable) continue;
    adamw_step(p, state_[p.name], lr, cfg_);
  }
}

double cosine_lr(double base, std::size_t step, std::size_t total) {
  if (total == 0) return base;
  const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(total));
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

double global_grad_norm(const ParamStore& store) {
  double s = 0.0;
  for (const auto& p : store.all()) {
    if (!p.trainable) continue;
    for (double g : p.value.grad()) s += g * g;
  }
  return std::sqrt(s);
}

double clip_grad_norm(ParamStore& store, double max_norm) {
  const double norm = global_grad_norm(store);
  if (norm > max_norm && norm > 0.0) {
    const double f = max_norm / norm;
    for (auto& p : store.all()) {
      if (!p.trainable) continue;
      for (double& g : p.value.mutable_grad()) g *= f;
    }
  }
  return norm;
}

// ---- checkpoints -----------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'O', 'N', 'E', 'V', 'L', 'C', 'K', 'P'};

template <class T>
void put(std::ostream& os, T v) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T take(std::istream& is, const std::filesystem::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw std::runtime_error("truncated checkpoint " + path.string());
  }
  return v;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, std::span<const NamedTensor> entries) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(os, kCheckpointVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (numel_of(e.shape) != e.data.size()) throw ShapeError("checkpoint entry " + e.name + " malformed");
    put<std::uint32_t>(os, static_cast<std::uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) put<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(e.data.data()),
             static_cast<std::streamsize>(e.data.size() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error(path.string() + " is not a checkpoint");
  }
  const auto version = take<std::uint32_t>(is, path);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = take<std::uint32_t>(is, path);
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor e;
    e.name.resize(take<std::uint32_t>(is, path));
    if (!is.read(e.name.data(), static_cast<std::streamsize>(e.name.size()))) {
      throw std::runtime_error("truncated checkpoint " + path.string());
    }
    const auto rank = take<std::uint32_t>(is, path);
    for (std::uint32_t k = 0; k < rank; ++k) e.shape.push_back(take<std::uint64_t>(is, path));
    e.data.resize(numel_of(e.shape));
    if (!is.read(reinterpret_cast<char*>(e.data.data()),
                 static_cast<std::streamsize>(e.data.size() * sizeof(double)))) {
      throw std::runtime_error("truncated checkpoint " + path.string());
    }
    out.push_back(std::move(e));
  }
  return out;
}

void save_params(const std::filesystem::path& path, const ParamStore& store, const std::string& prefix) {
  std::vector<NamedTensor> entries;
  for (const auto& p : store.all()) {
    if (!prefix.empty() && p.name.rfind(prefix, 0) != 0) continue;
    entries.push_back({p.name, p.value.shape(), {p.value.data().begin(), p.value.data().end()}});
  }
  write_checkpoint(path, entries);
}

void load_params(const std::filesystem::path& path, ParamStore& store, bool allow_extra) {
  for (auto& e : read_checkpoint(path)) {
    if (!store.contains(e.name)) {
      if (allow_extra) continue;
      throw std::runtime_error("checkpoint " + path.string() + " has unknown parameter " + e.name);
    }
    auto& p = store.get(e.name);
    if (p.value.shape() != e.shape) {
      throw ShapeError("checkpoint shape " + shape_str(e.shape) + " for " + e.name + " vs model " +
                       shape_str(p.value.shape()));
    }
    std::copy(e.data.begin(), e.data.end(), p.value.mutable_data().begin());
  }
}

}  // namespace onevl
