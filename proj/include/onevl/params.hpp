#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "onevl/tensor.hpp"

namespace onevl {

struct Parameter {
  std::string name;  // "<group>/<path>", e.g. "backbone/blocks.0.attn.wq"
  Tensor value;
  bool trainable = true;
  bool decay = true;  // false for gains, biases and embedding tables

  std::string group() const;
};

// Named parameters in insertion order. Names are unique.
class ParamStore {
 public:
  Parameter& add(std::string name, Tensor value, bool decay);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::vector<Parameter>& all() { return params_; }
  const std::vector<Parameter>& all() const { return params_; }
  std::vector<std::string> groups() const;

  /// Flips trainability (and gradient tracking) for every parameter in `group`.
  void set_group_trainable(const std::string& group, bool on);
  bool group_trainable(const std::string& group) const;
  void zero_grad();
  std::size_t count(const std::string& group = {}) const;

  /// Deep copy of values; the copy shares nothing with this store.
  ParamStore clone() const;

 private:
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::size_t steps = 0;
};

/// One decoupled-weight-decay Adam update of `param` from its accumulated
/// gradient. Frozen parameters are skipped and their state is not touched.
/// A missing gradient counts as zero.
void adamw_step(Parameter& param, AdamState& state, double lr, const AdamWConfig& cfg);

class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  void step(ParamStore& store, double lr);
  const std::map<std::string, AdamState>& state() const { return state_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  AdamWConfig cfg_;
  std::map<std::string, AdamState> state_;
};

/// Cosine decay from `base` at step 0 to 0 at `total` steps.
double cosine_lr(double base, std::size_t step, std::size_t total);

/// L2 norm over the gradients of trainable parameters.
double global_grad_norm(const ParamStore& store);
/// Rescales gradients so their global norm is at most `max_norm`. Returns the
/// norm measured before clipping.
double clip_grad_norm(ParamStore& store, double max_norm);

// ---- checkpoints -----------------------------------------------------------
//
// Layout (all integers little-endian):
//   magic "ONEVLCKP", u32 version, u32 entry count, then per entry:
//   u32 name length, name bytes, u32 rank, u64 dims[rank], f64 data[numel].

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

void write_checkpoint(const std::filesystem::path& path, std::span<const NamedTensor> entries);
std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path);

/// Saves every parameter whose name starts with `prefix` (all when empty).
void save_params(const std::filesystem::path& path, const ParamStore& store,
                 const std::string& prefix = {});
/// Loads values into existing parameters. Shapes must match; entries absent
/// from the store are an error unless `allow_extra` is set.
void load_params(const std::filesystem::path& path, ParamStore& store, bool allow_extra = false);

}  // namespace onevl
