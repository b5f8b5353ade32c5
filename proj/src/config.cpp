#include "onevl/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "onevl/inference.hpp"

namespace onevl {

namespace {

using ojson = nlohmann::ordered_json;

ojson to_json(const RunConfig& c) {
  ojson j;
  j["run_dir"] = c.run_dir.string();
  j["data"] = {{"n_samples", c.data.n_samples},
               {"seed", c.data.seed},
               {"split", {{"train", c.data.split.train}, {"val", c.data.split.val}, {"test", c.data.split.test}}},
               {"raster", {{"height", c.data.raster.height}, {"width", c.data.raster.width}}}};
  j["codec"] = {{"codebook_size", c.codec.codebook_size}, {"iters", c.codec.iters}, {"seed", c.codec.seed}};
  const auto& m = c.model;
  j["model"] = {{"d", m.d},
                {"n_layers", m.n_layers},
                {"n_heads", m.n_heads},
                {"max_seq_len", m.max_seq_len},
                {"dec_layers", m.dec_layers},
                {"dec_heads", m.dec_heads},
                {"dec_max_len", m.dec_max_len},
                {"latent_vis_count", m.latent_vis_count},
                {"latent_lang_count", m.latent_lang_count},
                {"patch", m.patch},
                {"with_head", m.with_head}};
  const auto& t = c.training;
  j["training"] = {{"seed", t.seed},
                   {"batch_size", t.batch_size},
                   {"pretrain_steps", t.pretrain_steps},
                   {"stage0_epochs", t.stage0_epochs},
                   {"stage1_epochs", t.stage1_epochs},
                   {"stage2_epochs", t.stage2_epochs},
                   {"lr_pretrain", t.lr_pretrain},
                   {"lr_stage0", t.lr_stage0},
                   {"lr_stage1", t.lr_stage1},
                   {"lr_stage2", t.lr_stage2},
                   {"lr_scale", t.lr_scale},
                   {"lambda_l", t.lambda_l},
                   {"lambda_v", t.lambda_v},
                   {"clip_norm", t.clip_norm},
                   {"head_epochs", t.head_epochs},
                   {"head_lr", t.head_lr},
                   {"val_limit", t.val_limit},
                   {"checked", t.checked}};
  j["eval"] = {{"modes", c.eval.modes},
               {"test_limit", c.eval.test_limit},
               {"latency_samples", c.eval.latency_samples},
               {"latency_runs", c.eval.latency_runs},
               {"latency_warmup", c.eval.latency_warmup}};
  return j;
}

void check_keys(const ojson& user, const ojson& ref, const std::string& path) {
  if (!user.is_object()) throw ConfigError("config: '" + (path.empty() ? "<root>" : path) + "' must be an object");
  for (const auto& [key, value] : user.items()) {
    const std::string p = path.empty() ? key : path + "." + key;
    if (!ref.contains(key)) throw ConfigError("config: unknown key '" + p + "'");
    if (ref[key].is_object()) check_keys(value, ref[key], p);
  }
}

template <class T>
T get(const ojson& j, const char* section, const char* key) {
  try {
    return j.at(section).at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: bad value for '") + section + "." + key + "': " + e.what());
  }
}

RunConfig from_json(const ojson& j) {
  RunConfig c;
  c.run_dir = j.at("run_dir").get<std::string>();
  c.data.n_samples = get<std::size_t>(j, "data", "n_samples");
  c.data.seed = get<std::uint64_t>(j, "data", "seed");
  const auto& split = j.at("data").at("split");
  c.data.split = {split.at("train").get<double>(), split.at("val").get<double>(), split.at("test").get<double>()};
  const auto& raster = j.at("data").at("raster");
  c.data.raster = {raster.at("height").get<int>(), raster.at("width").get<int>()};
  c.codec.codebook_size = get<int>(j, "codec", "codebook_size");
  c.codec.iters = get<int>(j, "codec", "iters");
  c.codec.seed = get<std::uint64_t>(j, "codec", "seed");
  auto& m = c.model;
  m.d = get<int>(j, "model", "d");
  m.n_layers = get<int>(j, "model", "n_layers");
  m.n_heads = get<int>(j, "model", "n_heads");
  m.max_seq_len = get<int>(j, "model", "max_seq_len");
  m.dec_layers = get<int>(j, "model", "dec_layers");
  m.dec_heads = get<int>(j, "model", "dec_heads");
  m.dec_max_len = get<int>(j, "model", "dec_max_len");
  m.latent_vis_count = get<int>(j, "model", "latent_vis_count");
  m.latent_lang_count = get<int>(j, "model", "latent_lang_count");
  m.patch = get<int>(j, "model", "patch");
  m.with_head = get<bool>(j, "model", "with_head");
  m.codebook_size = c.codec.codebook_size;
  m.raster_height = c.data.raster.height;
  m.raster_width = c.data.raster.width;
  auto& t = c.training;
  t.seed = get<std::uint64_t>(j, "training", "seed");
  t.batch_size = get<int>(j, "training", "batch_size");
  t.pretrain_steps = get<int>(j, "training", "pretrain_steps");
  t.stage0_epochs = get<int>(j, "training", "stage0_epochs");
  t.stage1_epochs = get<int>(j, "training", "stage1_epochs");
  t.stage2_epochs = get<int>(j, "training", "stage2_epochs");
  t.lr_pretrain = get<double>(j, "training", "lr_pretrain");
  t.lr_stage0 = get<double>(j, "training", "lr_stage0");
  t.lr_stage1 = get<double>(j, "training", "lr_stage1");
  t.lr_stage2 = get<double>(j, "training", "lr_stage2");
  t.lr_scale = get<double>(j, "training", "lr_scale");
  t.lambda_l = get<double>(j, "training", "lambda_l");
  t.lambda_v = get<double>(j, "training", "lambda_v");
  t.clip_norm = get<double>(j, "training", "clip_norm");
  t.head_epochs = get<int>(j, "training", "head_epochs");
  t.head_lr = get<double>(j, "training", "head_lr");
  t.val_limit = get<std::size_t>(j, "training", "val_limit");
  t.checked = get<bool>(j, "training", "checked");
  c.eval.modes = get<std::vector<std::string>>(j, "eval", "modes");
  c.eval.test_limit = get<std::size_t>(j, "eval", "test_limit");
  c.eval.latency_samples = get<std::size_t>(j, "eval", "latency_samples");
  c.eval.latency_runs = get<int>(j, "eval", "latency_runs");
  c.eval.latency_warmup = get<int>(j, "eval", "latency_warmup");

  try {
    m.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: model: ") + e.what());
  }
  for (const auto& mode : c.eval.modes) {
    try {
      (void)decode_mode_from_string(mode);
    } catch (const std::exception&) {
      throw ConfigError("config: unknown decode mode '" + mode + "' in eval.modes");
    }
  }
  if (c.data.n_samples < 10) throw ConfigError("config: data.n_samples must be at least 10");
  if (t.batch_size <= 0) throw ConfigError("config: training.batch_size must be positive");
  if (t.lr_scale <= 0) throw ConfigError("config: training.lr_scale must be positive");
  return c;
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  ojson user;
  try {
    user = ojson::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config: not valid JSON: ") + e.what());
  }
  ojson merged = to_json(RunConfig{});
  check_keys(user, merged, "");
  merged.merge_patch(user);
  return from_json(merged);
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("config: cannot read " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_run_config(ss.str());
}

std::string resolved_config_json(const RunConfig& cfg) { return to_json(cfg).dump(2); }

std::string config_hash(const RunConfig& cfg) {
  ojson j = to_json(cfg);
  j.erase("run_dir");
  const std::string text = j.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) h = (h ^ ch) * 1099511628211ULL;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<StagePlan> curriculum_from_config(const RunConfig& cfg, bool smoke) {
  const auto& t = cfg.training;
  CurriculumOptions opt;
  opt.pretrain_steps = t.pretrain_steps;
  opt.batch_size = t.batch_size;
  auto plans = default_curriculum(smoke ? Scale::smoke : Scale::desk, opt);
  const double lrs[] = {t.lr_pretrain, t.lr_stage0, t.lr_stage1, t.lr_stage2};
  const int epochs[] = {0, t.stage0_epochs, t.stage1_epochs, t.stage2_epochs};
  for (std::size_t i = 0; i < plans.size(); ++i) {
    auto& p = plans[i];
    p.lr = lrs[i] * t.lr_scale;
    p.lambda_l = t.lambda_l;
    p.lambda_v = t.lambda_v;
    p.clip_norm = t.clip_norm;
    if (!smoke && i > 0) p.epochs = epochs[i];
  }
  return plans;
}

}  // namespace onevl
