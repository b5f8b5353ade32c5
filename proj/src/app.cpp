#include "onevl/app.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "onevl/inference.hpp"
#include "onevl/report.hpp"
#include "onevl/vq.hpp"

namespace onevl {

namespace {

using ojson = nlohmann::ordered_json;
namespace fs = std::filesystem;

const char* kSplits[] = {"train", "val", "test"};

struct Paths {
  fs::path root;
  fs::path data(const std::string& split) const { return root / "data" / (split + ".jsonl"); }
  fs::path codebook() const { return root / "codec" / "codebook.ckpt"; }
  fs::path tokens(const std::string& split) const { return root / "codec" / ("tokens_" + split + ".jsonl"); }
  fs::path checkpoints(const std::string& variant) const { return root / "checkpoints" / variant; }
  fs::path final_ckpt(const std::string& variant) const { return checkpoints(variant) / "final.ckpt"; }
  fs::path log(const std::string& variant) const { return root / "logs" / (variant + ".jsonl"); }
};

Paths paths(const RunConfig& cfg) { return Paths{resolve_run_dir(cfg)}; }

void require(const fs::path& p, const std::string& command) {
  if (!fs::exists(p)) throw MissingArtifact(p, command);
}

void write_config(const RunConfig& cfg, const Paths& p) {
  fs::create_directories(p.root);
  RunConfig resolved = cfg;
  resolved.run_dir = p.root;
  std::ofstream os(p.root / "config.json", std::ios::binary | std::ios::trunc);
  os << resolved_config_json(resolved) << '\n';
}

bool is_baseline(const std::string& variant) { return variant == "answer_only" || variant == "explicit_cot"; }

ModelConfig variant_model(const RunConfig& cfg, const std::string& variant) {
  ModelConfig m = cfg.model;
  if (is_baseline(variant)) {
    m.latent_vis_count = 0;
    m.latent_lang_count = 0;
    m.with_head = false;
  }
  return m;
}

Vocab variant_vocab(const RunConfig& cfg, const std::string& variant) {
  const ModelConfig m = variant_model(cfg, variant);
  return Vocab(m.codebook_size, m.latent_vis_count, m.latent_lang_count);
}

struct Splits {
  std::vector<TokenizedSample> train, val, test;
};

Splits load_splits(const Paths& p, const Vocab& vocab, bool need_train = true) {
  for (const char* s : kSplits) {
    require(p.data(s), "build-data");
    require(p.tokens(s), "train-vq");
  }
  Splits out;
  auto load = [&](const char* split) { return join_token_file(p.tokens(split), read_samples(p.data(split)), vocab); };
  if (need_train) out.train = load("train");
  out.val = load("val");
  out.test = load("test");
  return out;
}

/// Writes each line to the run report file and the console.
class ReportSink {
 public:
  ReportSink(const fs::path& path, bool append, std::ostream& console) : console_(console) {
    fs::create_directories(path.parent_path());
    file_.open(path, std::ios::binary | (append ? std::ios::app : std::ios::trunc));
    if (!file_) throw std::runtime_error("cannot write " + path.string());
  }
  void operator()(const std::string& line) {
    file_ << line << '\n';
    file_.flush();
    console_ << line << '\n';
  }

 private:
  std::ofstream file_;
  std::ostream& console_;
};

ojson echoed_config(const RunConfig& cfg) {
  ojson j = ojson::parse(resolved_config_json(cfg));
  j.erase("run_dir");
  return j;
}

std::vector<StagePlan> select_stages(const std::vector<StagePlan>& all, const std::string& list, std::size_t& first) {
  std::vector<std::string> names;
  std::stringstream ss(list);
  std::string name;
  while (std::getline(ss, name, ',')) {
    if (!name.empty()) names.push_back(name);
  }
  std::vector<StagePlan> out;
  first = all.size();
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (std::find(names.begin(), names.end(), all[i].name) != names.end()) {
      if (!out.empty() && first + out.size() != i) {
        throw std::invalid_argument("--stages must name consecutive stages");
      }
      if (out.empty()) first = i;
      out.push_back(all[i]);
    }
  }
  if (out.size() != names.size()) {
    throw std::invalid_argument("--stages: unknown stage in '" + list + "' (stages: pretrain,stage0,stage1,stage2)");
  }
  return out;
}

ModelBundle load_checked(const fs::path& path, const Vocab& vocab, const std::string& hash, bool allow_mismatch,
                         const std::string& command) {
  require(path, command);
  LoadedBundle lb = load_bundle(path, vocab);
  if (lb.config_hash != hash && !allow_mismatch) {
    throw std::runtime_error(path.string() + " was trained with config " + lb.config_hash + ", current config is " +
                             hash + " (pass --allow-config-mismatch to override)");
  }
  return std::move(lb.bundle);
}

void train_variant(const RunConfig& cfg, const std::string& variant, std::vector<StagePlan> plans,
                   std::optional<ModelBundle> start, bool append_log, std::ostream& log) {
  const Paths p = paths(cfg);
  write_config(cfg, p);
  const Vocab vocab = variant_vocab(cfg, variant);
  const Splits data = load_splits(p, vocab);
  const std::string hash = config_hash(cfg);
  fs::create_directories(p.checkpoints(variant));

  ReportSink sink(p.log(variant), append_log, log);
  ojson run;
  run["event"] = "run";
  run["variant"] = variant;
  run["config"] = echoed_config(cfg);
  sink(run.dump());

  TrainContext ctx;
  ctx.vocab = &vocab;
  ctx.train = &data.train;
  ctx.val = &data.val;
  ctx.val_limit = cfg.training.val_limit;
  ctx.checkpoint_dir = p.checkpoints(variant);
  ctx.config_hash = hash;
  ctx.checked = cfg.training.checked;
  ctx.log = [&sink](const std::string& line) { sink(line); };

  const std::uint64_t seed = cfg.training.seed;
  PipelineResult result = start ? run_pipeline(plans, std::move(*start), seed, ctx)
                                : run_full_pipeline(plans, variant_model(cfg, variant), seed, ctx);
  save_bundle(p.final_ckpt(variant), result.bundle, hash);
}

void read_loss_curves(const fs::path& log, std::vector<std::pair<std::string, std::vector<double>>>& out) {
  std::ifstream is(log);
  std::string line;
  while (std::getline(is, line)) {
    const auto j = ojson::parse(line, nullptr, false);
    if (j.is_discarded() || j.value("event", "") != "step") continue;
    const std::string stage = j.at("stage");
    if (out.empty() || out.back().first != stage) out.emplace_back(stage, std::vector<double>{});
    out.back().second.push_back(j.at("total"));
  }
}

}  // namespace

MissingArtifact::MissingArtifact(const fs::path& path, const std::string& command)
    : std::runtime_error("missing " + path.string() + " (run `onevl " + command + "` first)") {}

fs::path resolve_run_dir(const RunConfig& cfg) {
  if (const char* env = std::getenv("ONEVL_RUN_DIR"); env != nullptr && *env != '\0') return fs::path(env);
  return cfg.run_dir;
}

void cmd_build_data(const RunConfig& cfg, std::ostream& log) {
  const Paths p = paths(cfg);
  write_config(cfg, p);
  const Dataset ds = build_dataset(cfg.data.n_samples, cfg.data.seed, cfg.data.split, cfg.data.raster, p.root / "data");
  ojson j;
  j["event"] = "build_data";
  j["dir"] = (p.root / "data").string();
  j["train"] = ds.train.size();
  j["val"] = ds.val.size();
  j["test"] = ds.test.size();
  log << j.dump() << '\n';
}

void cmd_train_vq(const RunConfig& cfg, std::ostream& log) {
  const Paths p = paths(cfg);
  write_config(cfg, p);
  for (const char* s : kSplits) require(p.data(s), "build-data");
  const Dataset ds = read_dataset(p.root / "data");
  std::vector<Raster> rasters;
  for (const auto& s : ds.train) {
    rasters.push_back(s.frame_now);
    rasters.push_back(s.frame_future[0]);
    rasters.push_back(s.frame_future[1]);
  }
  CodebookReport rep;
  const Codebook cb = train_codebook(rasters, cfg.codec.codebook_size, cfg.codec.iters, cfg.codec.seed,
                                     cfg.model.patch, &rep);
  fs::create_directories(p.codebook().parent_path());
  save_codebook(p.codebook(), cb);

  const Vocab vocab = variant_vocab(cfg, "onevl");
  const std::vector<Sample>* splits[] = {&ds.train, &ds.val, &ds.test};
  for (int i = 0; i < 3; ++i) {
    std::vector<TokenizedSample> toks;
    toks.reserve(splits[i]->size());
    for (const auto& s : *splits[i]) toks.push_back(tokenize_sample(s, vocab, cb));
    write_token_file(p.tokens(kSplits[i]), toks);
  }
  double acc = 0.0;
  std::size_t n = 0;
  for (const auto& s : ds.val) {
    for (const Raster* r : {&s.frame_now, &s.frame_future[0], &s.frame_future[1]}) {
      acc += cell_accuracy(decode(encode(*r, cb), cb), *r);
      ++n;
    }
  }
  ojson j;
  j["event"] = "train_vq";
  j["codebook_size"] = cb.K;
  j["distinct_patches"] = rep.distinct_patches;
  j["final_error"] = rep.final_error;
  j["error_history"] = rep.error_history;
  j["val_cell_accuracy"] = n ? acc / static_cast<double>(n) : 0.0;
  j["config_hash"] = config_hash(cfg);
  std::ofstream(p.root / "codec" / "report.json", std::ios::binary | std::ios::trunc) << j.dump(2) << '\n';
  log << j.dump() << '\n';
}

void cmd_train(const RunConfig& cfg, const TrainOptions& opt, std::ostream& log) {
  const bool smoke = opt.stages == "smoke";
  const auto curriculum = curriculum_from_config(cfg, smoke);
  if (opt.variant == "answer_only" || opt.variant == "explicit_cot") {
    const auto kind = opt.variant == "answer_only" ? SequenceKind::latent : SequenceKind::explicit_cot;
    train_variant(cfg, opt.variant, {baseline_plan(curriculum, kind)}, std::nullopt, false, log);
    return;
  }
  if (opt.variant != "onevl") throw std::invalid_argument("unknown training variant '" + opt.variant + "'");
  if (smoke || opt.stages == "desk" || opt.stages.empty()) {
    train_variant(cfg, "onevl", curriculum, std::nullopt, false, log);
    return;
  }
  std::size_t first = 0;
  auto plans = select_stages(curriculum, opt.stages, first);
  std::optional<ModelBundle> start;
  if (first > 0) {
    const Paths p = paths(cfg);
    const Vocab vocab = variant_vocab(cfg, "onevl");
    const auto prev = p.checkpoints("onevl") / (curriculum[first - 1].name + ".ckpt");
    start = load_checked(prev, vocab, config_hash(cfg), false, "train --stages " + curriculum[first - 1].name);
  }
  train_variant(cfg, "onevl", plans, std::move(start), first > 0, log);
}

void cmd_ablate(const RunConfig& cfg, const std::string& variant, bool smoke, std::ostream& log) {
  const auto curriculum = curriculum_from_config(cfg, smoke);
  if (variant == "no_vis") {
    train_variant(cfg, variant, without_visual_decoder(curriculum), std::nullopt, false, log);
  } else if (variant == "no_lang") {
    train_variant(cfg, variant, without_language_decoder(curriculum), std::nullopt, false, log);
  } else if (variant == "no_staging") {
    train_variant(cfg, variant, {no_staging_plan(curriculum)}, std::nullopt, false, log);
  } else if (variant == "mlp_head") {
    if (!cfg.model.with_head) throw std::invalid_argument("mlp_head ablation needs model.with_head = true");
    const Paths p = paths(cfg);
    const Vocab vocab = variant_vocab(cfg, "onevl");
    ModelBundle start = load_checked(p.final_ckpt("onevl"), vocab, config_hash(cfg), false, "train");
    StagePlan head = head_plan(cfg.training.head_epochs, cfg.training.head_lr, cfg.training.batch_size);
    if (smoke) {
      head.epochs = 0;
      head.steps = 3;
      head.batch_size = 4;
    }
    train_variant(cfg, variant, {head}, std::move(start), false, log);
  } else {
    throw std::invalid_argument("unknown ablation '" + variant + "' (no_vis, no_lang, no_staging, mlp_head)");
  }
}

void cmd_eval(const RunConfig& cfg, const EvalOptions& opt, std::ostream& log) {
  const Paths p = paths(cfg);
  const std::string hash = config_hash(cfg);
  const Vocab latent_vocab = variant_vocab(cfg, "onevl");
  const Vocab plain_vocab = variant_vocab(cfg, "answer_only");
  const Splits latent = load_splits(p, latent_vocab, false);
  const Splits plain = load_splits(p, plain_vocab, false);

  std::vector<DecodeMode> modes;
  for (const auto& m : cfg.eval.modes) modes.push_back(decode_mode_from_string(m));

  // The head ablation carries the full model plus a trained head, so it can
  // serve every mode; without it the mlp_head mode is dropped.
  const bool have_head = fs::exists(p.final_ckpt("mlp_head"));
  const std::string main_variant = have_head ? "mlp_head" : "onevl";
  if (!have_head) std::erase(modes, DecodeMode::mlp_head);

  std::vector<std::pair<std::string, ModelBundle>> bundles;
  bundles.emplace_back("onevl", load_checked(p.final_ckpt(main_variant), latent_vocab, hash,
                                             opt.allow_config_mismatch, have_head ? "ablate mlp_head" : "train"));
  std::vector<BenchmarkEntry> entries;
  for (const char* v : {"answer_only", "explicit_cot", "no_vis", "no_lang", "no_staging"}) {
    if (!fs::exists(p.final_ckpt(v))) continue;
    const Vocab& vocab = is_baseline(v) ? plain_vocab : latent_vocab;
    bundles.emplace_back(v, load_checked(p.final_ckpt(v), vocab, hash, opt.allow_config_mismatch, "train"));
  }
  for (const auto& [name, bundle] : bundles) {
    BenchmarkEntry e;
    e.variant = name;
    e.bundle = &bundle;
    if (name == "onevl") {
      e.vocab = &latent_vocab;
      e.test = &latent.test;
      e.modes = modes;
      e.latency = true;
      e.meta_action = bundle.cfg.latent_lang_count > 0;
    } else if (is_baseline(name)) {
      e.vocab = &plain_vocab;
      e.test = &plain.test;
      e.modes = {name == "answer_only" ? DecodeMode::answer_only : DecodeMode::explicit_cot};
    } else {
      e.vocab = &latent_vocab;
      e.test = &latent.test;
      e.modes = {DecodeMode::latent_prefill};
    }
    entries.push_back(e);
  }
  BenchmarkOptions bo;
  bo.test_limit = cfg.eval.test_limit;
  bo.latency_samples = cfg.eval.latency_samples;
  bo.latency_runs = cfg.eval.latency_runs;
  bo.latency_warmup = cfg.eval.latency_warmup;
  bo.config_hash = hash;
  BenchmarkReport report = run_benchmark(entries, bo);
  read_loss_curves(p.log("onevl"), report.loss_curves);
  write_report(p.root / "report", report);
  for (const auto& r : report.rows) {
    ojson j;
    j["event"] = "eval";
    j["variant"] = r.variant;
    j["mode"] = r.mode;
    j["ade"] = r.metrics.ade;
    j["fde"] = r.metrics.fde;
    j["n_decode_failures"] = r.metrics.n_decode_failures;
    j["median_latency_s"] = r.median_latency_s;
    log << j.dump() << '\n';
  }
}

void write_raster_pgm(const fs::path& path, const Raster& r) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "P2\n" << r.width << ' ' << r.height << "\n" << kNumCellClasses - 1 << '\n';
  for (int y = 0; y < r.height; ++y) {
    for (int x = 0; x < r.width; ++x) {
      os << static_cast<int>(r.cells[static_cast<std::size_t>(y * r.width + x)]) << (x + 1 < r.width ? " " : "\n");
    }
  }
}

void cmd_explain(const RunConfig& cfg, const std::vector<std::string>& sample_ids, std::ostream& log) {
  const Paths p = paths(cfg);
  const Vocab vocab = variant_vocab(cfg, "onevl");
  require(p.codebook(), "train-vq");
  const Codebook cb = load_codebook(p.codebook());
  const ModelBundle bundle = load_checked(p.final_ckpt("onevl"), vocab, config_hash(cfg), false, "train");
  std::map<std::string, std::vector<Sample>> splits;
  for (const char* s : kSplits) {
    require(p.data(s), "build-data");
    splits[s] = read_samples(p.data(s));
  }
  auto find = [&](const std::string& id) -> const Sample& {
    if (const auto colon = id.find(':'); colon != std::string::npos) {
      const auto it = splits.find(id.substr(0, colon));
      const std::size_t index = std::stoull(id.substr(colon + 1));
      if (it == splits.end() || index >= it->second.size()) throw std::invalid_argument("no sample '" + id + "'");
      return it->second[index];
    }
    const std::uint64_t seed = std::stoull(id);
    for (const auto& [name, samples] : splits) {
      for (const auto& s : samples) {
        if (s.seed == seed) return s;
      }
    }
    throw std::invalid_argument("no sample with id " + id);
  };
  const InferenceEngine engine(bundle, vocab, &cb);
  for (const std::string& id : sample_ids) {
    const Sample& sample = find(id);
    const auto it = &sample;
    const TokenizedSample ts = tokenize_sample(*it, vocab, cb);
    const Explanation ex = engine.explain(ts);
    std::string dirname = id;
    std::replace(dirname.begin(), dirname.end(), ':', '_');
    const fs::path dir = p.root / "explain" / dirname;
    fs::create_directories(dir);
    write_raster_pgm(dir / "future_0_5s.pgm", ex.future[0]);
    write_raster_pgm(dir / "future_1_0s.pgm", ex.future[1]);
    const auto meta = extract_meta_action(ex.cot_text);
    std::ofstream os(dir / "explanation.txt", std::ios::binary | std::ios::trunc);
    os << "sample " << it->seed << " scenario " << to_string(it->scenario) << '\n'
       << "decoded: " << ex.cot_text << '\n'
       << "reference: " << it->cot_text << '\n'
       << "decoded meta-action: " << (meta ? std::string(to_string(*meta)) : std::string("unparsed")) << '\n'
       << "reference meta-action: " << to_string(it->meta_action) << '\n'
       << "future cell accuracy: " << cell_accuracy(ex.future[0], it->frame_future[0]) << ' '
       << cell_accuracy(ex.future[1], it->frame_future[1]) << '\n';
    ojson j;
    j["event"] = "explain";
    j["sample"] = id;
    j["dir"] = dir.string();
    log << j.dump() << '\n';
  }
}

}  // namespace onevl
