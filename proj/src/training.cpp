#include "onevl/training.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <json.hpp>

#include "onevl/inference.hpp"
#include "onevl/metrics.hpp"
#include "onevl/rng.hpp"

namespace onevl {

namespace {

using ojson = nlohmann::ordered_json;

const std::vector<std::string> kMainGroups = {"backbone", "patch"};
const std::vector<std::string> kAuxGroups = {"w_l", "w_v", "dec_l", "dec_v"};

std::vector<std::string> complement(const std::vector<std::string>& trainable) {
  std::vector<std::string> out;
  for (const auto& g : kGroups) {
    if (std::find(trainable.begin(), trainable.end(), g) == trainable.end()) out.push_back(g);
  }
  return out;
}

StagePlan make_plan(std::string name, std::vector<std::string> trainable, double lr, int batch) {
  StagePlan p;
  p.name = std::move(name);
  p.frozen = complement(trainable);
  p.trainable = std::move(trainable);
  p.lr = lr;
  p.batch_size = batch;
  return p;
}

void erase_group(std::vector<std::string>& v, const std::string& g) { std::erase(v, g); }

std::uint64_t name_tag(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ULL;
  return h;
}

std::size_t first_supervised(const TokenLayout& l) {
  const auto it = std::find(l.loss_mask.begin(), l.loss_mask.end(), true);
  if (it == l.loss_mask.end()) throw std::invalid_argument("layout has no supervised tokens");
  return static_cast<std::size_t>(it - l.loss_mask.begin());
}

void set_optional(ojson& j, const char* key, const std::optional<double>& v) {
  if (v) j[key] = *v;
}

}  // namespace

void validate_plan(const StagePlan& plan, const ModelBundle& bundle) {
  std::set<std::string> t(plan.trainable.begin(), plan.trainable.end());
  std::set<std::string> f(plan.frozen.begin(), plan.frozen.end());
  for (const auto& g : t) {
    if (f.count(g)) throw std::invalid_argument(plan.name + ": group '" + g + "' is both trainable and frozen");
  }
  for (const auto& g : kGroups) {
    if (!t.count(g) && !f.count(g)) throw std::invalid_argument(plan.name + ": group '" + g + "' is unassigned");
  }
  if (!(plan.L_p || plan.L_c || plan.L_l || plan.L_v || plan.L_h)) {
    throw std::invalid_argument(plan.name + ": no active loss");
  }
  if (plan.batch_size <= 0 || (plan.epochs <= 0 && plan.steps <= 0)) {
    throw std::invalid_argument(plan.name + ": needs a positive batch size and epochs or steps");
  }
  bool any = false;
  for (const auto& g : t) any = any || bundle.has_group(g);
  if (!any) throw std::invalid_argument(plan.name + ": none of the trainable groups exist in the bundle");
  if ((plan.L_l || plan.L_h) && bundle.cfg.latent_lang_count == 0) {
    throw std::invalid_argument(plan.name + ": language losses need language latent tokens");
  }
  if (plan.L_v && bundle.cfg.latent_vis_count == 0) {
    throw std::invalid_argument(plan.name + ": L_v needs visual latent tokens");
  }
  if (plan.L_h && !bundle.has_group("head")) throw std::invalid_argument(plan.name + ": bundle has no head");
}

std::vector<StagePlan> default_curriculum(Scale scale, const CurriculumOptions& opt) {
  const bool smoke = scale == Scale::smoke;
  const int batch = smoke ? 4 : opt.batch_size;
  StagePlan pre = make_plan("pretrain", {"dec_v", "w_v"}, 1e-4, batch);
  pre.steps = smoke ? 3 : opt.pretrain_steps;
  pre.L_p = true;
  StagePlan s0 = make_plan("stage0", {"backbone", "patch"}, 4e-5, batch);
  s0.L_c = true;
  StagePlan s1 = make_plan("stage1", {"w_l", "w_v", "dec_l", "dec_v"}, 1e-4, batch);
  s1.L_l = s1.L_v = true;
  StagePlan s2 = make_plan("stage2", {"backbone", "patch", "w_l", "w_v", "dec_l", "dec_v"}, 1e-4, batch);
  s2.L_c = s2.L_l = s2.L_v = true;
  s2.track_best_val = true;
  if (smoke) {
    s0.steps = s1.steps = s2.steps = 3;
  } else {
    s0.epochs = 2;
    s1.epochs = 1;
    s2.epochs = 5;
  }
  return {pre, s0, s1, s2};
}

namespace {

const StagePlan& find_stage(const std::vector<StagePlan>& c, const std::string& name) {
  for (const auto& p : c) {
    if (p.name == name) return p;
  }
  throw std::invalid_argument("curriculum has no stage '" + name + "'");
}

}  // namespace

StagePlan no_staging_plan(const std::vector<StagePlan>& curriculum) {
  StagePlan p = find_stage(curriculum, "stage2");
  p.name = "joint";
  p.clip_norm = 0.0;
  return p;
}

std::vector<StagePlan> without_visual_decoder(std::vector<StagePlan> curriculum) {
  std::vector<StagePlan> out;
  for (auto& p : curriculum) {
    if (p.L_p) continue;
    p.L_v = false;
    for (const char* g : {"w_v", "dec_v"}) {
      erase_group(p.trainable, g);
      if (std::find(p.frozen.begin(), p.frozen.end(), g) == p.frozen.end()) p.frozen.push_back(g);
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<StagePlan> without_language_decoder(std::vector<StagePlan> curriculum) {
  for (auto& p : curriculum) {
    p.L_l = false;
    for (const char* g : {"w_l", "dec_l"}) {
      erase_group(p.trainable, g);
      if (std::find(p.frozen.begin(), p.frozen.end(), g) == p.frozen.end()) p.frozen.push_back(g);
    }
  }
  return curriculum;
}

StagePlan baseline_plan(const std::vector<StagePlan>& curriculum, SequenceKind sequence) {
  const auto& s0 = find_stage(curriculum, "stage0");
  const auto& s2 = find_stage(curriculum, "stage2");
  StagePlan p = make_plan(sequence == SequenceKind::latent ? "answer_only" : "explicit_cot", {"backbone", "patch"},
                          s2.lr, s2.batch_size);
  p.L_c = true;
  p.sequence = sequence;
  if (s0.steps > 0 || s2.steps > 0) {
    p.steps = s0.steps + s2.steps;
  } else {
    p.epochs = s0.epochs + s2.epochs;
  }
  p.track_best_val = sequence == SequenceKind::latent;
  return p;
}

StagePlan head_plan(int epochs, double lr, int batch_size) {
  StagePlan p = make_plan("head", {"head"}, lr, batch_size);
  p.epochs = epochs;
  p.L_h = true;
  return p;
}

SampleLosses sample_losses(const StagePlan& plan, const ModelBundle& b, const TokenizedSample& s, const Vocab& vocab) {
  SampleLosses out;
  const Tensor pf = patch_features(s.frame_now, b.cfg.patch);
  std::vector<Tensor> terms;
  if (plan.L_p) {
    const Tensor V = patch_embed(b, pf);
    out.L_p = vis_aux_forward(b, V, Tensor(), s.future_ids, vocab).loss;
    terms.push_back(*out.L_p);
  }
  if (plan.L_c || plan.L_l || plan.L_v || plan.L_h) {
    const TokenLayout layout = plan.sequence == SequenceKind::explicit_cot ? build_explicit_cot_sequence(s, vocab)
                                                                           : build_training_sequence(s, vocab);
    const std::size_t logits_from = plan.L_c ? first_supervised(layout) - 1 : layout.ids.size();
    const ForwardOutput fw = backbone_forward(b, layout, pf, logits_from);
    if (plan.L_c) out.L_c = main_loss(fw, layout);
    if (plan.L_l) out.L_l = lang_aux_forward(b, fw.V_embed, fw.H_l, lang_targets(s, vocab)).loss;
    if (plan.L_v) out.L_v = vis_aux_forward(b, fw.V_embed, fw.H_v, s.future_ids, vocab).loss;
    if (plan.L_h) out.L_h = mse(mlp_head_forward(b, head_input(fw)), trajectory_tensor(s.trajectory));
    if (out.L_c && out.L_l && out.L_v) {
      terms.push_back(total_loss(*out.L_c, *out.L_l, *out.L_v, plan.lambda_l, plan.lambda_v));
    } else {
      if (out.L_c) terms.push_back(*out.L_c);
      if (out.L_l) terms.push_back(scale(*out.L_l, plan.lambda_l));
      if (out.L_v) terms.push_back(scale(*out.L_v, plan.lambda_v));
    }
    if (out.L_h) terms.push_back(*out.L_h);
  }
  out.total = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) out.total = add(out.total, terms[i]);
  return out;
}

double validation_ade(const ModelBundle& bundle, const Vocab& vocab, const std::vector<TokenizedSample>& samples,
                      std::size_t limit) {
  const InferenceEngine engine(bundle, vocab);
  const bool latent = bundle.cfg.latent_vis_count + bundle.cfg.latent_lang_count > 0;
  const DecodeMode mode = latent ? DecodeMode::latent_prefill : DecodeMode::answer_only;
  const std::size_t n = std::min(limit, samples.size());
  std::vector<std::optional<Trajectory>> preds;
  std::vector<Trajectory> gts;
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = engine.predict(samples[i], mode);
    preds.push_back(p.ok ? std::optional<Trajectory>(p.trajectory) : std::nullopt);
    gts.push_back(samples[i].trajectory);
  }
  return aggregate_metrics(preds, gts).ade;
}

std::string step_record_json(const StepRecord& r) {
  ojson j;
  j["event"] = "step";
  j["stage"] = r.stage;
  j["step"] = r.step;
  j["lr"] = r.lr;
  set_optional(j, "L_p", r.L_p);
  set_optional(j, "L_c", r.L_c);
  set_optional(j, "L_l", r.L_l);
  set_optional(j, "L_v", r.L_v);
  set_optional(j, "L_h", r.L_h);
  j["total"] = r.total;
  j["grad_norm"] = r.grad_norm;
  return j.dump();
}

StageReport run_stage(const StagePlan& plan, ModelBundle& bundle, TrainState& state, const TrainContext& ctx) {
  if (ctx.train == nullptr || ctx.train->empty() || ctx.vocab == nullptr) {
    throw std::invalid_argument(plan.name + ": empty training set");
  }
  validate_plan(plan, bundle);
  for (const auto& g : plan.trainable) {
    if (bundle.has_group(g)) bundle.params.set_group_trainable(g, true);
  }
  for (const auto& g : plan.frozen) {
    if (bundle.has_group(g)) bundle.params.set_group_trainable(g, false);
  }
  const CheckedModeGuard checked(ctx.checked);
  const auto& train = *ctx.train;
  const std::size_t n = train.size();
  const std::size_t B = std::min<std::size_t>(static_cast<std::size_t>(plan.batch_size), n);
  const std::size_t per_epoch = (n + B - 1) / B;
  const std::size_t total_steps =
      plan.steps > 0 ? static_cast<std::size_t>(plan.steps) : static_cast<std::size_t>(plan.epochs) * per_epoch;

  AdamW opt;
  Rng rng(mix_seed(state.seed, name_tag(plan.name)));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order);
  std::size_t cursor = 0;

  StageReport report;
  report.name = plan.name;
  auto save = [&](const std::string& file) {
    const auto path = ctx.checkpoint_dir / file;
    save_bundle(path, bundle, ctx.config_hash);
    return path;
  };

  for (std::size_t step = 0; step < total_steps; ++step) {
    bundle.params.zero_grad();
    StepRecord rec;
    rec.stage = plan.name;
    rec.step = step;
    const double inv_b = 1.0 / static_cast<double>(B);
    auto accumulate = [&](std::optional<double>& slot, const std::optional<Tensor>& t) {
      if (t) slot = slot.value_or(0.0) + t->item() * inv_b;
    };
    for (std::size_t k = 0; k < B; ++k) {
      if (cursor == n) {
        rng.shuffle(order);
        cursor = 0;
      }
      const TokenizedSample& s = train[order[cursor++]];
      const SampleLosses L = sample_losses(plan, bundle, s, *ctx.vocab);
      const double value = L.total.item();
      if (!std::isfinite(value)) {
        throw TrainingError(plan.name + ": non-finite loss at step " + std::to_string(step));
      }
      rec.total += value * inv_b;
      accumulate(rec.L_p, L.L_p);
      accumulate(rec.L_c, L.L_c);
      accumulate(rec.L_l, L.L_l);
      accumulate(rec.L_v, L.L_v);
      accumulate(rec.L_h, L.L_h);
      if (L.total.requires_grad()) L.total.backward(inv_b);
    }
    rec.grad_norm = plan.clip_norm > 0 ? clip_grad_norm(bundle.params, plan.clip_norm)
                                       : global_grad_norm(bundle.params);
    if (!std::isfinite(rec.grad_norm)) {
      throw TrainingError(plan.name + ": non-finite gradient at step " + std::to_string(step));
    }
    rec.lr = cosine_lr(plan.lr, step, total_steps);
    opt.step(bundle.params, rec.lr);
    ++state.global_step;
    state.total_history.push_back(rec.total);
    report.final_total = rec.total;
    if (ctx.log) ctx.log(step_record_json(rec));
    if (ctx.on_step) ctx.on_step(rec);

    const bool epoch_end = (step + 1) % per_epoch == 0 || step + 1 == total_steps;
    if (plan.track_best_val && epoch_end && ctx.val != nullptr && !ctx.val->empty()) {
      const double ade = validation_ade(bundle, *ctx.vocab, *ctx.val, ctx.val_limit);
      if (ctx.log) {
        ojson j;
        j["event"] = "val";
        j["stage"] = plan.name;
        j["step"] = step;
        j["val_ade"] = ade;
        ctx.log(j.dump());
      }
      if (ade < state.best_val) {
        state.best_val = ade;
        state.best_params = bundle.params.clone();
        if (!ctx.checkpoint_dir.empty()) report.best_checkpoint = save(plan.name + "_best.ckpt");
      }
    }
  }
  report.steps = total_steps;
  if (ctx.val != nullptr && !ctx.val->empty()) {
    report.val_ade = validation_ade(bundle, *ctx.vocab, *ctx.val, ctx.val_limit);
  }
  if (!ctx.checkpoint_dir.empty()) report.checkpoint = save(plan.name + ".ckpt");
  if (ctx.log) {
    ojson j;
    j["event"] = "stage_end";
    j["stage"] = plan.name;
    j["steps"] = total_steps;
    j["final_total"] = report.final_total;
    if (report.val_ade) j["val_ade"] = *report.val_ade;
    ctx.log(j.dump());
  }
  return report;
}

PipelineResult run_full_pipeline(const std::vector<StagePlan>& plans, const ModelConfig& model, std::uint64_t seed,
                                 const TrainContext& ctx) {
  if (ctx.vocab == nullptr) throw std::invalid_argument("run_full_pipeline: no vocabulary");
  return run_pipeline(plans, init_bundle(model, *ctx.vocab, mix_seed(seed, 1)), seed, ctx);
}

PipelineResult run_pipeline(const std::vector<StagePlan>& plans, ModelBundle start, std::uint64_t seed,
                            const TrainContext& ctx) {
  const ModelConfig model = start.cfg;
  PipelineResult result{std::move(start), {}};
  if (ctx.log) {
    ojson j;
    j["event"] = "config";
    j["config_hash"] = ctx.config_hash;
    j["seed"] = seed;
    j["model"] = ojson::parse(model_config_json(model));
    ojson stages = ojson::array();
    for (const auto& p : plans) stages.push_back(p.name);
    j["stages"] = stages;
    ctx.log(j.dump());
  }
  TrainState state;
  state.seed = seed;
  for (const auto& plan : plans) {
    if (plan.track_best_val) {
      state.best_val = std::numeric_limits<double>::infinity();
      state.best_params.reset();
    }
    result.stages.push_back(run_stage(plan, result.bundle, state, ctx));
    if (plan.track_best_val && state.best_params) {
      result.bundle.params = std::move(*state.best_params);
      state.best_params.reset();
    }
  }
  if (ctx.log) {
    ojson j;
    j["event"] = "summary";
    j["config_hash"] = ctx.config_hash;
    j["seed"] = seed;
    j["steps"] = state.global_step;
    ojson st = ojson::array();
    for (const auto& r : result.stages) {
      ojson s;
      s["stage"] = r.name;
      s["steps"] = r.steps;
      s["final_total"] = r.final_total;
      if (r.val_ade) s["val_ade"] = *r.val_ade;
      st.push_back(s);
    }
    j["stages"] = st;
    ctx.log(j.dump());
  }
  return result;
}

}  // namespace onevl
