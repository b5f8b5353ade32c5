#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <json.hpp>

#include "fixtures.hpp"
#include "onevl/training.hpp"

using namespace onevl;
using onevl::support::small_world;

namespace {

std::vector<TokenizedSample> head_of(const std::vector<TokenizedSample>& v, std::size_t n) {
  return {v.begin(), v.begin() + static_cast<std::ptrdiff_t>(std::min(n, v.size()))};
}

bool same_values(const ParamStore& a, const ParamStore& b, const std::string& group) {
  for (const auto& p : a.all()) {
    if (p.group() != group) continue;
    const auto x = p.value.data();
    const auto y = b.get(p.name).value.data();
    if (!std::equal(x.begin(), x.end(), y.begin())) return false;
  }
  return true;
}

StagePlan plan_of(const std::string& name) {
  for (auto& p : default_curriculum(Scale::smoke)) {
    if (p.name == name) return p;
  }
  throw std::logic_error(name);
}

}  // namespace

TEST(Training, CurriculumShape) {
  const auto c = default_curriculum(Scale::desk);
  ASSERT_EQ(c.size(), 4u);
  EXPECT_EQ(c[0].name, "pretrain");
  EXPECT_TRUE(c[0].L_p);
  EXPECT_EQ(c[0].trainable, (std::vector<std::string>{"dec_v", "w_v"}));
  EXPECT_EQ(c[1].trainable, (std::vector<std::string>{"backbone", "patch"}));
  EXPECT_TRUE(c[1].L_c && !c[1].L_l && !c[1].L_v);
  EXPECT_DOUBLE_EQ(c[1].lr, 4e-5);
  EXPECT_EQ(c[1].epochs, 2);
  EXPECT_TRUE(!c[2].L_c && c[2].L_l && c[2].L_v);
  EXPECT_EQ(std::count(c[2].frozen.begin(), c[2].frozen.end(), "backbone"), 1);
  EXPECT_TRUE(c[3].L_c && c[3].L_l && c[3].L_v);
  EXPECT_EQ(c[3].epochs, 5);
  EXPECT_EQ(c[3].frozen, (std::vector<std::string>{"head"}));
  for (const auto& p : c) EXPECT_DOUBLE_EQ(p.clip_norm, 1.0);
}

TEST(Training, DerivedPlans) {
  const auto c = default_curriculum(Scale::desk);
  const auto joint = no_staging_plan(c);
  EXPECT_EQ(joint.name, "joint");
  EXPECT_EQ(joint.epochs, 5);
  EXPECT_LE(joint.clip_norm, 0.0);
  const auto nv = without_visual_decoder(c);
  ASSERT_EQ(nv.size(), 3u);
  for (const auto& p : nv) {
    EXPECT_FALSE(p.L_v);
    EXPECT_EQ(std::count(p.trainable.begin(), p.trainable.end(), "dec_v"), 0);
  }
  for (const auto& p : without_language_decoder(c)) {
    EXPECT_FALSE(p.L_l);
    EXPECT_EQ(std::count(p.frozen.begin(), p.frozen.end(), "dec_l"), 1);
  }
  const auto base = baseline_plan(c, SequenceKind::latent);
  EXPECT_EQ(base.epochs, 7);
  EXPECT_TRUE(base.L_c && !base.L_l);
  EXPECT_TRUE(base.track_best_val);
  const auto cot = baseline_plan(default_curriculum(Scale::smoke), SequenceKind::explicit_cot);
  EXPECT_EQ(cot.steps, 6);
  EXPECT_EQ(cot.name, "explicit_cot");
}

TEST(Training, ValidatePlanRejectsBadPlans) {
  const auto& w = small_world();
  const ModelBundle b = init_bundle(w.model, w.vocab, 1);
  StagePlan p = plan_of("stage0");
  EXPECT_NO_THROW(validate_plan(p, b));
  StagePlan overlap = p;
  overlap.frozen.push_back("backbone");
  EXPECT_THROW(validate_plan(overlap, b), std::invalid_argument);
  StagePlan missing = p;
  std::erase(missing.frozen, std::string("head"));
  EXPECT_THROW(validate_plan(missing, b), std::invalid_argument);
  StagePlan no_loss = p;
  no_loss.L_c = false;
  EXPECT_THROW(validate_plan(no_loss, b), std::invalid_argument);
  StagePlan no_steps = p;
  no_steps.steps = 0;
  no_steps.epochs = 0;
  EXPECT_THROW(validate_plan(no_steps, b), std::invalid_argument);

  ModelConfig base_cfg = w.model;
  base_cfg.latent_vis_count = base_cfg.latent_lang_count = 0;
  base_cfg.with_head = false;
  const ModelBundle base = init_bundle(base_cfg, Vocab(32, 0, 0), 1);
  EXPECT_THROW(validate_plan(plan_of("stage1"), base), std::invalid_argument);
  EXPECT_THROW(validate_plan(head_plan(1, 1e-3, 4), base), std::invalid_argument);
}

TEST(Training, FrozenGroupsAreBitIdentical) {
  const auto& w = small_world();
  ModelBundle b = init_bundle(w.model, w.vocab, 2);
  const ParamStore before = b.params.clone();
  const auto train = head_of(w.train, 8);
  TrainContext ctx;
  ctx.vocab = &w.vocab;
  ctx.train = &train;
  TrainState st;
  (void)run_stage(plan_of("stage1"), b, st, ctx);
  for (const char* g : {"backbone", "patch", "head"}) EXPECT_TRUE(same_values(before, b.params, g)) << g;
  for (const char* g : {"w_l", "w_v", "dec_l", "dec_v"}) EXPECT_FALSE(same_values(before, b.params, g)) << g;
}

TEST(Training, BatchGradientIsMeanOfSamples) {
  const auto& w = small_world();
  const auto train = head_of(w.train, 4);
  StagePlan p = plan_of("stage0");
  p.steps = 1;
  p.batch_size = 4;
  p.clip_norm = 0.0;

  // Oracle: per-sample gradients averaged by hand.
  ModelBundle ref = init_bundle(w.model, w.vocab, 3);
  ref.params.set_group_trainable("w_l", false);
  for (const char* g : {"w_v", "dec_l", "dec_v", "head"}) ref.params.set_group_trainable(g, false);
  std::map<std::string, std::vector<double>> mean;
  double loss = 0.0;
  for (const auto& s : train) {
    ref.params.zero_grad();
    const auto L = sample_losses(p, ref, s, w.vocab);
    loss += L.total.item() / 4.0;
    L.total.backward();
    for (const auto& q : ref.params.all()) {
      if (!q.trainable || !q.value.has_grad()) continue;
      auto& m = mean[q.name];
      m.resize(q.value.numel(), 0.0);
      for (std::size_t i = 0; i < m.size(); ++i) m[i] += q.value.grad()[i] / 4.0;
    }
  }
  double sq = 0.0;
  for (const auto& [name, g] : mean) {
    for (double x : g) sq += x * x;
  }

  ModelBundle b = init_bundle(w.model, w.vocab, 3);
  TrainContext ctx;
  ctx.vocab = &w.vocab;
  ctx.train = &train;
  std::optional<StepRecord> rec;
  ctx.on_step = [&](const StepRecord& r) { rec = r; };
  TrainState st;
  (void)run_stage(p, b, st, ctx);
  ASSERT_TRUE(rec);
  EXPECT_NEAR(rec->total, loss, 1e-12);
  EXPECT_NEAR(rec->grad_norm, std::sqrt(sq), 1e-10 * std::sqrt(sq));
  EXPECT_TRUE(rec->L_c.has_value());
  EXPECT_FALSE(rec->L_l.has_value());
}

TEST(Training, PipelineIsDeterministicAndResumable) {
  const auto& w = small_world();
  const auto train = head_of(w.train, 12);
  const auto val = head_of(w.val, 4);
  const auto plans = default_curriculum(Scale::smoke);
  auto run = [&](const std::vector<StagePlan>& ps, std::vector<std::string>& log) {
    TrainContext ctx;
    ctx.vocab = &w.vocab;
    ctx.train = &train;
    ctx.val = &val;
    ctx.log = [&](const std::string& l) { log.push_back(l); };
    return run_full_pipeline(ps, w.model, 5, ctx);
  };
  std::vector<std::string> log_a, log_b;
  const auto a = run(plans, log_a);
  const auto b = run(plans, log_b);
  EXPECT_EQ(log_a, log_b);
  EXPECT_EQ(nlohmann::json::parse(log_a.front()).at("event"), "config");
  EXPECT_EQ(nlohmann::json::parse(log_a.back()).at("event"), "summary");
  for (const auto& g : kGroups) EXPECT_TRUE(same_values(a.bundle.params, b.bundle.params, g)) << g;

  // The first two stages, then the last two from the stage-1 weights.
  std::vector<std::string> log_c;
  const std::vector<StagePlan> first(plans.begin(), plans.begin() + 2);
  const std::vector<StagePlan> rest(plans.begin() + 2, plans.end());
  const auto c = run(first, log_c);
  TrainContext ctx;
  ctx.vocab = &w.vocab;
  ctx.train = &train;
  ctx.val = &val;
  const auto d = run_pipeline(rest, c.bundle, 5, ctx);
  for (const auto& g : kGroups) EXPECT_TRUE(same_values(a.bundle.params, d.bundle.params, g)) << g;
}

TEST(Training, BestValidationWeightsRestored) {
  const auto& w = small_world();
  const auto train = head_of(w.train, 4);
  const auto val = head_of(w.val, 6);
  StagePlan p = plan_of("stage2");
  p.steps = 6;
  p.batch_size = 4;  // one step per epoch: a validation pass after every step
  p.lr = 3e-2;
  std::vector<double> seen;
  TrainContext ctx;
  ctx.vocab = &w.vocab;
  ctx.train = &train;
  ctx.val = &val;
  ctx.log = [&](const std::string& l) {
    const auto j = nlohmann::json::parse(l);
    if (j.at("event") == "val") seen.push_back(j.at("val_ade").get<double>());
  };
  const auto r = run_full_pipeline({p}, w.model, 8, ctx);
  ASSERT_EQ(seen.size(), 6u);
  EXPECT_DOUBLE_EQ(validation_ade(r.bundle, w.vocab, val, ctx.val_limit), *std::min_element(seen.begin(), seen.end()));
}

TEST(Training, NonFiniteLossIsFatal) {
  const auto& w = small_world();
  ModelBundle b = init_bundle(w.model, w.vocab, 4);
  b.params.get("backbone/lnf.g").value.mutable_data()[0] = std::nan("");
  const auto train = head_of(w.train, 4);
  TrainContext ctx;
  ctx.vocab = &w.vocab;
  ctx.train = &train;
  TrainState st;
  try {
    (void)run_stage(plan_of("stage0"), b, st, ctx);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos);
  }
}

TEST(Training, HeadStageTrainsOnlyHead) {
  const auto& w = small_world();
  ModelBundle b = init_bundle(w.model, w.vocab, 6);
  const ParamStore before = b.params.clone();
  const auto train = head_of(w.train, 8);
  TrainContext ctx;
  ctx.vocab = &w.vocab;
  ctx.train = &train;
  std::vector<double> losses;
  ctx.on_step = [&](const StepRecord& r) { losses.push_back(*r.L_h); };
  TrainState st;
  (void)run_stage(head_plan(10, 1e-2, 8), b, st, ctx);
  for (const auto& g : kGroups) {
    if (g != "head") EXPECT_TRUE(same_values(before, b.params, g)) << g;
  }
  EXPECT_LT(losses.back(), losses.front());
}

TEST(Training, StepRecordJson) {
  StepRecord r;
  r.stage = "stage1";
  r.step = 3;
  r.L_l = 0.5;
  r.total = 0.5;
  const auto j = nlohmann::json::parse(step_record_json(r));
  EXPECT_EQ(j.at("stage"), "stage1");
  EXPECT_TRUE(j.contains("L_l"));
  EXPECT_FALSE(j.contains("L_c"));
}
