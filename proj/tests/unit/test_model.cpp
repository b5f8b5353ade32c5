#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "fixtures.hpp"
#include "onevl/inference.hpp"
#include "onevl/model.hpp"

using namespace onevl;
using onevl::support::small_bundle;
using onevl::support::small_world;

namespace {

double max_abs_diff(const Tensor& t, const RMat<double>& m, std::size_t row0 = 0) {
  double worst = 0.0;
  for (std::size_t r = 0; r < static_cast<std::size_t>(m.rows()); ++r) {
    for (std::size_t c = 0; c < t.cols(); ++c) {
      worst = std::max(worst, std::abs(t.at(row0 + r, c) - m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c))));
    }
  }
  return worst;
}

std::vector<double> group_grads(const ModelBundle& b, const std::string& group) {
  std::vector<double> g;
  for (const auto& p : b.params.all()) {
    if (p.group() != group) continue;
    if (p.value.has_grad()) {
      g.insert(g.end(), p.value.grad().begin(), p.value.grad().end());
    } else {
      g.insert(g.end(), p.value.numel(), 0.0);
    }
  }
  return g;
}

}  // namespace

TEST(Model, ShapesOfForwardOutputs) {
  const auto& w = small_world();
  const ModelBundle b = small_bundle(1);
  const auto& s = w.train[0];
  const auto l = build_training_sequence(s, w.vocab);
  const auto out = backbone_forward(b, l, patch_features(s.frame_now, 4));
  EXPECT_EQ(out.hidden_last.shape(), (Shape{l.ids.size(), 16}));
  EXPECT_EQ(out.logits.shape(), (Shape{l.ids.size(), static_cast<std::size_t>(w.vocab.size())}));
  EXPECT_EQ(out.H_v.shape(), (Shape{4, 16}));
  EXPECT_EQ(out.H_l.shape(), (Shape{2, 16}));
  EXPECT_EQ(out.V_embed.shape(), (Shape{64, 16}));
  const auto lang = lang_aux_forward(b, out.V_embed, out.H_l, lang_targets(s, w.vocab));
  EXPECT_EQ(lang.logits.shape(), (Shape{s.cot_ids.size() + 1, static_cast<std::size_t>(w.vocab.text_size())}));
  const auto vis = vis_aux_forward(b, out.V_embed, out.H_v, s.future_ids, w.vocab);
  EXPECT_EQ(vis.logits.shape(), (Shape{s.future_ids.size(), 34}));
  EXPECT_EQ(mlp_head_forward(b, head_input(out)).shape(), (Shape{8, 2}));
  const auto tail = backbone_forward(b, l, patch_features(s.frame_now, 4), l.answer.begin - 1);
  EXPECT_EQ(tail.logits.rows(), l.ids.size() - l.answer.begin + 1);
}

TEST(Model, CacheRunnerMatchesGraphForward) {
  const auto& w = small_world();
  const ModelBundle b = small_bundle(2);
  const InferenceEngine eng(b, w.vocab, &w.cb);
  for (std::size_t i = 0; i < 5; ++i) {
    const auto& s = w.val[i];
    const auto l = build_training_sequence(s, w.vocab);
    const auto ref = backbone_forward(b, l, patch_features(s.frame_now, 4));
    const RMat<double> x = eng.backbone_inputs(l, s.frame_now);
    // Full pass.
    auto cache = eng.backbone().new_cache();
    const RMat<double> h = eng.backbone().forward(cache, x);
    EXPECT_LT(max_abs_diff(ref.hidden_last, h), 1e-10);
    // Split pass: a prefix, then one row at a time.
    auto c2 = eng.backbone().new_cache();
    const Eigen::Index cut = static_cast<Eigen::Index>(l.image.end + 1);
    const RMat<double> head = eng.backbone().forward(c2, x.topRows(cut));
    EXPECT_LT(max_abs_diff(ref.hidden_last, head), 1e-10);
    for (Eigen::Index r = cut; r < x.rows(); ++r) {
      const RMat<double> row = eng.backbone().forward(c2, x.middleRows(r, 1));
      EXPECT_LT(max_abs_diff(ref.hidden_last, row, static_cast<std::size_t>(r)), 1e-10);
      const RVec<double> lg = eng.backbone().logits(row.row(0));
      for (Eigen::Index c = 0; c < lg.cols(); ++c) {
        ASSERT_NEAR(lg(c), ref.logits.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c)), 1e-10);
      }
    }
  }
}

TEST(Model, BackboneIsCausal) {
  const auto& w = small_world();
  const ModelBundle b = small_bundle(3);
  const auto& s = w.train[4];
  auto l = build_training_sequence(s, w.vocab);
  const auto feats = patch_features(s.frame_now, 4);
  const auto a = backbone_forward(b, l, feats);
  const std::size_t j = l.answer.begin + 3;
  l.ids[j] = w.vocab.lattice(50);
  const auto c = backbone_forward(b, l, feats);
  double before = 0.0, after = 0.0;
  for (std::size_t r = 0; r < l.ids.size(); ++r) {
    for (std::size_t k = 0; k < 16; ++k) {
      const double d = std::abs(a.hidden_last.at(r, k) - c.hidden_last.at(r, k));
      (r < j ? before : after) = std::max(r < j ? before : after, d);
    }
  }
  EXPECT_EQ(before, 0.0);
  EXPECT_GT(after, 1e-6);
}

TEST(Model, LambdaScalesAuxGradients) {
  // Gradient of the total on a decoder equals lambda times the gradient of
  // that decoder's loss alone.
  const auto& w = small_world();
  const auto& s = w.train[3];
  const auto l = build_training_sequence(s, w.vocab);
  auto grads = [&](bool total, const std::string& group) {
    ModelBundle b = small_bundle(4);
    const auto out = backbone_forward(b, l, patch_features(s.frame_now, 4));
    const Tensor Lc = main_loss(out, l);
    const Tensor Ll = lang_aux_forward(b, out.V_embed, out.H_l, lang_targets(s, w.vocab)).loss;
    const Tensor Lv = vis_aux_forward(b, out.V_embed, out.H_v, s.future_ids, w.vocab).loss;
    if (total) {
      total_loss(Lc, Ll, Lv, 0.7, 0.1).backward();
    } else {
      (group == "dec_v" ? Lv : Ll).backward();
    }
    return group_grads(b, group);
  };
  for (const auto& [group, lambda] : {std::pair{std::string("dec_v"), 0.1}, std::pair{std::string("dec_l"), 0.7}}) {
    const auto gt = grads(true, group);
    const auto ga = grads(false, group);
    ASSERT_EQ(gt.size(), ga.size());
    double worst = 0.0, norm = 0.0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      worst = std::max(worst, std::abs(gt[i] - lambda * ga[i]));
      norm = std::max(norm, std::abs(ga[i]));
    }
    EXPECT_GT(norm, 0.0) << group;
    EXPECT_LT(worst, 1e-12 * std::max(1.0, norm)) << group;
  }
}

TEST(Model, MainLossMatchesBruteForce) {
  const auto& w = small_world();
  const ModelBundle b = small_bundle(5);
  const auto& s = w.train[6];
  const auto l = build_training_sequence(s, w.vocab);
  NoGradGuard ng;
  const auto out = backbone_forward(b, l, patch_features(s.frame_now, 4));
  double total = 0.0;
  int n = 0;
  for (std::size_t p = 0; p + 1 < l.ids.size(); ++p) {
    if (!l.loss_mask[p + 1]) continue;
    double z = 0.0, m = -1e300;
    for (std::size_t c = 0; c < out.logits.cols(); ++c) m = std::max(m, out.logits.at(p, c));
    for (std::size_t c = 0; c < out.logits.cols(); ++c) z += std::exp(out.logits.at(p, c) - m);
    total += m + std::log(z) - out.logits.at(p, static_cast<std::size_t>(l.ids[p + 1]));
    ++n;
  }
  EXPECT_EQ(n, static_cast<int>(l.ids.size() - l.image.end - 1));
  EXPECT_NEAR(main_loss(out, l).item(), total / n, 1e-10);
}

TEST(Model, TotalLossRejectsNonFinite) {
  const Tensor one = Tensor::from({1}, {1.0});
  const Tensor nan = Tensor::from({1}, {std::nan("")});
  EXPECT_NEAR(total_loss(one, one, one).item(), 1.0 + kLambdaLang + kLambdaVis, 1e-15);
  EXPECT_THROW(total_loss(one, nan, one), NumericError);
  EXPECT_THROW(total_loss(one, one, Tensor{}), NumericError);
}

TEST(Model, VisualIdMapping) {
  const auto& w = small_world();
  for (int k = 0; k < 34; ++k) EXPECT_EQ(visual_local_id(visual_global_id(k, w.vocab), w.vocab), k);
  EXPECT_THROW(visual_local_id(w.vocab.bos, w.vocab), std::out_of_range);
  EXPECT_THROW(visual_global_id(34, w.vocab), std::out_of_range);
}

TEST(Model, InitIsSeededAndChecked) {
  const auto& w = small_world();
  const auto a = init_bundle(w.model, w.vocab, 9);
  const auto b = init_bundle(w.model, w.vocab, 9);
  for (std::size_t i = 0; i < a.params.all().size(); ++i) {
    const auto x = a.params.all()[i].value.data();
    const auto y = b.params.all()[i].value.data();
    EXPECT_TRUE(std::equal(x.begin(), x.end(), y.begin()));
  }
  EXPECT_THROW(init_bundle(w.model, Vocab(32, 0, 0), 1), std::invalid_argument);
  ModelConfig bad = w.model;
  bad.n_heads = 3;
  EXPECT_THROW(init_bundle(bad, w.vocab, 1), std::invalid_argument);
  for (const auto& g : kGroups) EXPECT_TRUE(a.has_group(g)) << g;
  ModelConfig headless = w.model;
  headless.with_head = false;
  EXPECT_FALSE(init_bundle(headless, w.vocab, 1).has_group("head"));
}

TEST(Model, BundleCheckpointRoundTrip) {
  const auto& w = small_world();
  const ModelBundle b = small_bundle(6);
  const auto path = std::filesystem::temp_directory_path() / "onevl_model_test" / "b.ckpt";
  save_bundle(path, b, "abc123");
  const auto back = load_bundle(path, w.vocab);
  EXPECT_EQ(back.config_hash, "abc123");
  EXPECT_EQ(back.bundle.cfg, b.cfg);
  for (const auto& p : b.params.all()) {
    const auto x = p.value.data();
    const auto y = back.bundle.params.get(p.name).value.data();
    EXPECT_TRUE(std::equal(x.begin(), x.end(), y.begin())) << p.name;
  }
  EXPECT_EQ(model_config_from_json(model_config_json(b.cfg)), b.cfg);
  EXPECT_THROW(load_bundle(path.parent_path() / "none.ckpt", w.vocab), std::runtime_error);
}

TEST(Model, OverfitsFourSamples) {
  // A short run of plain Adam on four samples must drive every loss down.
  const auto& w = small_world();
  ModelBundle b = init_bundle(w.model, w.vocab, 7);
  AdamW opt;
  auto losses = [&](const TokenizedSample& s) {
    const auto l = build_training_sequence(s, w.vocab);
    const auto out = backbone_forward(b, l, patch_features(s.frame_now, 4));
    return std::array<Tensor, 3>{main_loss(out, l),
                                 lang_aux_forward(b, out.V_embed, out.H_l, lang_targets(s, w.vocab)).loss,
                                 vis_aux_forward(b, out.V_embed, out.H_v, s.future_ids, w.vocab).loss};
  };
  std::array<double, 3> first{}, last{};
  for (int step = 0; step < 60; ++step) {
    b.params.zero_grad();
    std::array<double, 3> acc{};
    for (std::size_t i = 0; i < 4; ++i) {
      const auto L = losses(w.train[i]);
      scale(total_loss(L[0], L[1], L[2], 1.0, 1.0), 0.25).backward();
      for (int k = 0; k < 3; ++k) acc[static_cast<std::size_t>(k)] += L[static_cast<std::size_t>(k)].item() / 4;
    }
    if (step == 0) first = acc;
    last = acc;
    opt.step(b.params, 3e-3);
  }
  for (int k = 0; k < 3; ++k) EXPECT_LT(last[static_cast<std::size_t>(k)], 0.5 * first[static_cast<std::size_t>(k)]) << k;
}
