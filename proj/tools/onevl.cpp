// onevl: dataset, codec, training, evaluation and explanation commands.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "onevl/app.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Latent chain-of-thought driving model on a synthetic grid world"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path;
  app.add_option("-c,--config", config_path, "JSON run configuration (defaults apply to missing keys)");

  auto* build = app.add_subcommand("build-data", "Generate the train/val/test splits");
  auto* vq = app.add_subcommand("train-vq", "Fit the visual codebook and write offline token files");

  onevl::TrainOptions train_opt;
  auto* train = app.add_subcommand("train", "Run the staged curriculum or a baseline");
  train->add_option("--stages", train_opt.stages, "desk, smoke, or a comma list of stage names");
  train->add_option("--variant", train_opt.variant, "onevl, answer_only or explicit_cot")
      ->check(CLI::IsMember(onevl::kTrainVariants));

  std::string ablation;
  bool ablate_smoke = false;
  auto* ablate = app.add_subcommand("ablate", "Train an ablation variant");
  ablate->add_option("variant", ablation, "no_vis, no_lang, no_staging or mlp_head")
      ->required()
      ->check(CLI::IsMember(onevl::kAblations));
  ablate->add_flag("--smoke", ablate_smoke, "Run the short smoke schedule");

  onevl::EvalOptions eval_opt;
  auto* eval = app.add_subcommand("eval", "Benchmark every trained variant and write the report");
  eval->add_flag("--allow-config-mismatch", eval_opt.allow_config_mismatch,
                 "Accept checkpoints trained under a different config hash");

  std::vector<std::string> ids;
  auto* explain = app.add_subcommand("explain", "Decode CoT text and future rasters for sample ids");
  explain->add_option("ids", ids, "Sample ids: dataset seeds or split:index")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    const onevl::RunConfig cfg = config_path.empty() ? onevl::RunConfig{} : onevl::load_run_config(config_path);
    if (*build) onevl::cmd_build_data(cfg, std::cout);
    if (*vq) onevl::cmd_train_vq(cfg, std::cout);
    if (*train) onevl::cmd_train(cfg, train_opt, std::cout);
    if (*ablate) onevl::cmd_ablate(cfg, ablation, ablate_smoke, std::cout);
    if (*eval) onevl::cmd_eval(cfg, eval_opt, std::cout);
    if (*explain) onevl::cmd_explain(cfg, ids, std::cout);
  } catch (const std::exception& e) {
    std::cerr << "onevl: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
