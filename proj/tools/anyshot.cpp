// anyshot: train and evaluate cross-modal sketch/image retrieval models.
#include <iostream>

#include <CLI11.hpp>

#include "anyshot/errors.hpp"
#include "anyshot/experiment.hpp"
#include "anyshot/log.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Any-shot sketch-based image retrieval"};
  app.require_subcommand(1, 1);

  anyshot::CommandOptions opt;
  std::size_t k = 0;
  std::string setting;
  std::string out;
  std::uint64_t seed = 0;

  auto add_common = [&](CLI::App* sub, bool with_k) {
    sub->add_option("--config", opt.config, "experiment config file")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out, "output directory (overrides output.dir)");
    if (with_k) sub->add_option("--k", k, "shots per unseen class (overrides split.k)");
  };

  add_common(app.add_subcommand("build-sideinfo", "write the fused side-information table"), false);
  add_common(app.add_subcommand("train", "train on the seen classes"), false);
  add_common(app.add_subcommand("finetune", "fine-tune a trained model on k shots per unseen class"), true);
  auto* evaluate = app.add_subcommand("evaluate", "evaluate a trained model");
  add_common(evaluate, true);
  evaluate->add_option("--setting", setting,
                       "zero_shot, generalized_zero_shot, few_shot, generalized_few_shot or fine_grained");
  evaluate->add_flag("--binary", opt.binary, "rank ITQ codes by Hamming distance");
  add_common(app.add_subcommand("prune-sweep", "retrain with pruned side information"), false);
  add_common(app.add_subcommand("ablate", "train every loss configuration"), true);
  add_common(app.add_subcommand("gradcheck", "finite-difference check of every gradient"), false);
  auto* synth = app.add_subcommand("synth", "write the synthetic benchmark and its config");
  synth->add_option("--out", out, "output directory")->required();
  synth->add_option("--seed", seed, "benchmark seed");

  CLI11_PARSE(app, argc, argv);

  CLI::App* chosen = app.get_subcommands().front();
  opt.subcommand = chosen->get_name();
  if (!out.empty()) opt.out = out;
  auto given = [&](const char* name) {
    const CLI::Option* o = chosen->get_option_no_throw(name);
    return o != nullptr && o->count() > 0;
  };
  if (given("--k")) opt.k = k;
  if (!setting.empty()) opt.setting = setting;
  if (given("--seed")) opt.seed = seed;

  try {
    return anyshot::run_command(opt);
  } catch (const anyshot::Error& e) {
    anyshot::log::error(e.what());
    return 2;
  } catch (const std::exception& e) {
    anyshot::log::error(std::string("unexpected failure: ") + e.what());
    return 3;
  }
}
