// Command line front end: one subcommand per pipeline stage.
//
//   ifer <command> --seed N [--config run.cfg] [--key value ...]
//
// Values come from the stage defaults, then the config file, then flags.
#include "ifer/config.hpp"
#include "ifer/errors.hpp"
#include "ifer/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <map>
#include <optional>

namespace {

struct Command {
  const char* name;
  ifer::Stage stage;
  const char* help;
};

constexpr Command kCommands[] = {
    {"pretrain-gan", ifer::Stage::gan, "train the toy generator and its critic on rendered faces"},
    {"train-inversion", ifer::Stage::inversion, "train encoder and critic against the frozen generator"},
    {"finetune", ifer::Stage::finetune, "continue inversion training on the labelled FER images"},
    {"train-fer", ifer::Stage::fer, "train the fusion head and classifier on expression labels"},
    {"evaluate", ifer::Stage::evaluate, "report inversion or FER metrics for a checkpoint"},
    {"invert", ifer::Stage::invert, "write source/inversion grids for PNG images"},
    {"mix", ifer::Stage::mix, "write a style-mixing grid for two PNG images"},
    {"viz-attn", ifer::Stage::viz_attn, "write attention overlays for PNG images"},
    {"make-dataset", ifer::Stage::make_dataset, "render a labelled toy-face split to PNG files"},
};

nlohmann::json run(const ifer::RunConfig& cfg) {
  using ifer::Stage;
  switch (cfg.stage) {
    case Stage::gan: return ifer::pretrain_generator(cfg).report;
    case Stage::inversion: return ifer::train_inversion(cfg).report;
    case Stage::finetune: return ifer::finetune_inversion(cfg).report;
    case Stage::fer: return ifer::train_fer(cfg).report;
    case Stage::evaluate: return ifer::evaluate(cfg);
    case Stage::invert: return ifer::invert(cfg);
    case Stage::mix: return ifer::mix(cfg);
    case Stage::viz_attn: return ifer::viz_attn(cfg);
    case Stage::make_dataset: return ifer::make_dataset(cfg);
  }
  throw ifer::ConfigError("unhandled command");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Toy-scale face inversion and expression recognition.\n"
               "Outputs go under $IFER_OUTPUT_ROOT (default ./runs)."};
  app.require_subcommand(1);

  std::string config_path;
  std::string seed;
  std::map<std::string, std::string> flags;
  const auto keys = ifer::config_keys();

  for (const auto& c : kCommands) {
    auto* sub = app.add_subcommand(c.name, c.help);
    sub->add_option("--config", config_path, "flat key = value file")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "RNG seed (required)")->required();
    for (const auto& k : keys)
      if (k.key != "seed") sub->add_option("--" + k.key, flags[k.key], k.doc);
  }

  CLI11_PARSE(app, argc, argv);

  const CLI::App* chosen = app.get_subcommands().front();
  const Command* command = nullptr;
  for (const auto& c : kCommands)
    if (chosen->get_name() == c.name) command = &c;

  try {
    auto cfg = ifer::RunConfig::defaults(command->stage);
    if (!config_path.empty()) cfg.apply(ifer::read_config_file(config_path));
    for (const auto& k : keys)
      if (k.key != "seed" && chosen->count("--" + k.key) > 0) cfg.set(k.key, flags[k.key]);
    cfg.set("seed", seed);
    std::cout << run(cfg).dump(2) << '\n';
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
