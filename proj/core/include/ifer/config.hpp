#pragma once

#include "ifer/critic.hpp"
#include "ifer/encoder.hpp"
#include "ifer/fer_head.hpp"
#include "ifer/objectives.hpp"
#include "ifer/synthesis.hpp"
#include "ifer/toy_faces.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace ifer {

enum class Stage { gan, inversion, finetune, fer, evaluate, invert, mix, viz_attn, make_dataset };

std::string to_string(Stage s);
Stage stage_from_string(const std::string& name);

/// Everything a run depends on. Keys of the flat config file map one-to-one to
/// fields; architecture keys are the same strings stored in checkpoint records.
struct RunConfig {
  Stage stage = Stage::gan;
  uint64_t seed = 0;
  int64_t iterations = 0;
  int64_t batch_size = 8;
  double lr = 1e-4;
  std::string optimizer = "adam";  // adam | adamw
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.0;
  double encoder_lr_scale = 1.0;   // FER stage: encoder lr = lr * scale
  int64_t log_every = 50;

  LossWeights weights{};
  int64_t mean_latent_samples = 4096;

  // Data. Training images are rendered in memory from (data_seed, split).
  uint64_t data_seed = 1;
  int64_t train_size = 2048;
  int64_t heldout_size = 256;
  int64_t fer_train_size = 2100;
  int64_t fer_test_size = 700;
  Split eval_split = Split::test;
  std::string dataset;             // optional directory written by make-dataset
  int64_t count = 700;             // make-dataset size

  // Paths and per-command inputs.
  std::string out_dir;             // relative paths resolve against the output root
  std::string init;                // input checkpoint
  std::vector<std::string> images;
  std::string image_a, image_b;
  int64_t crossover = 5;
  std::string mode = "inversion";  // evaluate: inversion | fer
  bool from_scratch = false;

  EncoderConfig encoder{};
  GeneratorConfig generator{};
  CriticConfig critic{};
  FerHeadConfig fer{};

  /// Desk defaults for a stage.
  static RunConfig defaults(Stage stage);

  void set(const std::string& key, const std::string& value);
  void apply(const std::map<std::string, std::string>& values);
  std::map<std::string, std::string> to_map() const;

  /// Architecture keys of the generator and trunk critic (the pretraining output).
  std::map<std::string, std::string> gan_record() const;
  /// Architecture keys of every component.
  std::map<std::string, std::string> full_record() const;

  /// Throws ConfigError on inconsistent values or unresolvable input paths.
  void validate() const;

  /// Absolute output directory for this run.
  std::filesystem::path output_dir() const;
};

struct KeyDoc {
  std::string key;
  std::string doc;
};

/// Every accepted key with a one-line description, in file order.
std::vector<KeyDoc> config_keys();

/// Parses "key = value" lines; '#' starts a comment. Unknown keys are not
/// checked here (RunConfig::set rejects them).
std::map<std::string, std::string> read_config_file(const std::filesystem::path& path);

/// $IFER_OUTPUT_ROOT, or ./runs when unset.
std::filesystem::path output_root();

}  // namespace ifer
