#pragma once

#include "ifer/checkpoint.hpp"
#include "ifer/config.hpp"
#include "ifer/critic.hpp"
#include "ifer/encoder.hpp"
#include "ifer/fer_head.hpp"
#include "ifer/objectives.hpp"
#include "ifer/synthesis.hpp"

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace ifer {

/// Files a training stage leaves in its run directory.
struct StageResult {
  std::filesystem::path dir;
  std::filesystem::path checkpoint_path;  // dir / "checkpoint.ifer"
  std::filesystem::path report_path;      // dir / "report.json"
  uint64_t checkpoint_hash = 0;
  nlohmann::json report;
};

/// Adversarially trains the toy generator and patch critic on rendered faces,
/// then stores the generator's mean latent.
StageResult pretrain_generator(const RunConfig& cfg);

/// Trains encoder and critic against the frozen generator from cfg.init.
StageResult train_inversion(const RunConfig& cfg);

/// Continues inversion training on the labelled FER images.
StageResult finetune_inversion(const RunConfig& cfg);

/// Trains the fusion head and classifier (and the encoder) on expression labels.
StageResult train_fer(const RunConfig& cfg);

/// JSON report for cfg.mode (inversion or fer); also written to the run directory.
nlohmann::json evaluate(const RunConfig& cfg);

nlohmann::json invert(const RunConfig& cfg);
nlohmann::json mix(const RunConfig& cfg);
nlohmann::json viz_attn(const RunConfig& cfg);
nlohmann::json make_dataset(const RunConfig& cfg);

/// Keys every report of the given kind carries, in order:
/// "gan", "inversion", "finetune", "fer", "evaluate_inversion", "evaluate_fer".
const std::vector<std::string>& report_keys(const std::string& kind);

/// Inversion metrics of y against x: mse, psnr, ssim, perceptual_proxy and
/// fid_proxy (null when either set is smaller than the minimum).
nlohmann::json inversion_metrics(PerceptualTrunk& trunk, const torch::Tensor& x, const torch::Tensor& y);

/// Accuracy, confusion matrix and per-class precision/recall from predictions.
nlohmann::json classification_metrics(const torch::Tensor& predicted, const torch::Tensor& labels);

/// Models restored from a checkpoint; absent components stay null.
struct ModelSet {
  RunConfig config;  // architecture keys taken from the checkpoint record
  Checkpoint checkpoint;
  ToyGenerator generator{nullptr};
  PatchCritic gan_critic{nullptr};
  AsitEncoder encoder{nullptr};
  InversionCritic critic{nullptr};
  FerHead fer{nullptr};
};

/// Loads a checkpoint and rebuilds every component it contains. Architecture
/// keys of base are overridden by the checkpoint's record.
ModelSet load_models(const std::filesystem::path& path, const RunConfig& base);

/// Encoder followed by synthesis, evaluated in chunks without gradients.
torch::Tensor reconstruct(AsitEncoder& encoder, ToyGenerator& generator, const torch::Tensor& images);

/// Images and labels from a directory written by make-dataset.
std::pair<torch::Tensor, torch::Tensor> load_manifest(const std::filesystem::path& dir);

}  // namespace ifer
