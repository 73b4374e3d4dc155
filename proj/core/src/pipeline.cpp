#include "ifer/pipeline.hpp"

#include "ifer/alignment.hpp"
#include "ifer/errors.hpp"
#include "ifer/image_io.hpp"
#include "ifer/toy_faces.hpp"
#include "ifer/util.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

namespace ifer {

namespace {

constexpr const char* kCheckpointFile = "checkpoint.ifer";
constexpr const char* kReportFile = "report.json";
constexpr const char* kLogFile = "losses.jsonl";
constexpr int64_t kChunk = 32;

// Stream tags for mix_seed; each purpose draws from its own generator.
enum : uint64_t {
  kTagBatches = 1,
  kTagNoise = 2,
  kTagCritic = 3,
  kTagMeanLatent = 4,
  kTagFidNoise = 5,
  kTagFerData = 6,
};

at::Generator make_generator(uint64_t seed) { return at::detail::createCPUGenerator(seed); }

/// Shuffled minibatch indices, reshuffled every epoch.
class Batcher {
 public:
  Batcher(int64_t n, int64_t batch, uint64_t seed) : n_(n), batch_(batch), gen_(make_generator(seed)) {
    if (n < 1) throw ConfigError("empty training set");
  }

  torch::Tensor next() {
    std::vector<torch::Tensor> parts;
    int64_t need = batch_;
    while (need > 0) {
      if (pos_ >= n_ || !order_.defined()) {
        order_ = torch::randperm(n_, gen_, torch::kLong);
        pos_ = 0;
      }
      const auto take = std::min(need, n_ - pos_);
      parts.push_back(order_.narrow(0, pos_, take));
      pos_ += take;
      need -= take;
    }
    return parts.size() == 1 ? parts[0] : torch::cat(parts);
  }

 private:
  int64_t n_, batch_;
  at::Generator gen_;
  torch::Tensor order_;
  int64_t pos_ = 0;
};

struct LabelledSet {
  torch::Tensor images;
  torch::Tensor labels;
};

LabelledSet render_set(int64_t n, uint64_t seed, Split split) {
  auto samples = sample_dataset(n, seed, split);
  return {stack_images(samples), stack_labels(samples)};
}

uint64_t fer_data_seed(const RunConfig& cfg) { return mix_seed(cfg.data_seed, kTagFerData); }

std::unique_ptr<torch::optim::Optimizer> make_optimizer(std::vector<torch::optim::OptimizerParamGroup> groups,
                                                        const RunConfig& cfg) {
  if (cfg.optimizer == "adamw") {
    auto opts = torch::optim::AdamWOptions(cfg.lr).betas({cfg.beta1, cfg.beta2}).weight_decay(cfg.weight_decay);
    return std::make_unique<torch::optim::AdamW>(std::move(groups), opts);
  }
  auto opts = torch::optim::AdamOptions(cfg.lr).betas({cfg.beta1, cfg.beta2});
  return std::make_unique<torch::optim::Adam>(std::move(groups), opts);
}

std::unique_ptr<torch::optim::Optimizer> make_optimizer(std::vector<torch::Tensor> params, const RunConfig& cfg) {
  std::vector<torch::optim::OptimizerParamGroup> groups;
  groups.emplace_back(std::move(params));
  return make_optimizer(std::move(groups), cfg);
}

std::vector<torch::Tensor> trainable(const torch::nn::Module& m) {
  std::vector<torch::Tensor> out;
  for (const auto& p : m.parameters())
    if (p.requires_grad()) out.push_back(p);
  return out;
}

/// One JSON object per step in losses.jsonl, plus a short stderr line every log_every steps.
class StepLog {
 public:
  StepLog(const std::filesystem::path& path, std::string stage, int64_t every)
      : out_(path), stage_(std::move(stage)), every_(every) {
    if (!out_) throw LoadError("cannot write " + path.string());
  }

  void write(int64_t iteration, const nlohmann::json& terms) {
    nlohmann::json line = terms;
    line["iteration"] = iteration;
    out_ << line.dump() << '\n';
    if (iteration % every_ == 0) std::cerr << "[" << stage_ << " " << iteration << "] " << terms.dump() << '\n';
  }

 private:
  std::ofstream out_;
  std::string stage_;
  int64_t every_;
};

void check_loss(double value, const std::string& stage, int64_t iteration, const nlohmann::json& terms) {
  if (!std::isfinite(value))
    throw DivergenceError(stage + " diverged at iteration " + std::to_string(iteration) + ": " + terms.dump());
}

nlohmann::json breakdown_json(const LossBreakdown& b) {
  nlohmann::json j;
  j["total"] = b.total_value;
  for (const auto& [name, v] : b.terms()) j[name] = v;
  return j;
}

std::filesystem::path prepare_dir(const RunConfig& cfg) {
  auto dir = cfg.output_dir();
  std::filesystem::create_directories(dir);
  return dir;
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw LoadError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

StageResult finish(const std::filesystem::path& dir, Checkpoint& ckpt, nlohmann::json report) {
  ckpt.capture_rng();
  StageResult r;
  r.dir = dir;
  r.checkpoint_path = dir / kCheckpointFile;
  r.report_path = dir / kReportFile;
  ckpt.save(r.checkpoint_path);
  r.checkpoint_hash = ckpt.hash();
  report["checkpoint_hash"] = hex64(r.checkpoint_hash);
  report["checkpoint"] = r.checkpoint_path.string();
  write_json(r.report_path, report);
  r.report = std::move(report);
  return r;
}

void expect_stage(const Checkpoint& ckpt, std::initializer_list<const char*> allowed, const std::string& who) {
  std::string list;
  for (const auto* s : allowed) {
    if (ckpt.stage == s) return;
    list += (list.empty() ? "" : ", ") + std::string(s);
  }
  throw ConfigError(who + " needs a checkpoint of stage " + list + ", got '" + ckpt.stage + "'");
}

void require_frozen(ToyGenerator& g, uint64_t before, const std::string& stage) {
  const auto after = parameter_checksum(*g);
  if (after != before)
    throw FrozenContractError(stage + ": generator checksum changed from " + hex64(before) + " to " + hex64(after));
}

torch::Tensor predict(AsitEncoder& encoder, FerHead& head, const torch::Tensor& images) {
  torch::NoGradGuard no_grad;
  const bool was_training = head->is_training();
  head->eval();  // running batch-norm statistics
  std::vector<torch::Tensor> parts;
  for (int64_t i = 0; i < images.size(0); i += kChunk) {
    auto out = encoder->forward(images.narrow(0, i, std::min(kChunk, images.size(0) - i)));
    parts.push_back(head->logits(head->fuse(out.codes, out.structure)).argmax(1));
  }
  head->train(was_training);
  return torch::cat(parts);
}

std::map<std::string, std::string> inversion_record(const RunConfig& cfg) {
  auto r = cfg.gan_record();
  for (auto& kv : cfg.encoder.record()) r.insert(kv);
  for (auto& kv : cfg.critic.record()) r.insert(kv);
  return r;
}

// Shared by train_inversion and finetune_inversion.
struct InversionRun {
  const RunConfig& cfg;
  ToyGenerator generator;
  PatchCritic gan_critic;
  AsitEncoder encoder;
  InversionCritic critic;

  nlohmann::json train(const torch::Tensor& data, const torch::Tensor& heldout, const std::filesystem::path& dir) {
    const auto stage = to_string(cfg.stage);
    set_requires_grad(*generator, false);
    const auto frozen = parameter_checksum(*generator);
    PerceptualTrunk trunk(gan_critic->trunk);

    auto initial = inversion_metrics(trunk, heldout, reconstruct(encoder, generator, heldout));

    auto opt_e = make_optimizer(trainable(*encoder), cfg);
    auto opt_c = make_optimizer(trainable(*critic->query), cfg);
    Batcher batches(data.size(0), cfg.batch_size, mix_seed(cfg.seed, kTagBatches));
    StepLog log(dir / kLogFile, stage, cfg.log_every);
    nlohmann::json last = nlohmann::json::object();

    for (int64_t it = 0; it < cfg.iterations; ++it) {
      auto x = data.index_select(0, batches.next());
      const auto step_seed = mix_seed(mix_seed(cfg.seed, kTagCritic), static_cast<uint64_t>(it));
      auto enc = encoder->forward(x);
      auto trace = generator->synthesize(enc.structure, enc.codes);

      double critic_value = 0.0;
      if (cfg.weights.adversarial > 0) {
        auto closs = critic_loss(critic, x, trace.image, step_seed);
        opt_c->zero_grad();
        closs.backward();
        opt_c->step();
        critic_value = closs.item<double>();
      }

      InversionLossInputs in{x, trace.image, enc.codes, generator->w_avg, &critic, step_seed, &enc.pyramid,
                             &trace.features};
      auto loss = composite_inversion_loss(in, trunk, cfg.weights);
      last = breakdown_json(loss);
      last["critic"] = critic_value;
      check_loss(loss.total_value + critic_value, stage, it, last);
      opt_e->zero_grad();
      loss.total.backward();
      opt_e->step();
      if (cfg.weights.adversarial > 0) critic->update_key();
      log.write(it, last);
    }
    require_frozen(generator, frozen, stage);

    auto final_metrics = inversion_metrics(trunk, heldout, reconstruct(encoder, generator, heldout));
    nlohmann::json report;
    report["stage"] = stage;
    report["seed"] = cfg.seed;
    report["iterations"] = cfg.iterations;
    report["initial"] = initial;
    report["final"] = final_metrics;
    report["final_losses"] = last;
    report["generator_checksum"] = hex64(frozen);
    report["proxy_metrics"] = true;
    return report;
  }

  Checkpoint checkpoint() const {
    Checkpoint c;
    c.stage = to_string(cfg.stage);
    c.iteration = static_cast<uint64_t>(cfg.iterations);
    c.architecture = inversion_record(cfg);
    c.store("generator", *generator);
    c.store("gan_critic", *gan_critic);
    c.store("encoder", *encoder);
    c.store("critic", *critic);
    return c;
  }
};

}  // namespace

const std::vector<std::string>& report_keys(const std::string& kind) {
  static const std::map<std::string, std::vector<std::string>> schemas = {
      {"gan",
       {"stage", "seed", "iterations", "final_losses", "fid_proxy_initial", "fid_proxy_final", "generator_checksum",
        "proxy_metrics", "checkpoint_hash", "checkpoint"}},
      {"inversion",
       {"stage", "seed", "iterations", "initial", "final", "final_losses", "generator_checksum", "proxy_metrics",
        "checkpoint_hash", "checkpoint"}},
      {"finetune",
       {"stage", "seed", "iterations", "initial", "final", "final_losses", "generator_checksum", "proxy_metrics",
        "checkpoint_hash", "checkpoint"}},
      {"fer",
       {"stage", "seed", "iterations", "fusion", "from_scratch", "final_loss", "accuracy", "chance", "confusion",
        "per_class", "warnings", "generator_checksum", "checkpoint_hash", "checkpoint"}},
      {"evaluate_inversion",
       {"mode", "stage", "checkpoint_hash", "n_images", "mse", "psnr", "ssim", "perceptual_proxy", "fid_proxy",
        "proxy_metrics"}},
      {"evaluate_fer", {"mode", "stage", "checkpoint_hash", "n_images", "accuracy", "confusion", "per_class"}},
      {"metrics_inversion", {"mse", "psnr", "ssim", "perceptual_proxy", "fid_proxy"}},
      {"metrics_fer", {"accuracy", "confusion", "per_class"}},
  };
  auto it = schemas.find(kind);
  if (it == schemas.end()) throw ConfigError("no report schema named '" + kind + "'");
  return it->second;
}

nlohmann::json inversion_metrics(PerceptualTrunk& trunk, const torch::Tensor& x, const torch::Tensor& y) {
  if (x.sizes() != y.sizes()) throw ShapeError("inversion_metrics: image sets differ in shape");
  torch::NoGradGuard no_grad;
  const double mse = pixel_loss(x, y).item<double>();
  double perceptual = 0.0, ssim_sum = 0.0;
  const auto n = x.size(0);
  for (int64_t i = 0; i < n; i += kChunk) {
    const auto len = std::min(kChunk, n - i);
    auto xs = x.narrow(0, i, len), ys = y.narrow(0, i, len);
    perceptual += trunk.perceptual_distance(xs, ys).item<double>() * double(len);
    ssim_sum += ssim(xs, ys).item<double>() * double(len);
  }
  nlohmann::json j;
  j["mse"] = mse;
  j["psnr"] = psnr_from_mse(mse);
  j["ssim"] = ssim_sum / double(n);
  j["perceptual_proxy"] = perceptual / double(n);
  j["fid_proxy"] = n >= kMinFidSetSize ? nlohmann::json(fid_proxy(trunk, y, x)) : nlohmann::json(nullptr);
  return j;
}

nlohmann::json classification_metrics(const torch::Tensor& predicted, const torch::Tensor& labels) {
  if (predicted.numel() != labels.numel()) throw ShapeError("classification_metrics: one prediction per label");
  auto p = predicted.to(torch::kLong).reshape({-1});
  auto l = labels.to(torch::kLong).reshape({-1});
  std::vector<std::vector<int64_t>> confusion(kNumExpressions, std::vector<int64_t>(kNumExpressions, 0));
  int64_t correct = 0;
  for (int64_t i = 0; i < l.numel(); ++i) {
    const auto t = l[i].item<int64_t>(), q = p[i].item<int64_t>();
    if (t < 0 || t >= kNumExpressions || q < 0 || q >= kNumExpressions)
      throw ValidationError("classification_metrics: class index out of range");
    ++confusion[t][q];
    correct += t == q;
  }
  nlohmann::json per_class = nlohmann::json::array();
  for (int64_t c = 0; c < kNumExpressions; ++c) {
    int64_t support = 0, predicted_c = 0;
    for (int64_t k = 0; k < kNumExpressions; ++k) {
      support += confusion[c][k];
      predicted_c += confusion[k][c];
    }
    const auto tp = confusion[c][c];
    per_class.push_back({{"name", kExpressionNames[c]},
                         {"precision", predicted_c ? double(tp) / double(predicted_c) : 0.0},
                         {"recall", support ? double(tp) / double(support) : 0.0},
                         {"support", support}});
  }
  nlohmann::json j;
  j["accuracy"] = l.numel() ? double(correct) / double(l.numel()) : 0.0;
  j["confusion"] = confusion;
  j["per_class"] = per_class;
  return j;
}

torch::Tensor reconstruct(AsitEncoder& encoder, ToyGenerator& generator, const torch::Tensor& images) {
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> parts;
  for (int64_t i = 0; i < images.size(0); i += kChunk) {
    auto out = encoder->forward(images.narrow(0, i, std::min(kChunk, images.size(0) - i)));
    parts.push_back(generator->synthesize(out.structure, out.codes).image);
  }
  return torch::cat(parts);
}

ModelSet load_models(const std::filesystem::path& path, const RunConfig& base) {
  ModelSet m;
  m.checkpoint = Checkpoint::load(path);
  m.config = base;
  try {
    m.config.apply(m.checkpoint.architecture);
  } catch (const ConfigError& e) {
    throw LoadError(path.string() + ": unusable architecture record: " + e.what());
  }
  const auto& c = m.config;
  const auto& ck = m.checkpoint;
  if (!ck.has_prefix("generator")) throw LoadError(path.string() + ": checkpoint holds no generator");
  m.generator = ToyGenerator(c.generator);
  ck.restore("generator", *m.generator);
  if (ck.has_prefix("gan_critic")) {
    m.gan_critic = PatchCritic(c.critic.trunk);
    ck.restore("gan_critic", *m.gan_critic);
  }
  if (ck.has_prefix("encoder")) {
    m.encoder = AsitEncoder(c.encoder);
    ck.restore("encoder", *m.encoder);
  }
  if (ck.has_prefix("critic")) {
    m.critic = InversionCritic(c.critic);
    ck.restore("critic", *m.critic);
  }
  if (ck.has_prefix("fer")) {
    m.fer = FerHead(c.fer);
    ck.restore("fer", *m.fer);
  }
  return m;
}

std::pair<torch::Tensor, torch::Tensor> load_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.csv");
  if (!in) throw LoadError("cannot read " + (dir / "manifest.csv").string());
  std::string line;
  std::getline(in, line);  // header
  std::vector<torch::Tensor> images;
  std::vector<int64_t> labels;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string file, label;
    std::getline(ss, file, ',');
    std::getline(ss, label, ',');
    images.push_back(read_png(dir / file, kFaceSize));
    labels.push_back(static_cast<int64_t>(expression_from_string(label)));
  }
  if (images.empty()) throw LoadError((dir / "manifest.csv").string() + " lists no images");
  return {torch::stack(images), torch::tensor(labels, torch::kLong)};
}

StageResult pretrain_generator(const RunConfig& cfg_in) {
  auto cfg = cfg_in;
  cfg.stage = Stage::gan;
  cfg.validate();
  const auto dir = prepare_dir(cfg);
  seed_everything(cfg.seed);

  ToyGenerator generator(cfg.generator);
  PatchCritic critic(cfg.critic.trunk);
  auto data = render_set(cfg.train_size, cfg.data_seed, Split::train).images;
  const auto z_dim = cfg.generator.z_dim;

  auto fid_gen = make_generator(mix_seed(cfg.seed, kTagFidNoise));
  const auto fid_n = std::max<int64_t>(kMinFidSetSize, std::min<int64_t>(256, data.size(0)));
  auto fid_z = torch::randn({fid_n, z_dim}, fid_gen);
  auto sample = [&](const torch::Tensor& z) {
    torch::NoGradGuard no_grad;
    std::vector<torch::Tensor> parts;
    for (int64_t i = 0; i < z.size(0); i += kChunk)
      parts.push_back(
          generator->synthesize_from_constant(generator->sample_codes(z.narrow(0, i, std::min(kChunk, z.size(0) - i))))
              .image);
    return torch::cat(parts);
  };
  auto initial_samples = sample(fid_z);

  auto opt_g = make_optimizer(generator->parameters(), cfg);
  auto opt_d = make_optimizer(critic->parameters(), cfg);
  Batcher batches(data.size(0), cfg.batch_size, mix_seed(cfg.seed, kTagBatches));
  auto noise = make_generator(mix_seed(cfg.seed, kTagNoise));
  StepLog log(dir / kLogFile, "gan", cfg.log_every);
  nlohmann::json last = nlohmann::json::object();

  for (int64_t it = 0; it < cfg.iterations; ++it) {
    auto x = data.index_select(0, batches.next());
    torch::Tensor fake;
    {
      torch::NoGradGuard no_grad;
      fake = generator->synthesize_from_constant(generator->sample_codes(torch::randn({cfg.batch_size, z_dim}, noise)))
                 .image;
    }
    auto d_loss = (critic->forward(x) - 1.0).pow(2).mean() + (critic->forward(fake) + 1.0).pow(2).mean();
    opt_d->zero_grad();
    d_loss.backward();
    opt_d->step();

    auto codes = generator->sample_codes(torch::randn({cfg.batch_size, z_dim}, noise));
    auto image = generator->synthesize_from_constant(codes).image;
    torch::Tensor g_loss;
    {
      FreezeGuard frozen(*critic);
      g_loss = (critic->forward(image) - 1.0).pow(2).mean();
    }
    opt_g->zero_grad();
    g_loss.backward();
    opt_g->step();

    last = {{"critic", d_loss.item<double>()}, {"generator", g_loss.item<double>()}};
    check_loss(last["critic"].get<double>() + last["generator"].get<double>(), "gan", it, last);
    log.write(it, last);
  }

  {
    torch::NoGradGuard no_grad;
    generator->w_avg.copy_(
        generator->mapping->mean_latent(cfg.mean_latent_samples, mix_seed(cfg.seed, kTagMeanLatent)));
  }
  auto final_samples = sample(fid_z);
  auto reference = data.narrow(0, 0, fid_n);

  // Both sets are scored by the final critic trunk so the comparison shares one embedding.
  PerceptualTrunk trunk(critic->trunk);

  nlohmann::json report;
  report["stage"] = "gan";
  report["seed"] = cfg.seed;
  report["iterations"] = cfg.iterations;
  report["final_losses"] = last;
  report["fid_proxy_initial"] = fid_proxy(trunk, initial_samples, reference);
  report["fid_proxy_final"] = fid_proxy(trunk, final_samples, reference);
  report["generator_checksum"] = hex64(parameter_checksum(*generator));
  report["proxy_metrics"] = true;

  Checkpoint ckpt;
  ckpt.stage = "gan";
  ckpt.iteration = static_cast<uint64_t>(cfg.iterations);
  ckpt.architecture = cfg.gan_record();
  ckpt.store("generator", *generator);
  ckpt.store("gan_critic", *critic);
  return finish(dir, ckpt, std::move(report));
}

StageResult train_inversion(const RunConfig& cfg_in) {
  auto cfg = cfg_in;
  cfg.stage = Stage::inversion;
  cfg.validate();
  auto models = load_models(cfg.init, cfg);
  expect_stage(models.checkpoint, {"gan"}, "train-inversion");
  models.checkpoint.require_architecture(cfg.gan_record());
  if (!models.gan_critic) throw LoadError(cfg.init + ": checkpoint holds no pretraining critic");
  const auto dir = prepare_dir(cfg);

  seed_everything(cfg.seed);
  InversionRun run{cfg, models.generator, models.gan_critic, AsitEncoder(cfg.encoder), InversionCritic(cfg.critic)};
  run.encoder->set_latent_offset(run.generator->w_avg);
  run.critic->load_trunk(run.gan_critic->trunk);

  auto data = render_set(cfg.train_size, cfg.data_seed, Split::train).images;
  auto heldout = render_set(cfg.heldout_size, cfg.data_seed, Split::test).images;
  auto report = run.train(data, heldout, dir);
  auto ckpt = run.checkpoint();
  return finish(dir, ckpt, std::move(report));
}

StageResult finetune_inversion(const RunConfig& cfg_in) {
  auto cfg = cfg_in;
  cfg.stage = Stage::finetune;
  cfg.validate();
  auto models = load_models(cfg.init, cfg);
  expect_stage(models.checkpoint, {"inversion", "finetune"}, "finetune");
  models.checkpoint.require_architecture(inversion_record(cfg));
  const auto dir = prepare_dir(cfg);

  seed_everything(cfg.seed);
  InversionRun run{cfg, models.generator, models.gan_critic, models.encoder, models.critic};
  auto data = render_set(cfg.fer_train_size, fer_data_seed(cfg), Split::train).images;
  auto heldout = render_set(cfg.heldout_size, cfg.data_seed, Split::test).images;
  auto report = run.train(data, heldout, dir);
  auto ckpt = run.checkpoint();
  return finish(dir, ckpt, std::move(report));
}

StageResult train_fer(const RunConfig& cfg_in) {
  auto cfg = cfg_in;
  cfg.stage = Stage::fer;
  cfg.validate();
  auto models = load_models(cfg.init, cfg);
  if (cfg.from_scratch) {
    models.checkpoint.require_architecture(cfg.gan_record());
  } else {
    expect_stage(models.checkpoint, {"inversion", "finetune"}, "train-fer");
    models.checkpoint.require_architecture(inversion_record(cfg));
  }
  const auto dir = prepare_dir(cfg);
  auto generator = models.generator;
  set_requires_grad(*generator, false);
  const auto frozen = parameter_checksum(*generator);

  seed_everything(cfg.seed);
  AsitEncoder encoder = models.encoder;
  if (cfg.from_scratch) {
    encoder = AsitEncoder(cfg.encoder);
    encoder->set_latent_offset(generator->w_avg);
  }
  FerHead head(cfg.fer);

  auto train = render_set(cfg.fer_train_size, fer_data_seed(cfg), Split::train);
  auto test = render_set(cfg.fer_test_size, cfg.data_seed, Split::test);

  nlohmann::json warnings = nlohmann::json::array();
  {
    auto counts = torch::bincount(train.labels, {}, kNumExpressions);
    const auto lo = counts.min().item<int64_t>(), hi = counts.max().item<int64_t>();
    if (lo == 0 || double(hi) / double(lo) > 1.5) {
      const std::string msg = "class-imbalanced training set: per-class counts range from " + std::to_string(lo) +
                              " to " + std::to_string(hi);
      std::cerr << "warning: " << msg << '\n';
      warnings.push_back(msg);
    }
  }

  std::vector<torch::optim::OptimizerParamGroup> groups;
  groups.emplace_back(head->parameters());
  groups.emplace_back(encoder->parameters());
  auto opt = make_optimizer(std::move(groups), cfg);
  opt->param_groups()[1].options().set_lr(cfg.lr * cfg.encoder_lr_scale);

  Batcher batches(train.images.size(0), cfg.batch_size, mix_seed(cfg.seed, kTagBatches));
  StepLog log(dir / kLogFile, "fer", cfg.log_every);
  double last_loss = 0.0;
  for (int64_t it = 0; it < cfg.iterations; ++it) {
    auto idx = batches.next();
    auto out = encoder->forward(train.images.index_select(0, idx));
    auto loss = fer_loss(head->forward(out.codes, out.structure), train.labels.index_select(0, idx));
    last_loss = loss.item<double>();
    nlohmann::json terms = {{"fer", last_loss}};
    check_loss(last_loss, "fer", it, terms);
    opt->zero_grad();
    loss.backward();
    opt->step();
    log.write(it, terms);
  }
  require_frozen(generator, frozen, "fer");
  {
    // The encoder moved during training, so lagging running averages would not describe it.
    torch::NoGradGuard no_grad;
    std::vector<torch::Tensor> pooled;
    for (int64_t i = 0; i < train.images.size(0); i += kChunk) {
      auto out = encoder->forward(train.images.narrow(0, i, std::min(kChunk, train.images.size(0) - i)));
      pooled.push_back(head->fuse(out.codes, out.structure).mean({2, 3}));
    }
    head->calibrate(torch::cat(pooled));
  }

  auto metrics = classification_metrics(predict(encoder, head, test.images), test.labels);
  nlohmann::json report;
  report["stage"] = "fer";
  report["seed"] = cfg.seed;
  report["iterations"] = cfg.iterations;
  report["fusion"] = to_string(cfg.fer.mode);
  report["from_scratch"] = cfg.from_scratch;
  report["final_loss"] = last_loss;
  report["accuracy"] = metrics["accuracy"];
  report["chance"] = 1.0 / double(kNumExpressions);
  report["confusion"] = metrics["confusion"];
  report["per_class"] = metrics["per_class"];
  report["warnings"] = warnings;
  report["generator_checksum"] = hex64(frozen);

  Checkpoint ckpt;
  ckpt.stage = "fer";
  ckpt.iteration = static_cast<uint64_t>(cfg.iterations);
  ckpt.architecture = cfg.gan_record();
  for (auto& kv : cfg.encoder.record()) ckpt.architecture.insert(kv);
  for (auto& kv : cfg.fer.record()) ckpt.architecture.insert(kv);
  ckpt.store("generator", *generator);
  if (models.gan_critic) ckpt.store("gan_critic", *models.gan_critic);
  ckpt.store("encoder", *encoder);
  if (models.critic) {
    for (auto& kv : cfg.critic.record()) ckpt.architecture.insert(kv);
    ckpt.store("critic", *models.critic);
  }
  ckpt.store("fer", *head);
  return finish(dir, ckpt, std::move(report));
}

nlohmann::json evaluate(const RunConfig& cfg_in) {
  auto cfg = cfg_in;
  cfg.stage = Stage::evaluate;
  cfg.validate();
  auto m = load_models(cfg.init, cfg);
  const auto dir = prepare_dir(cfg);

  nlohmann::json report;
  report["mode"] = cfg.mode;
  report["stage"] = m.checkpoint.stage;
  report["checkpoint_hash"] = hex64(m.checkpoint.hash());

  if (cfg.mode == "inversion") {
    expect_stage(m.checkpoint, {"inversion", "finetune"}, "evaluate --mode inversion");
    torch::Tensor images;
    if (!cfg.dataset.empty()) images = load_manifest(cfg.dataset).first;
    else images = render_set(cfg.heldout_size, cfg.data_seed, cfg.eval_split).images;
    PerceptualTrunk trunk(m.gan_critic ? m.gan_critic->trunk : m.critic->query->trunk);
    auto metrics = inversion_metrics(trunk, images, reconstruct(m.encoder, m.generator, images));
    report["n_images"] = images.size(0);
    for (auto& [k, v] : metrics.items()) report[k] = v;
    report["proxy_metrics"] = true;
  } else {
    expect_stage(m.checkpoint, {"fer"}, "evaluate --mode fer");
    LabelledSet set;
    if (!cfg.dataset.empty()) std::tie(set.images, set.labels) = load_manifest(cfg.dataset);
    else set = render_set(cfg.fer_test_size, cfg.data_seed, cfg.eval_split);
    auto metrics = classification_metrics(predict(m.encoder, m.fer, set.images), set.labels);
    report["n_images"] = set.images.size(0);
    for (auto& [k, v] : metrics.items()) report[k] = v;
  }
  write_json(dir / kReportFile, report);
  return report;
}

}  // namespace ifer
