#include "ifer/config.hpp"

#include "ifer/errors.hpp"
#include "ifer/util.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

namespace ifer {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

void parse(const std::string& key, const std::string& v, int64_t& out) {
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError(key + ": expected an integer, got '" + v + "'");
}

void parse(const std::string& key, const std::string& v, uint64_t& out) {
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
}

void parse(const std::string& key, const std::string& v, double& out) {
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError(key + ": expected a number, got '" + v + "'");
}

void parse(const std::string& key, const std::string& v, bool& out) {
  if (v == "true" || v == "1") out = true;
  else if (v == "false" || v == "0") out = false;
  else throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

void parse(const std::string&, const std::string& v, std::string& out) { out = v; }

void parse(const std::string& key, const std::string& v, std::vector<int64_t>& out) {
  try {
    out = parse_int_list(v);
  } catch (const ConfigError& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

template <std::size_t N>
void parse(const std::string& key, const std::string& v, std::array<int64_t, N>& out) {
  std::vector<int64_t> list;
  parse(key, v, list);
  if (list.size() != N) throw ConfigError(key + ": expected " + std::to_string(N) + " comma-separated integers");
  std::copy(list.begin(), list.end(), out.begin());
}

void parse(const std::string& key, const std::string& v, std::vector<std::string>& out) {
  out.clear();
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  (void)key;
}

void parse(const std::string& key, const std::string& v, FusionMode& out) {
  try {
    out = fusion_mode_from_string(v);
  } catch (const ConfigError& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

void parse(const std::string& key, const std::string& v, Split& out) {
  try {
    out = split_from_string(v);
  } catch (const std::exception& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

std::string format(int64_t v) { return std::to_string(v); }
std::string format(uint64_t v) { return std::to_string(v); }
std::string format(bool v) { return v ? "true" : "false"; }
std::string format(const std::string& v) { return v; }
std::string format(const std::vector<int64_t>& v) { return join(v); }
template <std::size_t N>
std::string format(const std::array<int64_t, N>& v) {
  return join({v.begin(), v.end()});
}
std::string format(FusionMode m) { return to_string(m); }
std::string format(Split s) { return to_string(s); }

std::string format(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

std::string format(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
  return out;
}

struct Field {
  std::string key;
  std::string doc;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename Access>
Field field(std::string key, std::string doc, Access access) {
  Field f{key, std::move(doc), nullptr, nullptr};
  f.set = [key, access](RunConfig& c, const std::string& v) { parse(key, v, access(c)); };
  f.get = [access](const RunConfig& c) { return format(access(const_cast<RunConfig&>(c))); };
  return f;
}

#define IFER_FIELD(key, doc, member) field(key, doc, [](RunConfig& c) -> auto& { return c.member; })

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      IFER_FIELD("seed", "RNG seed for initialization, sampling and augmentation (make-dataset: rendering seed)", seed),
      IFER_FIELD("iterations", "optimizer steps of the stage", iterations),
      IFER_FIELD("batch_size", "images per step (>= 3 when w.alignment > 0)", batch_size),
      IFER_FIELD("lr", "learning rate", lr),
      IFER_FIELD("optimizer", "adam or adamw", optimizer),
      IFER_FIELD("beta1", "first-moment decay", beta1),
      IFER_FIELD("beta2", "second-moment decay", beta2),
      IFER_FIELD("weight_decay", "decoupled weight decay (adamw only)", weight_decay),
      IFER_FIELD("encoder_lr_scale", "FER stage: encoder learning rate as a fraction of lr", encoder_lr_scale),
      IFER_FIELD("log_every", "steps between loss log lines on stderr", log_every),
      IFER_FIELD("w.pixel", "weight of the pixel loss", weights.pixel),
      IFER_FIELD("w.perceptual", "weight of the perceptual proxy loss", weights.perceptual),
      IFER_FIELD("w.consistency", "weight of the embedding consistency loss", weights.consistency),
      IFER_FIELD("w.latent_reg", "weight of the latent regularizer", weights.latent_reg),
      IFER_FIELD("w.adversarial", "weight of the critic-driven adversarial loss", weights.adversarial),
      IFER_FIELD("w.alignment", "weight of the feature distribution alignment loss", weights.alignment),
      IFER_FIELD("mean_latent_samples", "mapped samples averaged into the mean latent", mean_latent_samples),
      IFER_FIELD("data_seed", "seed of the rendered toy-face sets", data_seed),
      IFER_FIELD("train_size", "rendered training images for GAN and inversion stages", train_size),
      IFER_FIELD("heldout_size", "rendered held-out images for inversion reports", heldout_size),
      IFER_FIELD("fer_train_size", "labelled images for finetune and train-fer", fer_train_size),
      IFER_FIELD("fer_test_size", "labelled images for FER evaluation", fer_test_size),
      IFER_FIELD("eval_split", "split rendered by evaluate (when no dataset is given) and make-dataset", eval_split),
      IFER_FIELD("count", "images written by make-dataset", count),
      IFER_FIELD("dataset", "directory written by make-dataset; used by evaluate instead of rendering", dataset),
      IFER_FIELD("out_dir", "run directory; relative paths resolve against the output root", out_dir),
      IFER_FIELD("init", "input checkpoint", init),
      IFER_FIELD("images", "comma-separated PNG paths for invert and viz-attn", images),
      IFER_FIELD("image_a", "mix: image whose codes fill layers below the crossover", image_a),
      IFER_FIELD("image_b", "mix: image whose codes fill layers from the crossover on", image_b),
      IFER_FIELD("crossover", "mix: first layer taken from image_b", crossover),
      IFER_FIELD("mode", "evaluate: inversion or fer", mode),
      IFER_FIELD("from_scratch", "train-fer: reinitialize the encoder instead of loading it", from_scratch),
      IFER_FIELD("critic.momentum", "momentum of the key encoder update", critic.momentum),
      IFER_FIELD("critic.embed_dim", "critic embedding width", critic.embed_dim),
      IFER_FIELD("critic.trunk.image_size", "critic input side", critic.trunk.image_size),
      IFER_FIELD("critic.trunk.channels", "critic trunk widths, stem first", critic.trunk.channels),
      IFER_FIELD("encoder.image_size", "encoder input side", encoder.image_size),
      IFER_FIELD("encoder.patch_size", "patch embedding stride", encoder.patch_size),
      IFER_FIELD("encoder.widths", "four stage widths", encoder.widths),
      IFER_FIELD("encoder.heads", "four stage head counts", encoder.heads),
      IFER_FIELD("encoder.window", "attention window side", encoder.window),
      IFER_FIELD("encoder.mlp_ratio", "transformer MLP expansion", encoder.mlp_ratio),
      IFER_FIELD("encoder.n_codes", "latent codes emitted (generator layers)", encoder.n_codes),
      IFER_FIELD("encoder.code_dim", "latent code width", encoder.code_dim),
      IFER_FIELD("encoder.code_split", "codes from the coarse, medium and fine branches", encoder.code_split),
      IFER_FIELD("encoder.struct_dim", "structure code channels", encoder.struct_dim),
      IFER_FIELD("generator.resolution", "output side", generator.resolution),
      IFER_FIELD("generator.code_dim", "style width", generator.code_dim),
      IFER_FIELD("generator.struct_dim", "channels of the 4x4 input", generator.struct_dim),
      IFER_FIELD("generator.z_dim", "mapping network input width", generator.z_dim),
      IFER_FIELD("generator.mapping_layers", "mapping network depth", generator.mapping_layers),
      IFER_FIELD("generator.channels", "widths at 4, 8, ..., resolution", generator.channels),
      IFER_FIELD("generator.feature_resolutions", "resolutions whose features are aligned",
                 generator.feature_resolutions),
      IFER_FIELD("fer.n_codes", "latent codes consumed by the fusion head", fer.n_codes),
      IFER_FIELD("fer.code_dim", "latent code width seen by the fusion head", fer.code_dim),
      IFER_FIELD("fer.struct_dim", "structure code channels seen by the fusion head", fer.struct_dim),
      IFER_FIELD("fer.mlp_dim", "per-layer MLP width", fer.mlp_dim),
      IFER_FIELD("fer.fused_channels", "fusion convolution output channels", fer.fused_channels),
      IFER_FIELD("fer.hidden", "classifier hidden width", fer.hidden),
      IFER_FIELD("fer.mode", "fusion path: modulation, latents_only or structure_only", fer.mode),
  };
  return table;
}

#undef IFER_FIELD

const Field* find_field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return &f;
  return nullptr;
}

template <typename T>
void expect_equal(const std::string& a, T va, const std::string& b, T vb) {
  if (va != vb) throw ConfigError(a + " (" + format(va) + ") must equal " + b + " (" + format(vb) + ")");
}

}  // namespace

std::string to_string(Stage s) {
  switch (s) {
    case Stage::gan: return "gan";
    case Stage::inversion: return "inversion";
    case Stage::finetune: return "finetune";
    case Stage::fer: return "fer";
    case Stage::evaluate: return "evaluate";
    case Stage::invert: return "invert";
    case Stage::mix: return "mix";
    case Stage::viz_attn: return "viz_attn";
    case Stage::make_dataset: return "make_dataset";
  }
  return "unknown";
}

Stage stage_from_string(const std::string& name) {
  for (auto s : {Stage::gan, Stage::inversion, Stage::finetune, Stage::fer, Stage::evaluate, Stage::invert,
                 Stage::mix, Stage::viz_attn, Stage::make_dataset})
    if (to_string(s) == name) return s;
  throw ConfigError("unknown stage '" + name + "'");
}

RunConfig RunConfig::defaults(Stage stage) {
  RunConfig c;
  c.stage = stage;
  switch (stage) {
    case Stage::gan:
      c.iterations = 1200;
      c.batch_size = 16;
      c.lr = 2e-3;
      c.beta1 = 0.0;
      c.beta2 = 0.99;
      break;
    case Stage::inversion:
      c.iterations = 1500;
      c.batch_size = 8;
      c.lr = 1e-4;
      break;
    case Stage::finetune:
      c.iterations = 300;
      c.batch_size = 8;
      c.lr = 1e-4;
      break;
    case Stage::fer:
      c.iterations = 400;
      c.batch_size = 32;
      c.lr = 1e-3;
      c.optimizer = "adamw";
      c.weight_decay = 0.01;
      break;
    default:
      c.batch_size = 32;
      break;
  }
  return c;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto* f = find_field(key);
  if (!f) throw ConfigError("unknown config key '" + key + "'");
  f->set(*this, value);
}

void RunConfig::apply(const std::map<std::string, std::string>& values) {
  for (const auto& [k, v] : values) set(k, v);
}

std::map<std::string, std::string> RunConfig::to_map() const {
  std::map<std::string, std::string> out;
  for (const auto& f : fields()) out[f.key] = f.get(*this);
  return out;
}

std::map<std::string, std::string> RunConfig::gan_record() const {
  auto r = generator.record();
  for (auto& kv : critic.trunk.record("critic.trunk")) r.insert(kv);
  return r;
}

std::map<std::string, std::string> RunConfig::full_record() const {
  auto r = gan_record();
  for (auto& kv : encoder.record()) r.insert(kv);
  for (auto& kv : critic.record()) r.insert(kv);
  for (auto& kv : fer.record()) r.insert(kv);
  return r;
}

void RunConfig::validate() const {
  encoder.validate();
  generator.validate();
  critic.trunk.validate();
  weights.validate();
  if (iterations < 0) throw ConfigError("iterations must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr > 0)) throw ConfigError("lr must be positive");
  if (optimizer != "adam" && optimizer != "adamw") throw ConfigError("optimizer must be adam or adamw");
  if (log_every < 1) throw ConfigError("log_every must be >= 1");
  if (mean_latent_samples < 1) throw ConfigError("mean_latent_samples must be >= 1");
  if (critic.momentum < 0 || critic.momentum >= 1) throw ConfigError("critic.momentum must be in [0, 1)");

  expect_equal("encoder.n_codes", encoder.n_codes, "generator layers", generator.n_layers());
  expect_equal("encoder.code_dim", encoder.code_dim, "generator.code_dim", generator.code_dim);
  expect_equal("encoder.struct_dim", encoder.struct_dim, "generator.struct_dim", generator.struct_dim);
  expect_equal("encoder.image_size", encoder.image_size, "generator.resolution", generator.resolution);
  expect_equal("critic.trunk.image_size", critic.trunk.image_size, "generator.resolution", generator.resolution);
  expect_equal("fer.n_codes", fer.n_codes, "encoder.n_codes", encoder.n_codes);
  expect_equal("fer.code_dim", fer.code_dim, "encoder.code_dim", encoder.code_dim);
  expect_equal("fer.struct_dim", fer.struct_dim, "encoder.struct_dim", encoder.struct_dim);
  if (generator.resolution != kFaceSize)
    throw ConfigError("generator.resolution must be " + std::to_string(kFaceSize) + " to match the toy faces");

  const bool inversion_like = stage == Stage::inversion || stage == Stage::finetune;
  if (inversion_like && weights.alignment > 0 && batch_size < 3)
    throw ConfigError("batch_size must be >= 3 when w.alignment > 0 (got " + std::to_string(batch_size) + ")");
  if (inversion_like && train_size < 1) throw ConfigError("train_size must be >= 1");

  auto require_file = [](const std::string& key, const std::string& path) {
    if (path.empty()) throw ConfigError(key + " is required for this command");
    if (!std::filesystem::exists(path)) throw ConfigError(key + ": '" + path + "' does not exist");
  };
  switch (stage) {
    case Stage::gan:
    case Stage::make_dataset: break;
    case Stage::inversion:
    case Stage::finetune:
    case Stage::fer:
    case Stage::invert:
    case Stage::viz_attn: require_file("init", init); break;
    case Stage::evaluate:
      require_file("init", init);
      if (mode != "inversion" && mode != "fer") throw ConfigError("mode must be inversion or fer");
      if (!dataset.empty()) require_file("dataset", dataset);
      break;
    case Stage::mix:
      require_file("init", init);
      require_file("image_a", image_a);
      require_file("image_b", image_b);
      if (crossover < 0 || crossover > generator.n_layers())
        throw ConfigError("crossover must be in [0, " + std::to_string(generator.n_layers()) + "]");
      break;
  }
  if (stage == Stage::invert || stage == Stage::viz_attn) {
    // Unreadable entries are skipped per file at run time.
    if (images.empty()) throw ConfigError("images is required for this command");
  }
}

std::filesystem::path RunConfig::output_dir() const {
  std::filesystem::path p = out_dir.empty() ? std::filesystem::path(to_string(stage)) : std::filesystem::path(out_dir);
  if (p.is_relative()) p = output_root() / p;
  return std::filesystem::absolute(p).lexically_normal();
}

std::vector<KeyDoc> config_keys() {
  std::vector<KeyDoc> out;
  for (const auto& f : fields()) out.push_back({f.key, f.doc});
  return out;
}

std::map<std::string, std::string> read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::map<std::string, std::string> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": expected key = value");
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

std::filesystem::path output_root() {
  const char* env = std::getenv("IFER_OUTPUT_ROOT");
  return std::filesystem::absolute(env && *env ? env : "runs");
}

}  // namespace ifer
