#include "ifer/errors.hpp"
#include "ifer/image_io.hpp"
#include "ifer/pipeline.hpp"
#include "ifer/toy_faces.hpp"
#include "ifer/util.hpp"

#include <fstream>
#include <iostream>

namespace ifer {

namespace {

struct Loaded {
  std::vector<std::filesystem::path> paths;
  std::vector<torch::Tensor> images;
  nlohmann::json skipped = nlohmann::json::array();
};

// Unreadable files are skipped with a log entry rather than aborting the batch.
Loaded read_images(const std::vector<std::string>& paths, int64_t size) {
  Loaded out;
  for (const auto& p : paths) {
    try {
      out.images.push_back(read_png(p, size));
      out.paths.emplace_back(p);
    } catch (const LoadError& e) {
      std::cerr << "skip " << p << ": " << e.what() << '\n';
      out.skipped.push_back({{"path", p}, {"reason", e.what()}});
    }
  }
  return out;
}

ModelSet load_inversion_models(const RunConfig& cfg, const std::string& who) {
  auto m = load_models(cfg.init, cfg);
  if (!m.encoder) throw LoadError(who + ": checkpoint " + cfg.init + " holds no encoder");
  return m;
}

void write_report(const std::filesystem::path& dir, const nlohmann::json& report) {
  std::ofstream out(dir / "report.json");
  if (!out) throw LoadError("cannot write " + (dir / "report.json").string());
  out << report.dump(2) << '\n';
}

}  // namespace

nlohmann::json invert(const RunConfig& cfg_in) {
  auto cfg = cfg_in;
  cfg.stage = Stage::invert;
  cfg.validate();
  auto m = load_inversion_models(cfg, "invert");
  const auto dir = cfg.output_dir();
  std::filesystem::create_directories(dir);

  auto loaded = read_images(cfg.images, m.config.encoder.image_size);
  nlohmann::json written = nlohmann::json::array();
  for (std::size_t i = 0; i < loaded.images.size(); ++i) {
    const auto& src = loaded.images[i];
    auto inv = reconstruct(m.encoder, m.generator, src.unsqueeze(0))[0];
    const auto out = dir / ("invert_" + loaded.paths[i].stem().string() + ".png");
    write_png(out, panel_row({src, inv}));
    written.push_back(out.string());
  }
  nlohmann::json report = {{"command", "invert"}, {"written", written}, {"skipped", loaded.skipped}};
  write_report(dir, report);
  return report;
}

nlohmann::json mix(const RunConfig& cfg_in) {
  auto cfg = cfg_in;
  cfg.stage = Stage::mix;
  cfg.validate();
  auto m = load_inversion_models(cfg, "mix");
  const auto dir = cfg.output_dir();
  std::filesystem::create_directories(dir);

  const auto size = m.config.encoder.image_size;
  auto a = read_png(cfg.image_a, size);
  auto b = read_png(cfg.image_b, size);

  torch::NoGradGuard no_grad;
  auto ea = m.encoder->forward(a.unsqueeze(0));
  auto eb = m.encoder->forward(b.unsqueeze(0));
  auto inv_a = m.generator->synthesize(ea.structure, ea.codes).image[0];
  auto inv_b = m.generator->synthesize(eb.structure, eb.codes).image[0];
  // The structure code follows the coarse layers: it comes from a unless b supplies every code.
  const auto& sc = cfg.crossover > 0 ? ea.structure : eb.structure;
  auto mixed = m.generator->synthesize(sc, style_mix(ea.codes, eb.codes, cfg.crossover)).image[0];

  const auto out = dir / "mix.png";
  write_png(out, panel_row({a, inv_a, b, inv_b, mixed}));
  nlohmann::json report = {{"command", "mix"}, {"crossover", cfg.crossover}, {"written", {out.string()}}};
  write_report(dir, report);
  return report;
}

nlohmann::json viz_attn(const RunConfig& cfg_in) {
  auto cfg = cfg_in;
  cfg.stage = Stage::viz_attn;
  cfg.validate();
  auto m = load_inversion_models(cfg, "viz-attn");
  const auto dir = cfg.output_dir();
  std::filesystem::create_directories(dir);

  auto loaded = read_images(cfg.images, m.config.encoder.image_size);
  nlohmann::json written = nlohmann::json::array();
  for (std::size_t i = 0; i < loaded.images.size(); ++i) {
    const auto& src = loaded.images[i];
    auto heat = attention_map(m.encoder, src.unsqueeze(0))[0];
    const auto out = dir / ("attn_" + loaded.paths[i].stem().string() + ".png");
    write_png(out, panel_row({src, overlay_heatmap(src, heat)}));
    written.push_back(out.string());
  }
  nlohmann::json report = {{"command", "viz-attn"}, {"written", written}, {"skipped", loaded.skipped}};
  write_report(dir, report);
  return report;
}

nlohmann::json make_dataset(const RunConfig& cfg_in) {
  auto cfg = cfg_in;
  cfg.stage = Stage::make_dataset;
  cfg.validate();
  if (cfg.count < 1) throw ConfigError("count must be >= 1");
  const auto dir = cfg.output_dir();
  auto samples = sample_dataset(cfg.count, cfg.seed, cfg.eval_split);
  export_dataset(samples, dir);
  nlohmann::json report = {{"command", "make-dataset"},
                           {"split", to_string(cfg.eval_split)},
                           {"count", cfg.count},
                           {"seed", cfg.seed},
                           {"dataset_hash", hex64(dataset_hash(samples))},
                           {"dir", dir.string()}};
  write_report(dir, report);
  return report;
}

}  // namespace ifer
