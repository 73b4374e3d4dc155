#include "ifer/toy_faces.hpp"

#include "ifer/errors.hpp"
#include "ifer/image_io.hpp"
#include "ifer/util.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

namespace ifer {

namespace {

constexpr int kSuper = 4;  // supersamples per pixel side

double uniform01(std::mt19937_64& rng) { return double(rng() >> 11) * 0x1.0p-53; }
double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

using Rgb = std::array<double, 3>;

struct Jitter {
  double dx, dy;
  Rgb background;
  Rgb skin_shift;
  Rgb feature_shift;
};

Jitter draw_jitter(uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, 0x6a17));
  Jitter j{};
  j.dx = uniform(rng, -1.5, 1.5);
  j.dy = uniform(rng, -1.5, 1.5);
  const Rgb base{0.35, 0.45, 0.55};
  for (int c = 0; c < 3; ++c) j.background[c] = base[c] + uniform(rng, -0.12, 0.12);
  for (int c = 0; c < 3; ++c) j.skin_shift[c] = uniform(rng, -0.04, 0.04);
  for (int c = 0; c < 3; ++c) j.feature_shift[c] = uniform(rng, -0.03, 0.03);
  return j;
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

Rgb shifted(const Rgb& c, const Rgb& s) { return {clamp01(c[0] + s[0]), clamp01(c[1] + s[1]), clamp01(c[2] + s[2])}; }

double segment_distance(double px, double py, double x0, double y0, double x1, double y1) {
  const double vx = x1 - x0, vy = y1 - y0;
  const double t = std::clamp(((px - x0) * vx + (py - y0) * vy) / (vx * vx + vy * vy), 0.0, 1.0);
  const double qx = x0 + t * vx - px, qy = y0 + t * vy - py;
  return std::sqrt(qx * qx + qy * qy);
}

/// Color of one supersample; shapes are painted back to front.
Rgb shade(const FaceParams& p, const Jitter& j, double u, double v) {
  const double cx = p.cx + j.dx, cy = p.cy + j.dy;
  Rgb color = j.background;

  const double fx = (u - cx) / p.ax, fy = (v - cy) / p.ay;
  if (fx * fx + fy * fy > 1.0) return color;
  color = shifted(p.skin, j.skin_shift);

  const Rgb eye_color = shifted({0.08, 0.06, 0.06}, j.feature_shift);
  const Rgb brow_color = shifted({0.28, 0.16, 0.10}, j.feature_shift);
  const Rgb lip_color = shifted({0.66, 0.20, 0.22}, j.feature_shift);
  const Rgb mouth_color = shifted({0.32, 0.04, 0.07}, j.feature_shift);

  const double ey = cy - 0.18 * p.ay;
  const double eye_hw = 0.17 * p.ax;
  const double eye_hh = 0.5 + 3.5 * p.eye_open;
  for (double side : {-1.0, 1.0}) {
    const double ex = cx + side * 0.38 * p.ax;
    const double ux = (u - ex) / eye_hw, uy = (v - ey) / eye_hh;
    if (ux * ux + uy * uy <= 1.0) color = eye_color;

    // Inner end points toward the face center; positive brow raises it.
    const double base_y = ey - 4.0 - 3.0;
    const double outer_x = ex + side * 0.22 * p.ax, inner_x = ex - side * 0.22 * p.ax;
    const double inner_y = base_y - 3.0 * p.brow, outer_y = base_y + 1.0 * p.brow;
    if (segment_distance(u, v, outer_x, outer_y, inner_x, inner_y) <= 0.8) color = brow_color;
  }

  const double mx = cx, my = cy + 0.45 * p.ay, mouth_hw = 0.33 * p.ax;
  const double t = (u - mx) / mouth_hw;
  if (std::abs(t) <= 1.0) {
    const double bow = 1.0 - t * t;
    const double upper = my + 4.0 * p.mouth_curve * bow;
    const double lower = upper + 6.0 * p.mouth_open * bow;
    if (v > upper && v < lower) color = mouth_color;
    if (std::abs(v - upper) <= 0.7) color = lip_color;
    if (p.mouth_open > 0.05 && std::abs(v - lower) <= 0.7) color = lip_color;
  }
  return color;
}

struct Box {
  double lo, hi;
};

struct ClassRegion {
  Box eye, brow, curve, open;
};

// Sampling boxes sit strictly inside their label regions, with margins to every boundary.
constexpr std::array<ClassRegion, 7> kRegions{{
    /* neutral  */ {{0.40, 0.60}, {-0.20, 0.20}, {-0.15, 0.15}, {0.00, 0.20}},
    /* happy    */ {{0.35, 0.65}, {-0.20, 0.20}, {0.60, 1.00}, {0.00, 0.40}},
    /* sad      */ {{0.35, 0.65}, {0.50, 1.00}, {-1.00, -0.60}, {0.00, 0.20}},
    /* surprise */ {{0.80, 1.00}, {0.55, 1.00}, {-0.20, 0.20}, {0.65, 1.00}},
    /* fear     */ {{0.80, 1.00}, {-0.20, 0.25}, {-0.60, -0.25}, {0.40, 0.70}},
    /* disgust  */ {{0.00, 0.20}, {-0.30, 0.00}, {-0.60, -0.30}, {0.00, 0.20}},
    /* anger    */ {{0.40, 0.65}, {-1.00, -0.55}, {-0.15, 0.10}, {0.00, 0.20}},
}};

void check_range(double v, double lo, double hi, const char* name) {
  if (!(v >= lo && v <= hi))
    throw ValidationError(std::string("face parameter ") + name + " = " + std::to_string(v) + " outside [" +
                          std::to_string(lo) + ", " + std::to_string(hi) + "]");
}

}  // namespace

std::string to_string(Expression e) { return kExpressionNames.at(static_cast<std::size_t>(e)); }

Expression expression_from_string(const std::string& name) {
  for (std::size_t i = 0; i < kExpressionNames.size(); ++i)
    if (name == kExpressionNames[i]) return static_cast<Expression>(i);
  throw ValidationError("unknown expression '" + name + "'");
}

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "unknown";
}

Split split_from_string(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw ConfigError("unknown split '" + name + "' (train, val, test)");
}

void FaceParams::validate() const {
  check_range(cx, 26.0, 38.0, "cx");
  check_range(cy, 26.0, 38.0, "cy");
  check_range(ax, 15.0, 22.0, "ax");
  check_range(ay, 19.0, 26.0, "ay");
  for (double c : skin) check_range(c, 0.0, 1.0, "skin");
  check_range(eye_open, 0.0, 1.0, "eye_open");
  check_range(brow, -1.0, 1.0, "brow");
  check_range(mouth_curve, -1.0, 1.0, "mouth_curve");
  check_range(mouth_open, 0.0, 1.0, "mouth_open");
}

Expression expression_label(const FaceParams& p) {
  const double e = p.eye_open, b = p.brow, m = p.mouth_curve, o = p.mouth_open;
  if (o > 0.5 && e > 0.7 && b > 0.4) return Expression::surprise;
  if (o > 0.3 && e > 0.7) return Expression::fear;
  if (m > 0.4 && e >= 0.25 && e <= 0.75) return Expression::happy;
  if (m < -0.4 && b > 0.3) return Expression::sad;
  if (m < -0.2 && e < 0.3) return Expression::disgust;
  if (b < -0.4) return Expression::anger;
  return Expression::neutral;
}

torch::Tensor render_face(const FaceParams& p) {
  p.validate();
  const auto jitter = draw_jitter(p.jitter_seed);
  auto image = torch::empty({3, kFaceSize, kFaceSize}, torch::kFloat32);
  auto acc = image.accessor<float, 3>();
  constexpr double inv = 1.0 / (kSuper * kSuper);
  for (int64_t y = 0; y < kFaceSize; ++y) {
    for (int64_t x = 0; x < kFaceSize; ++x) {
      Rgb sum{0.0, 0.0, 0.0};
      for (int sy = 0; sy < kSuper; ++sy) {
        for (int sx = 0; sx < kSuper; ++sx) {
          const double u = x + (sx + 0.5) / kSuper, v = y + (sy + 0.5) / kSuper;
          const auto c = shade(p, jitter, u, v);
          for (int k = 0; k < 3; ++k) sum[k] += c[k];
        }
      }
      for (int k = 0; k < 3; ++k) acc[k][y][x] = static_cast<float>(sum[k] * inv);
    }
  }
  return image;
}

std::array<double, 4> face_box(const FaceParams& p) {
  const auto j = draw_jitter(p.jitter_seed);
  const double cx = p.cx + j.dx, cy = p.cy + j.dy;
  return {cx - p.ax, cy - p.ay, cx + p.ax, cy + p.ay};
}

std::vector<FaceParams> sample_params(int64_t n, uint64_t seed, Split split) {
  const uint64_t split_tag = static_cast<uint64_t>(split) + 1;
  const uint64_t stream = mix_seed(seed, split_tag);
  std::vector<FaceParams> out;
  out.reserve(static_cast<std::size_t>(std::max<int64_t>(n, 0)));
  for (int64_t i = 0; i < n; ++i) {
    const auto cls = static_cast<std::size_t>(i % static_cast<int64_t>(kExpressionNames.size()));
    std::mt19937_64 rng(mix_seed(stream, static_cast<uint64_t>(i)));
    FaceParams p;
    p.cx = uniform(rng, 29.0, 35.0);
    p.cy = uniform(rng, 30.0, 36.0);
    p.ax = uniform(rng, 16.0, 21.0);
    p.ay = uniform(rng, 20.0, 25.0);
    const double tone = uniform01(rng);
    const Rgb light{0.95, 0.80, 0.70}, dark{0.55, 0.38, 0.28};
    for (int c = 0; c < 3; ++c) p.skin[c] = light[c] + tone * (dark[c] - light[c]);
    const auto& r = kRegions[cls];
    p.eye_open = uniform(rng, r.eye.lo, r.eye.hi);
    p.brow = uniform(rng, r.brow.lo, r.brow.hi);
    p.mouth_curve = uniform(rng, r.curve.lo, r.curve.hi);
    p.mouth_open = uniform(rng, r.open.lo, r.open.hi);
    p.jitter_seed = (split_tag << 60) | (rng() >> 4);
    out.push_back(p);
  }
  return out;
}

std::vector<FaceSample> sample_dataset(int64_t n, uint64_t seed, Split split) {
  std::vector<FaceSample> out;
  for (const auto& p : sample_params(n, seed, split)) out.push_back({render_face(p), expression_label(p), p});
  return out;
}

torch::Tensor stack_images(const std::vector<FaceSample>& samples) {
  std::vector<torch::Tensor> images;
  images.reserve(samples.size());
  for (const auto& s : samples) images.push_back(s.image);
  return torch::stack(images);
}

torch::Tensor stack_labels(const std::vector<FaceSample>& samples) {
  std::vector<int64_t> labels;
  labels.reserve(samples.size());
  for (const auto& s : samples) labels.push_back(static_cast<int64_t>(s.label));
  return torch::tensor(labels, torch::kLong);
}

uint64_t dataset_hash(const std::vector<FaceSample>& samples) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& s : samples) {
    auto img = s.image.contiguous();
    h = fnv1a(std::span(static_cast<const uint8_t*>(img.data_ptr()), img.nbytes()), h);
    const auto label = static_cast<uint8_t>(s.label);
    h = fnv1a(std::span(&label, 1), h);
  }
  return h;
}

void export_dataset(const std::vector<FaceSample>& samples, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.csv");
  if (!manifest) throw LoadError("cannot write " + (dir / "manifest.csv").string());
  manifest << "path,class,cx,cy,ax,ay,skin_r,skin_g,skin_b,eye_open,brow,mouth_curve,mouth_open,jitter_seed\n";
  manifest << std::setprecision(17);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::ostringstream name;
    name << "img_" << std::setw(5) << std::setfill('0') << i << ".png";
    write_png(dir / name.str(), samples[i].image);
    const auto& p = samples[i].params;
    manifest << name.str() << ',' << to_string(samples[i].label) << ',' << p.cx << ',' << p.cy << ',' << p.ax << ','
             << p.ay << ',' << p.skin[0] << ',' << p.skin[1] << ',' << p.skin[2] << ',' << p.eye_open << ','
             << p.brow << ',' << p.mouth_curve << ',' << p.mouth_open << ',' << p.jitter_seed << '\n';
  }
}

}  // namespace ifer
