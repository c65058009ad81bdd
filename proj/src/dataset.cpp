#include "prockd/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <set>
#include <string>

#include "prockd/error.hpp"
#include "prockd/params.hpp"

namespace prockd::data {
namespace {

using Canvas = std::array<double, kImagePixels>;

struct Point {
  double x, y;
};

// Shape placement: center, half extent, stroke width and a small rotation.
struct Pose {
  double cx, cy, size, width, angle;

  Point at(double u, double v) const {
    const double c = std::cos(angle), s = std::sin(angle);
    return {cx + size * (u * c - v * s), cy + size * (u * s + v * c)};
  }
};

double segment_distance(Point p, Point a, Point b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = p.x - (a.x + t * dx), ey = p.y - (a.y + t * dy);
  return std::sqrt(ex * ex + ey * ey);
}

// Coverage of a stroke of the given width at distance `dist` from its spine.
double coverage(double dist, double width) { return std::clamp(width / 2.0 + 0.5 - dist, 0.0, 1.0); }

void stroke(Canvas& canvas, Point a, Point b, double width, double intensity = 1.0) {
  for (std::size_t y = 0; y < kImageSide; ++y)
    for (std::size_t x = 0; x < kImageSide; ++x) {
      const Point p{static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5};
      auto& px = canvas[y * kImageSide + x];
      px = std::max(px, intensity * coverage(segment_distance(p, a, b), width));
    }
}

void stroke(Canvas& canvas, const Pose& pose, double u0, double v0, double u1, double v1) {
  stroke(canvas, pose.at(u0, v0), pose.at(u1, v1), pose.width);
}

void ring(Canvas& canvas, const Pose& pose) {
  const double radius = 0.85 * pose.size;
  for (std::size_t y = 0; y < kImageSide; ++y)
    for (std::size_t x = 0; x < kImageSide; ++x) {
      const double dx = static_cast<double>(x) + 0.5 - pose.cx, dy = static_cast<double>(y) + 0.5 - pose.cy;
      auto& px = canvas[y * kImageSide + x];
      px = std::max(px, coverage(std::abs(std::sqrt(dx * dx + dy * dy) - radius), pose.width));
    }
}

void checker(Canvas& canvas, const Pose& pose) {
  // 3x3 cells spanning the pose square, filled in a checkerboard pattern.
  const double cell = 2.0 * pose.size / 3.0;
  const double left = pose.cx - pose.size, top = pose.cy - pose.size;
  for (std::size_t y = 0; y < kImageSide; ++y)
    for (std::size_t x = 0; x < kImageSide; ++x) {
      const double u = (static_cast<double>(x) + 0.5 - left) / cell;
      const double v = (static_cast<double>(y) + 0.5 - top) / cell;
      if (u < 0.0 || v < 0.0 || u >= 3.0 || v >= 3.0) continue;
      if ((static_cast<int>(u) + static_cast<int>(v)) % 2 == 0) canvas[y * kImageSide + x] = 1.0;
    }
}

void render_shape(Canvas& canvas, std::size_t class_id, const Pose& p) {
  switch (class_id) {
    case 0: stroke(canvas, p, -1, 0, 1, 0); break;                                  // horizontal bar
    case 1: stroke(canvas, p, 0, -1, 0, 1); break;                                  // vertical bar
    case 2: stroke(canvas, p, -1, 0, 1, 0); stroke(canvas, p, 0, -1, 0, 1); break;  // plus
    case 3: ring(canvas, p); break;
    case 4: checker(canvas, p); break;
    case 5: stroke(canvas, p, -1, -1, 1, 1); break;                                  // diagonal
    case 6: stroke(canvas, p, -1, -1, 1, 1); stroke(canvas, p, -1, 1, 1, -1); break; // X
    case 7: stroke(canvas, p, -1, -1, -1, 1); stroke(canvas, p, -1, 1, 1, 1); break; // L corner
    case 8:                                                                          // square outline
      stroke(canvas, p, -1, -1, 1, -1);
      stroke(canvas, p, 1, -1, 1, 1);
      stroke(canvas, p, 1, 1, -1, 1);
      stroke(canvas, p, -1, 1, -1, -1);
      break;
    case 9: stroke(canvas, p, -1, -1, 1, -1); stroke(canvas, p, 0, -1, 0, 1); break;  // T
    default: fail(Errc::InvalidSpec, "unknown class id " + std::to_string(class_id));
  }
}

void render_sample(std::size_t class_id, const DatasetSpec& spec, Rng& rng, double* out) {
  Canvas canvas{};
  const double size = rng.uniform(3.0, 6.0);
  Pose pose{rng.uniform(size + 1.0, kImageSide - size - 1.0), rng.uniform(size + 1.0, kImageSide - size - 1.0),
            size, rng.uniform(0.9, 1.6), rng.uniform(-0.2, 0.2)};
  render_shape(canvas, class_id, pose);
  for (std::size_t c = 0; c < spec.clutter; ++c) {
    const Point a{rng.uniform(0.0, kImageSide), rng.uniform(0.0, kImageSide)};
    const double len = rng.uniform(2.0, 4.0), theta = rng.uniform(0.0, std::numbers::pi);
    stroke(canvas, a, {a.x + len * std::cos(theta), a.y + len * std::sin(theta)}, rng.uniform(0.8, 1.4),
           rng.uniform(0.4, 0.9));
  }
  const double contrast = rng.uniform(0.6, 1.0), offset = rng.uniform(-0.1, 0.1);
  for (std::size_t i = 0; i < kImagePixels; ++i)
    out[i] = offset + contrast * canvas[i] + (spec.noise > 0.0 ? rng.normal(0.0, spec.noise) : 0.0);
}

}  // namespace

std::string_view class_name(std::size_t class_id) {
  static constexpr std::array<std::string_view, kClassCount> names = {
      "hbar", "vbar", "plus", "ring", "checker", "diagonal", "cross", "corner", "square", "tee"};
  if (class_id >= kClassCount) fail(Errc::InvalidSpec, "unknown class id " + std::to_string(class_id));
  return names[class_id];
}

void DatasetSpec::validate() const {
  if (class_ids.size() < 2) fail(Errc::InvalidSpec, "a task needs at least two classes");
  std::set<std::size_t> seen;
  for (auto c : class_ids) {
    if (c >= kClassCount) fail(Errc::InvalidSpec, "unknown class id " + std::to_string(c));
    if (!seen.insert(c).second) fail(Errc::InvalidSpec, "duplicate class id " + std::to_string(c));
  }
  if (per_class < 1) fail(Errc::InvalidSpec, "per_class must be positive");
  if (!(imbalance >= 1.0)) fail(Errc::InvalidSpec, "imbalance ratio must be >= 1");
  if (!(noise >= 0.0)) fail(Errc::InvalidSpec, "noise must be nonnegative");
}

std::vector<std::size_t> class_sizes(std::size_t n_max, std::size_t classes, double beta) {
  if (classes < 1) fail(Errc::InvalidSpec, "no classes");
  if (!(beta >= 1.0)) fail(Errc::InvalidSpec, "imbalance ratio must be >= 1");
  std::vector<std::size_t> sizes;
  for (std::size_t k = 0; k < classes; ++k) {
    const double exponent = classes == 1 ? 0.0 : -static_cast<double>(k) / static_cast<double>(classes - 1);
    const double n = static_cast<double>(n_max) * std::pow(beta, exponent);
    sizes.push_back(std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(n))));
  }
  return sizes;
}

SyntheticDataset generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  const auto sizes = class_sizes(spec.per_class, spec.class_ids.size(), spec.imbalance);
  std::vector<std::size_t> offsets{0};
  for (auto s : sizes) offsets.push_back(offsets.back() + s);
  const std::size_t total = offsets.back();

  std::vector<double> pixels(total * kImagePixels);
  SyntheticDataset ds;
  ds.labels.resize(total);
  const auto classes = static_cast<std::int64_t>(spec.class_ids.size());
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t ki = 0; ki < classes; ++ki) {
    const auto k = static_cast<std::size_t>(ki);
    const std::size_t id = spec.class_ids[k];
    Rng rng(derive_seed(spec.seed, id * 2 + (spec.split == Split::Val ? 1 : 0)));
    for (std::size_t s = offsets[k]; s < offsets[k + 1]; ++s) {
      render_sample(id, spec, rng, pixels.data() + s * kImagePixels);
      ds.labels[s] = k;
    }
  }
  ds.images = Tensor({total, 1, kImageSide, kImageSide}, std::move(pixels));
  ds.class_set = spec.class_ids;
  ds.split = spec.split;
  ds.imbalance_ratio = spec.imbalance;
  return ds;
}

Tensor SyntheticDataset::batch(std::span<const std::size_t> indices) const {
  std::vector<double> out(indices.size() * kImagePixels);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size()) fail(Errc::IndexOutOfRange, "sample index out of range");
    auto src = images.data().subspan(indices[i] * kImagePixels, kImagePixels);
    std::copy(src.begin(), src.end(), out.begin() + static_cast<std::ptrdiff_t>(i * kImagePixels));
  }
  return Tensor({indices.size(), kImagePixels}, std::move(out));
}

std::vector<std::size_t> SyntheticDataset::batch_labels(std::span<const std::size_t> indices) const {
  std::vector<std::size_t> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(labels.at(i));
  return out;
}

}  // namespace prockd::data
