#include "mst/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "mst/error.hpp"

namespace mst {

const char* shape_name(ShapeKind k) {
  switch (k) {
    case ShapeKind::Ellipse: return "ellipse";
    case ShapeKind::Rectangle: return "rectangle";
    case ShapeKind::Polygon: return "polygon";
  }
  return "?";
}

namespace {

using Color = std::array<float, 3>;

struct Shape2D {
  ShapeKind kind = ShapeKind::Ellipse;
  double cx = 0, cy = 0;
  double ax = 1, ay = 1;  // half extents before scaling
  double cos_a = 1, sin_a = 0;
  std::vector<double> vx, vy;  // polygon vertices at evenly spaced angles

  void set_angle(double a) {
    cos_a = std::cos(a);
    sin_a = std::sin(a);
  }

  bool contains(double x, double y, double s) const {
    const double dx = x - cx, dy = y - cy;
    const double u = (cos_a * dx + sin_a * dy) / s, v = (-sin_a * dx + cos_a * dy) / s;
    switch (kind) {
      case ShapeKind::Ellipse: return (u * u) / (ax * ax) + (v * v) / (ay * ay) <= 1.0;
      case ShapeKind::Rectangle: return std::abs(u) <= ax && std::abs(v) <= ay;
      case ShapeKind::Polygon: {
        const double px = u / ax, py = v / ay;
        bool inside = false;
        const std::size_t n = vx.size();
        for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
          if ((vy[i] > py) != (vy[j] > py) && px < (vx[j] - vx[i]) * (py - vy[i]) / (vy[j] - vy[i]) + vx[i]) {
            inside = !inside;
          }
        }
        return inside;
      }
    }
    return false;
  }
};

Shape2D random_shape(Rng& rng, std::size_t side, bool central) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Shape2D s;
  s.kind = static_cast<ShapeKind>(rng() % 3);
  const double lo = central ? 0.3 : 0.1, hi = central ? 0.7 : 0.9;
  s.cx = (lo + (hi - lo) * u(rng)) * double(side);
  s.cy = (lo + (hi - lo) * u(rng)) * double(side);
  s.ax = 1.0;
  s.ay = 0.5 + u(rng);
  s.set_angle(u(rng) * std::numbers::pi);
  if (s.kind == ShapeKind::Polygon) {
    const std::size_t n = 5 + rng() % 4;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = 0.6 + 0.4 * u(rng), t = 2 * std::numbers::pi * double(i) / double(n);
      s.vx.push_back(r * std::cos(t));
      s.vy.push_back(r * std::sin(t));
    }
  }
  return s;
}

// Pixel rows/columns that can hold the shape at `scale`.
struct Box {
  std::size_t x0, x1, y0, y1;
};

Box bounds(const Shape2D& s, std::size_t side, double scale) {
  const double r = scale * std::max(s.ax, s.ay) + 1.0;
  auto clampi = [&](double v) { return static_cast<std::size_t>(std::clamp(v, 0.0, double(side))); };
  return {clampi(std::floor(s.cx - r)), clampi(std::ceil(s.cx + r)), clampi(std::floor(s.cy - r)),
          clampi(std::ceil(s.cy + r))};
}

std::size_t rasterized_area(const Shape2D& s, std::size_t side, double scale) {
  const Box b = bounds(s, side, scale);
  std::size_t n = 0;
  for (std::size_t y = b.y0; y < b.y1; ++y)
    for (std::size_t x = b.x0; x < b.x1; ++x) n += s.contains(double(x) + 0.5, double(y) + 0.5, scale);
  return n;
}

// Smallest scale whose rasterized area reaches the target.
double fit_scale(const Shape2D& s, std::size_t side, double target_area) {
  double lo = 0.0, hi = 2.0 * double(side);
  for (int it = 0; it < 30; ++it) {
    const double mid = 0.5 * (lo + hi);
    (double(rasterized_area(s, side, mid)) < target_area ? lo : hi) = mid;
  }
  return hi;
}

float distance(const Color& a, const Color& b) {
  return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) + (a[2] - b[2]) * (a[2] - b[2]));
}

Color random_color(Rng& rng, std::span<const Color> avoid, float min_distance) {
  std::uniform_real_distribution<float> u(0.05f, 0.95f);
  Color c{};
  for (int attempt = 0; attempt < 64; ++attempt) {
    c = {u(rng), u(rng), u(rng)};
    bool ok = true;
    for (const auto& a : avoid) ok = ok && distance(a, c) >= min_distance;
    if (ok) break;
  }
  return c;
}

struct Texture {
  double fx1, fy1, ph1, fx2, fy2, ph2, amp;
  static Texture random(Rng& rng, double amp) {
    std::uniform_real_distribution<double> f(0.02, 0.25), p(0.0, 2 * std::numbers::pi);
    return {f(rng), f(rng), p(rng), f(rng), f(rng), p(rng), amp};
  }
  double at(double x, double y) const {
    return amp * 0.5 * (std::sin(fx1 * x + fy1 * y + ph1) + std::sin(fx2 * x - fy2 * y + ph2));
  }
};

void paint(Image& img, const Shape2D& s, double scale, const Color& c, const Texture& tex, Mask* mask) {
  const Box b = bounds(s, img.width, scale);
  for (std::size_t y = b.y0; y < b.y1; ++y)
    for (std::size_t x = b.x0; x < b.x1; ++x) {
      if (!s.contains(double(x) + 0.5, double(y) + 0.5, scale)) continue;
      const double t = tex.at(double(x), double(y));
      for (std::size_t ch = 0; ch < 3; ++ch) img.at(x, y, ch) = std::clamp(float(c[ch] + t), 0.0f, 1.0f);
      if (mask) mask->at(x, y) = 1;
    }
}

}  // namespace

Sample generate_sample(Rng& rng, std::size_t side, double target_ratio, const SyntheticOptions& options) {
  if (side == 0) throw ConfigError("generate_sample: zero side");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double total = double(side * side);

  Sample s;
  s.image = Image(side, side);
  const Color bg = random_color(rng, {}, 0.0f);
  const Color fg = random_color(rng, std::span<const Color>(&bg, 1), 0.45f);
  const Texture bg_tex = Texture::random(rng, 0.12);
  std::normal_distribution<float> noise(0.0f, 0.02f);
  for (std::size_t y = 0; y < side; ++y)
    for (std::size_t x = 0; x < side; ++x) {
      const double t = bg_tex.at(double(x), double(y));
      for (std::size_t c = 0; c < 3; ++c) s.image.at(x, y, c) = std::clamp(float(bg[c] + t) + noise(rng), 0.0f, 1.0f);
    }

  const int distractors = options.max_distractors > 0 ? int(rng() % std::uint64_t(options.max_distractors + 1)) : 0;
  const std::array<Color, 2> avoid{bg, fg};
  for (int d = 0; d < distractors; ++d) {
    const Shape2D shape = random_shape(rng, side, false);
    const double ratio = 0.01 + 0.07 * u(rng);
    const double sc = fit_scale(shape, side, ratio * total);
    const Color col = random_color(rng, avoid, 0.35f);
    paint(s.image, shape, sc, col, Texture::random(rng, 0.06), nullptr);
  }

  const Shape2D target = random_shape(rng, side, target_ratio > 0.3);
  const double sc = fit_scale(target, side, target_ratio * total);
  s.mask = Mask(side, side);
  paint(s.image, target, sc, fg, Texture::random(rng, 0.06), &s.mask);
  s.kind = target.kind;
  s.scale_ratio = double(s.mask.area()) / total;
  return s;
}

std::vector<Sample> gen_synthetic(std::uint64_t seed, std::size_t n, std::size_t side, const SyntheticOptions& options) {
  if (n == 0) throw ConfigError("gen_synthetic: n must be at least 1");
  if (!(options.min_ratio > 0.0 && options.min_ratio <= options.max_ratio && options.max_ratio < 1.0)) {
    throw ConfigError("gen_synthetic: ratio range must satisfy 0 < min <= max < 1");
  }
  std::vector<Sample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(i)};
    Rng rng(seq);
    std::uniform_real_distribution<double> ratio(options.min_ratio, options.max_ratio);
    Sample s = generate_sample(rng, side, ratio(rng), options);
    s.id = "syn_" + std::to_string(seed) + "_" + std::to_string(i);
    out.push_back(std::move(s));
  }
  return out;
}

AugmentParams draw_augment(Rng& rng, std::size_t side) {
  std::uniform_real_distribution<double> scale(0.75, 1.4);
  AugmentParams p;
  p.flip = (rng() >> 63) != 0;
  p.scale = scale(rng);
  const auto scaled = static_cast<std::size_t>(std::lround(double(side) * p.scale));
  const std::size_t slack = scaled > side ? scaled - side : side - scaled;
  p.offset_x = rng() % (slack + 1);
  p.offset_y = rng() % (slack + 1);
  return p;
}

Sample augment(const Sample& sample, const AugmentParams& params) {
  const std::size_t side = sample.image.width;
  if (sample.image.height != side || sample.mask.width != side || sample.mask.height != side) {
    throw DimensionError("augment: expected square, aligned image and mask");
  }
  const auto scaled = static_cast<std::size_t>(std::lround(double(side) * params.scale));
  if (scaled == 0) throw ConfigError("augment: scale too small");

  // Source pixel for every output pixel, or -1 for padding.
  std::vector<long> src(side * side, -1);
  const bool grow = scaled >= side;
  for (std::size_t y = 0; y < side; ++y)
    for (std::size_t x = 0; x < side; ++x) {
      long sx, sy;
      if (grow) {
        sx = long(x + params.offset_x), sy = long(y + params.offset_y);
      } else {
        sx = long(x) - long(params.offset_x), sy = long(y) - long(params.offset_y);
        if (sx < 0 || sy < 0 || sx >= long(scaled) || sy >= long(scaled)) continue;
      }
      if (sx >= long(scaled) || sy >= long(scaled)) continue;
      auto ox = std::min<long>(long(side) - 1, (2 * sx + 1) * long(side) / (2 * long(scaled)));
      const auto oy = std::min<long>(long(side) - 1, (2 * sy + 1) * long(side) / (2 * long(scaled)));
      if (params.flip) ox = long(side) - 1 - ox;
      src[y * side + x] = oy * long(side) + ox;
    }

  double mean[3] = {0, 0, 0};
  for (std::size_t i = 0; i < side * side; ++i)
    for (std::size_t c = 0; c < 3; ++c) mean[c] += sample.image.data[i * 3 + c];
  Sample out;
  out.id = sample.id;
  out.kind = sample.kind;
  out.image = Image(side, side);
  out.mask = Mask(side, side);
  for (std::size_t i = 0; i < side * side; ++i) {
    const long s = src[i];
    for (std::size_t c = 0; c < 3; ++c)
      out.image.data[i * 3 + c] = s < 0 ? float(mean[c] / double(side * side)) : sample.image.data[std::size_t(s) * 3 + c];
    out.mask.data[i] = s < 0 ? 0 : sample.mask.data[std::size_t(s)];
  }
  out.scale_ratio = double(out.mask.area()) / double(side * side);
  return out;
}

Sample augment(const Sample& sample, std::uint64_t seed) {
  Rng rng(seed);
  for (int attempt = 0; attempt < 16; ++attempt) {
    Sample s = augment(sample, draw_augment(rng, sample.image.width));
    if (s.mask.area() > 0) return s;
  }
  return sample;
}

}  // namespace mst
