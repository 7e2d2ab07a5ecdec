#include "mst/clicks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mst {

std::vector<Point> ClickState::positives() const {
  std::vector<Point> out;
  for (const auto& c : clicks)
    if (c.positive) out.push_back(c.point);
  return out;
}

template <typename T>
Tensor<T> encode_clicks(std::span<const Click> clicks, std::size_t width, std::size_t height, int radius) {
  std::vector<T> maps(2 * width * height, T(0));
  const long r2 = static_cast<long>(radius) * radius;
  for (const auto& c : clicks) {
    if (c.point.x < 0 || c.point.y < 0 || c.point.x >= static_cast<int>(width) ||
        c.point.y >= static_cast<int>(height)) {
      throw ContractError("encode_clicks: click (" + std::to_string(c.point.x) + ", " + std::to_string(c.point.y) +
                          ") outside " + std::to_string(width) + "x" + std::to_string(height));
    }
    T* plane = maps.data() + (c.positive ? 0 : width * height);
    const int y0 = std::max(0, c.point.y - radius), y1 = std::min<int>(int(height) - 1, c.point.y + radius);
    const int x0 = std::max(0, c.point.x - radius), x1 = std::min<int>(int(width) - 1, c.point.x + radius);
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const long dx = x - c.point.x, dy = y - c.point.y;
        if (dx * dx + dy * dy <= r2) plane[std::size_t(y) * width + std::size_t(x)] = T(1);
      }
  }
  return Tensor<T>(Shape{2, height, width}, std::move(maps));
}

template <typename T>
Tensor<T> build_input(const Image& image, const ClickState& state, int radius) {
  const std::size_t w = image.width, h = image.height, n = w * h;
  if (!state.previous.empty() && state.previous.size() != n) {
    throw DimensionError("build_input: previous mask does not match the image");
  }
  std::vector<T> x(6 * n, T(0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < 3; ++c) x[c * n + i] = static_cast<T>(image.data[i * 3 + c]);
  const Tensor<T> disks = encode_clicks<T>(state.clicks, w, h, radius);
  std::copy(disks.values().begin(), disks.values().end(), x.begin() + 3 * n);
  for (std::size_t i = 0; i < state.previous.size(); ++i) x[5 * n + i] = static_cast<T>(state.previous[i]);
  return Tensor<T>(Shape{6, h, w}, std::move(x));
}

std::vector<ErrorComponent> error_components(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt,
                                             std::size_t width, std::size_t height) {
  const std::size_t n = width * height;
  if (pred.size() != n || gt.size() != n) throw DimensionError("error_components: mask size mismatch");
  // 1 = false negative, 2 = false positive
  std::vector<std::uint8_t> kind(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const bool p = pred[i] != 0, g = gt[i] != 0;
    kind[i] = (g && !p) ? 1 : (p && !g) ? 2 : 0;
  }
  std::vector<std::uint8_t> seen(n, 0);
  std::vector<ErrorComponent> out;
  std::vector<std::size_t> stack;
  for (std::size_t s = 0; s < n; ++s) {
    if (kind[s] == 0 || seen[s]) continue;
    ErrorComponent comp;
    comp.false_negative = kind[s] == 1;
    stack.assign(1, s);
    seen[s] = 1;
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      comp.pixels.push_back(i);
      const std::size_t x = i % width, y = i / width;
      auto visit = [&](std::size_t j) {
        if (!seen[j] && kind[j] == kind[s]) {
          seen[j] = 1;
          stack.push_back(j);
        }
      };
      if (x > 0) visit(i - 1);
      if (x + 1 < width) visit(i + 1);
      if (y > 0) visit(i - width);
      if (y + 1 < height) visit(i + width);
    }
    std::sort(comp.pixels.begin(), comp.pixels.end());
    out.push_back(std::move(comp));
  }
  return out;
}

namespace {

// Squared distance transform of a sampled function along one line.
void edt_1d(const double* f, std::size_t n, double* d, std::vector<std::size_t>& v, std::vector<double>& z) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  v.assign(n, 0);
  z.assign(n + 1, 0.0);
  std::size_t k = 0;
  z[0] = -inf;
  z[1] = inf;
  for (std::size_t q = 1; q < n; ++q) {
    double s;
    while (true) {
      const std::size_t p = v[k];
      s = ((f[q] + double(q * q)) - (f[p] + double(p * p))) / (2.0 * double(q) - 2.0 * double(p));
      if (s <= z[k] && k > 0) {
        --k;
        continue;
      }
      break;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = inf;
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[k + 1] < double(q)) ++k;
    const double dq = double(q) - double(v[k]);
    d[q] = dq * dq + f[v[k]];
  }
}

}  // namespace

std::vector<double> region_distance(std::span<const std::uint8_t> region, std::size_t width, std::size_t height) {
  if (region.size() != width * height) throw DimensionError("region_distance: size mismatch");
  // Pad by one background pixel on every side so the border acts as outside.
  const std::size_t pw = width + 2, ph = height + 2;
  constexpr double big = 1e20;
  std::vector<double> g(pw * ph, 0.0);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) g[(y + 1) * pw + x + 1] = region[y * width + x] ? big : 0.0;

  std::vector<std::size_t> v;
  std::vector<double> z, col(ph), out(std::max(pw, ph));
  for (std::size_t x = 0; x < pw; ++x) {
    for (std::size_t y = 0; y < ph; ++y) col[y] = g[y * pw + x];
    edt_1d(col.data(), ph, out.data(), v, z);
    for (std::size_t y = 0; y < ph; ++y) g[y * pw + x] = out[y];
  }
  std::vector<double> row(pw);
  for (std::size_t y = 0; y < ph; ++y) {
    std::copy(g.begin() + std::ptrdiff_t(y * pw), g.begin() + std::ptrdiff_t((y + 1) * pw), row.begin());
    edt_1d(row.data(), pw, out.data(), v, z);
    std::copy(out.begin(), out.begin() + std::ptrdiff_t(pw), g.begin() + std::ptrdiff_t(y * pw));
  }
  std::vector<double> dist(width * height, 0.0);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      if (region[y * width + x]) dist[y * width + x] = std::sqrt(g[(y + 1) * pw + x + 1]);
  return dist;
}

std::optional<Click> next_click(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt,
                                std::size_t width, std::size_t height) {
  const auto comps = error_components(pred, gt, width, height);
  if (comps.empty()) return std::nullopt;
  const ErrorComponent* best = &comps.front();
  for (const auto& c : comps) {
    const bool larger = c.pixels.size() > best->pixels.size();
    const bool same = c.pixels.size() == best->pixels.size();
    if (larger || (same && c.false_negative && !best->false_negative) ||
        (same && c.false_negative == best->false_negative && c.pixels.front() < best->pixels.front())) {
      best = &c;
    }
  }
  std::vector<std::uint8_t> region(width * height, 0);
  for (std::size_t i : best->pixels) region[i] = 1;
  const auto dist = region_distance(region, width, height);
  std::size_t arg = best->pixels.front();
  for (std::size_t i : best->pixels)
    if (dist[i] > dist[arg]) arg = i;
  return Click{Point{int(arg % width), int(arg / width)}, best->false_negative};
}

template Tensor<float> encode_clicks(std::span<const Click>, std::size_t, std::size_t, int);
template Tensor<double> encode_clicks(std::span<const Click>, std::size_t, std::size_t, int);
template Tensor<float> build_input(const Image&, const ClickState&, int);
template Tensor<double> build_input(const Image&, const ClickState&, int);

}  // namespace mst
