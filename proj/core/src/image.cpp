#include "mst/image.hpp"

#include <algorithm>
#include <cmath>

#include "mst/error.hpp"

namespace mst {

std::size_t Mask::area() const {
  std::size_t n = 0;
  for (auto v : data) n += v != 0;
  return n;
}

double iou(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  if (a.size() != b.size()) throw DimensionError("iou: masks differ in size");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a[i] != 0, y = b[i] != 0;
    inter += x && y;
    uni += x || y;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

Mask binarize(std::span<const float> prob, std::size_t width, std::size_t height, float threshold) {
  if (prob.size() != width * height) throw DimensionError("binarize: size mismatch");
  Mask m(width, height);
  for (std::size_t i = 0; i < prob.size(); ++i) m.data[i] = prob[i] >= threshold ? 1 : 0;
  return m;
}

namespace {

struct Tap {
  std::size_t i0, i1;
  float w1;
};

std::vector<Tap> taps(std::size_t in, std::size_t out) {
  std::vector<Tap> t(out);
  const double s = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * s - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto i0 = static_cast<std::size_t>(std::floor(src));
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    t[o] = {i0, i1, static_cast<float>(src - static_cast<double>(i0))};
  }
  return t;
}

}  // namespace

std::vector<float> resize_plane(std::span<const float> plane, std::size_t w, std::size_t h, std::size_t out_w,
                                std::size_t out_h) {
  if (plane.size() != w * h) throw DimensionError("resize_plane: size mismatch");
  if (w == out_w && h == out_h) return {plane.begin(), plane.end()};
  const auto tx = taps(w, out_w), ty = taps(h, out_h);
  std::vector<float> out(out_w * out_h);
  for (std::size_t y = 0; y < out_h; ++y) {
    const Tap& a = ty[y];
    for (std::size_t x = 0; x < out_w; ++x) {
      const Tap& b = tx[x];
      const float top = plane[a.i0 * w + b.i0] * (1 - b.w1) + plane[a.i0 * w + b.i1] * b.w1;
      const float bot = plane[a.i1 * w + b.i0] * (1 - b.w1) + plane[a.i1 * w + b.i1] * b.w1;
      out[y * out_w + x] = top * (1 - a.w1) + bot * a.w1;
    }
  }
  return out;
}

Image resize_image(const Image& img, std::size_t width, std::size_t height) {
  if (img.width == width && img.height == height) return img;
  Image out(width, height);
  std::vector<float> plane(img.width * img.height);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < plane.size(); ++i) plane[i] = img.data[i * 3 + c];
    const auto r = resize_plane(plane, img.width, img.height, width, height);
    for (std::size_t i = 0; i < r.size(); ++i) out.data[i * 3 + c] = r[i];
  }
  return out;
}

Mask resize_mask_nearest(const Mask& mask, std::size_t width, std::size_t height) {
  if (mask.width == width && mask.height == height) return mask;
  Mask out(width, height);
  for (std::size_t y = 0; y < height; ++y) {
    const std::size_t sy = std::min(mask.height - 1, (2 * y + 1) * mask.height / (2 * height));
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t sx = std::min(mask.width - 1, (2 * x + 1) * mask.width / (2 * width));
      out.at(x, y) = mask.at(sx, sy);
    }
  }
  return out;
}

Image flip_horizontal(const Image& img) {
  Image out(img.width, img.height);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) out.at(x, y, c) = img.at(img.width - 1 - x, y, c);
  return out;
}

Mask flip_horizontal(const Mask& mask) {
  Mask out(mask.width, mask.height);
  for (std::size_t y = 0; y < mask.height; ++y)
    for (std::size_t x = 0; x < mask.width; ++x) out.at(x, y) = mask.at(mask.width - 1 - x, y);
  return out;
}

Letterbox Letterbox::fit(std::size_t w, std::size_t h, std::size_t side) {
  if (w == 0 || h == 0 || side == 0) throw ContractError("letterbox: empty extent");
  Letterbox b;
  b.source_width = w;
  b.source_height = h;
  b.side = side;
  if (w >= h) {
    b.content_width = side;
    b.content_height = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(double(h) * side / w)));
  } else {
    b.content_height = side;
    b.content_width = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(double(w) * side / h)));
  }
  b.offset_x = (side - b.content_width) / 2;
  b.offset_y = (side - b.content_height) / 2;
  return b;
}

Point Letterbox::to_square(Point p) const {
  const double sx = double(content_width) / double(source_width);
  const double sy = double(content_height) / double(source_height);
  const auto x = static_cast<int>(std::floor((p.x + 0.5) * sx));
  const auto y = static_cast<int>(std::floor((p.y + 0.5) * sy));
  return {std::clamp(x, 0, int(content_width) - 1) + int(offset_x),
          std::clamp(y, 0, int(content_height) - 1) + int(offset_y)};
}

Point Letterbox::to_source(Point p) const {
  const double sx = double(source_width) / double(content_width);
  const double sy = double(source_height) / double(content_height);
  const auto x = static_cast<int>(std::floor((p.x - int(offset_x) + 0.5) * sx));
  const auto y = static_cast<int>(std::floor((p.y - int(offset_y) + 0.5) * sy));
  return {std::clamp(x, 0, int(source_width) - 1), std::clamp(y, 0, int(source_height) - 1)};
}

Image letterbox_image(const Image& img, const Letterbox& box) {
  double mean[3] = {0, 0, 0};
  const std::size_t n = img.width * img.height;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < 3; ++c) mean[c] += img.data[i * 3 + c];
  Image out(box.side, box.side);
  for (std::size_t i = 0; i < box.side * box.side; ++i)
    for (std::size_t c = 0; c < 3; ++c) out.data[i * 3 + c] = static_cast<float>(mean[c] / double(n));
  const Image content = resize_image(img, box.content_width, box.content_height);
  for (std::size_t y = 0; y < box.content_height; ++y)
    for (std::size_t x = 0; x < box.content_width; ++x)
      for (std::size_t c = 0; c < 3; ++c) out.at(x + box.offset_x, y + box.offset_y, c) = content.at(x, y, c);
  return out;
}

Mask letterbox_mask(const Mask& mask, const Letterbox& box) {
  const Mask content = resize_mask_nearest(mask, box.content_width, box.content_height);
  Mask out(box.side, box.side);
  for (std::size_t y = 0; y < box.content_height; ++y)
    for (std::size_t x = 0; x < box.content_width; ++x) out.at(x + box.offset_x, y + box.offset_y) = content.at(x, y);
  return out;
}

std::vector<float> letterbox_plane(std::span<const float> plane, const Letterbox& box, float fill) {
  if (plane.size() != box.source_width * box.source_height) throw DimensionError("letterbox: plane size mismatch");
  const auto content = resize_plane(plane, box.source_width, box.source_height, box.content_width, box.content_height);
  std::vector<float> out(box.side * box.side, fill);
  for (std::size_t y = 0; y < box.content_height; ++y)
    for (std::size_t x = 0; x < box.content_width; ++x)
      out[(y + box.offset_y) * box.side + x + box.offset_x] = content[y * box.content_width + x];
  return out;
}

std::vector<float> unletterbox_plane(std::span<const float> plane, const Letterbox& box) {
  if (plane.size() != box.side * box.side) throw DimensionError("unletterbox: plane is not side x side");
  std::vector<float> content(box.content_width * box.content_height);
  for (std::size_t y = 0; y < box.content_height; ++y)
    for (std::size_t x = 0; x < box.content_width; ++x)
      content[y * box.content_width + x] = plane[(y + box.offset_y) * box.side + x + box.offset_x];
  return resize_plane(content, box.content_width, box.content_height, box.source_width, box.source_height);
}

}  // namespace mst
