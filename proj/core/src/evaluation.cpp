#include "mst/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <numeric>
#include <ostream>

namespace mst {

Protocol parse_protocol(const std::string& name) {
  if (name == "zero") return Protocol::Zero;
  if (name == "sp") return Protocol::Sp;
  throw ConfigError("unknown protocol '" + name + "' (expected zero or sp)");
}

const char* protocol_name(Protocol p) { return p == Protocol::Zero ? "zero" : "sp"; }

int clicks_to_reach(std::span<const double> ious, double tau, int max_clicks) {
  const std::size_t limit = std::min<std::size_t>(ious.size(), static_cast<std::size_t>(max_clicks));
  for (std::size_t i = 0; i < limit; ++i)
    if (ious[i] >= tau) return static_cast<int>(i + 1);
  return max_clicks;
}

namespace {

bool reached(std::span<const double> ious, double tau, int max_clicks) {
  const std::size_t limit = std::min<std::size_t>(ious.size(), static_cast<std::size_t>(max_clicks));
  return std::any_of(ious.begin(), ious.begin() + std::ptrdiff_t(limit), [&](double v) { return v >= tau; });
}

}  // namespace

EvalRecord evaluate_sample(Segmenter& model, const std::string& id, const Image& image, const Mask& gt,
                           const EvalOptions& options, const Mask* initial) {
  if (gt.width != image.width || gt.height != image.height) throw DimensionError("evaluate_sample: gt size mismatch");
  if (options.targets.empty()) throw ConfigError("evaluate_sample: no targets");
  const double top = *std::max_element(options.targets.begin(), options.targets.end());

  EvalRecord rec;
  rec.id = id;
  rec.scale_ratio = double(gt.area()) / double(gt.width * gt.height);

  ClickState state;
  Mask pred(gt.width, gt.height);
  if (initial != nullptr) {
    if (initial->width != gt.width || initial->height != gt.height) {
      throw DimensionError("evaluate_sample: initial mask size mismatch");
    }
    pred = *initial;
    state.previous.assign(initial->data.begin(), initial->data.end());
  }
  for (int k = 0; k < options.max_clicks; ++k) {
    const auto click = next_click(pred.data, gt.data, gt.width, gt.height);
    if (!click) break;
    state.clicks.push_back(*click);
    rec.clicks.push_back(*click);
    state.previous = model.predict(image, state);
    pred = binarize(state.previous, gt.width, gt.height);
    rec.ious.push_back(iou(pred, gt));
    if (rec.ious.back() >= top) break;
  }
  for (double t : options.targets) rec.noc.push_back(clicks_to_reach(rec.ious, t, options.max_clicks));
  rec.failed = !reached(rec.ious, top, options.max_clicks);
  return rec;
}

NocSummary aggregate(std::span<const EvalRecord> records, double tau, int max_clicks) {
  if (records.empty()) throw ContractError("aggregate: no records");
  NocSummary s;
  double total = 0.0;
  for (const auto& r : records) {
    total += clicks_to_reach(r.ious, tau, max_clicks);
    s.failures += reached(r.ious, tau, max_clicks) ? 0 : 1;
  }
  s.count = records.size();
  s.mean_noc = total / double(records.size());
  return s;
}

std::vector<double> default_scale_edges() {
  std::vector<double> e;
  for (int i = 0; i <= 10; ++i) e.push_back(i / 10.0);
  return e;
}

std::vector<ScaleBin> noc_scale_bins(std::span<const EvalRecord> records, double tau, std::span<const double> edges,
                                     int max_clicks) {
  if (records.empty()) throw ContractError("noc_scale_bins: no records");
  if (edges.size() < 2 || !std::is_sorted(edges.begin(), edges.end())) {
    throw ConfigError("noc_scale_bins: need at least two ascending edges");
  }
  std::vector<ScaleBin> bins(edges.size() - 1);
  std::vector<double> sums(bins.size(), 0.0);
  for (std::size_t i = 0; i < bins.size(); ++i) bins[i].lo = edges[i], bins[i].hi = edges[i + 1];
  for (const auto& r : records) {
    const auto it = std::upper_bound(edges.begin(), edges.end(), r.scale_ratio);
    std::ptrdiff_t b = (it - edges.begin()) - 1;
    b = std::clamp<std::ptrdiff_t>(b, 0, std::ptrdiff_t(bins.size()) - 1);
    bins[std::size_t(b)].count++;
    sums[std::size_t(b)] += clicks_to_reach(r.ious, tau, max_clicks);
  }
  for (std::size_t i = 0; i < bins.size(); ++i)
    if (bins[i].count > 0) bins[i].mean_noc = sums[i] / double(bins[i].count);
  return bins;
}

namespace {

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

void write_report(std::ostream& out, std::span<const EvalRecord> records, const EvalOptions& options) {
  out << "id,scale_ratio";
  for (int i = 1; i <= options.max_clicks; ++i) out << ",iou_" << i;
  for (double t : options.targets) out << ",noc" << std::lround(t * 100);
  out << ",failed\n";
  for (const auto& r : records) {
    out << r.id << ',' << fixed(r.scale_ratio);
    for (int i = 0; i < options.max_clicks; ++i) {
      out << ',';
      if (std::size_t(i) < r.ious.size()) out << fixed(r.ious[std::size_t(i)]);
    }
    for (std::size_t t = 0; t < options.targets.size(); ++t)
      out << ',' << clicks_to_reach(r.ious, options.targets[t], options.max_clicks);
    out << ',' << (r.failed ? 1 : 0) << '\n';
  }
}

void write_scale_report(std::ostream& out, std::span<const ScaleBin> bins) {
  out << "ratio_lo,ratio_hi,count,mean_noc\n";
  for (const auto& b : bins) out << fixed(b.lo, 2) << ',' << fixed(b.hi, 2) << ',' << b.count << ',' << fixed(b.mean_noc, 4) << '\n';
}

namespace {

// Pixels outside `mask` ordered by 4-connected BFS distance from it, raster
// order within a layer.
std::vector<std::size_t> growth_order(const Mask& mask) {
  const std::size_t w = mask.width, h = mask.height, n = w * h;
  std::vector<int> dist(n, -1);
  std::deque<std::size_t> q;
  for (std::size_t i = 0; i < n; ++i)
    if (mask.data[i]) dist[i] = 0, q.push_back(i);
  while (!q.empty()) {
    const std::size_t i = q.front();
    q.pop_front();
    const std::size_t x = i % w, y = i / w;
    auto visit = [&](std::size_t j) {
      if (dist[j] < 0) dist[j] = dist[i] + 1, q.push_back(j);
    };
    if (x > 0) visit(i - 1);
    if (x + 1 < w) visit(i + 1);
    if (y > 0) visit(i - w);
    if (y + 1 < h) visit(i + w);
  }
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < n; ++i)
    if (dist[i] > 0) order.push_back(i);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
  return order;
}

}  // namespace

Mask sp_initial_mask(const Mask& gt, Rng& rng) {
  const std::size_t area = gt.area();
  if (area == 0) throw ContractError("sp_initial_mask: empty ground truth");
  std::uniform_real_distribution<double> target_dist(0.77, 0.83);
  const double target = target_dist(rng);
  const bool grow = (rng() >> 63) != 0;
  const auto grow_count = static_cast<std::size_t>(std::lround(double(area) / target - double(area)));
  const auto shave_count = static_cast<std::size_t>(std::lround(double(area) * (1.0 - target)));

  Mask out = gt;
  const auto order = growth_order(gt);
  if (grow && order.size() >= grow_count) {
    for (std::size_t i = 0; i < grow_count; ++i) out.data[order[i]] = 1;
  } else {
    const auto depth = region_distance(gt.data, gt.width, gt.height);
    std::vector<std::size_t> inside;
    for (std::size_t i = 0; i < gt.data.size(); ++i)
      if (gt.data[i]) inside.push_back(i);
    std::stable_sort(inside.begin(), inside.end(), [&](std::size_t a, std::size_t b) { return depth[a] < depth[b]; });
    for (std::size_t i = 0; i < shave_count && i + 1 < inside.size(); ++i) out.data[inside[i]] = 0;
  }
  return out;
}

}  // namespace mst
