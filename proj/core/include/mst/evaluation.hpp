#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mst/clicks.hpp"
#include "mst/params.hpp"

namespace mst {

/// Anything that turns an image and the clicks so far into a W x H
/// foreground probability map.
class Segmenter {
 public:
  virtual ~Segmenter() = default;
  virtual std::vector<float> predict(const Image& image, const ClickState& state) = 0;
};

enum class Protocol { Zero, Sp };

Protocol parse_protocol(const std::string& name);
const char* protocol_name(Protocol p);

struct EvalOptions {
  std::vector<double> targets{0.80, 0.85, 0.90};
  int max_clicks = 20;
  Protocol protocol = Protocol::Zero;
};

struct EvalRecord {
  std::string id;
  double scale_ratio = 0.0;
  std::vector<double> ious;  // one per click issued
  std::vector<Click> clicks;
  std::vector<int> noc;  // per target
  bool failed = false;   // highest target never reached
};

/// 1-based index of the first IoU reaching tau; max_clicks when none does.
int clicks_to_reach(std::span<const double> ious, double tau, int max_clicks);

/// Click, predict, binarize at 0.5 and score until the highest target is met
/// or the click budget runs out. `initial` seeds the previous mask (SP).
EvalRecord evaluate_sample(Segmenter& model, const std::string& id, const Image& image, const Mask& gt,
                           const EvalOptions& options, const Mask* initial = nullptr);

struct NocSummary {
  double mean_noc = 0.0;
  std::size_t failures = 0;
  std::size_t count = 0;
};

/// Mean clicks-to-tau (failures count as max_clicks) and failure count.
NocSummary aggregate(std::span<const EvalRecord> records, double tau, int max_clicks = 20);

struct ScaleBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
  double mean_noc = 0.0;  // 0 when empty
};

std::vector<double> default_scale_edges();

/// Records binned by target-area ratio over [edges[i], edges[i+1]); the last
/// bin is closed and ratios outside the range fall into the end bins.
std::vector<ScaleBin> noc_scale_bins(std::span<const EvalRecord> records, double tau, std::span<const double> edges,
                                     int max_clicks = 20);

/// id, scale_ratio, iou_1..iou_N, noc per target, failed.
void write_report(std::ostream& out, std::span<const EvalRecord> records, const EvalOptions& options);
void write_scale_report(std::ostream& out, std::span<const ScaleBin> bins);

/// Imperfect starting mask with IoU against gt in [0.75, 0.85], made by
/// shaving or growing the boundary.
Mask sp_initial_mask(const Mask& gt, Rng& rng);

}  // namespace mst
