#pragma once

#include <algorithm>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "mst/evaluation.hpp"

namespace mst::testing {

using Grid = std::vector<std::uint8_t>;

inline Grid parse(const std::vector<std::string>& rows) {
  Grid g;
  for (const auto& r : rows)
    for (char c : r) g.push_back(c == '#' ? 1 : 0);
  return g;
}

// Reference: flood fill, brute-force nearest outside pixel over a grid with
// a one-pixel outside border, then the ordering rules.
inline std::optional<Click> brute_force_click(const Grid& pred, const Grid& gt, int w, int h) {
  std::vector<int> label(pred.size(), -1);
  struct Comp {
    std::vector<int> px;
    bool fn;
  };
  std::vector<Comp> comps;
  for (int i = 0; i < w * h; ++i) {
    if (pred[i] == gt[i] || label[i] >= 0) continue;
    Comp c{{}, gt[i] == 1};
    std::vector<int> stack{i};
    label[i] = int(comps.size());
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      c.px.push_back(p);
      const int x = p % w, y = p / w;
      const int nb[4][2] = {{x - 1, y}, {x + 1, y}, {x, y - 1}, {x, y + 1}};
      for (auto& n : nb) {
        if (n[0] < 0 || n[1] < 0 || n[0] >= w || n[1] >= h) continue;
        const int q = n[1] * w + n[0];
        if (label[q] < 0 && pred[q] != gt[q] && (gt[q] == 1) == c.fn) {
          label[q] = int(comps.size());
          stack.push_back(q);
        }
      }
    }
    std::sort(c.px.begin(), c.px.end());
    comps.push_back(std::move(c));
  }
  if (comps.empty()) return std::nullopt;
  const Comp* best = &comps[0];
  for (const auto& c : comps) {
    if (c.px.size() != best->px.size()) {
      if (c.px.size() > best->px.size()) best = &c;
      continue;
    }
    if (c.fn != best->fn) {
      if (c.fn) best = &c;
      continue;
    }
    if (c.px.front() < best->px.front()) best = &c;
  }
  std::vector<std::uint8_t> in(pred.size(), 0);
  for (int p : best->px) in[p] = 1;
  long best_d = -1;
  int best_p = -1;
  for (int p : best->px) {
    const int x = p % w, y = p / w;
    long d = std::numeric_limits<long>::max();
    for (int qy = -1; qy <= h; ++qy)
      for (int qx = -1; qx <= w; ++qx) {
        const bool outside = qx < 0 || qy < 0 || qx >= w || qy >= h || !in[qy * w + qx];
        if (outside) d = std::min(d, long(qx - x) * (qx - x) + long(qy - y) * (qy - y));
      }
    if (d > best_d) {
      best_d = d;
      best_p = p;
    }
  }
  return Click{{best_p % w, best_p / w}, best->fn};
}

struct Case {
  std::vector<std::string> pred, gt;
};

inline std::vector<Case> crafted_cases() {
  return {
      // 1 empty prediction, square target
      {{".....", ".....", ".....", ".....", "....."}, {".....", ".###.", ".###.", ".###.", "....."}},
      // 2 full prediction, single target pixel: one big false positive
      {{"#####", "#####", "#####"}, {".....", "..#..", "....."}},
      // 3 target touching the border: border counts as outside
      {{"......", "......", "......"}, {"###...", "###...", "###..."}},
      // 4 equal-size FN and FP: FN wins
      {{"##....", "##....", "......", "......"}, {"......", "......", "....##", "....##"}},
      // 5 two equal FN regions: earlier first pixel wins
      {{"......", "......", "......"}, {"#....#", "......", "#....#"}},
      // 6 larger FP beats smaller FN
      {{"###...", "###...", "###..."}, {"......", "......", ".....#"}},
      // 7 ring-shaped false negative
      {{".......", ".......", "...#...", ".......", "......."},
       {".......", ".#####.", ".##.##.", ".#####.", "......."}},
      // 8 elongated bar: depth ties along the spine go to the first raster pixel
      {{"........", "........", "........", "........"}, {"........", ".######.", ".######.", "........"}},
      // 9 pred equals gt except one hole
      {{".###.", ".#.#.", ".###."}, {".###.", ".###.", ".###."}},
      // 10 diagonal pixels are separate components under 4-connectivity
      {{"....", "....", "....", "...."}, {"#...", ".#..", "..#.", "...#"}},
      // 11 L-shaped false positive
      {{"#....", "#....", "#....", "####.", "....."}, {".....", ".....", ".....", ".....", "....."}},
      // 12 single row image
      {{"........"}, {"..####.."}},
      // 13 single column image
      {{".", "#", "#", "#", ".", "."}, {".", ".", ".", ".", ".", "."}},
      // 14 FN and FP adjacent: they are different components
      {{"..###...", "..###...", "..###..."}, {"#####...", "#####...", "#####..."}},
      // 15 large plus shape
      {{".........", ".........", ".........", ".........", ".........", ".........", "........."},
       {"....#....", "....#....", "..#####..", "..#####..", "..#####..", "....#....", "....#...."}},
      // 16 whole image is a false negative
      {{"....", "....", "...."}, {"####", "####", "####"}},
      // 17 odd rectangle with off-centre deepest point
      {{".........", ".........", ".........", ".........", "........."},
       {".........", ".#######.", ".#######.", ".#######.", "........."}},
      // 18 two FP blobs, second larger
      {{"##.......", "##.......", ".....###.", ".....###.", "........."}, {".........", ".........", ".........", ".........", "........."}},
      // 19 checkerboard errors: all singletons, FN first
      {{"#.#.", "....", "....", "...."}, {"....", ".#.#", "....", "...."}},
      // 20 prediction already correct
      {{"..##", "..##"}, {"..##", "..##"}},
  };
}

class ScriptedSegmenter : public Segmenter {
 public:
  // gt is the first 100 pixels of a 10 x 20 image; a prediction of the
  // first m pixels scores IoU m / 100.
  explicit ScriptedSegmenter(std::vector<int> hits) : hits_(std::move(hits)) {}
  std::vector<float> predict(const Image& image, const ClickState& state) override {
    std::vector<float> p(image.width * image.height, 0.0f);
    const int m = hits_.at(state.clicks.size() - 1);
    for (int i = 0; i < m; ++i) p[std::size_t(i)] = 1.0f;
    return p;
  }

 private:
  std::vector<int> hits_;
};

inline Mask scripted_gt() {
  Mask gt(20, 10);
  for (int i = 0; i < 100; ++i) gt.data[std::size_t(i)] = 1;
  return gt;
}

/// IoU trace in percent of the scripted gt, with hand-computed answers.
struct ScriptedTrace {
  std::vector<int> hits;
  int noc85;
  int noc90;
  bool failed;
};

inline std::vector<ScriptedTrace> scripted_traces() {
  return {
      {{50, 85, 92}, 2, 3, false},
      {{90}, 1, 1, false},
      {{60, 70, 86, 88, 89, 95}, 3, 6, false},
      {std::vector<int>(20, 84), 20, 20, true},
      {{10, 20, 30, 40, 50, 60, 70, 80, 81, 82, 83, 84, 85, 86, 87, 88, 89, 89, 89, 90}, 13, 20, false},
      {{91, 99}, 1, 1, false},
      {{30, 30, 30, 86, 88, 88, 88, 88, 88, 88, 88, 88, 88, 88, 88, 88, 88, 88, 88, 88}, 4, 20, true},
  };
}

/// Mean NoC over scripted_traces(): (2+1+3+20+13+1+4)/7 and (3+1+6+20+20+1+20)/7.
inline constexpr double kScriptedNoc85 = 44.0 / 7.0;
inline constexpr double kScriptedNoc90 = 71.0 / 7.0;
inline constexpr std::size_t kScriptedFailures = 2;

}  // namespace mst::testing
