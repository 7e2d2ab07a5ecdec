#pragma once

namespace mst {

/// Pixel coordinate: x is the column, y the row.
struct Point {
  int x = 0;
  int y = 0;
  friend bool operator==(const Point&, const Point&) = default;
};

}  // namespace mst
