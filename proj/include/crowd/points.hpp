#pragma once

#include <vector>

namespace crowd {

// Head-center coordinate in image pixels (x = column, y = row).
struct Point {
  double x = 0.0;
  double y = 0.0;
};

using PointList = std::vector<Point>;

}  // namespace crowd
