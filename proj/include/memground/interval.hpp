#pragma once

#include <string>

namespace memground {

// Closed temporal interval in frame units. Length is end - start.
struct Interval {
  double start = 0.0;
  double end = 0.0;

  double length() const { return end - start; }
  friend bool operator==(const Interval&, const Interval&) = default;
};

std::string to_string(const Interval& iv);

// |a n b| / |a u b|; 0 for disjoint intervals, 1 for identical ones
// (including identical points). Throws InputError if start > end.
double interval_iou(const Interval& a, const Interval& b);

}  // namespace memground
