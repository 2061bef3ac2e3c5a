#include "memground/interval.hpp"

#include <algorithm>
#include <sstream>

#include "memground/errors.hpp"

namespace memground {

std::string to_string(const Interval& iv) {
  std::ostringstream os;
  os << "[" << iv.start << ", " << iv.end << "]";
  return os.str();
}

double interval_iou(const Interval& a, const Interval& b) {
  if (a.start > a.end || b.start > b.end) {
    throw InputError("interval_iou: inverted interval " + to_string(a.start > a.end ? a : b));
  }
  const double inter = std::min(a.end, b.end) - std::max(a.start, b.start);
  if (inter < 0.0) return 0.0;
  const double uni = std::max(a.end, b.end) - std::min(a.start, b.start);
  if (uni <= 0.0) return 1.0;  // both are the same point
  return std::clamp(inter / uni, 0.0, 1.0);
}

}  // namespace memground
