#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

namespace voxmim {

// Row-major shapes throughout; the last axis is contiguous.
using Shape = std::vector<int>;

inline int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

// rows/cols view: 1-D tensors count as a single row, higher ranks fold the
// leading axes into rows of length shape.back()
inline int last_dim(const Shape& s) { return s.empty() ? 1 : s.back(); }
inline int64_t row_count(const Shape& s) {
  if (s.empty()) return 1;
  return numel(s) / last_dim(s);
}

}  // namespace voxmim
