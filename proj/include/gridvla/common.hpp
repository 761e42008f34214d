#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace gridvla {

// Library-wide error type. Messages name the failing operation and the
// offending shapes/values so attack loops fail loudly instead of drifting.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

inline std::string shape_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

}  // namespace gridvla
