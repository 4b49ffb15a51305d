#include "pm/common.hpp"

namespace pm {

Precision parse_precision(const std::string& text) {
  if (text == "f32") return Precision::f32;
  if (text == "f64") return Precision::f64;
  throw ValidationError("unknown precision '" + text + "' (expected f32 or f64)");
}

std::string to_string(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

}  // namespace pm
