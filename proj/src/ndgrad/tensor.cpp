#include "pm/ndgrad/tensor.hpp"

namespace pm::ndgrad {

std::string to_string(const Shape& shape) {
  return "[" + std::to_string(shape[0]) + "x" + std::to_string(shape[1]) + "]";
}

}  // namespace pm::ndgrad
