#pragma once

#include <map>
#include <string>

#include "spritediff/tensor.hpp"

namespace spritediff {

// Named parameter registry. std::map keeps iteration order stable (sorted by
// name), which fixes the checkpoint payload layout.
using ParamMap = std::map<std::string, Tensor>;

}  // namespace spritediff
