#pragma once

#include <vector>

namespace transapprox {

/// One token sequence. Classification examples carry one label; sequence tasks
/// carry one label per position with -1 marking positions excluded from the loss.
struct Example {
  std::vector<int> tokens;
  std::vector<int> labels;

  bool operator==(const Example&) const = default;
};

struct Dataset {
  std::vector<Example> train;
  std::vector<Example> validation;
};

}  // namespace transapprox
