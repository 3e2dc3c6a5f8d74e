#pragma once

#include <string>

namespace transapprox {

enum class Focus { speed, size, accuracy };

std::string to_string(Focus focus);
Focus parse_focus(const std::string& s);

/// Optimization goal plus the tolerated relative degradation (ignored for accuracy).
struct FocusMode {
  Focus focus = Focus::speed;
  double acceptable_degradation = 0.005;
};

}  // namespace transapprox
