#pragma once

#include "transapprox/tensor.hpp"

#include <cstdint>
#include <vector>

namespace transapprox {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam moments for a fixed, ordered parameter list.
class OptimizerState {
 public:
  OptimizerState(AdamOptions options, const std::vector<Tensor>& params);

  const AdamOptions& options() const { return options_; }
  std::int64_t step_count() const { return step_count_; }
  const std::vector<Matrix>& first_moments() const { return m_; }
  const std::vector<Matrix>& second_moments() const { return v_; }

  friend void optimizer_step(OptimizerState& state, std::vector<Tensor>& params);

 private:
  AdamOptions options_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  std::int64_t step_count_ = 0;
};

/// One Adam update on every parameter. Throws if a parameter has no gradient
/// or the list does not match the one the state was built for.
void optimizer_step(OptimizerState& state, std::vector<Tensor>& params);

}  // namespace transapprox
