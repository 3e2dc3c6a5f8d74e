#pragma once

#include "transapprox/dataset.hpp"
#include "transapprox/model.hpp"
#include "transapprox/optim.hpp"
#include "transapprox/plan.hpp"
#include "transapprox/rng.hpp"

#include <span>
#include <vector>

namespace transapprox {

struct TrainOptions {
  int batch_size = 16;
  AdamOptions adam{};
  /// Quantized weights are trained through a straight-through estimator
  /// instead of staying frozen at their dequantized values.
  bool straight_through = false;
};

struct EvalResult {
  double loss = 0;
  double accuracy = 0;
  std::size_t count = 0;
};

/// Loss and accuracy over `examples` under `plan`, no graph construction.
EvalResult evaluate(const TransformerModel& model, const ApproxPlan& plan,
                    std::span<const Example> examples, int batch_size = 64);

/// Trains all live parameters of `model` in place for `epochs` passes over a
/// shuffled copy of `examples`; returns the count-weighted mean loss of each epoch.
std::vector<double> train_epochs(TransformerModel& model, const ApproxPlan& plan,
                                 std::span<const Example> examples, int epochs,
                                 const TrainOptions& options, Rng& rng);

}  // namespace transapprox
