#include "transapprox/training.hpp"

#include "transapprox/forward.hpp"

#include <algorithm>
#include <stdexcept>

namespace transapprox {

EvalResult evaluate(const TransformerModel& model, const ApproxPlan& plan, std::span<const Example> examples,
                    int batch_size) {
  if (examples.empty()) throw std::invalid_argument("evaluate: no examples");
  if (batch_size < 1) throw std::invalid_argument("evaluate: batch_size must be positive");
  NoGradGuard no_grad;
  const PlannedModel view = apply_plan(model, plan);
  double loss_sum = 0;
  std::size_t count = 0, correct = 0;
  for (std::size_t i = 0; i < examples.size(); i += static_cast<std::size_t>(batch_size)) {
    const auto len = std::min<std::size_t>(static_cast<std::size_t>(batch_size), examples.size() - i);
    const ForwardResult r = forward(view, examples.subspan(i, len));
    loss_sum += r.loss.item() * static_cast<double>(r.loss_count);
    count += r.loss_count;
    correct += r.correct;
  }
  return {loss_sum / static_cast<double>(count), static_cast<double>(correct) / static_cast<double>(count), count};
}

std::vector<double> train_epochs(TransformerModel& model, const ApproxPlan& plan, std::span<const Example> examples,
                                 int epochs, const TrainOptions& options, Rng& rng) {
  if (epochs < 0) throw std::invalid_argument("train_epochs: negative epoch count");
  if (options.batch_size < 1) throw std::invalid_argument("train_epochs: batch_size must be positive");
  if (epochs > 0 && examples.empty()) throw std::invalid_argument("train_epochs: no examples");

  std::vector<Tensor> params = model.parameters();
  OptimizerState state(options.adam, params);
  std::vector<std::size_t> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::vector<double> epoch_losses;
  for (int e = 0; e < epochs; ++e) {
    rng.shuffle(std::span<std::size_t>(order));
    // Weights inside a quantized region are re-quantized from the latest raw
    // values on every step.
    double loss_sum = 0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(options.batch_size)) {
      std::vector<Example> batch;
      for (std::size_t j = i; j < std::min(order.size(), i + static_cast<std::size_t>(options.batch_size)); ++j) {
        batch.push_back(examples[order[j]]);
      }
      const PlannedModel view = apply_plan(model, plan, options.straight_through);
      for (auto& p : params) p.zero_grad();
      const ForwardResult r = forward(view, batch);
      backward(r.loss);
      for (auto& p : params) p.ensure_grad();
      optimizer_step(state, params);
      loss_sum += r.loss.item() * static_cast<double>(r.loss_count);
      count += r.loss_count;
    }
    epoch_losses.push_back(loss_sum / static_cast<double>(count));
  }
  return epoch_losses;
}

}  // namespace transapprox
