#pragma once

#include "transapprox/approx.hpp"
#include "transapprox/attention.hpp"
#include "transapprox/dataset.hpp"
#include "transapprox/model.hpp"
#include "transapprox/plan.hpp"
#include "transapprox/signmatch.hpp"

#include <span>

namespace transapprox {

/// Pre-residual multi-head attention output for `x` holding whole sequences of
/// length `seq_len` stacked along rows. Pruned heads contribute zero slices.
Tensor attention_delta(const PlannedModel& view, int layer, const Tensor& x, Eigen::Index seq_len,
                       const AttentionMask& mask, SignMatchStats* stats = nullptr);
/// x + attention_delta, or x itself when the block is skipped.
Tensor attention_forward(const PlannedModel& view, int layer, const Tensor& x, Eigen::Index seq_len,
                         const AttentionMask& mask, SignMatchStats* stats = nullptr);

Tensor ffn_delta(const PlannedModel& view, int layer, const Tensor& x);
Tensor ffn_forward(const PlannedModel& view, int layer, const Tensor& x);

struct ForwardResult {
  Tensor logits;  // [batch x classes] or [batch*n x vocab]
  Tensor loss;    // scalar
  std::size_t loss_count = 0;  // examples or label tokens averaged into loss
  std::size_t correct = 0;     // argmax matches among those
};

/// Full forward pass under `plan`. Sequences shorter than the context length
/// are right-padded with token vocab_size-1 and those positions carry no label.
ForwardResult forward(const PlannedModel& view, std::span<const Example> batch,
                      SignMatchStats* stats = nullptr);
ForwardResult forward(const TransformerModel& model, std::span<const Example> batch,
                      const ApproxPlan& plan);

}  // namespace transapprox
