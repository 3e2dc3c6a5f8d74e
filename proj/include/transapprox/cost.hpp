#pragma once

#include "transapprox/dataset.hpp"
#include "transapprox/model.hpp"
#include "transapprox/plan.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace transapprox {

struct CostModel {
  std::int64_t mac_count = 0;
  std::int64_t param_count = 0;
  std::int64_t bytes = 0;

  CostModel& operator+=(const CostModel& o) {
    mac_count += o.mac_count;
    param_count += o.param_count;
    bytes += o.bytes;
    return *this;
  }
  bool operator==(const CostModel&) const = default;
};

struct CostOptions {
  /// Storage width of unquantized parameters.
  int storage_bits = 32;
  /// Per quantized region (one fp32 scale).
  int scale_bytes = 4;
};

/// MACs of one ATTN block for one sequence, split by stage.
struct AttentionMacs {
  std::int64_t projections = 0;  // Q, K, V
  std::int64_t selection = 0;    // sign-match scoring (sign comparisons)
  std::int64_t scores = 0;       // Q K^T over kept keys
  std::int64_t weighted_sum = 0; // softmax(.) V
  std::int64_t output = 0;       // W_o

  std::int64_t total() const { return projections + selection + scores + weighted_sum + output; }
};

struct CostPart {
  std::string name;  // "embedding", "layer0.attn", "layer0.ffn", ..., "head"
  CostModel cost;
};

struct CostBreakdown {
  CostModel total;
  std::vector<CostPart> parts;
  std::vector<AttentionMacs> attention;  // per layer
};

/// Analytic per-sequence cost under `plan`. Only matmul MACs are counted; sign
/// matching costs n*d comparisons for the queries plus n*d for the keys.
CostBreakdown cost_breakdown(const TransformerConfig& config, const ApproxPlan& plan,
                             const CostOptions& options = {});
CostModel cost(const TransformerConfig& config, const ApproxPlan& plan, const CostOptions& options = {});
inline CostModel cost(const TransformerModel& model, const ApproxPlan& plan, const CostOptions& options = {}) {
  return cost(model.config, plan, options);
}

/// Median wall time in milliseconds of `repeats` (>= 3) forward passes.
double measure_latency(const TransformerModel& model, const ApproxPlan& plan,
                       std::span<const Example> batch, int repeats);

double median(std::vector<double> samples);

}  // namespace transapprox
