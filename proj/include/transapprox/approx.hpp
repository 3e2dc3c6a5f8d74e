#pragma once

#include "transapprox/model.hpp"
#include "transapprox/plan.hpp"
#include "transapprox/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

namespace transapprox {

inline constexpr int kQuantBits[] = {2, 4, 8};

inline bool valid_quant_bits(int bits) { return bits == 2 || bits == 4 || bits == 8; }

/// Largest code magnitude for a signed symmetric `bits`-wide code.
inline std::int32_t quant_max_code(int bits) { return (std::int32_t{1} << (bits - 1)) - 1; }

template <typename Scalar>
struct QuantizedGroup {
  std::vector<std::int32_t> codes;
  Scalar scale = 0;
  int bits = 8;

  std::vector<Scalar> dequantize() const {
    std::vector<Scalar> out(codes.size());
    for (std::size_t i = 0; i < codes.size(); ++i) out[i] = static_cast<Scalar>(codes[i]) * scale;
    return out;
  }
};

/// Symmetric uniform quantization with one scale: scale = max|w| / (2^(bits-1) - 1),
/// codes = round(w / scale). An all-zero group gets scale 0 and zero codes.
template <typename Derived>
QuantizedGroup<typename Derived::Scalar> quantize_group(const Eigen::DenseBase<Derived>& weights,
                                                        int bits) {
  using Scalar = typename Derived::Scalar;
  if (!valid_quant_bits(bits)) throw std::invalid_argument("quantize_group: bits must be 2, 4 or 8");
  if (weights.size() == 0) throw std::invalid_argument("quantize_group: empty weight group");
  QuantizedGroup<Scalar> q;
  q.bits = bits;
  q.codes.resize(static_cast<std::size_t>(weights.size()));
  Scalar max_abs(0);
  for (Eigen::Index r = 0; r < weights.rows(); ++r) {
    for (Eigen::Index c = 0; c < weights.cols(); ++c) max_abs = std::max<Scalar>(max_abs, std::abs(weights(r, c)));
  }
  const std::int32_t qmax = quant_max_code(bits);
  if (max_abs == Scalar(0)) return q;
  q.scale = max_abs / static_cast<Scalar>(qmax);
  Eigen::Index i = 0;
  for (Eigen::Index r = 0; r < weights.rows(); ++r) {
    for (Eigen::Index c = 0; c < weights.cols(); ++c, ++i) {
      auto code = static_cast<std::int32_t>(std::round(weights(r, c) / q.scale));
      q.codes[static_cast<std::size_t>(i)] = std::clamp(code, -qmax, qmax);
    }
  }
  return q;
}

/// Rectangular slice of one layer weight quantized with a single scale.
struct QuantRegion {
  TransElement owner;
  int layer = 0;
  WeightId weight = WeightId::wq;
  Eigen::Index row0 = 0, rows = 0, col0 = 0, cols = 0;
  int bits = 8;
};

/// Structural effect of a plan on one layer. Keep masks are 1 for live weights.
struct LayerView {
  bool attn_skipped = false;
  bool ffn_skipped = false;
  std::vector<char> head_active;
  std::vector<Eigen::Index> kv_keep;  // ascending kept key/value positions
  std::optional<int> sign_match_k;
  Matrix keep[6];  // indexed by WeightId

  const Matrix& keep_mask(WeightId id) const { return keep[static_cast<int>(id)]; }
  int active_heads() const;
  bool kv_pruned(int context_len) const {
    return static_cast<int>(kv_keep.size()) != context_len;
  }
};

/// Structure of a validated plan; independent of weight values.
struct PlanLayout {
  TransformerConfig config;
  std::vector<LayerView> layers;
  std::vector<QuantRegion> regions;
};

/// Throws PlanError on invalid or conflicting entries (including overlapping
/// quantized regions and pruning every key/value position of a layer).
PlanLayout layout_plan(const TransformerConfig& config, const ApproxPlan& plan);

/// Forward-ready view: layout plus per-weight overlays holding dequantized values.
struct PlannedModel {
  const TransformerModel* model = nullptr;
  PlanLayout layout;
  std::vector<std::array<WeightOverlay, 6>> overlays;  // [layer][WeightId]

  const LayerView& layer(int l) const { return layout.layers[static_cast<std::size_t>(l)]; }
  const WeightOverlay& overlay_of(int l, WeightId id) const {
    return overlays[static_cast<std::size_t>(l)][static_cast<std::size_t>(id)];
  }
};

/// Builds the execution view of `plan` over `model`. With `straight_through`,
/// quantized weights pass gradients to the raw weights (QAT); otherwise they are frozen.
PlannedModel apply_plan(const TransformerModel& model, const ApproxPlan& plan,
                        bool straight_through = false);

/// Plan entry removing `positions` from Key and Value of `layer`.
std::pair<TransElement, ApproxParams> prune_kv_positions(const TransformerConfig& config, int layer,
                                                         std::vector<int> positions);

/// Writes dequantized values of every quantized region into the raw weights.
void bake_quantization(TransformerModel& model, const ApproxPlan& plan);

}  // namespace transapprox
