#pragma once

#include "transapprox/config.hpp"
#include "transapprox/rng.hpp"
#include "transapprox/tensor.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace transapprox {

enum class WeightId { wq, wk, wv, wo, w1, w2 };
inline constexpr WeightId kAllWeightIds[] = {WeightId::wq, WeightId::wk, WeightId::wv,
                                             WeightId::wo, WeightId::w1, WeightId::w2};
std::string to_string(WeightId id);

/// Pre-norm transformer layer: x + ATTN(LN1(x)), then x + FFN(LN2(x)).
/// Each block owns its layer norm, so bypassing a block drops the norm too.
struct LayerParams {
  Tensor ln1_gamma, ln1_beta;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;  // [d x d], [d]
  Tensor ln2_gamma, ln2_beta;
  Tensor w1, b1;  // [d x y], [y]
  Tensor w2, b2;  // [y x d], [d]

  Tensor& weight(WeightId id);
  const Tensor& weight(WeightId id) const;
};

struct TransformerModel {
  TransformerConfig config;
  std::uint64_t seed = 0;
  Tensor token_embedding;     // [vocab x d]
  Tensor position_embedding;  // [n x d]
  std::vector<LayerParams> layers;
  Tensor final_gamma, final_beta;
  Tensor head_w, head_b;  // [d x classes], [classes]

  /// Stable order used by optimizers and checkpoints.
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::vector<Tensor> parameters() const;
  /// Deep copy with fresh leaves.
  TransformerModel clone() const;
};

/// Weights ~ N(0, 1/fan_in), embeddings ~ N(0, 0.1^2), norms at identity, biases zero.
TransformerModel build_model(const TransformerConfig& config, Rng& rng);

}  // namespace transapprox
