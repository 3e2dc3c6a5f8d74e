#pragma once

#include "transapprox/tensor.hpp"

#include <span>
#include <vector>

namespace transapprox {

inline constexpr double kMaskedScore = -1e9;

/// Additive attention mask: 0 where a query may attend, -1e9 otherwise.
struct AttentionMask {
  enum class Mode { none, causal };
  Mode mode = Mode::none;

  static AttentionMask none() { return {Mode::none}; }
  static AttentionMask causal() { return {Mode::causal}; }

  /// Mask for queries at `query_positions` against keys at `key_positions`;
  /// entry (i, j) is -1e9 iff causal and key_positions[j] > query_positions[i].
  Matrix matrix(std::span<const Eigen::Index> query_positions,
                std::span<const Eigen::Index> key_positions) const;
  Matrix matrix(Eigen::Index n) const;
};

/// softmax(Q K^T * score_scale + mask) V for one head. `key_positions` are the
/// original sequence positions of the rows of `key` and `value`; queries sit at 0..n-1.
/// Queries with no visible key produce zero rows.
Tensor dot_product_attention(const Tensor& query, const Tensor& key, const Tensor& value,
                             const AttentionMask& mask, std::span<const Eigen::Index> key_positions,
                             double score_scale = 1.0);

/// Same with keys at positions 0..n-1.
Tensor dot_product_attention(const Tensor& query, const Tensor& key, const Tensor& value,
                             const AttentionMask& mask, double score_scale = 1.0);

std::vector<Eigen::Index> iota_positions(Eigen::Index n);

}  // namespace transapprox
