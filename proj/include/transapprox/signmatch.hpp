#pragma once

#include "transapprox/attention.hpp"
#include "transapprox/tensor.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace transapprox {

/// Per-column majority sign of a query matrix; entries are +1 or -1.
using SignVector = Eigen::Matrix<std::int8_t, 1, Eigen::Dynamic>;

/// Comparison counter for the linear-time scoring stage.
struct SignMatchStats {
  std::int64_t comparisons = 0;
  std::int64_t starved_queries = 0;
};

struct SignMatchConfig {
  int k = 1;
  bool causal = false;
  double score_scale = 1.0;
};

/// sign(v) as used throughout sign matching: +1 iff v > 0, so sign(0) = -1.
inline std::int8_t strict_sign(double v) { return v > 0.0 ? std::int8_t{1} : std::int8_t{-1}; }

/// val[i] = +1 iff at least n/2 queries are strictly positive in column i.
template <typename Derived>
SignVector representative_sign(const Eigen::MatrixBase<Derived>& query, SignMatchStats* stats = nullptr) {
  const Eigen::Index n = query.rows(), d = query.cols();
  if (n < 1) throw std::invalid_argument("representative_sign: empty query matrix");
  SignVector val(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    Eigen::Index count = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (query(j, i) > 0) ++count;
    }
    // count >= n/2 without rounding n/2.
    val(i) = 2 * count >= n ? std::int8_t{1} : std::int8_t{-1};
  }
  if (stats) stats->comparisons += static_cast<std::int64_t>(n * d);
  return val;
}

/// Hamming distance between sign(k_i) and `val` for every key row.
template <typename Derived>
std::vector<int> score_keys(const Eigen::MatrixBase<Derived>& key, const SignVector& val,
                            SignMatchStats* stats = nullptr) {
  if (key.cols() != val.size()) {
    throw ShapeError("score_keys: key width " + std::to_string(key.cols()) +
                     " does not match sign vector length " + std::to_string(val.size()));
  }
  std::vector<int> dist(static_cast<std::size_t>(key.rows()), 0);
  for (Eigen::Index r = 0; r < key.rows(); ++r) {
    int mismatches = 0;
    for (Eigen::Index c = 0; c < key.cols(); ++c) {
      if (strict_sign(key(r, c)) != val(c)) ++mismatches;
    }
    dist[static_cast<std::size_t>(r)] = mismatches;
  }
  if (stats) stats->comparisons += static_cast<std::int64_t>(key.rows() * key.cols());
  return dist;
}

/// Indices of the k smallest distances, ties by ascending index, in rank order.
std::vector<Eigen::Index> select_topk(std::span<const int> distances, int k);

/// Causal selection: ceil(k/4) best among positions [0, ceil(n/4)), then the
/// k - ceil(k/4) best of the remaining positions. Returned in ascending index order.
std::vector<Eigen::Index> causal_select(std::span<const int> distances, int n, int k);

/// Attention restricted to the k keys whose sign pattern best matches the
/// representative query sign. Selected rows keep their original order, so with
/// k == n the result is identical to dot_product_attention.
Tensor sign_match_attention(const Tensor& query, const Tensor& key, const Tensor& value,
                            const SignMatchConfig& cfg, const AttentionMask& mask,
                            SignMatchStats* stats = nullptr);

/// Variant over a key/value subset whose rows sit at `key_positions`.
Tensor sign_match_attention(const Tensor& query, const Tensor& key, const Tensor& value,
                            const SignMatchConfig& cfg, const AttentionMask& mask,
                            std::span<const Eigen::Index> key_positions, SignMatchStats* stats = nullptr);

}  // namespace transapprox
