#include "transapprox/signmatch.hpp"

#include <algorithm>
#include <numeric>

namespace transapprox {

std::vector<Eigen::Index> iota_positions(Eigen::Index n) {
  std::vector<Eigen::Index> p(static_cast<std::size_t>(n));
  std::iota(p.begin(), p.end(), Eigen::Index{0});
  return p;
}

Matrix AttentionMask::matrix(std::span<const Eigen::Index> query_positions,
                             std::span<const Eigen::Index> key_positions) const {
  Matrix m = Matrix::Zero(static_cast<Eigen::Index>(query_positions.size()),
                          static_cast<Eigen::Index>(key_positions.size()));
  if (mode == Mode::causal) {
    for (std::size_t i = 0; i < query_positions.size(); ++i) {
      for (std::size_t j = 0; j < key_positions.size(); ++j) {
        if (key_positions[j] > query_positions[i]) {
          m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = kMaskedScore;
        }
      }
    }
  }
  return m;
}

Matrix AttentionMask::matrix(Eigen::Index n) const {
  const auto p = iota_positions(n);
  return matrix(p, p);
}

Tensor dot_product_attention(const Tensor& query, const Tensor& key, const Tensor& value,
                             const AttentionMask& mask, std::span<const Eigen::Index> key_positions,
                             double score_scale) {
  if (static_cast<Eigen::Index>(key_positions.size()) != key.rows() || key.rows() != value.rows()) {
    throw ShapeError("dot_product_attention: key/value rows and key positions disagree");
  }
  Tensor scores = scale(matmul_transposed(query, key), score_scale);
  Tensor probs = mask.mode == AttentionMask::Mode::none
                     ? softmax_rows(scores)
                     : softmax_rows(scores, mask.matrix(iota_positions(query.rows()), key_positions));
  return matmul(probs, value);
}

Tensor dot_product_attention(const Tensor& query, const Tensor& key, const Tensor& value,
                             const AttentionMask& mask, double score_scale) {
  const auto p = iota_positions(key.rows());
  return dot_product_attention(query, key, value, mask, p, score_scale);
}

std::vector<Eigen::Index> select_topk(std::span<const int> distances, int k) {
  const auto n = static_cast<int>(distances.size());
  if (k < 0 || k > n) {
    throw std::invalid_argument("select_topk: K=" + std::to_string(k) + " exceeds n=" + std::to_string(n));
  }
  auto order = iota_positions(n);
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    return distances[static_cast<std::size_t>(a)] < distances[static_cast<std::size_t>(b)];
  });
  order.resize(static_cast<std::size_t>(k));
  return order;
}

std::vector<Eigen::Index> causal_select(std::span<const int> distances, int n, int k) {
  if (static_cast<int>(distances.size()) != n) throw ShapeError("causal_select: distances length != n");
  if (k < 1 || k > n) {
    throw std::invalid_argument("causal_select: K=" + std::to_string(k) + " outside [1, n=" + std::to_string(n) + "]");
  }
  const int quarter_len = (n + 3) / 4;
  const int early = std::min((k + 3) / 4, quarter_len);
  auto picked = select_topk(distances.subspan(0, static_cast<std::size_t>(quarter_len)), early);
  std::vector<char> taken(static_cast<std::size_t>(n), 0);
  for (auto i : picked) taken[static_cast<std::size_t>(i)] = 1;
  for (auto i : select_topk(distances, n)) {
    if (static_cast<int>(picked.size()) == k) break;
    if (!taken[static_cast<std::size_t>(i)]) picked.push_back(i);
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

Tensor sign_match_attention(const Tensor& query, const Tensor& key, const Tensor& value,
                            const SignMatchConfig& cfg, const AttentionMask& mask,
                            std::span<const Eigen::Index> key_positions, SignMatchStats* stats) {
  if (query.cols() != key.cols() || key.rows() != value.rows() ||
      static_cast<Eigen::Index>(key_positions.size()) != key.rows()) {
    throw ShapeError("sign_match_attention: inconsistent query/key/value shapes " +
                     shape_string(query.shape()) + ", " + shape_string(key.shape()) + ", " +
                     shape_string(value.shape()));
  }
  const auto m = static_cast<int>(key.rows());
  if (cfg.k < 1 || cfg.k > m) {
    throw std::invalid_argument("sign_match_attention: K=" + std::to_string(cfg.k) + " outside [1, " +
                                std::to_string(m) + "]");
  }
  const SignVector val = representative_sign(query.value(), stats);
  const auto dist = score_keys(key.value(), val, stats);
  auto idx = cfg.causal ? causal_select(dist, m, cfg.k) : select_topk(dist, cfg.k);
  std::sort(idx.begin(), idx.end());

  std::vector<Eigen::Index> positions;
  positions.reserve(idx.size());
  for (auto i : idx) positions.push_back(key_positions[static_cast<std::size_t>(i)]);

  if (stats && mask.mode == AttentionMask::Mode::causal) {
    // Queries at positions before the earliest selected key see nothing.
    for (Eigen::Index q = 0; q < query.rows(); ++q) {
      if (positions.front() > q) ++stats->starved_queries;
    }
  }
  return dot_product_attention(query, gather_rows(key, idx), gather_rows(value, idx), mask, positions,
                               cfg.score_scale);
}

Tensor sign_match_attention(const Tensor& query, const Tensor& key, const Tensor& value,
                            const SignMatchConfig& cfg, const AttentionMask& mask, SignMatchStats* stats) {
  const auto p = iota_positions(key.rows());
  return sign_match_attention(query, key, value, cfg, mask, p, stats);
}

}  // namespace transapprox
