#include "doctest.h"
#include "generators.hpp"

#include "transapprox/signmatch.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace transapprox;

namespace {

/// Reference: softmax over the selected keys only, causal by original position.
Matrix restricted_attention(const Matrix& q, const Matrix& k, const Matrix& v, const std::vector<Eigen::Index>& keys,
                            bool causal, double score_scale) {
  Matrix out = Matrix::Zero(q.rows(), v.cols());
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    std::vector<double> w;
    std::vector<Eigen::Index> vis;
    for (auto j : keys) {
      if (causal && j > i) continue;
      w.push_back(q.row(i).dot(k.row(j)) * score_scale);
      vis.push_back(j);
    }
    if (vis.empty()) continue;
    const double top = *std::max_element(w.begin(), w.end());
    double total = 0;
    for (double& x : w) total += (x = std::exp(x - top));
    for (std::size_t t = 0; t < vis.size(); ++t) out.row(i) += w[t] / total * v.row(vis[t]);
  }
  return out;
}

std::vector<Eigen::Index> brute_topk(const std::vector<int>& dist, int k) {
  std::vector<Eigen::Index> idx(dist.size());
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  std::sort(idx.begin(), idx.end(), [&](Eigen::Index a, Eigen::Index b) {
    const int da = dist[static_cast<std::size_t>(a)], db = dist[static_cast<std::size_t>(b)];
    return da != db ? da < db : a < b;
  });
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

}  // namespace

TEST_CASE("sign conventions") {
  CHECK(strict_sign(0.0) == -1);
  CHECK(strict_sign(-0.0) == -1);
  CHECK(strict_sign(1e-300) == 1);

  // Column 0: 2 of 4 positive (tie counts as +1); column 1: 1 of 4; column 2: zeros.
  const Matrix q{{1, 1, 0}, {1, -1, 0}, {-1, -1, 0}, {-1, -1, 0}};
  const SignVector val = representative_sign(q);
  CHECK(val(0) == 1);
  CHECK(val(1) == -1);
  CHECK(val(2) == -1);

  const Matrix odd{{1.0}, {1.0}, {-1.0}};
  CHECK(representative_sign(odd)(0) == 1);
  const Matrix odd_minority{{1.0}, {-1.0}, {-1.0}};
  CHECK(representative_sign(odd_minority)(0) == -1);
}

TEST_CASE("key scores are Hamming distances to the representative sign") {
  Rng rng(81);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = gen::between(rng, 1, 12), d = gen::between(rng, 1, 8);
    const Matrix q = gen::matrix(rng, n, d), k = gen::matrix(rng, n, d);
    const SignVector val = representative_sign(q);
    const auto dist = score_keys(k, val);
    for (int r = 0; r < n; ++r) {
      int expected = 0;
      for (int c = 0; c < d; ++c) {
        int positives = 0;
        for (int j = 0; j < n; ++j) positives += q(j, c) > 0;
        const int majority = 2 * positives >= n ? 1 : -1;
        expected += (k(r, c) > 0 ? 1 : -1) != majority;
      }
      CHECK(dist[static_cast<std::size_t>(r)] == expected);
    }
  }
  CHECK_THROWS_AS(score_keys(Matrix::Zero(2, 3), SignVector::Ones(2)), ShapeError);
}

TEST_CASE("top-k selection breaks ties by ascending index") {
  const std::vector<int> dist{3, 1, 2, 1, 0, 2};
  CHECK(select_topk(dist, 3) == std::vector<Eigen::Index>{4, 1, 3});
  CHECK(select_topk(dist, 0).empty());
  CHECK_THROWS(select_topk(dist, 7));
  Rng rng(82);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<int> d(static_cast<std::size_t>(gen::between(rng, 1, 20)));
    for (auto& x : d) x = static_cast<int>(rng.below(4));
    const int k = gen::between(rng, 0, static_cast<int>(d.size()));
    CHECK(select_topk(d, k) == brute_topk(d, k));
  }
}

TEST_CASE("causal selection reserves early positions") {
  // n = 8: the first quarter is [0, 2); K = 4 reserves ceil(4/4) = 1 slot there.
  const std::vector<int> dist{5, 4, 0, 0, 1, 3, 0, 2};
  CHECK(causal_select(dist, 8, 4) == std::vector<Eigen::Index>{1, 2, 3, 6});
  CHECK(causal_select(dist, 8, 8) == std::vector<Eigen::Index>{0, 1, 2, 3, 4, 5, 6, 7});
  CHECK(causal_select(dist, 8, 1) == std::vector<Eigen::Index>{1});
  CHECK_THROWS(causal_select(dist, 8, 0));

  Rng rng(83);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = gen::between(rng, 1, 24);
    std::vector<int> d(static_cast<std::size_t>(n));
    for (auto& x : d) x = static_cast<int>(rng.below(5));
    const int k = gen::between(rng, 1, n);
    const auto sel = causal_select(d, n, k);
    CHECK(static_cast<int>(sel.size()) == k);
    CHECK(std::is_sorted(sel.begin(), sel.end()));
    CHECK(std::adjacent_find(sel.begin(), sel.end()) == sel.end());
    const int quarter = (n + 3) / 4;
    const auto early = std::count_if(sel.begin(), sel.end(), [&](Eigen::Index i) { return i < quarter; });
    CHECK(early >= std::min((k + 3) / 4, quarter));
  }
}

TEST_CASE("K = n reproduces dense attention exactly") {
  Rng rng(84);
  for (int trial = 0; trial < 40; ++trial) {
    const int n = gen::between(rng, 1, 10), dh = gen::between(rng, 1, 6);
    const Tensor q = Tensor::from_matrix(gen::matrix(rng, n, dh)), k = Tensor::from_matrix(gen::matrix(rng, n, dh));
    const Tensor v = Tensor::from_matrix(gen::matrix(rng, n, dh));
    const bool causal = trial % 2 == 1;
    const AttentionMask mask = causal ? AttentionMask::causal() : AttentionMask::none();
    const double s = 1.0 / std::sqrt(static_cast<double>(dh));
    const Tensor dense = dot_product_attention(q, k, v, mask, s);
    const Tensor sm = sign_match_attention(q, k, v, {n, causal, s}, mask);
    CHECK(sm.value() == dense.value());
  }
}

TEST_CASE("sign-matched attention equals attention over the selected keys") {
  Rng rng(85);
  for (int trial = 0; trial < 60; ++trial) {
    const int n = gen::between(rng, 2, 12), dh = gen::between(rng, 1, 6);
    const Matrix q = gen::matrix(rng, n, dh), k = gen::matrix(rng, n, dh), v = gen::matrix(rng, n, dh);
    const int K = gen::between(rng, 1, n);
    const bool causal = trial % 2 == 1;
    const auto dist = score_keys(k, representative_sign(q));
    auto keys = causal ? causal_select(dist, n, K) : brute_topk(dist, K);
    std::sort(keys.begin(), keys.end());
    const Matrix expected = restricted_attention(q, k, v, keys, causal, 0.5);
    SignMatchStats stats;
    const Tensor got = sign_match_attention(Tensor::from_matrix(q), Tensor::from_matrix(k), Tensor::from_matrix(v),
                                            {K, causal, 0.5},
                                            causal ? AttentionMask::causal() : AttentionMask::none(), &stats);
    CHECK((got.value() - expected).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(stats.comparisons == 2 * n * dh);
  }
}

TEST_CASE("scoring cost is linear in sequence length") {
  Rng rng(86);
  for (int dh : {4, 16}) {
    std::int64_t previous = 0;
    for (int n : {8, 16, 32, 64}) {
      SignMatchStats stats;
      const Tensor q = Tensor::from_matrix(gen::matrix(rng, n, dh)), k = Tensor::from_matrix(gen::matrix(rng, n, dh));
      sign_match_attention(q, k, k, {std::max(1, n / 4), false, 1.0}, AttentionMask::none(), &stats);
      if (previous) CHECK(stats.comparisons == 2 * previous);
      previous = stats.comparisons;
    }
  }
}

TEST_CASE("pruned key positions keep their causal meaning") {
  Rng rng(87);
  const int n = 8, dh = 3;
  const Matrix q = gen::matrix(rng, n, dh), k = gen::matrix(rng, 5, dh), v = gen::matrix(rng, 5, dh);
  const std::vector<Eigen::Index> positions{1, 2, 4, 6, 7};
  const Tensor got = sign_match_attention(Tensor::from_matrix(q), Tensor::from_matrix(k), Tensor::from_matrix(v),
                                          {5, true, 1.0}, AttentionMask::causal(), positions);
  const Tensor dense = dot_product_attention(Tensor::from_matrix(q), Tensor::from_matrix(k), Tensor::from_matrix(v),
                                             AttentionMask::causal(), positions, 1.0);
  CHECK(got.value() == dense.value());
  CHECK(got.value().row(0).isZero());
  CHECK_THROWS(sign_match_attention(Tensor::from_matrix(q), Tensor::from_matrix(k), Tensor::from_matrix(v),
                                    {6, true, 1.0}, AttentionMask::causal(), positions));
}
