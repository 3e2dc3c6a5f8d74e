#pragma once

// Straightforward loop implementations of the transformer pieces, written
// without any library op so they can serve as oracles.

#include "transapprox/model.hpp"

#include <cmath>
#include <vector>

namespace ref {

using transapprox::LayerParams;
using transapprox::Matrix;

inline Matrix layer_norm(const Matrix& x, const Matrix& gamma, const Matrix& beta) {
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double mean = 0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) mean += x(r, c);
    mean /= static_cast<double>(x.cols());
    double var = 0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) var += (x(r, c) - mean) * (x(r, c) - mean);
    var /= static_cast<double>(x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      out(r, c) = (x(r, c) - mean) / std::sqrt(var + 1e-5) * gamma(0, c) + beta(0, c);
    }
  }
  return out;
}

inline Matrix affine(const Matrix& x, const Matrix& w, const Matrix& b) {
  Matrix out(x.rows(), w.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      double acc = b(0, j);
      for (Eigen::Index k = 0; k < x.cols(); ++k) acc += x(i, k) * w(k, j);
      out(i, j) = acc;
    }
  }
  return out;
}

inline double gelu(double v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); }

struct AttentionSetup {
  int heads = 1;
  bool causal = false;
  std::vector<int> kv_keep;       // empty: every position
  std::vector<bool> head_active;  // empty: every head
};

/// Pre-residual attention output for one sequence x (n x d).
inline Matrix attention(const LayerParams& p, const Matrix& x, const AttentionSetup& s) {
  const Eigen::Index n = x.rows(), d = x.cols(), dh = d / s.heads;
  const Matrix h = layer_norm(x, p.ln1_gamma.value(), p.ln1_beta.value());
  const Matrix q = affine(h, p.wq.value(), p.bq.value());
  const Matrix k = affine(h, p.wk.value(), p.bk.value());
  const Matrix v = affine(h, p.wv.value(), p.bv.value());
  std::vector<int> keep = s.kv_keep;
  if (keep.empty()) {
    for (int j = 0; j < n; ++j) keep.push_back(j);
  }
  Matrix merged = Matrix::Zero(n, d);
  for (int head = 0; head < s.heads; ++head) {
    if (!s.head_active.empty() && !s.head_active[static_cast<std::size_t>(head)]) continue;
    for (Eigen::Index i = 0; i < n; ++i) {
      std::vector<double> scores;
      std::vector<int> visible;
      for (int j : keep) {
        if (s.causal && j > i) continue;
        double dot = 0;
        for (Eigen::Index c = 0; c < dh; ++c) dot += q(i, head * dh + c) * k(j, head * dh + c);
        scores.push_back(dot / std::sqrt(static_cast<double>(dh)));
        visible.push_back(j);
      }
      if (visible.empty()) continue;
      double top = scores[0];
      for (double sc : scores) top = std::max(top, sc);
      double total = 0;
      for (double& sc : scores) total += (sc = std::exp(sc - top));
      for (std::size_t t = 0; t < visible.size(); ++t) {
        for (Eigen::Index c = 0; c < dh; ++c) merged(i, head * dh + c) += scores[t] / total * v(visible[t], head * dh + c);
      }
    }
  }
  return affine(merged, p.wo.value(), p.bo.value());
}

inline Matrix ffn(const LayerParams& p, const Matrix& x) {
  const Matrix h = layer_norm(x, p.ln2_gamma.value(), p.ln2_beta.value());
  Matrix a = affine(h, p.w1.value(), p.b1.value());
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = gelu(a.data()[i]);
  return affine(a, p.w2.value(), p.b2.value());
}

}  // namespace ref
