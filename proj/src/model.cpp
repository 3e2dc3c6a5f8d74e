#include "transapprox/model.hpp"

#include <cmath>

namespace transapprox {

std::string to_string(WeightId id) {
  switch (id) {
    case WeightId::wq: return "wq";
    case WeightId::wk: return "wk";
    case WeightId::wv: return "wv";
    case WeightId::wo: return "wo";
    case WeightId::w1: return "w1";
    case WeightId::w2: return "w2";
  }
  return "?";
}

Tensor& LayerParams::weight(WeightId id) {
  return const_cast<Tensor&>(static_cast<const LayerParams&>(*this).weight(id));
}

const Tensor& LayerParams::weight(WeightId id) const {
  switch (id) {
    case WeightId::wq: return wq;
    case WeightId::wk: return wk;
    case WeightId::wv: return wv;
    case WeightId::wo: return wo;
    case WeightId::w1: return w1;
    case WeightId::w2: return w2;
  }
  throw std::logic_error("bad weight id");
}

namespace {

Tensor normal_param(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = stddev * rng.normal();
  }
  return Tensor::from_matrix(std::move(m), true);
}

Tensor vector_param(Eigen::Index n, double value) {
  Tensor t({static_cast<std::size_t>(n)}, std::vector<double>(static_cast<std::size_t>(n), value), true);
  return t;
}

}  // namespace

TransformerModel build_model(const TransformerConfig& config, Rng& rng) {
  config.validate();
  const Eigen::Index d = config.hidden_dim, y = config.ffn_dim;
  TransformerModel m;
  m.config = config;
  m.seed = rng.seed();
  m.token_embedding = normal_param(config.vocab_size, d, 0.1, rng);
  m.position_embedding = normal_param(config.context_len, d, 0.1, rng);
  const double sd_d = 1.0 / std::sqrt(static_cast<double>(d));
  const double sd_y = 1.0 / std::sqrt(static_cast<double>(y));
  for (int l = 0; l < config.num_layers; ++l) {
    LayerParams p;
    p.ln1_gamma = vector_param(d, 1.0);
    p.ln1_beta = vector_param(d, 0.0);
    p.wq = normal_param(d, d, sd_d, rng);
    p.bq = vector_param(d, 0.0);
    p.wk = normal_param(d, d, sd_d, rng);
    p.bk = vector_param(d, 0.0);
    p.wv = normal_param(d, d, sd_d, rng);
    p.bv = vector_param(d, 0.0);
    p.wo = normal_param(d, d, sd_d, rng);
    p.bo = vector_param(d, 0.0);
    p.ln2_gamma = vector_param(d, 1.0);
    p.ln2_beta = vector_param(d, 0.0);
    p.w1 = normal_param(d, y, sd_d, rng);
    p.b1 = vector_param(y, 0.0);
    p.w2 = normal_param(y, d, sd_y, rng);
    p.b2 = vector_param(d, 0.0);
    m.layers.push_back(std::move(p));
  }
  m.final_gamma = vector_param(d, 1.0);
  m.final_beta = vector_param(d, 0.0);
  m.head_w = normal_param(d, config.output_dim(), sd_d, rng);
  m.head_b = vector_param(config.output_dim(), 0.0);
  return m;
}

std::vector<std::pair<std::string, Tensor>> TransformerModel::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("token_embedding", token_embedding);
  out.emplace_back("position_embedding", position_embedding);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& p = layers[l];
    const std::string pre = "layer" + std::to_string(l) + ".";
    out.emplace_back(pre + "ln1_gamma", p.ln1_gamma);
    out.emplace_back(pre + "ln1_beta", p.ln1_beta);
    out.emplace_back(pre + "wq", p.wq);
    out.emplace_back(pre + "bq", p.bq);
    out.emplace_back(pre + "wk", p.wk);
    out.emplace_back(pre + "bk", p.bk);
    out.emplace_back(pre + "wv", p.wv);
    out.emplace_back(pre + "bv", p.bv);
    out.emplace_back(pre + "wo", p.wo);
    out.emplace_back(pre + "bo", p.bo);
    out.emplace_back(pre + "ln2_gamma", p.ln2_gamma);
    out.emplace_back(pre + "ln2_beta", p.ln2_beta);
    out.emplace_back(pre + "w1", p.w1);
    out.emplace_back(pre + "b1", p.b1);
    out.emplace_back(pre + "w2", p.w2);
    out.emplace_back(pre + "b2", p.b2);
  }
  out.emplace_back("final_gamma", final_gamma);
  out.emplace_back("final_beta", final_beta);
  out.emplace_back("head_w", head_w);
  out.emplace_back("head_b", head_b);
  return out;
}

std::vector<Tensor> TransformerModel::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

TransformerModel TransformerModel::clone() const {
  TransformerModel m;
  m.config = config;
  m.seed = seed;
  m.token_embedding = token_embedding.clone();
  m.position_embedding = position_embedding.clone();
  for (const auto& p : layers) {
    LayerParams c;
    c.ln1_gamma = p.ln1_gamma.clone();
    c.ln1_beta = p.ln1_beta.clone();
    c.wq = p.wq.clone();
    c.bq = p.bq.clone();
    c.wk = p.wk.clone();
    c.bk = p.bk.clone();
    c.wv = p.wv.clone();
    c.bv = p.bv.clone();
    c.wo = p.wo.clone();
    c.bo = p.bo.clone();
    c.ln2_gamma = p.ln2_gamma.clone();
    c.ln2_beta = p.ln2_beta.clone();
    c.w1 = p.w1.clone();
    c.b1 = p.b1.clone();
    c.w2 = p.w2.clone();
    c.b2 = p.b2.clone();
    m.layers.push_back(std::move(c));
  }
  m.final_gamma = final_gamma.clone();
  m.final_beta = final_beta.clone();
  m.head_w = head_w.clone();
  m.head_b = head_b.clone();
  return m;
}

}  // namespace transapprox
