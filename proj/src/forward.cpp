#include "transapprox/forward.hpp"

#include <cmath>

namespace transapprox {

namespace {

Tensor projected(const Tensor& h, const Tensor& w, const WeightOverlay& ov, const Tensor& b) {
  return add_bias(matmul(h, overlay(w, ov)), b);
}

}  // namespace

Tensor attention_delta(const PlannedModel& view, int layer, const Tensor& x, Eigen::Index seq_len,
                       const AttentionMask& mask, SignMatchStats* stats) {
  const auto& cfg = view.model->config;
  const auto& p = view.model->layers[static_cast<std::size_t>(layer)];
  const LayerView& lv = view.layer(layer);
  const Eigen::Index d = cfg.hidden_dim, dh = cfg.head_dim();
  if (x.cols() != d || seq_len < 1 || x.rows() % seq_len != 0) {
    throw ShapeError("attention: input " + shape_string(x.shape()) + " does not hold sequences of length " +
                     std::to_string(seq_len) + " and width " + std::to_string(d));
  }
  const bool kv_pruned = lv.kv_pruned(cfg.context_len);
  if (kv_pruned && seq_len != cfg.context_len) {
    throw ShapeError("key/value position pruning needs sequences of the full context length");
  }

  const Tensor h = layer_norm(x, p.ln1_gamma, p.ln1_beta);
  const Tensor q = projected(h, p.wq, view.overlay_of(layer, WeightId::wq), p.bq);
  const Tensor k = projected(h, p.wk, view.overlay_of(layer, WeightId::wk), p.bk);
  const Tensor v = projected(h, p.wv, view.overlay_of(layer, WeightId::wv), p.bv);
  const double score_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto positions = kv_pruned ? lv.kv_keep : iota_positions(seq_len);
  const Tensor zero_head = Tensor::zeros({static_cast<std::size_t>(seq_len), static_cast<std::size_t>(dh)});

  std::vector<Tensor> sequences;
  for (Eigen::Index b = 0; b < x.rows() / seq_len; ++b) {
    const Tensor qb = slice_rows(q, b * seq_len, seq_len);
    const Tensor kb = slice_rows(k, b * seq_len, seq_len);
    const Tensor vb = slice_rows(v, b * seq_len, seq_len);
    std::vector<Tensor> heads;
    for (int i = 0; i < cfg.num_heads; ++i) {
      if (!lv.head_active[static_cast<std::size_t>(i)]) {
        heads.push_back(zero_head);
        continue;
      }
      const Tensor qh = slice_cols(qb, i * dh, dh);
      Tensor kh = slice_cols(kb, i * dh, dh);
      Tensor vh = slice_cols(vb, i * dh, dh);
      if (kv_pruned) {
        kh = gather_rows(kh, positions);
        vh = gather_rows(vh, positions);
      }
      if (lv.sign_match_k) {
        // K counts keys among the positions still present.
        SignMatchConfig smc{std::min(*lv.sign_match_k, static_cast<int>(positions.size())),
                            mask.mode == AttentionMask::Mode::causal, score_scale};
        heads.push_back(sign_match_attention(qh, kh, vh, smc, mask, positions, stats));
      } else {
        heads.push_back(dot_product_attention(qh, kh, vh, mask, positions, score_scale));
      }
    }
    sequences.push_back(concat_cols(heads));
  }
  const Tensor merged = concat_rows(sequences);
  return projected(merged, p.wo, view.overlay_of(layer, WeightId::wo), p.bo);
}

Tensor attention_forward(const PlannedModel& view, int layer, const Tensor& x, Eigen::Index seq_len,
                         const AttentionMask& mask, SignMatchStats* stats) {
  if (view.layer(layer).attn_skipped) return x;
  return add(x, attention_delta(view, layer, x, seq_len, mask, stats));
}

Tensor ffn_delta(const PlannedModel& view, int layer, const Tensor& x) {
  const auto& p = view.model->layers[static_cast<std::size_t>(layer)];
  const Tensor h = layer_norm(x, p.ln2_gamma, p.ln2_beta);
  const Tensor a = gelu(projected(h, p.w1, view.overlay_of(layer, WeightId::w1), p.b1));
  return projected(a, p.w2, view.overlay_of(layer, WeightId::w2), p.b2);
}

Tensor ffn_forward(const PlannedModel& view, int layer, const Tensor& x) {
  if (view.layer(layer).ffn_skipped) return x;
  return add(x, ffn_delta(view, layer, x));
}

ForwardResult forward(const PlannedModel& view, std::span<const Example> batch, SignMatchStats* stats) {
  const TransformerModel& model = *view.model;
  const auto& cfg = model.config;
  const Eigen::Index n = cfg.context_len;
  if (batch.empty()) throw ShapeError("forward: empty batch");
  const int pad = cfg.vocab_size - 1;
  const bool classify = cfg.task_kind == TaskKind::classification;

  std::vector<Eigen::Index> ids, pos_ids;
  std::vector<int> labels;
  std::vector<Eigen::Index> label_rows;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& ex = batch[b];
    if (static_cast<Eigen::Index>(ex.tokens.size()) > n) {
      throw ShapeError("forward: sequence of length " + std::to_string(ex.tokens.size()) +
                       " exceeds context length " + std::to_string(n));
    }
    for (Eigen::Index t = 0; t < n; ++t) {
      const bool real = t < static_cast<Eigen::Index>(ex.tokens.size());
      const int tok = real ? ex.tokens[static_cast<std::size_t>(t)] : pad;
      if (tok < 0 || tok >= cfg.vocab_size) {
        throw std::out_of_range("forward: token " + std::to_string(tok) + " outside vocabulary");
      }
      ids.push_back(tok);
      pos_ids.push_back(t);
      if (!classify && real && t < static_cast<Eigen::Index>(ex.labels.size()) &&
          ex.labels[static_cast<std::size_t>(t)] >= 0) {
        labels.push_back(ex.labels[static_cast<std::size_t>(t)]);
        label_rows.push_back(static_cast<Eigen::Index>(b) * n + t);
      }
    }
    if (classify) {
      if (ex.labels.size() != 1) throw ShapeError("forward: classification examples need exactly one label");
      labels.push_back(ex.labels[0]);
    }
  }
  if (labels.empty()) throw ShapeError("forward: batch has no labelled positions");

  Tensor x = add(gather_rows(model.token_embedding, ids), gather_rows(model.position_embedding, pos_ids));
  const AttentionMask mask = cfg.causal() ? AttentionMask::causal() : AttentionMask::none();
  for (int l = 0; l < cfg.num_layers; ++l) {
    x = attention_forward(view, l, x, n, mask, stats);
    x = ffn_forward(view, l, x);
  }
  x = layer_norm(x, model.final_gamma, model.final_beta);

  ForwardResult out;
  if (classify) {
    out.logits = add_bias(matmul(mean_pool_rows(x, static_cast<std::size_t>(n)), model.head_w), model.head_b);
  } else {
    out.logits = add_bias(matmul(gather_rows(x, label_rows), model.head_w), model.head_b);
  }
  out.loss = cross_entropy(out.logits, labels);
  out.loss_count = labels.size();
  const Matrix& lv = out.logits.value();
  for (Eigen::Index r = 0; r < lv.rows(); ++r) {
    Eigen::Index arg = 0;
    lv.row(r).maxCoeff(&arg);
    if (arg == labels[static_cast<std::size_t>(r)]) ++out.correct;
  }
  return out;
}

ForwardResult forward(const TransformerModel& model, std::span<const Example> batch, const ApproxPlan& plan) {
  const PlannedModel view = apply_plan(model, plan);
  return forward(view, batch);
}

}  // namespace transapprox
