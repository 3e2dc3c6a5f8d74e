#include "transapprox/approx.hpp"

#include <algorithm>
#include <map>

namespace transapprox {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

Matrix& keep_of(LayerView& v, WeightId id) { return v.keep[static_cast<int>(id)]; }

void drop_rows(LayerView& v, std::initializer_list<WeightId> ids, Eigen::Index row0, Eigen::Index rows) {
  for (auto id : ids) keep_of(v, id).middleRows(row0, rows).setZero();
}

void add_regions(std::vector<QuantRegion>& out, const TransElement& owner, const TransformerConfig& c,
                 int bits) {
  const Eigen::Index d = c.hidden_dim, y = c.ffn_dim, W = c.weight_group_width, dh = c.head_dim();
  auto rect = [&](WeightId id, Eigen::Index r0, Eigen::Index rs, Eigen::Index c0, Eigen::Index cs) {
    out.push_back({owner, owner.layer, id, r0, rs, c0, cs, bits});
  };
  auto row_groups = [&](WeightId id, Eigen::Index total_rows, Eigen::Index cols) {
    for (Eigen::Index r = 0; r < total_rows; r += W) rect(id, r, std::min(W, total_rows - r), 0, cols);
  };
  switch (owner.kind) {
    case ElementKind::AttnBlock:
      for (auto id : {WeightId::wq, WeightId::wk, WeightId::wv, WeightId::wo}) row_groups(id, d, d);
      break;
    case ElementKind::FfnBlock:
      row_groups(WeightId::w1, d, y);
      row_groups(WeightId::w2, y, d);
      break;
    case ElementKind::Head:
      for (auto id : {WeightId::wq, WeightId::wk, WeightId::wv}) rect(id, 0, d, owner.index * dh, dh);
      rect(WeightId::wo, owner.index * dh, dh, 0, d);
      break;
    case ElementKind::FfnWeightGroup: rect(WeightId::w1, owner.index * W, W, 0, y); break;
    case ElementKind::QkvWeightGroup:
      for (auto id : {WeightId::wq, WeightId::wk, WeightId::wv}) rect(id, owner.index * W, W, 0, d);
      break;
    case ElementKind::KvPositionGroup: break;
  }
}

struct RegionValues {
  std::vector<std::pair<Eigen::Index, Eigen::Index>> entries;
  std::vector<double> dequantized;
};

/// Quantizes the live entries of one region of `w`.
RegionValues quantize_region(const QuantRegion& r, const Matrix& w, const Matrix& keep) {
  RegionValues out;
  std::vector<double> live;
  for (Eigen::Index i = r.row0; i < r.row0 + r.rows; ++i) {
    for (Eigen::Index j = r.col0; j < r.col0 + r.cols; ++j) {
      if (keep(i, j) != 0.0) {
        out.entries.emplace_back(i, j);
        live.push_back(w(i, j));
      }
    }
  }
  if (live.empty()) return out;
  Eigen::Map<const RowVector> view(live.data(), static_cast<Eigen::Index>(live.size()));
  out.dequantized = quantize_group(view, r.bits).dequantize();
  return out;
}

}  // namespace

int LayerView::active_heads() const {
  return static_cast<int>(std::count(head_active.begin(), head_active.end(), char{1}));
}

PlanLayout layout_plan(const TransformerConfig& config, const ApproxPlan& plan) {
  config.validate();
  plan.validate(config);
  const Eigen::Index d = config.hidden_dim, y = config.ffn_dim, W = config.weight_group_width;
  const Eigen::Index dh = config.head_dim(), Wp = config.kv_group_width, n = config.context_len;

  PlanLayout out;
  out.config = config;
  std::vector<std::vector<char>> kv_alive(static_cast<std::size_t>(config.num_layers),
                                          std::vector<char>(static_cast<std::size_t>(n), 1));
  for (int l = 0; l < config.num_layers; ++l) {
    LayerView v;
    v.head_active.assign(static_cast<std::size_t>(config.num_heads), 1);
    for (auto id : {WeightId::wq, WeightId::wk, WeightId::wv, WeightId::wo}) keep_of(v, id) = Matrix::Ones(d, d);
    keep_of(v, WeightId::w1) = Matrix::Ones(d, y);
    keep_of(v, WeightId::w2) = Matrix::Ones(y, d);
    out.layers.push_back(std::move(v));
  }
  auto layer = [&](const TransElement& e) -> LayerView& { return out.layers[static_cast<std::size_t>(e.layer)]; };
  auto kill_positions = [&](int l, Eigen::Index begin, Eigen::Index count) {
    for (Eigen::Index p = begin; p < begin + count; ++p) kv_alive[static_cast<std::size_t>(l)][static_cast<std::size_t>(p)] = 0;
  };
  auto drop_group_rows = [&](const TransElement& anchor, int g) {
    if (anchor.kind == ElementKind::FfnWeightGroup) {
      drop_rows(layer(anchor), {WeightId::w1}, g * W, W);
    } else {
      drop_rows(layer(anchor), {WeightId::wq, WeightId::wk, WeightId::wv}, g * W, W);
    }
  };

  for (const auto& e : plan.skiplist()) {
    LayerView& v = layer(e);
    switch (e.kind) {
      case ElementKind::AttnBlock: v.attn_skipped = true; break;
      case ElementKind::FfnBlock: v.ffn_skipped = true; break;
      case ElementKind::Head: v.head_active[static_cast<std::size_t>(e.index)] = 0; break;
      case ElementKind::FfnWeightGroup:
      case ElementKind::QkvWeightGroup: drop_group_rows(e, e.index); break;
      case ElementKind::KvPositionGroup: kill_positions(e.layer, e.index * Wp, Wp); break;
    }
  }

  for (const auto& [e, p] : plan.approxlist()) {
    LayerView& v = layer(e);
    std::visit(overloaded{
                   [](const params::Skip&) {},
                   [](const params::HeadPrune&) {},
                   [&](const params::GroupShrink& s) {
                     for (int g = 0; g < config.num_weight_groups(); ++g) {
                       if (g < s.lo || g >= s.hi) drop_group_rows(e, g);
                     }
                   },
                   [&](const params::GroupPruneSet& s) {
                     for (int g : s.indices) drop_group_rows(e, g);
                   },
                   [&](const params::KvPrune& s) {
                     for (int pos : s.positions) kill_positions(e.layer, pos, 1);
                   },
                   [&](const params::Quantize& q) { add_regions(out.regions, e, config, q.bits); },
                   [&](const params::SignMatch& s) { v.sign_match_k = s.k; },
               },
               p);
  }

  for (int l = 0; l < config.num_layers; ++l) {
    LayerView& v = out.layers[static_cast<std::size_t>(l)];
    for (Eigen::Index p = 0; p < n; ++p) {
      if (kv_alive[static_cast<std::size_t>(l)][static_cast<std::size_t>(p)]) v.kv_keep.push_back(p);
    }
    if (v.kv_keep.empty()) {
      throw PlanError("plan prunes every key/value position of layer " + std::to_string(l));
    }
    for (int h = 0; h < config.num_heads; ++h) {
      if (v.head_active[static_cast<std::size_t>(h)]) continue;
      for (auto id : {WeightId::wq, WeightId::wk, WeightId::wv}) keep_of(v, id).middleCols(h * dh, dh).setZero();
      keep_of(v, WeightId::wo).middleRows(h * dh, dh).setZero();
    }
    if (v.attn_skipped) {
      for (auto id : {WeightId::wq, WeightId::wk, WeightId::wv, WeightId::wo}) keep_of(v, id).setZero();
    }
    if (v.ffn_skipped) {
      keep_of(v, WeightId::w1).setZero();
      keep_of(v, WeightId::w2).setZero();
    }
  }

  // Each weight entry may belong to at most one quantized region.
  std::map<std::pair<int, int>, Matrix> coverage;
  for (const auto& r : out.regions) {
    const auto key = std::pair(r.layer, static_cast<int>(r.weight));
    auto it = coverage.find(key);
    if (it == coverage.end()) {
      const Matrix& k = out.layers[static_cast<std::size_t>(r.layer)].keep_mask(r.weight);
      it = coverage.emplace(key, Matrix::Zero(k.rows(), k.cols())).first;
    }
    auto block = it->second.block(r.row0, r.col0, r.rows, r.cols);
    if (block.maxCoeff() > 0) {
      throw PlanError("quantization of " + r.owner.to_string() + " overlaps another quantized element");
    }
    block.setOnes();
  }
  return out;
}

PlannedModel apply_plan(const TransformerModel& model, const ApproxPlan& plan, bool straight_through) {
  PlannedModel view;
  view.model = &model;
  view.layout = layout_plan(model.config, plan);
  for (int l = 0; l < model.config.num_layers; ++l) {
    std::array<WeightOverlay, 6> ov;
    for (auto id : kAllWeightIds) {
      const Matrix& keep = view.layout.layers[static_cast<std::size_t>(l)].keep_mask(id);
      auto& o = ov[static_cast<std::size_t>(id)];
      o.keep = keep;
      o.replace = Matrix::Zero(keep.rows(), keep.cols());
      o.values = Matrix::Zero(keep.rows(), keep.cols());
      o.straight_through = straight_through;
    }
    view.overlays.push_back(std::move(ov));
  }
  for (const auto& r : view.layout.regions) {
    const auto& w = model.layers[static_cast<std::size_t>(r.layer)].weight(r.weight).value();
    auto& o = view.overlays[static_cast<std::size_t>(r.layer)][static_cast<std::size_t>(r.weight)];
    const auto q = quantize_region(r, w, o.keep);
    for (std::size_t i = 0; i < q.entries.size(); ++i) {
      o.replace(q.entries[i].first, q.entries[i].second) = 1.0;
      o.values(q.entries[i].first, q.entries[i].second) = q.dequantized[i];
    }
  }
  return view;
}

std::pair<TransElement, ApproxParams> prune_kv_positions(const TransformerConfig& config, int layer,
                                                         std::vector<int> positions) {
  std::sort(positions.begin(), positions.end());
  positions.erase(std::unique(positions.begin(), positions.end()), positions.end());
  for (int p : positions) {
    if (p < 0 || p >= config.context_len) {
      throw PlanError("prune_kv_positions: position " + std::to_string(p) + " outside [0, n)");
    }
  }
  if (static_cast<int>(positions.size()) == config.context_len) {
    throw PlanError("prune_kv_positions: cannot prune every position");
  }
  TransElement anchor{ElementKind::KvPositionGroup, layer, 0};
  check_element(anchor, config);
  return {anchor, params::KvPrune{std::move(positions)}};
}

void bake_quantization(TransformerModel& model, const ApproxPlan& plan) {
  const PlannedModel view = apply_plan(model, plan);
  for (int l = 0; l < model.config.num_layers; ++l) {
    for (auto id : kAllWeightIds) {
      const auto& o = view.overlay_of(l, id);
      Matrix& w = model.layers[static_cast<std::size_t>(l)].weight(id).mutable_value();
      w = (o.replace.array() != 0.0).select(o.values, w);
    }
  }
}

}  // namespace transapprox
