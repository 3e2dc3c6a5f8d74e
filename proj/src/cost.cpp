#include "transapprox/cost.hpp"

#include "transapprox/approx.hpp"
#include "transapprox/forward.hpp"

#include <algorithm>
#include <chrono>
#include <stdexcept>

namespace transapprox {

namespace {

using i64 = std::int64_t;

i64 live_count(const Matrix& keep) { return static_cast<i64>((keep.array() != 0.0).count()); }

i64 live_rows(const Matrix& keep) {
  i64 rows = 0;
  for (Eigen::Index r = 0; r < keep.rows(); ++r) rows += keep.row(r).any() ? 1 : 0;
  return rows;
}

i64 unquantized_bytes(i64 params, const CostOptions& o) { return params * o.storage_bits / 8; }

struct PartAccumulator {
  CostModel cost;
  i64 quantized_params = 0;
  i64 quantized_bytes = 0;

  CostModel finish(const CostOptions& o) const {
    CostModel out = cost;
    out.bytes = unquantized_bytes(cost.param_count - quantized_params, o) + quantized_bytes;
    return out;
  }
};

}  // namespace

CostBreakdown cost_breakdown(const TransformerConfig& config, const ApproxPlan& plan, const CostOptions& options) {
  const PlanLayout layout = layout_plan(config, plan);
  const i64 d = config.hidden_dim, y = config.ffn_dim, n = config.context_len, dh = config.head_dim();
  const i64 vocab = config.vocab_size;

  std::vector<PartAccumulator> attn(static_cast<std::size_t>(config.num_layers));
  std::vector<PartAccumulator> ffn(static_cast<std::size_t>(config.num_layers));
  CostBreakdown out;
  out.attention.resize(static_cast<std::size_t>(config.num_layers));

  for (int l = 0; l < config.num_layers; ++l) {
    const LayerView& v = layout.layers[static_cast<std::size_t>(l)];
    auto& a = attn[static_cast<std::size_t>(l)];
    if (!v.attn_skipped) {
      const i64 active_cols = static_cast<i64>(v.active_heads()) * dh;
      const i64 rows = live_rows(v.keep_mask(WeightId::wq));
      const i64 kept = static_cast<i64>(v.kv_keep.size());
      auto& m = out.attention[static_cast<std::size_t>(l)];
      // Keys and values are only projected at kept positions.
      m.projections = (n + 2 * kept) * rows * active_cols;
      i64 attended = kept;
      if (v.sign_match_k) {
        attended = std::min<i64>(*v.sign_match_k, kept);
        m.selection = n * active_cols + kept * active_cols;
      }
      m.scores = n * attended * active_cols;
      m.weighted_sum = n * attended * active_cols;
      m.output = n * active_cols * d;
      a.cost.mac_count = m.total();
      a.cost.param_count = live_count(v.keep_mask(WeightId::wq)) + live_count(v.keep_mask(WeightId::wk)) +
                           live_count(v.keep_mask(WeightId::wv)) + live_count(v.keep_mask(WeightId::wo)) +
                           3 * active_cols + d + 2 * d;
    }
    auto& f = ffn[static_cast<std::size_t>(l)];
    if (!v.ffn_skipped) {
      const i64 rows = live_rows(v.keep_mask(WeightId::w1));
      f.cost.mac_count = n * rows * y + n * y * d;
      f.cost.param_count = live_count(v.keep_mask(WeightId::w1)) + y + live_count(v.keep_mask(WeightId::w2)) + d + 2 * d;
    }
  }

  for (const auto& r : layout.regions) {
    const LayerView& v = layout.layers[static_cast<std::size_t>(r.layer)];
    const i64 live = live_count(v.keep_mask(r.weight).block(r.row0, r.col0, r.rows, r.cols));
    if (live == 0) continue;
    const bool is_ffn = r.weight == WeightId::w1 || r.weight == WeightId::w2;
    auto& acc = (is_ffn ? ffn : attn)[static_cast<std::size_t>(r.layer)];
    acc.quantized_params += live;
    acc.quantized_bytes += (live * r.bits + 7) / 8 + options.scale_bytes;
  }

  CostModel embedding;
  embedding.param_count = vocab * d + n * d;
  embedding.bytes = unquantized_bytes(embedding.param_count, options);
  out.parts.push_back({"embedding", embedding});
  for (int l = 0; l < config.num_layers; ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    out.parts.push_back({pre + "attn", attn[static_cast<std::size_t>(l)].finish(options)});
    out.parts.push_back({pre + "ffn", ffn[static_cast<std::size_t>(l)].finish(options)});
  }
  CostModel head;
  const i64 outputs = config.output_dim();
  head.mac_count = config.task_kind == TaskKind::classification ? d * outputs : n * d * outputs;
  head.param_count = 2 * d + d * outputs + outputs;
  head.bytes = unquantized_bytes(head.param_count, options);
  out.parts.push_back({"head", head});

  for (const auto& p : out.parts) out.total += p.cost;
  return out;
}

CostModel cost(const TransformerConfig& config, const ApproxPlan& plan, const CostOptions& options) {
  return cost_breakdown(config, plan, options).total;
}

double median(std::vector<double> samples) {
  if (samples.empty()) throw std::invalid_argument("median of no samples");
  std::sort(samples.begin(), samples.end());
  const std::size_t mid = samples.size() / 2;
  return samples.size() % 2 ? samples[mid] : 0.5 * (samples[mid - 1] + samples[mid]);
}

double measure_latency(const TransformerModel& model, const ApproxPlan& plan, std::span<const Example> batch,
                       int repeats) {
  if (repeats < 3) throw std::invalid_argument("measure_latency: need at least 3 repeats");
  NoGradGuard no_grad;
  const PlannedModel view = apply_plan(model, plan);
  forward(view, batch);  // warm-up
  std::vector<double> samples;
  for (int i = 0; i < repeats; ++i) {
    const auto start = std::chrono::steady_clock::now();
    forward(view, batch);
    const auto stop = std::chrono::steady_clock::now();
    samples.push_back(std::chrono::duration<double, std::milli>(stop - start).count());
  }
  return median(std::move(samples));
}

}  // namespace transapprox
