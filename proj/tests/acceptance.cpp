// Acceptance suite: one PASS/FAIL line per criterion; exit status 1 if any fails.
// Pass criterion numbers as arguments to run a subset.

#include "generators.hpp"
#include "gradcheck.hpp"
#include "reference.hpp"

#include "transapprox/approx.hpp"
#include "transapprox/cost.hpp"
#include "transapprox/experiment.hpp"
#include "transapprox/forward.hpp"
#include "transapprox/significance.hpp"
#include "transapprox/signmatch.hpp"

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

using namespace transapprox;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return INFINITY;
  return a.size() == 0 ? 0.0 : (a - b).cwiseAbs().maxCoeff();
}

/// One-layer config small enough for finite differences over every parameter.
TransformerConfig fd_config(Rng& rng, bool causal) {
  TransformerConfig c;
  c.num_layers = 1;
  c.num_heads = gen::between(rng, 1, 2);
  c.hidden_dim = c.num_heads * gen::between(rng, 1, 3);
  c.weight_group_width = 1;
  c.ffn_dim = gen::between(rng, 2, 6);
  c.context_len = gen::between(rng, 2, 4);
  c.kv_group_width = 1;
  c.vocab_size = gen::between(rng, 3, 5);
  if (causal) {
    c.autoregressive = true;
    c.task_kind = TaskKind::language_model;
  } else {
    c.num_classes = c.vocab_size - 1;
  }
  return c;
}

// ---------------------------------------------------------------------------

Outcome gradient_correctness() {
  const auto start = std::chrono::steady_clock::now();
  constexpr int kInstances = 20;
  std::map<std::string, double> worst;
  Rng rng(101);
  auto record = [&](const std::string& op, double err) { worst[op] = std::max(worst[op], err); };

  for (int i = 0; i < kInstances; ++i) {
    const gradcheck::Projector project(rng.next_u64());
    const int r = gen::between(rng, 2, 5), c = gen::between(rng, 2, 5);
    Tensor x = gen::param(rng, r, c), y = gen::param(rng, r, c), w = gen::param(rng, c, 3);
    Tensor bias = gen::vec(rng, c), gamma = gen::vec(rng, c, 0.3, 1.0);
    using gradcheck::max_relative_error;

    record("matmul", max_relative_error([&] { return project(matmul(x, w)); }, {x, w}));
    record("matmul_transposed", max_relative_error([&] { return project(matmul_transposed(x, y)); }, {x, y}));
    record("add", max_relative_error([&] { return project(add(x, y)); }, {x, y}));
    record("add_bias", max_relative_error([&] { return project(add_bias(x, bias)); }, {x, bias}));
    record("scale", max_relative_error([&] { return project(scale(x, -1.7)); }, {x}));
    record("gelu", max_relative_error([&] { return project(gelu(x)); }, {x}));
    record("layer_norm", max_relative_error([&] { return project(layer_norm(x, gamma, bias)); }, {x, gamma, bias}));
    record("softmax_rows", max_relative_error([&] { return project(softmax_rows(x)); }, {x}));
    Matrix mask = Matrix::Zero(r, c);
    mask(0, c - 1) = kMaskedScore;
    record("softmax_rows(masked)", max_relative_error([&] { return project(softmax_rows(x, mask)); }, {x}));
    std::vector<int> labels;
    for (int k = 0; k < r; ++k) labels.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(c))));
    record("cross_entropy", max_relative_error([&] { return cross_entropy(x, labels); }, {x}));
    record("sum", max_relative_error([&] { return sum(gelu(x)); }, {x}));
    record("slice_rows", max_relative_error([&] { return project(slice_rows(x, 1, r - 1)); }, {x}));
    record("slice_cols", max_relative_error([&] { return project(slice_cols(x, 1, c - 1)); }, {x}));
    record("concat_rows", max_relative_error(
                              [&] {
                                const std::vector<Tensor> parts{x, y};
                                return project(concat_rows(parts));
                              },
                              {x, y}));
    record("concat_cols", max_relative_error(
                              [&] {
                                const std::vector<Tensor> parts{x, y};
                                return project(concat_cols(parts));
                              },
                              {x, y}));
    const std::vector<Eigen::Index> idx{r - 1, 0, r - 1};
    record("gather_rows", max_relative_error([&] { return project(gather_rows(x, idx)); }, {x}));
    Tensor tall = gen::param(rng, 2 * r, c);
    record("mean_pool_rows",
           max_relative_error([&] { return project(mean_pool_rows(tall, static_cast<std::size_t>(r))); }, {tall}));
    WeightOverlay ov{Matrix::Ones(c, 3), Matrix::Zero(c, 3), Matrix::Zero(c, 3), false};
    ov.keep(0, 0) = 0;
    ov.replace(c - 1, 1) = 1;
    ov.values(c - 1, 1) = 0.3;
    record("overlay", max_relative_error([&] { return project(matmul(x, overlay(w, ov))); }, {x, w}));
    Tensor q = gen::param(rng, r, c), k = gen::param(rng, r, c), v = gen::param(rng, r, c);
    record("dot_product_attention(causal)",
           max_relative_error([&] { return project(dot_product_attention(q, k, v, AttentionMask::causal(), 0.5)); },
                              {q, k, v}));

    for (bool causal : {false, true}) {
      const TransformerConfig cfg = fd_config(rng, causal);
      TransformerModel m = build_model(cfg, rng);
      gen::perturb(m, rng, 0.3);
      const auto& p = m.layers[0];
      Tensor h = gen::param(rng, cfg.context_len, cfg.hidden_dim);
      const AttentionMask am = causal ? AttentionMask::causal() : AttentionMask::none();
      std::vector<Tensor> attn_inputs{h,    p.ln1_gamma, p.ln1_beta, p.wq, p.bq, p.wk,
                                      p.bk, p.wv,        p.bv,       p.wo, p.bo};
      const std::string tag = causal ? "(causal)" : "";
      record("attention_forward" + tag, max_relative_error(
                                            [&] {
                                              return project(attention_forward(apply_plan(m, ApproxPlan{}), 0, h,
                                                                               cfg.context_len, am));
                                            },
                                            attn_inputs));
      std::vector<Tensor> ffn_inputs{h, p.ln2_gamma, p.ln2_beta, p.w1, p.b1, p.w2, p.b2};
      record("ffn_forward", max_relative_error(
                                [&] { return project(ffn_forward(apply_plan(m, ApproxPlan{}), 0, h)); }, ffn_inputs));
      const auto batch = causal ? gen::sequence_batch(rng, cfg, 2) : gen::classification_batch(rng, cfg, 2);
      ApproxPlan plan;
      if (cfg.num_heads > 1) plan.skip({ElementKind::Head, 0, 1});
      record("model_loss" + tag,
             max_relative_error([&] { return forward(apply_plan(m, plan), batch).loss; }, m.parameters()));
    }
  }
  double overall = 0;
  std::string worst_op;
  for (const auto& [op, err] : worst) {
    if (err >= overall) {
      overall = err;
      worst_op = op;
    }
  }
  const double secs = seconds_since(start);
  return {overall < 1e-5 && secs < 60,
          fmt("%zu ops x %d instances, max rel err %.2e (%s), %.1f s", worst.size(), kInstances, overall,
              worst_op.c_str(), secs)};
}

Outcome attention_reference() {
  Rng rng(202);
  double worst = 0;
  for (int i = 0; i < 50; ++i) {
    TransformerConfig c = gen::config(rng);
    c.autoregressive = i % 2 == 1;
    TransformerModel m = build_model(c, rng);
    gen::perturb(m, rng);
    const int layer = static_cast<int>(rng.below(static_cast<std::uint64_t>(c.num_layers)));
    const int sequences = gen::between(rng, 1, 3);
    const Matrix x = gen::matrix(rng, sequences * c.context_len, c.hidden_dim);
    const Tensor got = attention_forward(apply_plan(m, ApproxPlan{}), layer, Tensor::from_matrix(x), c.context_len,
                                         c.causal() ? AttentionMask::causal() : AttentionMask::none());
    for (int s = 0; s < sequences; ++s) {
      const Matrix xs = x.middleRows(s * c.context_len, c.context_len);
      const Matrix expected = xs + ref::attention(m.layers[static_cast<std::size_t>(layer)], xs,
                                                  {c.num_heads, c.causal(), {}, {}});
      worst = std::max(worst, max_abs_diff(got.value().middleRows(s * c.context_len, c.context_len), expected));
    }
  }
  return {worst < 1e-10, fmt("50 configs, max abs err %.2e", worst)};
}

Outcome sign_match_exactness() {
  Rng rng(303);
  int exact = 0;
  for (int i = 0; i < 100; ++i) {
    const int n = gen::between(rng, 1, 32), dh = gen::between(rng, 1, 16);
    const Tensor q = Tensor::from_matrix(gen::matrix(rng, n, dh)), k = Tensor::from_matrix(gen::matrix(rng, n, dh));
    const Tensor v = Tensor::from_matrix(gen::matrix(rng, n, dh));
    const bool causal = i % 2 == 1;
    const AttentionMask mask = causal ? AttentionMask::causal() : AttentionMask::none();
    const double s = 1.0 / std::sqrt(static_cast<double>(dh));
    const Tensor full = dot_product_attention(q, k, v, mask, s);
    const Tensor sm = sign_match_attention(q, k, v, {n, causal, s}, mask);
    exact += max_abs_diff(sm.value(), full.value()) == 0.0;
  }
  bool doubles = true;
  std::string counts;
  for (int dh : {8, 16}) {
    std::int64_t previous = 0;
    for (int n = 8; n <= 256; n *= 2) {
      SignMatchStats stats;
      const Tensor q = Tensor::from_matrix(gen::matrix(rng, n, dh)), k = Tensor::from_matrix(gen::matrix(rng, n, dh));
      sign_match_attention(q, k, k, {n / 4, false, 1.0}, AttentionMask::none(), &stats);
      if (previous) doubles = doubles && stats.comparisons == 2 * previous;
      previous = stats.comparisons;
      if (dh == 8) counts += std::to_string(stats.comparisons) + (n < 256 ? "," : "");
    }
  }
  return {exact == 100 && doubles,
          fmt("%d/100 exact at K=n; comparisons n=8..256 (d=8): %s", exact, counts.c_str())};
}

Outcome sign_match_trend() {
  Rng rng(404);
  constexpr int n = 32, dh = 16, fixtures = 200;
  const std::vector<int> ks{1, n / 8, n / 4, n / 2, n};
  std::vector<double> mean_err(ks.size(), 0.0);
  for (int f = 0; f < fixtures; ++f) {
    // Queries share a direction; a few keys align with it and dominate every score row.
    Matrix u(1, dh);
    for (int c = 0; c < dh; ++c) u(0, c) = rng.uniform() < 0.5 ? -1.0 : 1.0;
    Matrix q = gen::matrix(rng, n, dh, 0.5), k = gen::matrix(rng, n, dh, 1.0);
    const Matrix v = gen::matrix(rng, n, dh);
    q.rowwise() += u.row(0);
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(std::span<int>(order));
    for (int r = 0; r < n / 8; ++r) {
      k.row(order[static_cast<std::size_t>(r)]) = (0.6 + 0.3 * r) * u + 0.3 * gen::matrix(rng, 1, dh);
    }
    const Tensor tq = Tensor::from_matrix(q), tk = Tensor::from_matrix(k), tv = Tensor::from_matrix(v);
    const double s = 1.0 / std::sqrt(static_cast<double>(dh));
    const Matrix full = dot_product_attention(tq, tk, tv, AttentionMask::none(), s).value();
    for (std::size_t i = 0; i < ks.size(); ++i) {
      const Matrix approx = sign_match_attention(tq, tk, tv, {ks[i], false, s}, AttentionMask::none()).value();
      mean_err[i] += (approx - full).rowwise().norm().mean() / fixtures;
    }
  }
  bool monotone = true;
  for (std::size_t i = 1; i < ks.size(); ++i) monotone = monotone && mean_err[i] <= mean_err[i - 1] * 1.05;
  const bool quarter_better = mean_err[2] < mean_err[0];
  std::string log;
  for (std::size_t i = 0; i < ks.size(); ++i) log += fmt("K=%d:%.4f ", ks[i], mean_err[i]);
  return {monotone && quarter_better, "mean row error " + log};
}

Outcome pruning_oracles() {
  Rng rng(505);
  double kv_worst = 0;
  int exact_failures = 0, head_failures = 0, cases = 0;
  for (int i = 0; i < 30; ++i, ++cases) {
    TransformerConfig c = gen::config(rng);
    c.autoregressive = i % 2 == 1;
    if (c.autoregressive) {
      c.task_kind = TaskKind::language_model;
      c.num_classes = 0;
    }
    TransformerModel m = build_model(c, rng);
    gen::perturb(m, rng);
    const auto batch = c.autoregressive ? gen::sequence_batch(rng, c, 3) : gen::classification_batch(rng, c, 3);
    auto logits = [&](const TransformerModel& model, const ApproxPlan& plan) {
      return forward(model, batch, plan).logits.value();
    };
    const int l = static_cast<int>(rng.below(static_cast<std::uint64_t>(c.num_layers)));

    // Whole layer: both blocks skipped vs a model rebuilt without the layer.
    ApproxPlan layer_plan;
    layer_plan.skip({ElementKind::AttnBlock, l, 0});
    layer_plan.skip({ElementKind::FfnBlock, l, 0});
    TransformerModel rebuilt = m.clone();
    rebuilt.layers.erase(rebuilt.layers.begin() + l);
    rebuilt.config.num_layers -= 1;
    exact_failures += max_abs_diff(logits(m, layer_plan), logits(rebuilt, {})) != 0.0;

    // Single blocks: skip vs a model whose block contributes nothing.
    ApproxPlan attn_plan, ffn_plan;
    attn_plan.skip({ElementKind::AttnBlock, l, 0});
    ffn_plan.skip({ElementKind::FfnBlock, l, 0});
    TransformerModel no_attn = m.clone(), no_ffn = m.clone();
    no_attn.layers[static_cast<std::size_t>(l)].wo.mutable_value().setZero();
    no_attn.layers[static_cast<std::size_t>(l)].bo.mutable_value().setZero();
    no_ffn.layers[static_cast<std::size_t>(l)].w2.mutable_value().setZero();
    no_ffn.layers[static_cast<std::size_t>(l)].b2.mutable_value().setZero();
    exact_failures += max_abs_diff(logits(m, attn_plan), logits(no_attn, {})) != 0.0;
    exact_failures += max_abs_diff(logits(m, ffn_plan), logits(no_ffn, {})) != 0.0;

    // FFN weight group vs zeroed W1 rows.
    const int W = c.weight_group_width;
    const int g = static_cast<int>(rng.below(static_cast<std::uint64_t>(c.num_weight_groups())));
    ApproxPlan group_plan;
    group_plan.skip({ElementKind::FfnWeightGroup, l, g});
    TransformerModel zeroed = m.clone();
    zeroed.layers[static_cast<std::size_t>(l)].w1.mutable_value().middleRows(g * W, W).setZero();
    exact_failures += max_abs_diff(logits(m, group_plan), logits(zeroed, {})) != 0.0;

    // Key/value positions vs attention over the reduced key and value matrices.
    std::vector<int> pruned;
    for (int p = 0; p < c.context_len; ++p) {
      if (rng.uniform() < 0.4) pruned.push_back(p);
    }
    if (static_cast<int>(pruned.size()) == c.context_len) pruned.pop_back();
    auto [anchor, kv] = prune_kv_positions(c, l, pruned);
    ApproxPlan kv_plan;
    kv_plan.approximate(anchor, kv);
    ref::AttentionSetup setup{c.num_heads, c.causal(), {}, {}};
    for (int p = 0; p < c.context_len; ++p) {
      if (std::find(pruned.begin(), pruned.end(), p) == pruned.end()) setup.kv_keep.push_back(p);
    }
    const Matrix x = gen::matrix(rng, c.context_len, c.hidden_dim);
    const AttentionMask mask = c.causal() ? AttentionMask::causal() : AttentionMask::none();
    const Tensor kv_out = attention_delta(apply_plan(m, kv_plan), l, Tensor::from_matrix(x), c.context_len, mask);
    kv_worst = std::max(kv_worst, max_abs_diff(kv_out.value(),
                                               ref::attention(m.layers[static_cast<std::size_t>(l)], x, setup)));

    // Head: with an identity output projection the merged heads are visible directly.
    TransformerModel open = m.clone();
    open.layers[static_cast<std::size_t>(l)].wo.mutable_value().setIdentity();
    open.layers[static_cast<std::size_t>(l)].bo.mutable_value().setZero();
    const int head = static_cast<int>(rng.below(static_cast<std::uint64_t>(c.num_heads)));
    ApproxPlan head_plan;
    head_plan.skip({ElementKind::Head, l, head});
    const Matrix merged =
        attention_delta(apply_plan(open, head_plan), l, Tensor::from_matrix(x), c.context_len, mask).value();
    const Matrix dense =
        attention_delta(apply_plan(open, ApproxPlan{}), l, Tensor::from_matrix(x), c.context_len, mask).value();
    const Eigen::Index dh = c.head_dim();
    bool ok = merged.rows() == c.context_len && merged.cols() == c.hidden_dim &&
              merged.middleCols(head * dh, dh).isZero(0.0);
    for (int other = 0; other < c.num_heads; ++other) {
      if (other != head) ok = ok && merged.middleCols(other * dh, dh) == dense.middleCols(other * dh, dh);
    }
    head_failures += !ok;
  }
  return {exact_failures == 0 && kv_worst < 1e-12 && head_failures == 0,
          fmt("%d fixtures: exact mismatches %d, KV max abs err %.2e, head failures %d", cases, exact_failures,
              kv_worst, head_failures)};
}

/// Replays the shrink decisions of one block; false if any accepted step is not at an interval end.
bool replay_contiguous(const std::vector<Decision>& decisions, ElementKind kind, int layer, int groups, int& lo,
                       int& hi) {
  lo = 0;
  hi = groups;
  for (const auto& d : decisions) {
    if (d.element.kind != kind || d.element.layer != layer || d.decision != "shrunk") continue;
    if (d.element.index == lo) {
      ++lo;
    } else if (d.element.index == hi - 1) {
      --hi;
    } else {
      return false;
    }
  }
  if (lo == hi) lo = hi = 0;
  return true;
}

Outcome shrink_contiguity() {
  Rng rng(606);
  int runs = 0, shrink_entries = 0, violations = 0, infeasible = 0;
  for (; runs < 100; ++runs) {
    TransformerConfig c = gen::config(rng);
    TaskSpec spec;
    spec.vocab_size = c.vocab_size;
    spec.context_len = c.context_len;
    spec.train_size = 40;
    spec.val_fraction = 0.25;
    spec.seed = rng.next_u64();
    const Dataset data = generate_task(spec);
    TransformerModel m = build_model(c, rng);
    TrainOptions train;
    train.adam.learning_rate = 1e-2;
    train_epochs(m, ApproxPlan{}, data.train, 2, train, rng);

    const FocusMode focus{Focus::speed, rng.uniform() * 0.2};
    Rng probe = rng.split();
    const SplitThresholds th =
        compute_split_thresholds(evaluate_candidate(m, ApproxPlan{}, data, 0, train, probe).losses, focus);
    GreedyOptions opts;
    opts.epochs_per_candidate = runs % 4 == 0 ? 1 : 0;
    opts.train = train;
    Rng greedy_rng = rng.split();
    const GreedyResult g =
        greedy_significance(m, data, order_queue(enumerate_elements(c), focus.focus, c), th, focus, opts, greedy_rng);

    for (const auto& e : g.plan.skiplist()) {
      violations += e.kind == ElementKind::FfnWeightGroup || e.kind == ElementKind::QkvWeightGroup;
    }
    for (int l = 0; l < c.num_layers; ++l) {
      for (auto kind : {ElementKind::FfnWeightGroup, ElementKind::QkvWeightGroup}) {
        const int groups = c.num_weight_groups();
        int lo = 0, hi = groups;
        if (!replay_contiguous(g.decisions, kind, l, groups, lo, hi)) ++violations;
        const ApproxParams* p = g.plan.approx_of({kind, l, 0});
        int plan_lo = 0, plan_hi = groups;
        if (p) {
          const auto* s = std::get_if<params::GroupShrink>(p);
          if (!s) {
            ++violations;
            continue;
          }
          ++shrink_entries;
          plan_lo = s->lo;
          plan_hi = s->hi;
        }
        violations += !(0 <= plan_lo && plan_lo <= plan_hi && plan_hi <= groups) || plan_lo != lo || plan_hi != hi;
      }
    }
    for (const auto& d : g.decisions) {
      const bool skip_bound = d.decision == "skipped" || d.decision == "shrunk";
      const bool approx_bound = d.decision == "approximated";
      if (!skip_bound && !approx_bound) continue;
      const double tb = skip_bound ? th.train.skip : th.train.approx;
      const double vb = skip_bound ? th.validation.skip : th.validation.approx;
      infeasible += !(d.train_loss <= tb && d.val_loss <= vb);
    }
  }
  return {violations == 0 && infeasible == 0,
          fmt("%d runs, %d shrink entries, contiguity violations %d, infeasible accepted decisions %d", runs,
              shrink_entries, violations, infeasible)};
}

Outcome greedy_vs_exhaustive() {
  const auto start = std::chrono::steady_clock::now();
  TransformerConfig c;
  c.num_layers = 1;
  c.hidden_dim = 8;
  c.num_heads = 2;
  c.ffn_dim = 16;
  c.context_len = 8;
  c.vocab_size = 5;
  c.weight_group_width = 4;
  c.kv_group_width = 4;
  c.num_classes = 4;
  const auto elements = enumerate_elements(c);
  TaskSpec spec;
  spec.vocab_size = c.vocab_size;
  spec.context_len = c.context_len;
  spec.train_size = 200;
  spec.val_fraction = 0.25;
  const Dataset data = generate_task(spec);
  Rng rng(707);
  TransformerModel m = build_model(c, rng);
  TrainOptions train;
  train.adam.learning_rate = 1e-2;
  train_epochs(m, ApproxPlan{}, data.train, 3, train, rng);

  const FocusMode speed{Focus::speed, 1.0};
  ThresholdOptions band_free;
  band_free.eps_skip = 1.0;
  band_free.eps_approx = 1.0;
  Rng probe(1);
  const CandidateLosses base = evaluate_candidate(m, ApproxPlan{}, data, 0, train, probe).losses;
  const SplitThresholds th = compute_split_thresholds(base, speed, band_free);

  std::set<std::uint32_t> feasible_sets;
  std::set<std::int64_t> feasible_macs;
  for (std::uint32_t mask = 0; mask < (1u << elements.size()); ++mask) {
    ApproxPlan p;
    for (std::size_t i = 0; i < elements.size(); ++i) {
      if (mask & (1u << i)) p.skip(elements[i]);
    }
    try {
      layout_plan(c, p);
    } catch (const PlanError&) {
      continue;
    }
    if (evaluate(m, p, data.train).loss <= th.train.skip && evaluate(m, p, data.validation).loss <= th.validation.skip) {
      feasible_sets.insert(mask);
      feasible_macs.insert(cost(c, p).mac_count);
    }
  }

  auto index_of = [&](const TransElement& e) {
    return static_cast<std::uint32_t>(std::find(elements.begin(), elements.end(), e) - elements.begin());
  };
  // Skip subset equivalent to a plan, or nullopt when the plan uses another approximation.
  auto as_mask = [&](const ApproxPlan& plan) -> std::optional<std::uint32_t> {
    std::uint32_t mask = 0;
    for (const auto& e : plan.skiplist()) mask |= 1u << index_of(e);
    for (const auto& [e, p] : plan.approxlist()) {
      const auto* s = std::get_if<params::GroupShrink>(&p);
      if (!s) return std::nullopt;
      for (int grp = 0; grp < c.num_weight_groups(); ++grp) {
        if (grp < s->lo || grp >= s->hi) mask |= 1u << index_of({e.kind, e.layer, grp});
      }
    }
    return mask;
  };

  GreedyOptions frozen;
  frozen.epochs_per_candidate = 0;
  bool speed_ok = true;
  std::string greedy_log;
  for (bool encompass : {true, false}) {
    GreedyOptions opts = frozen;
    opts.encompass = encompass;
    Rng greedy_rng(2);
    const GreedyResult g =
        greedy_significance(m, data, order_queue(elements, Focus::speed, c), th, speed, opts, greedy_rng);
    const auto mask = as_mask(g.plan);
    const std::int64_t mac = cost(c, g.plan).mac_count;
    speed_ok = speed_ok && mask && feasible_sets.count(*mask) == 1 && feasible_macs.count(mac) == 1;
    greedy_log += fmt("%s greedy mac %lld (%zu removed), ", encompass ? "encompassing" : "exhaustive-queue",
                      static_cast<long long>(mac), g.plan.skiplist().size() + g.plan.approxlist().size());
  }

  const FocusMode accuracy{Focus::accuracy, 0.0};
  const SplitThresholds ath = compute_split_thresholds(base, accuracy);
  Rng acc_rng(3);
  const GreedyResult a =
      greedy_significance(m, data, order_queue(elements, Focus::accuracy, c), ath, accuracy, frozen, acc_rng);
  const double acc_train = evaluate(a.model, a.plan, data.train).loss;
  const double acc_val = evaluate(a.model, a.plan, data.validation).loss;
  const bool accuracy_ok = acc_train <= base.train_loss && acc_val <= base.val_loss;
  const double secs = seconds_since(start);
  return {speed_ok && accuracy_ok && secs < 600,
          fmt("%zu elements, %zu feasible subsets (min mac %lld, baseline %lld); %saccuracy focus loss %.5f <= "
              "%.5f; %.1f s",
              elements.size(), feasible_sets.size(), static_cast<long long>(*feasible_macs.begin()),
              static_cast<long long>(cost(c, ApproxPlan{}).mac_count), greedy_log.c_str(), acc_train,
              base.train_loss, secs)};
}

nlohmann::json desk_fixture(const std::string& focus) {
  return {{"model",
           {{"num_layers", 4},
            {"hidden_dim", 32},
            {"num_heads", 4},
            {"ffn_dim", 64},
            {"context_len", 32},
            {"vocab_size", 5},
            {"weight_group_width", 4},
            {"kv_group_width", 8}}},
          {"task", {{"family", "majority"}, {"train_size", 1024}}},
          {"epochs", {{"baseline", 20}, {"per_candidate", 2}, {"final", 3}}},
          {"focus", {{"mode", focus}, {"max_degradation", 0.005}}},
          {"thresholds", {{"eps_skip", 1.0}, {"eps_approx", 2.0}}}};
}

Outcome desk_scale_trend() {
  const auto start = std::chrono::steady_clock::now();
  const RunReport speed = run_experiment(experiment_from_json(desk_fixture("speed")));
  const RunReport size = run_experiment(experiment_from_json(desk_fixture("size")));
  auto ratio = [](std::int64_t a, std::int64_t b) { return static_cast<double>(a) / static_cast<double>(b); };
  const double mac_ratio = ratio(speed.baseline.cost.mac_count, speed.optimized.cost.mac_count);
  const double bytes_ratio = ratio(size.baseline.cost.bytes, size.optimized.cost.bytes);
  const double speed_drop = speed.baseline.accuracy - speed.optimized.accuracy;
  const double size_drop = size.baseline.accuracy - size.optimized.accuracy;
  const bool ok = mac_ratio >= 1.5 && bytes_ratio >= 2.0 && speed_drop <= 0.005 && size_drop <= 0.005;
  return {ok, fmt("speed: mac ratio %.3f, accuracy %.4f -> %.4f; size: bytes ratio %.3f, accuracy %.4f -> %.4f; "
                  "%.0f s",
                  mac_ratio, speed.baseline.accuracy, speed.optimized.accuracy, bytes_ratio, size.baseline.accuracy,
                  size.optimized.accuracy, seconds_since(start))};
}

Outcome quantization_bound() {
  Rng rng(909);
  constexpr int kGroups = 1000, kGroupSize = 100;
  int violations = 0;
  for (int bits : kQuantBits) {
    for (int g = 0; g < kGroups; ++g) {
      const Matrix w = gen::matrix(rng, 1, kGroupSize, std::exp(4 * rng.uniform() - 2));
      const auto q = quantize_group(w, bits);
      const auto deq = q.dequantize();
      for (int i = 0; i < kGroupSize; ++i) violations += std::abs(w(0, i) - deq[static_cast<std::size_t>(i)]) > q.scale / 2;
    }
  }

  TransformerConfig c;
  c.num_layers = 2;
  c.hidden_dim = 16;
  c.num_heads = 4;
  c.ffn_dim = 24;
  c.context_len = 16;
  c.vocab_size = 11;
  c.weight_group_width = 4;
  c.kv_group_width = 4;
  const std::int64_t d = c.hidden_dim, y = c.ffn_dim, W = c.weight_group_width, dh = c.head_dim();
  const std::int64_t base_params = cost(c, ApproxPlan{}).param_count;
  auto packed = [](std::int64_t live, int bits) { return (live * bits + 7) / 8 + 4; };
  int mismatches = 0, checked = 0;
  for (int bits : kQuantBits) {
    struct Case {
      TransElement element;
      std::vector<std::int64_t> regions;  // live entries per quantized region
    };
    std::vector<Case> cases;
    cases.push_back({{ElementKind::AttnBlock, 1, 0}, std::vector<std::int64_t>(4 * static_cast<std::size_t>(d / W), W * d)});
    Case ffn{{ElementKind::FfnBlock, 0, 0}, std::vector<std::int64_t>(static_cast<std::size_t>(d / W), W * y)};
    for (std::int64_t r = 0; r < y; r += W) ffn.regions.push_back(std::min(W, y - r) * d);
    cases.push_back(ffn);
    cases.push_back({{ElementKind::Head, 0, 2}, {d * dh, d * dh, d * dh, dh * d}});
    cases.push_back({{ElementKind::FfnWeightGroup, 1, 3}, {W * y}});
    cases.push_back({{ElementKind::QkvWeightGroup, 0, 1}, {W * d, W * d, W * d}});
    for (const auto& cs : cases) {
      ApproxPlan p;
      p.approximate(cs.element, params::Quantize{bits});
      std::int64_t quantized = 0, expected_bytes = 0;
      for (auto live : cs.regions) {
        quantized += live;
        expected_bytes += packed(live, bits);
      }
      expected_bytes += 4 * (base_params - quantized);
      mismatches += cost(c, p).bytes != expected_bytes;
      ++checked;
    }
    // A pruned group inside a quantized block stores nothing.
    ApproxPlan mixed;
    mixed.approximate({ElementKind::FfnBlock, 0, 0}, params::Quantize{bits});
    mixed.skip({ElementKind::FfnWeightGroup, 0, 1});
    std::int64_t expected = 4 * (base_params - W * y - (d - W) * y - y * d);
    expected += (d / W - 1) * packed(W * y, bits);
    for (std::int64_t r = 0; r < y; r += W) expected += packed(std::min(W, y - r) * d, bits);
    mismatches += cost(c, mixed).bytes != expected;
    ++checked;
  }
  return {violations == 0 && mismatches == 0,
          fmt("%d weights per bit width, bound violations %d; %d byte-accounting cases, mismatches %d",
              kGroups * kGroupSize, violations, checked, mismatches)};
}

nlohmann::json tiny_fixture(const std::string& focus, double degradation = 0.05) {
  return {{"model",
           {{"num_layers", 2},
            {"hidden_dim", 8},
            {"num_heads", 2},
            {"ffn_dim", 16},
            {"context_len", 8},
            {"vocab_size", 4},
            {"weight_group_width", 4},
            {"kv_group_width", 4}}},
          {"task", {{"family", "majority"}, {"train_size", 200}}},
          {"epochs", {{"baseline", 6}, {"per_candidate", 1}, {"final", 1}}},
          {"focus", {{"mode", focus}, {"max_degradation", degradation}}}};
}

Outcome baseline_comparison() {
  nlohmann::json doc = tiny_fixture("speed");
  doc["task"]["train_size"] = 256;
  doc["epochs"]["final"] = 2;
  doc["thresholds"] = {{"eps_skip", 1.0}, {"eps_approx", 2.0}};
  const Comparison cmp = compare_baselines(experiment_from_json(doc));
  const auto& heuristic = cmp.row("greedy_heuristic");
  const auto& plain = cmp.row("greedy_plain");
  const auto& oracle = cmp.row("oracle");
  const auto& taylor = cmp.row("taylor");
  const bool ok = heuristic.removed > 0 && heuristic.analysis_ms <= plain.analysis_ms &&
                  oracle.final_loss >= heuristic.final_loss &&
                  taylor.final_loss >= heuristic.final_loss;
  return {ok, fmt("analysis ms heuristic %.1f vs plain %.1f; final loss greedy %.4f, oracle %.4f, taylor %.4f "
                  "(%zu elements removed)",
                  heuristic.analysis_ms, plain.analysis_ms, heuristic.final_loss, oracle.final_loss,
                  taylor.final_loss, heuristic.removed)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "transapprox_acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  {
    std::ofstream(root / "config.json") << tiny_fixture("speed").dump();
  }
  std::vector<int> codes;
  for (const char* run : {"a", "b"}) {
    const std::string cmd = std::string("\"") + TRANSAPPROX_CLI + "\" optimize --config \"" +
                            (root / "config.json").string() + "\" --out \"" + (root / run).string() + "\" > \"" +
                            (root / (std::string(run) + ".log")).string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    codes.push_back(WIFEXITED(status) ? WEXITSTATUS(status) : -1);
  }
  bool ran = true;
  for (int code : codes) ran = ran && (code == 0 || code == 3);
  bool identical = true;
  for (const char* f : {"plan.json", "decisions.jsonl"}) {
    const fs::path a = root / "a" / f, b = root / "b" / f;
    identical = identical && fs::exists(a) && fs::exists(b) && slurp(a) == slurp(b);
  }
  const std::size_t log_bytes = fs::exists(root / "a" / "decisions.jsonl") ? fs::file_size(root / "a" / "decisions.jsonl") : 0;
  return {ran && identical, fmt("exit codes %d/%d, plan.json and decisions.jsonl (%zu bytes) %s", codes[0], codes[1],
                                log_bytes, identical ? "identical" : "differ")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient correctness", gradient_correctness},
      {"attention reference equivalence", attention_reference},
      {"sign matching exact at K=n, linear scoring", sign_match_exactness},
      {"sign matching fidelity trend", sign_match_trend},
      {"pruning equivalence oracles", pruning_oracles},
      {"shrinking contiguity", shrink_contiguity},
      {"greedy vs exhaustive oracle", greedy_vs_exhaustive},
      {"desk-scale speed and size reduction", desk_scale_trend},
      {"quantization bound and byte accounting", quantization_bound},
      {"baseline comparison", baseline_comparison},
      {"determinism", determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << id << "] " << criteria[i].first << ": " << o.detail
              << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
