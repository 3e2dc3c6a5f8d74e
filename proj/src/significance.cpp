#include "transapprox/significance.hpp"

#include "transapprox/approx.hpp"
#include "transapprox/forward.hpp"

#include <cmath>
#include <limits>

namespace transapprox {

namespace {

constexpr double kNoLoss = std::numeric_limits<double>::quiet_NaN();

bool plan_fits(const TransformerConfig& config, const ApproxPlan& plan) {
  try {
    layout_plan(config, plan);
    return true;
  } catch (const PlanError&) {
    return false;
  }
}

enum class Bound { skip, approx };

bool within(double loss, const Thresholds& t, Bound bound, Focus focus) {
  if (focus == Focus::accuracy) return loss < t.min_loss_seen;
  return loss <= (bound == Bound::skip ? t.skip : t.approx);
}

bool passes(const CandidateLosses& l, const SplitThresholds& t, Bound bound, Focus focus, bool train_only) {
  return within(l.train_loss, t.train, bound, focus) &&
         (train_only || within(l.val_loss, t.validation, bound, focus));
}

void record_improvement(SplitThresholds& t, const CandidateLosses& l, Focus focus) {
  if (focus != Focus::accuracy) return;
  for (auto [th, loss] : {std::pair{&t.train, l.train_loss}, std::pair{&t.validation, l.val_loss}}) {
    th->min_loss_seen = std::min(th->min_loss_seen, loss);
    th->skip = th->approx = th->min_loss_seen;
  }
}

bool is_weight_group(const TransElement& e) {
  return e.kind == ElementKind::FfnWeightGroup || e.kind == ElementKind::QkvWeightGroup;
}

/// Working state shared by the greedy loop and the shrinking procedure.
struct Analysis {
  const Dataset& data;
  const FocusMode& focus;
  const GreedyOptions& options;
  const Rng& candidate_rng;
  ApproxPlan plan;
  TransformerModel model;
  SplitThresholds thresholds;
  std::vector<Decision> decisions;
  int evaluations = 0;

  CandidateResult evaluate(const ApproxPlan& candidate) {
    ++evaluations;
    Rng rng = candidate_rng;  // every candidate sees the same batch order
    return evaluate_candidate(model, candidate, data, options.epochs_per_candidate, options.train, rng);
  }

  bool accepts(const CandidateLosses& l, Bound bound) const {
    return passes(l, thresholds, bound, focus.focus, options.train_loss_only);
  }

  void adopt(const ApproxPlan& candidate, CandidateResult&& result) {
    plan = candidate;
    model = std::move(result.model);
    record_improvement(thresholds, result.losses, focus.focus);
  }

  void log(const TransElement& e, std::string action, const CandidateLosses& l, std::string decision) {
    decisions.push_back({e, std::move(action), l.train_loss, l.val_loss, thresholds, std::move(decision)});
  }
  void log_infeasible(const TransElement& e, std::string action) {
    decisions.push_back({e, std::move(action), kNoLoss, kNoLoss, thresholds, "infeasible"});
  }

  /// Evaluates `candidate`; adopts it when it passes `bound`.
  bool attempt(const TransElement& e, const std::string& action, const ApproxPlan& candidate, Bound bound,
               const std::string& accepted, const std::string& rejected, CandidateLosses* seen = nullptr) {
    if (!plan_fits(model.config, candidate)) {
      log_infeasible(e, action);
      return false;
    }
    CandidateResult r = evaluate(candidate);
    if (seen) *seen = r.losses;
    const bool ok = accepts(r.losses, bound);
    log(e, action, r.losses, ok ? accepted : rejected);
    if (ok) adopt(candidate, std::move(r));
    return ok;
  }
};

std::optional<ApproxParams> approximation_for(const TransElement& e, const ApproxPlan& plan,
                                              const TransformerConfig& config, const FocusMode& focus,
                                              const GreedyOptions& options) {
  if (focus.focus == Focus::speed && e.kind == ElementKind::AttnBlock) {
    const int k = options.sign_match_k > 0 ? options.sign_match_k : std::max(1, config.context_len / 4);
    return params::SignMatch{k};
  }
  if (focus.focus == Focus::size && e.kind != ElementKind::KvPositionGroup) {
    if (!e.is_block() && plan.approx_of(e.parent_block())) return std::nullopt;
    return params::Quantize{options.quant_bits};
  }
  return std::nullopt;
}

std::string action_name(const ApproxParams& p) {
  if (std::holds_alternative<params::SignMatch>(p)) return "sign_match";
  if (std::holds_alternative<params::Quantize>(p)) return "quantize";
  return variant_name(p);
}

ShrinkResult run_shrink(Analysis& a, const TransElement& group) {
  const int groups = a.model.config.num_weight_groups();
  const TransElement anchor{group.kind, group.layer, 0};
  const int evaluations_before = a.evaluations;
  const std::size_t decisions_before = a.decisions.size();
  auto candidate_for = [&](int lo, int hi) {
    ApproxPlan p = a.plan;
    p.remove_approx(anchor);
    if (lo == hi) lo = hi = 0;
    if (lo != 0 || hi != groups) p.approximate(anchor, params::GroupShrink{lo, hi});
    return p;
  };
  int lo = 0, hi = groups;
  while (lo < hi) {
    const TransElement dropped{group.kind, group.layer, lo};
    if (!a.attempt(dropped, "shrink", candidate_for(lo + 1, hi), Bound::skip, "shrunk", "kept")) break;
    ++lo;
  }
  while (hi > lo) {
    const TransElement dropped{group.kind, group.layer, hi - 1};
    if (!a.attempt(dropped, "shrink", candidate_for(lo, hi - 1), Bound::skip, "shrunk", "kept")) break;
    --hi;
  }
  if (lo == hi) lo = hi = 0;
  ShrinkResult out;
  out.lo = lo;
  out.hi = hi;
  out.plan = a.plan;
  out.model = a.model.clone();
  out.decisions.assign(a.decisions.begin() + static_cast<std::ptrdiff_t>(decisions_before), a.decisions.end());
  out.evaluations = a.evaluations - evaluations_before;
  return out;
}

struct OwnedSlice {
  const Tensor* tensor;
  Eigen::Index row0, rows, col0, cols;
};

std::vector<OwnedSlice> owned_slices(const TransformerModel& model, const TransElement& e) {
  const auto& cfg = model.config;
  const auto& p = model.layers.at(static_cast<std::size_t>(e.layer));
  const Eigen::Index d = cfg.hidden_dim, dh = cfg.head_dim(), W = cfg.weight_group_width;
  auto whole = [](const Tensor& t) { return OwnedSlice{&t, 0, t.rows(), 0, t.cols()}; };
  std::vector<OwnedSlice> out;
  switch (e.kind) {
    case ElementKind::AttnBlock:
      for (const Tensor* t : {&p.ln1_gamma, &p.ln1_beta, &p.wq, &p.bq, &p.wk, &p.bk, &p.wv, &p.bv, &p.wo, &p.bo}) {
        out.push_back(whole(*t));
      }
      break;
    case ElementKind::FfnBlock:
      for (const Tensor* t : {&p.ln2_gamma, &p.ln2_beta, &p.w1, &p.b1, &p.w2, &p.b2}) out.push_back(whole(*t));
      break;
    case ElementKind::Head: {
      const Eigen::Index c0 = e.index * dh;
      for (const Tensor* t : {&p.wq, &p.wk, &p.wv}) out.push_back({t, 0, d, c0, dh});
      for (const Tensor* t : {&p.bq, &p.bk, &p.bv}) out.push_back({t, 0, 1, c0, dh});
      out.push_back({&p.wo, c0, dh, 0, d});
      break;
    }
    case ElementKind::FfnWeightGroup: out.push_back({&p.w1, e.index * W, W, 0, cfg.ffn_dim}); break;
    case ElementKind::QkvWeightGroup:
      for (const Tensor* t : {&p.wq, &p.wk, &p.wv}) out.push_back({t, e.index * W, W, 0, d});
      break;
    case ElementKind::KvPositionGroup: throw std::invalid_argument("position groups own no parameters");
  }
  return out;
}

}  // namespace

Thresholds compute_thresholds(double baseline_loss, const FocusMode& focus, const ThresholdOptions& options) {
  if (!(baseline_loss > 0) || !std::isfinite(baseline_loss)) {
    throw InfeasibleError("baseline loss must be finite and positive, got " + std::to_string(baseline_loss));
  }
  if (focus.acceptable_degradation < 0) throw ConfigError("acceptable degradation must be non-negative");
  Thresholds t;
  t.min_loss_seen = baseline_loss;
  if (focus.focus == Focus::accuracy) {
    t.skip = t.approx = baseline_loss;
    return t;
  }
  const double eps_skip = options.eps_skip.value_or(focus.acceptable_degradation);
  const double eps_approx = options.eps_approx.value_or(2 * focus.acceptable_degradation);
  if (eps_skip < 0 || eps_approx < eps_skip) throw ConfigError("need 0 <= eps_skip <= eps_approx");
  t.skip = baseline_loss * (1 + eps_skip);
  t.approx = baseline_loss * (1 + eps_approx);
  return t;
}

SplitThresholds compute_split_thresholds(const CandidateLosses& baseline, const FocusMode& focus,
                                         const ThresholdOptions& options) {
  return {compute_thresholds(baseline.train_loss, focus, options),
          compute_thresholds(baseline.val_loss, focus, options)};
}

nlohmann::json to_json(const SplitThresholds& t) {
  auto one = [](const Thresholds& x) {
    return nlohmann::json{{"skip", x.skip}, {"approx", x.approx}, {"min_loss_seen", x.min_loss_seen}};
  };
  return {{"train", one(t.train)}, {"validation", one(t.validation)}};
}

nlohmann::json Decision::to_json() const {
  return {{"element", element},
          {"tentative_action", tentative_action},
          {"train_loss", train_loss},
          {"val_loss", val_loss},
          {"thresholds", transapprox::to_json(thresholds)},
          {"decision", decision}};
}

CandidateResult evaluate_candidate(const TransformerModel& model, const ApproxPlan& candidate_plan,
                                   const Dataset& data, int epochs, const TrainOptions& train, Rng& rng) {
  if (data.train.empty() || data.validation.empty()) {
    throw std::invalid_argument("evaluate_candidate: both dataset splits must be nonempty");
  }
  CandidateResult out{{}, model.clone()};
  const auto losses = train_epochs(out.model, candidate_plan, data.train, epochs, train, rng);
  out.losses.train_loss = losses.empty() ? evaluate(out.model, candidate_plan, data.train).loss : losses.back();
  out.losses.val_loss = evaluate(out.model, candidate_plan, data.validation).loss;
  return out;
}

GreedyResult greedy_significance(const TransformerModel& model, const Dataset& data, ElementQueue queue,
                                 const SplitThresholds& thresholds, const FocusMode& focus,
                                 const GreedyOptions& options, Rng& rng) {
  const auto& cfg = model.config;
  Analysis a{data, focus, options, rng, ApproxPlan{}, model.clone(), thresholds, {}, 0};
  GreedyResult out;
  const int early_positions = (cfg.context_len + 3) / 4;

  while (!queue.empty()) {
    const TransElement e = queue.pop();

    if (focus.focus == Focus::speed && is_weight_group(e)) {
      run_shrink(a, e);
      queue.remove_if(
          [&](const TransElement& x) { return x.kind == e.kind && x.layer == e.layer; }, "shrunk");
      continue;
    }

    ApproxPlan skipped = a.plan;
    skipped.skip(e);
    CandidateLosses seen{kNoLoss, kNoLoss};
    if (a.attempt(e, "skip", skipped, Bound::skip, "skipped", "reverted", &seen)) {
      if (e.is_block() && options.encompass) encompass_filter(queue, e, BlockDecision::skipped);
      if (e.kind == ElementKind::KvPositionGroup && cfg.causal() && e.index * cfg.kv_group_width < early_positions) {
        out.warnings.push_back(e.to_string() + " removes early positions under a causal mask");
      }
      continue;
    }

    // Reverted: a loss within the approximation band marks the element as
    // approximable rather than high importance.
    const bool infeasible = std::isnan(seen.train_loss);
    const bool in_band = !infeasible && focus.focus != Focus::accuracy && a.accepts(seen, Bound::approx);
    if (in_band) {
      if (auto p = approximation_for(e, a.plan, cfg, focus, options)) {
        ApproxPlan candidate = a.plan;
        candidate.approximate(e, *p);
        a.attempt(e, action_name(*p), candidate, Bound::approx, "approximated", "reverted");
      } else if (e.is_block()) {
        a.log(e, "approximate", seen, "approximable");
      }
    }
    if (e.is_block() && !in_band && options.encompass) encompass_filter(queue, e, BlockDecision::kept);
  }

  out.plan = std::move(a.plan);
  out.model = std::move(a.model);
  out.decisions = std::move(a.decisions);
  out.queue = std::move(queue);
  out.thresholds = a.thresholds;
  out.evaluations = a.evaluations;
  return out;
}

ShrinkResult shrink_weight_groups(const TransformerModel& model, const ApproxPlan& plan, const Dataset& data,
                                  const TransElement& group, const SplitThresholds& thresholds,
                                  const FocusMode& focus, const GreedyOptions& options, Rng& rng) {
  if (!is_weight_group(group)) throw std::invalid_argument("shrink_weight_groups needs an FFN or QKV weight group");
  check_element(group, model.config);
  Analysis a{data, focus, options, rng, plan, model.clone(), thresholds, {}, 0};
  return run_shrink(a, group);
}

double taylor_contribution(const TransformerModel& model, const TransElement& element) {
  double total = 0;
  for (const auto& s : owned_slices(model, element)) {
    if (!s.tensor->has_grad()) throw std::logic_error("taylor_contribution: parameter has no gradient");
    total += (s.tensor->value().block(s.row0, s.col0, s.rows, s.cols).array() *
              s.tensor->grad().block(s.row0, s.col0, s.rows, s.cols).array())
                 .sum();
  }
  return total;
}

std::map<TransElement, double> taylor_significance(const TransformerModel& model, const Dataset& data) {
  if (data.train.empty()) throw std::invalid_argument("taylor_significance: empty training split");
  TransformerModel probe = model.clone();
  const ForwardResult r = forward(apply_plan(probe, ApproxPlan{}), data.train);
  backward(r.loss);
  for (auto& p : probe.parameters()) p.ensure_grad();
  std::map<TransElement, double> out;
  for (const auto& e : enumerate_elements(model.config)) {
    if (e.kind == ElementKind::KvPositionGroup) continue;
    out[e] = std::abs(taylor_contribution(probe, e));
  }
  return out;
}

std::map<TransElement, double> oracle_significance(const TransformerModel& model, const Dataset& data,
                                                   const std::vector<TransElement>& elements,
                                                   std::size_t element_limit) {
  if (elements.size() > element_limit) {
    throw std::invalid_argument("oracle_significance: " + std::to_string(elements.size()) +
                                " elements exceed the limit of " + std::to_string(element_limit));
  }
  std::map<TransElement, double> out;
  for (const auto& e : elements) {
    ApproxPlan p;
    p.skip(e);
    out[e] = plan_fits(model.config, p) ? evaluate(model, p, data.train).loss
                                        : std::numeric_limits<double>::infinity();
  }
  return out;
}

FinetuneResult final_finetune(const TransformerModel& model, const ApproxPlan& plan, const Dataset& data,
                              int epochs, const TrainOptions& train, Rng& rng) {
  FinetuneResult out{model.clone(), {}};
  out.epoch_losses = train_epochs(out.model, plan, data.train, epochs, train, rng);
  return out;
}

}  // namespace transapprox
