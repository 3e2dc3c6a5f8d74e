#include "transapprox/experiment.hpp"

#include "transapprox/approx.hpp"
#include "transapprox/checkpoint.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <future>
#include <sstream>

namespace transapprox {

namespace {

/// Independent stream `id` of an experiment seed.
Rng stream(std::uint64_t seed, std::uint64_t id) { return Rng(seed * 0x9e3779b97f4a7c15ULL + id); }

enum StreamId : std::uint64_t { kInit = 0, kBaseline = 1, kCandidates = 2, kFinal = 3 };

std::string to_string(LayerOrder o) { return o == LayerOrder::last_to_first ? "last_to_first" : "first_to_last"; }

LayerOrder parse_layer_order(const std::string& s) {
  if (s == "last_to_first") return LayerOrder::last_to_first;
  if (s == "first_to_last") return LayerOrder::first_to_last;
  throw ConfigError("unknown layer order '" + s + "'");
}

void check_known_keys(const nlohmann::json& user, const nlohmann::json& defaults, const std::string& path) {
  if (!user.is_object()) throw ConfigError("'" + (path.empty() ? "<root>" : path) + "' must be an object");
  for (const auto& [key, value] : user.items()) {
    const std::string here = path.empty() ? key : path + "." + key;
    if (!defaults.contains(key)) throw ConfigError("unknown config field '" + here + "'");
    if (defaults.at(key).is_object()) check_known_keys(value, defaults.at(key), here);
  }
}

double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

double ratio(double baseline, double optimized) { return optimized == 0 ? 0.0 : baseline / optimized; }

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
}

/// Runs `fn`, prefixing any error with the stage name while keeping its type.
template <typename Fn>
auto stage(const char* name, Fn&& fn) {
  const std::string prefix = std::string("stage '") + name + "': ";
  try {
    return fn();
  } catch (const ConfigError& e) {
    throw ConfigError(prefix + e.what());
  } catch (const InfeasibleError& e) {
    throw InfeasibleError(prefix + e.what());
  } catch (const std::exception& e) {
    throw std::runtime_error(prefix + e.what());
  }
}

GreedyOptions greedy_options(const ExperimentConfig& c) {
  GreedyOptions g;
  g.epochs_per_candidate = c.epochs.per_candidate;
  g.train = c.training;
  g.train_loss_only = c.analysis.train_loss_only;
  g.encompass = c.analysis.encompass;
  g.sign_match_k = c.analysis.sign_match_k;
  g.quant_bits = c.analysis.quant_bits;
  return g;
}

struct AnalysisOutcome {
  SplitThresholds thresholds;
  GreedyResult greedy;
  double analysis_ms = 0;
};

AnalysisOutcome analyse(const ExperimentConfig& c, const TransformerModel& baseline, const Dataset& data,
                        const QueueOptions& queue_options, bool encompass) {
  const auto start = std::chrono::steady_clock::now();
  GreedyOptions g = greedy_options(c);
  g.encompass = encompass;
  Rng candidates = stream(c.seed, kCandidates);
  Rng probe = candidates;
  const CandidateResult base = evaluate_candidate(baseline, ApproxPlan{}, data, g.epochs_per_candidate, g.train, probe);
  AnalysisOutcome out;
  out.thresholds = compute_split_thresholds(base.losses, c.focus, c.thresholds);
  ElementQueue queue = order_queue(enumerate_elements(c.model), c.focus.focus, c.model, queue_options);
  out.greedy = greedy_significance(baseline, data, std::move(queue), out.thresholds, c.focus, g, candidates);
  out.analysis_ms = elapsed_ms(start);
  return out;
}

/// Final fine-tune keeping the epoch (possibly none) with the lowest validation loss.
TransformerModel finetune_best(const ExperimentConfig& c, const TransformerModel& start, const ApproxPlan& plan,
                               const Dataset& data, std::vector<double>& epoch_losses) {
  TransformerModel best = start.clone();
  double best_val = evaluate(best, plan, data.validation).loss;
  TransformerModel current = start.clone();
  Rng rng = stream(c.seed, kFinal);
  for (int e = 0; e < c.epochs.final; ++e) {
    epoch_losses.push_back(train_epochs(current, plan, data.train, 1, c.training, rng).back());
    const double val = evaluate(current, plan, data.validation).loss;
    if (val <= best_val) {
      best_val = val;
      best = current.clone();
    }
  }
  return best;
}

}  // namespace

void ExperimentConfig::finalize() {
  task.vocab_size = model.vocab_size;
  task.context_len = model.context_len;
  model.task_kind = task_kind_of(task.family);
  if (model.num_classes == 0) model.num_classes = num_classes_of(task);
}

void ExperimentConfig::validate() const {
  model.validate();
  task.validate();
  if (model.task_kind != task_kind_of(task.family)) throw ConfigError("model task_kind does not match the task");
  if (task.vocab_size != model.vocab_size || task.context_len != model.context_len) {
    throw ConfigError("task vocabulary/context must match the model");
  }
  if (focus.acceptable_degradation < 0) throw ConfigError("focus.max_degradation must be non-negative");
  if (epochs.baseline < 0 || epochs.per_candidate < 0 || epochs.final < 0) throw ConfigError("epoch counts must be >= 0");
  if (training.batch_size < 1) throw ConfigError("training.batch_size must be positive");
  if (!(training.adam.learning_rate > 0)) throw ConfigError("training.learning_rate must be positive");
  if (!valid_quant_bits(analysis.quant_bits)) throw ConfigError("analysis.quant_bits must be 2, 4 or 8");
  if (analysis.sign_match_k < 0 || analysis.sign_match_k > model.context_len) {
    throw ConfigError("analysis.sign_match_k must lie in [0, context_len]");
  }
  const double eps_skip = thresholds.eps_skip.value_or(focus.acceptable_degradation);
  const double eps_approx = thresholds.eps_approx.value_or(2 * focus.acceptable_degradation);
  if (eps_skip < 0 || eps_approx < eps_skip) throw ConfigError("need 0 <= eps_skip <= eps_approx");
  if (latency_repeats < 3) throw ConfigError("latency_repeats must be >= 3");
  if (comparators.oracle_limit < 1) throw ConfigError("comparators.oracle_limit must be positive");
}

nlohmann::json to_json(const ExperimentConfig& c) {
  auto optional = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {
      {"seed", c.seed},
      {"latency_repeats", c.latency_repeats},
      {"model", to_json(c.model)},
      {"task",
       {{"family", to_string(c.task.family)},
        {"train_size", c.task.train_size},
        {"val_fraction", c.task.val_fraction},
        {"seed", c.task.seed}}},
      {"focus", {{"mode", to_string(c.focus.focus)}, {"max_degradation", c.focus.acceptable_degradation}}},
      {"thresholds", {{"eps_skip", optional(c.thresholds.eps_skip)}, {"eps_approx", optional(c.thresholds.eps_approx)}}},
      {"epochs", {{"baseline", c.epochs.baseline}, {"per_candidate", c.epochs.per_candidate}, {"final", c.epochs.final}}},
      {"training",
       {{"batch_size", c.training.batch_size},
        {"learning_rate", c.training.adam.learning_rate},
        {"straight_through", c.training.straight_through}}},
      {"analysis",
       {{"train_loss_only", c.analysis.train_loss_only},
        {"sign_match_k", c.analysis.sign_match_k},
        {"quant_bits", c.analysis.quant_bits},
        {"layer_order", to_string(c.analysis.layer_order)},
        {"flat", c.analysis.flat},
        {"encompass", c.analysis.encompass}}},
      {"comparators",
       {{"greedy_heuristic", c.comparators.greedy_heuristic},
        {"greedy_plain", c.comparators.greedy_plain},
        {"oracle", c.comparators.oracle},
        {"taylor", c.comparators.taylor},
        {"oracle_limit", c.comparators.oracle_limit}}},
  };
}

ExperimentConfig experiment_from_json(const nlohmann::json& user) {
  const nlohmann::json defaults = to_json(ExperimentConfig{});
  check_known_keys(user, defaults, "");
  nlohmann::json j = defaults;
  j.update(user, true);
  ExperimentConfig c;
  try {
    c.seed = j.at("seed").get<std::uint64_t>();
    c.latency_repeats = j.at("latency_repeats").get<int>();
    const auto& t = j.at("task");
    c.task.family = parse_task_family(t.at("family").get<std::string>());
    c.task.train_size = t.at("train_size").get<int>();
    c.task.val_fraction = t.at("val_fraction").get<double>();
    c.task.seed = t.at("seed").get<std::uint64_t>();
    nlohmann::json model = j.at("model");
    const bool sequence_task = task_kind_of(c.task.family) != TaskKind::classification;
    if (!user.contains("model") || !user.at("model").contains("autoregressive")) model["autoregressive"] = sequence_task;
    if (!user.contains("model") || !user.at("model").contains("task_kind")) {
      model["task_kind"] = to_string(task_kind_of(c.task.family));
    }
    c.model = config_from_json(model);
    const auto& f = j.at("focus");
    c.focus.focus = parse_focus(f.at("mode").get<std::string>());
    c.focus.acceptable_degradation = f.at("max_degradation").get<double>();
    for (auto [key, field] : {std::pair{"eps_skip", &c.thresholds.eps_skip}, std::pair{"eps_approx", &c.thresholds.eps_approx}}) {
      const auto& v = j.at("thresholds").at(key);
      if (!v.is_null()) *field = v.get<double>();
    }
    const auto& e = j.at("epochs");
    c.epochs = {e.at("baseline").get<int>(), e.at("per_candidate").get<int>(), e.at("final").get<int>()};
    const auto& tr = j.at("training");
    c.training.batch_size = tr.at("batch_size").get<int>();
    c.training.adam.learning_rate = tr.at("learning_rate").get<double>();
    c.training.straight_through = tr.at("straight_through").get<bool>();
    const auto& a = j.at("analysis");
    c.analysis.train_loss_only = a.at("train_loss_only").get<bool>();
    c.analysis.sign_match_k = a.at("sign_match_k").get<int>();
    c.analysis.quant_bits = a.at("quant_bits").get<int>();
    c.analysis.layer_order = parse_layer_order(a.at("layer_order").get<std::string>());
    c.analysis.flat = a.at("flat").get<bool>();
    c.analysis.encompass = a.at("encompass").get<bool>();
    const auto& cmp = j.at("comparators");
    c.comparators.greedy_heuristic = cmp.at("greedy_heuristic").get<bool>();
    c.comparators.greedy_plain = cmp.at("greedy_plain").get<bool>();
    c.comparators.oracle = cmp.at("oracle").get<bool>();
    c.comparators.taylor = cmp.at("taylor").get<bool>();
    c.comparators.oracle_limit = cmp.at("oracle_limit").get<int>();
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("bad experiment config: ") + ex.what());
  }
  c.finalize();
  c.validate();
  return c;
}

void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not path=value");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  std::string pointer;
  std::stringstream ss(path);
  for (std::string part; std::getline(ss, part, '.');) {
    if (part.empty()) throw ConfigError("override path '" + path + "' has an empty component");
    pointer += "/" + part;
  }
  doc[nlohmann::json::json_pointer(pointer)] = value;
}

nlohmann::json Metrics::to_json() const {
  nlohmann::json j = {{"loss", loss},
                      {"train_loss", train_loss},
                      {"accuracy", accuracy},
                      {"param_count", cost.param_count},
                      {"mac_count", cost.mac_count},
                      {"bytes", cost.bytes},
                      {"wall_ms", wall_ms}};
  if (perplexity) j["perplexity"] = *perplexity;
  return j;
}

Metrics measure(const TransformerModel& model, const ApproxPlan& plan, const Dataset& data, int latency_repeats) {
  Metrics m;
  const EvalResult val = evaluate(model, plan, data.validation);
  m.loss = val.loss;
  m.accuracy = val.accuracy;
  m.train_loss = evaluate(model, plan, data.train).loss;
  if (model.config.task_kind != TaskKind::classification) m.perplexity = std::exp(val.loss);
  m.cost = cost(model, plan);
  const std::size_t batch = std::min<std::size_t>(32, data.validation.size());
  m.wall_ms = measure_latency(model, plan, std::span(data.validation).first(batch), latency_repeats);
  return m;
}

std::vector<std::pair<int, int>> RunReport::layer_histogram() const {
  std::vector<std::pair<int, int>> h(static_cast<std::size_t>(config.model.num_layers), {0, 0});
  for (const auto& e : plan.skiplist()) ++h[static_cast<std::size_t>(e.layer)].first;
  for (const auto& [e, p] : plan.approxlist()) ++h[static_cast<std::size_t>(e.layer)].second;
  return h;
}

nlohmann::json RunReport::to_json() const {
  std::map<std::string, int> by_variant;
  for (const auto& [e, p] : plan.approxlist()) ++by_variant[variant_name(p)];
  auto histogram = nlohmann::json::array();
  const auto h = layer_histogram();
  for (std::size_t l = 0; l < h.size(); ++l) {
    histogram.push_back({{"layer", l}, {"skipped", h[l].first}, {"approximated", h[l].second}});
  }
  return {
      {"focus", transapprox::to_string(config.focus.focus)},
      {"max_degradation", config.focus.acceptable_degradation},
      {"task", transapprox::to_string(config.task.family)},
      {"baseline", baseline.to_json()},
      {"optimized", optimized.to_json()},
      {"ratios",
       {{"mac_count", ratio(static_cast<double>(baseline.cost.mac_count), static_cast<double>(optimized.cost.mac_count))},
        {"param_count", ratio(static_cast<double>(baseline.cost.param_count), static_cast<double>(optimized.cost.param_count))},
        {"bytes", ratio(static_cast<double>(baseline.cost.bytes), static_cast<double>(optimized.cost.bytes))},
        {"wall_ms", ratio(baseline.wall_ms, optimized.wall_ms)}}},
      {"plan_summary",
       {{"skipped", plan.skiplist().size()}, {"approximated", plan.approxlist().size()}, {"by_variant", by_variant}}},
      {"decision_log", "decisions.jsonl"},
      {"layer_histogram", histogram},
      {"thresholds", transapprox::to_json(thresholds)},
      {"evaluations", evaluations},
      {"analysis_ms", analysis_ms},
      {"final_epoch_losses", final_epoch_losses},
      {"warnings", warnings},
      {"feasible", feasible},
  };
}

std::string decisions_jsonl(const std::vector<Decision>& decisions) {
  std::string out;
  for (const auto& d : decisions) out += d.to_json().dump() + "\n";
  return out;
}

void write_artifacts(const RunReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_text(dir / "config.json", to_json(report.config).dump(2) + "\n");
  write_text(dir / "plan.json", report.plan.to_json().dump(2) + "\n");
  write_text(dir / "decisions.jsonl", decisions_jsonl(report.decisions));
  write_text(dir / "elements.json", report.elements.dump(2) + "\n");
  write_text(dir / "report.json", report.to_json().dump(2) + "\n");
  save_checkpoint(report.optimized_model, dir);
}

Dataset make_dataset(const ExperimentConfig& config) { return generate_task(config.task); }

TransformerModel train_baseline(const ExperimentConfig& config, const Dataset& data) {
  Rng init = stream(config.seed, kInit);
  TransformerModel model = build_model(config.model, init);
  model.seed = init.seed();
  Rng rng = stream(config.seed, kBaseline);
  train_epochs(model, ApproxPlan{}, data.train, config.epochs.baseline, config.training, rng);
  return model;
}

RunReport run_experiment(const ExperimentConfig& config, const TransformerModel* pretrained,
                         const std::optional<std::filesystem::path>& artifacts) {
  config.validate();
  if (artifacts) {
    std::filesystem::create_directories(*artifacts);
    write_text(*artifacts / "config.json", to_json(config).dump(2) + "\n");
  }
  RunReport report;
  report.config = config;
  const Dataset data = stage("data", [&] { return make_dataset(config); });
  const TransformerModel baseline = stage("baseline", [&] {
    if (pretrained) {
      if (!(pretrained->config == config.model)) throw ConfigError("pretrained model config differs from the experiment");
      return pretrained->clone();
    }
    return train_baseline(config, data);
  });
  report.baseline = stage("baseline metrics", [&] { return measure(baseline, ApproxPlan{}, data, config.latency_repeats); });

  QueueOptions queue_options{config.analysis.layer_order, config.analysis.flat};
  AnalysisOutcome analysis =
      stage("analysis", [&] { return analyse(config, baseline, data, queue_options, config.analysis.encompass); });
  report.plan = analysis.greedy.plan;
  report.decisions = analysis.greedy.decisions;
  report.elements = analysis.greedy.queue.to_json();
  report.thresholds = analysis.thresholds;
  report.warnings = analysis.greedy.warnings;
  report.evaluations = analysis.greedy.evaluations;
  report.analysis_ms = analysis.analysis_ms;
  if (artifacts) {
    write_text(*artifacts / "plan.json", report.plan.to_json().dump(2) + "\n");
    write_text(*artifacts / "decisions.jsonl", decisions_jsonl(report.decisions));
    write_text(*artifacts / "elements.json", report.elements.dump(2) + "\n");
  }

  report.optimized_model = stage("final fine-tune", [&] {
    return finetune_best(config, analysis.greedy.model, report.plan, data, report.final_epoch_losses);
  });
  report.optimized = stage("metrics", [&] {
    return measure(report.optimized_model, report.plan, data, config.latency_repeats);
  });
  if (config.focus.focus == Focus::accuracy) {
    report.feasible = report.optimized.loss <= report.baseline.loss;
  } else {
    report.feasible =
        report.optimized.accuracy >= (1 - config.focus.acceptable_degradation) * report.baseline.accuracy - 1e-12;
  }
  if (artifacts) write_artifacts(report, *artifacts);
  return report;
}

const ComparisonRow& Comparison::row(const std::string& method) const {
  for (const auto& r : rows) {
    if (r.method == method) return r;
  }
  throw std::out_of_range("no comparison row '" + method + "'");
}

nlohmann::json Comparison::to_json() const {
  auto out = nlohmann::json::array();
  for (const auto& r : rows) {
    out.push_back({{"method", r.method},
                   {"final_loss", r.final_loss},
                   {"accuracy", r.accuracy},
                   {"mac_count", r.cost.mac_count},
                   {"param_count", r.cost.param_count},
                   {"bytes", r.cost.bytes},
                   {"analysis_ms", r.analysis_ms},
                   {"evaluations", r.evaluations},
                   {"removed", r.removed}});
  }
  return {{"baseline", baseline.to_json()}, {"rows", out}};
}

namespace {

/// Skips the `count` lowest-ranked elements that still form a valid plan.
/// Skipped elements plus the weight groups outside every shrink interval.
std::size_t removed_elements(const TransformerConfig& config, const ApproxPlan& plan) {
  std::size_t removed = plan.skiplist().size();
  for (const auto& [e, p] : plan.approxlist()) {
    if (const auto* s = std::get_if<params::GroupShrink>(&p)) {
      removed += static_cast<std::size_t>(config.num_weight_groups() - (s->hi - s->lo));
    }
  }
  return removed;
}

ApproxPlan prune_lowest(const TransformerConfig& config, const std::map<TransElement, double>& scores,
                        std::size_t count) {
  std::vector<std::pair<double, TransElement>> ranked;
  for (const auto& [e, s] : scores) ranked.emplace_back(s, e);
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  ApproxPlan plan;
  for (const auto& [s, e] : ranked) {
    if (plan.skiplist().size() == count) break;
    ApproxPlan candidate = plan;
    candidate.skip(e);
    try {
      layout_plan(config, candidate);
    } catch (const PlanError&) {
      continue;
    }
    plan = std::move(candidate);
  }
  return plan;
}

ComparisonRow ranked_row(const std::string& method, const TransformerModel& model, const Dataset& data,
                         const ApproxPlan& plan, double analysis_ms, int evaluations) {
  const EvalResult r = evaluate(model, plan, data.validation);
  return {method, r.loss, r.accuracy, cost(model, plan), analysis_ms, evaluations, plan.skiplist().size()};
}

}  // namespace

Comparison compare_baselines(const ExperimentConfig& config) {
  config.validate();
  const int element_count = static_cast<int>(enumerate_elements(config.model).size());
  if (element_count > config.comparators.oracle_limit) {
    throw ConfigError("compare-baselines needs a tiny model: " + std::to_string(element_count) +
                      " elements exceed comparators.oracle_limit " + std::to_string(config.comparators.oracle_limit));
  }
  const Dataset data = make_dataset(config);
  const TransformerModel baseline = train_baseline(config, data);
  Comparison out;
  out.baseline = measure(baseline, ApproxPlan{}, data, config.latency_repeats);

  auto greedy_row = [&](const std::string& method, bool flat) {
    AnalysisOutcome a = analyse(config, baseline, data, {config.analysis.layer_order, flat}, !flat);
    std::vector<double> losses;
    const TransformerModel tuned = finetune_best(config, a.greedy.model, a.greedy.plan, data, losses);
    const EvalResult r = evaluate(tuned, a.greedy.plan, data.validation);
    return ComparisonRow{method,       r.loss, r.accuracy, cost(tuned, a.greedy.plan), a.analysis_ms,
                         a.greedy.evaluations, removed_elements(config.model, a.greedy.plan)};
  };
  // The ranked comparators remove as many elements as heuristic greedy removed.
  ComparisonRow heuristic = greedy_row("greedy_heuristic", false);
  const std::size_t budget = heuristic.removed;
  if (config.comparators.greedy_heuristic) out.rows.push_back(heuristic);
  if (config.comparators.greedy_plain) out.rows.push_back(greedy_row("greedy_plain", true));
  if (config.comparators.oracle) {
    const auto start = std::chrono::steady_clock::now();
    const auto scores = oracle_significance(baseline, data, enumerate_elements(config.model),
                                            static_cast<std::size_t>(config.comparators.oracle_limit));
    const ApproxPlan plan = prune_lowest(config.model, scores, budget);
    out.rows.push_back(ranked_row("oracle", baseline, data, plan, elapsed_ms(start), static_cast<int>(scores.size())));
  }
  if (config.comparators.taylor) {
    const auto start = std::chrono::steady_clock::now();
    const auto scores = taylor_significance(baseline, data);
    const ApproxPlan plan = prune_lowest(config.model, scores, budget);
    out.rows.push_back(ranked_row("taylor", baseline, data, plan, elapsed_ms(start), 1));
  }
  return out;
}

std::vector<SweepRow> sweep_thresholds(const ExperimentConfig& config,
                                       const std::vector<std::pair<double, double>>& epsilons, int jobs) {
  if (epsilons.empty()) throw ConfigError("sweep needs at least one epsilon pair");
  if (jobs < 1) throw ConfigError("sweep needs jobs >= 1");
  auto run_one = [config](std::pair<double, double> eps) {
    ExperimentConfig c = config;
    c.thresholds.eps_skip = eps.first;
    c.thresholds.eps_approx = eps.second;
    const RunReport r = run_experiment(c);
    return SweepRow{eps.first, eps.second, r.optimized.accuracy,
                    ratio(static_cast<double>(r.baseline.cost.mac_count), static_cast<double>(r.optimized.cost.mac_count)),
                    ratio(static_cast<double>(r.baseline.cost.bytes), static_cast<double>(r.optimized.cost.bytes))};
  };
  for (const auto& [s, a] : epsilons) {
    if (s < 0 || a < s) throw ConfigError("sweep epsilon pairs need 0 <= eps_skip <= eps_approx");
  }
  std::vector<SweepRow> rows(epsilons.size());
  for (std::size_t begin = 0; begin < epsilons.size(); begin += static_cast<std::size_t>(jobs)) {
    const std::size_t end = std::min(epsilons.size(), begin + static_cast<std::size_t>(jobs));
    std::vector<std::future<SweepRow>> running;
    for (std::size_t i = begin; i < end; ++i) running.push_back(std::async(std::launch::async, run_one, epsilons[i]));
    for (std::size_t i = begin; i < end; ++i) rows[i] = running[i - begin].get();
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  // Shortest round-trip representation of each value.
  auto field = [](double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
  };
  std::string out = "eps_skip,eps_approx,accuracy,mac_ratio,bytes_ratio\n";
  for (const auto& r : rows) {
    out += field(r.eps_skip) + ',' + field(r.eps_approx) + ',' + field(r.accuracy) + ',' + field(r.mac_ratio) + ',' +
           field(r.bytes_ratio) + '\n';
  }
  return out;
}

}  // namespace transapprox
