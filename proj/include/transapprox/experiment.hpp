#pragma once

#include "transapprox/config.hpp"
#include "transapprox/cost.hpp"
#include "transapprox/dataset.hpp"
#include "transapprox/elements.hpp"
#include "transapprox/focus.hpp"
#include "transapprox/model.hpp"
#include "transapprox/plan.hpp"
#include "transapprox/significance.hpp"
#include "transapprox/tasks.hpp"
#include "transapprox/training.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace transapprox {

struct EpochCounts {
  int baseline = 8;
  int per_candidate = 1;
  int final = 8;
};

struct AnalysisOptions {
  bool train_loss_only = false;
  int sign_match_k = 0;
  int quant_bits = 8;
  LayerOrder layer_order = LayerOrder::last_to_first;
  bool flat = false;
  bool encompass = true;
};

struct ComparatorFlags {
  bool greedy_heuristic = true;
  bool greedy_plain = true;
  bool oracle = true;
  bool taylor = true;
  int oracle_limit = 256;
};

struct ExperimentConfig {
  TransformerConfig model;
  TaskSpec task;
  FocusMode focus;
  ThresholdOptions thresholds;
  EpochCounts epochs;
  TrainOptions training;
  AnalysisOptions analysis;
  ComparatorFlags comparators;
  std::uint64_t seed = 1;
  int latency_repeats = 5;

  /// Copies task-derived fields into the model config and checks consistency.
  void finalize();
  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& config);
/// Parses a full or partial document over the defaults; unknown keys are errors.
ExperimentConfig experiment_from_json(const nlohmann::json& j);
/// Applies "a.b.c=value" to `doc`. The value is parsed as JSON when possible
/// and taken as a string otherwise.
void apply_override(nlohmann::json& doc, const std::string& assignment);

struct Metrics {
  double loss = 0;        // validation
  double train_loss = 0;  // full training-split evaluation
  double accuracy = 0;    // validation exact match
  std::optional<double> perplexity;
  CostModel cost;
  double wall_ms = 0;

  nlohmann::json to_json() const;
};

Metrics measure(const TransformerModel& model, const ApproxPlan& plan, const Dataset& data, int latency_repeats);

struct RunReport {
  ExperimentConfig config;
  Metrics baseline;
  Metrics optimized;
  ApproxPlan plan;
  std::vector<Decision> decisions;
  nlohmann::json elements;
  SplitThresholds thresholds;
  std::vector<std::string> warnings;
  std::vector<double> final_epoch_losses;
  int evaluations = 0;
  double analysis_ms = 0;
  bool feasible = true;
  TransformerModel optimized_model;

  /// Layer -> (skipped, approximated) entry counts.
  std::vector<std::pair<int, int>> layer_histogram() const;
  nlohmann::json to_json() const;
};

/// Writes config.json, report.json, plan.json, decisions.jsonl, elements.json and
/// the optimized checkpoint into `dir`.
void write_artifacts(const RunReport& report, const std::filesystem::path& dir);

std::string decisions_jsonl(const std::vector<Decision>& decisions);

Dataset make_dataset(const ExperimentConfig& config);

/// Builds and fine-tunes the unmodified model.
TransformerModel train_baseline(const ExperimentConfig& config, const Dataset& data);

/// Baseline fine-tune (skipped when `pretrained` is given), thresholds, queue
/// ordering, greedy analysis and final fine-tune. When `artifacts` is set,
/// config.json is written first and every later artifact as soon as it exists.
RunReport run_experiment(const ExperimentConfig& config, const TransformerModel* pretrained = nullptr,
                         const std::optional<std::filesystem::path>& artifacts = std::nullopt);

struct ComparisonRow {
  std::string method;  // greedy_heuristic | greedy_plain | oracle | taylor
  double final_loss = 0;
  double accuracy = 0;
  CostModel cost;
  double analysis_ms = 0;
  int evaluations = 0;
  std::size_t removed = 0;
};

struct Comparison {
  Metrics baseline;
  std::vector<ComparisonRow> rows;

  const ComparisonRow& row(const std::string& method) const;
  nlohmann::json to_json() const;
};

/// Heuristic greedy, flat greedy without encompass filtering, and oracle / Taylor
/// ranked pruning of as many elements as heuristic greedy removed (skipped
/// elements plus groups dropped by shrinking), without fine-tuning.
Comparison compare_baselines(const ExperimentConfig& config);

struct SweepRow {
  double eps_skip = 0;
  double eps_approx = 0;
  double accuracy = 0;
  double mac_ratio = 0;
  double bytes_ratio = 0;
};

/// One isolated experiment per (eps_skip, eps_approx) pair, `jobs` at a time.
std::vector<SweepRow> sweep_thresholds(const ExperimentConfig& config,
                                       const std::vector<std::pair<double, double>>& epsilons, int jobs = 1);
std::string sweep_csv(const std::vector<SweepRow>& rows);

}  // namespace transapprox
