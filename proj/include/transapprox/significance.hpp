#pragma once

#include "transapprox/dataset.hpp"
#include "transapprox/elements.hpp"
#include "transapprox/focus.hpp"
#include "transapprox/model.hpp"
#include "transapprox/plan.hpp"
#include "transapprox/rng.hpp"
#include "transapprox/training.hpp"

#include <json.hpp>

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace transapprox {

/// Raised when a run cannot meet its constraints (e.g. a nonpositive baseline loss).
class InfeasibleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Loss bounds for one data split. skip <= approx always; min_loss_seen only
/// decreases and drives both bounds under accuracy focus.
struct Thresholds {
  double skip = 0;
  double approx = 0;
  double min_loss_seen = 0;
};

struct ThresholdOptions {
  /// Relative slack for skipping; defaults to the acceptable degradation.
  std::optional<double> eps_skip;
  /// Relative slack for approximating; defaults to twice the acceptable degradation.
  std::optional<double> eps_approx;
};

Thresholds compute_thresholds(double baseline_loss, const FocusMode& focus, const ThresholdOptions& options = {});

struct SplitThresholds {
  Thresholds train;
  Thresholds validation;
};

nlohmann::json to_json(const SplitThresholds& t);

struct CandidateLosses {
  double train_loss = 0;
  double val_loss = 0;
};

struct CandidateResult {
  CandidateLosses losses;
  TransformerModel model;  // the fine-tuned clone
};

/// Clones `model`, fine-tunes it under `candidate_plan` for `epochs` epochs and
/// reports the epoch-mean training loss (a full training-split evaluation when
/// epochs is 0) and the full validation loss. `model` is not modified.
CandidateResult evaluate_candidate(const TransformerModel& model, const ApproxPlan& candidate_plan,
                                   const Dataset& data, int epochs, const TrainOptions& train, Rng& rng);

SplitThresholds compute_split_thresholds(const CandidateLosses& baseline, const FocusMode& focus,
                                         const ThresholdOptions& options = {});

/// One record of the decision log.
struct Decision {
  TransElement element;
  std::string tentative_action;  // skip | sign_match | quantize | shrink
  double train_loss = 0;
  double val_loss = 0;
  SplitThresholds thresholds;
  std::string decision;  // skipped | approximated | approximable | kept | reverted | shrunk | infeasible

  nlohmann::json to_json() const;
};

struct GreedyOptions {
  int epochs_per_candidate = 1;
  TrainOptions train;
  /// Decide on the training split alone.
  bool train_loss_only = false;
  /// Drop finer elements of resolved blocks from the queue.
  bool encompass = true;
  /// Keys kept per query block under sign matching; 0 means context_len / 4.
  int sign_match_k = 0;
  int quant_bits = 8;
};

struct GreedyResult {
  ApproxPlan plan;
  TransformerModel model;  // working model after every accepted decision
  std::vector<Decision> decisions;
  ElementQueue queue;  // drained, with its removal log
  SplitThresholds thresholds;
  std::vector<std::string> warnings;
  int evaluations = 0;
};

GreedyResult greedy_significance(const TransformerModel& model, const Dataset& data, ElementQueue queue,
                                 const SplitThresholds& thresholds, const FocusMode& focus,
                                 const GreedyOptions& options, Rng& rng);

struct ShrinkResult {
  int lo = 0;
  int hi = 0;
  ApproxPlan plan;
  TransformerModel model;
  std::vector<Decision> decisions;
  int evaluations = 0;
};

/// Two-phase contiguous shrinking of the FFN or QKV weight groups of the block
/// containing `group`: drop groups from the bottom while the candidate passes,
/// then from the top. Every accepted step is adopted as the new working model.
/// The kept interval is [lo, hi); an unchanged block yields [0, groups).
ShrinkResult shrink_weight_groups(const TransformerModel& model, const ApproxPlan& plan, const Dataset& data,
                                  const TransElement& group, const SplitThresholds& thresholds,
                                  const FocusMode& focus, const GreedyOptions& options, Rng& rng);

/// Signed sum of weight * gradient over the parameters owned by `element`.
/// Requires gradients on the model's parameters.
double taylor_contribution(const TransformerModel& model, const TransElement& element);

/// |taylor_contribution| of every parameter-owning element after one full-batch
/// gradient evaluation on the training split. Position groups are excluded.
std::map<TransElement, double> taylor_significance(const TransformerModel& model, const Dataset& data);

/// Training loss with each element removed alone, without fine-tuning.
std::map<TransElement, double> oracle_significance(const TransformerModel& model, const Dataset& data,
                                                   const std::vector<TransElement>& elements,
                                                   std::size_t element_limit = 256);

struct FinetuneResult {
  TransformerModel model;
  std::vector<double> epoch_losses;
};

/// Trains the live parameters of a copy of `model` under the frozen `plan`.
FinetuneResult final_finetune(const TransformerModel& model, const ApproxPlan& plan, const Dataset& data,
                              int epochs, const TrainOptions& train, Rng& rng);

}  // namespace transapprox
