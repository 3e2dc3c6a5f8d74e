#pragma once

#include "transapprox/config.hpp"
#include "transapprox/dataset.hpp"

#include <cstdint>
#include <string>

namespace transapprox {

enum class TaskFamily { majority, parity, copy, toy_lm };

std::string to_string(TaskFamily family);
TaskFamily parse_task_family(const std::string& s);

/// Synthetic task description. Token ids stay below vocab_size - 1, which is
/// reserved for padding.
struct TaskSpec {
  TaskFamily family = TaskFamily::majority;
  int vocab_size = 5;
  int context_len = 16;
  /// Examples generated before the validation split.
  int train_size = 256;
  double val_fraction = 0.10;
  std::uint64_t seed = 7;

  void validate() const;
};

/// Task kind and output width the model needs for `family`.
TaskKind task_kind_of(TaskFamily family);
int num_classes_of(const TaskSpec& spec);

/// Deterministic in `spec`. The last round(val_fraction * train_size) examples
/// form the validation split.
Dataset generate_task(const TaskSpec& spec);

/// Ground-truth label of a majority sequence: its unique most frequent token.
int majority_label(const std::vector<int>& tokens);

}  // namespace transapprox
