#pragma once

#include <stdexcept>
#include <string>

namespace transapprox {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class TaskKind { classification, language_model, copy };

std::string to_string(TaskKind kind);
TaskKind parse_task_kind(const std::string& s);

struct TransformerConfig {
  int num_layers = 2;
  int hidden_dim = 8;
  int num_heads = 2;
  int ffn_dim = 16;
  int context_len = 16;
  int vocab_size = 11;
  bool autoregressive = false;
  int weight_group_width = 4;
  int kv_group_width = 4;
  TaskKind task_kind = TaskKind::classification;
  /// Output classes for classification; 0 means vocab_size.
  int num_classes = 0;

  void validate() const;

  int head_dim() const { return hidden_dim / num_heads; }
  int num_weight_groups() const { return hidden_dim / weight_group_width; }
  int num_kv_groups() const { return context_len / kv_group_width; }
  int output_dim() const;
  bool causal() const { return autoregressive; }

  bool operator==(const TransformerConfig&) const = default;
};

}  // namespace transapprox
