#include "transapprox/config.hpp"
#include "transapprox/focus.hpp"

namespace transapprox {

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::classification: return "classification";
    case TaskKind::language_model: return "language_model";
    case TaskKind::copy: return "copy";
  }
  return "?";
}

TaskKind parse_task_kind(const std::string& s) {
  if (s == "classification") return TaskKind::classification;
  if (s == "language_model") return TaskKind::language_model;
  if (s == "copy") return TaskKind::copy;
  throw ConfigError("unknown task kind '" + s + "'");
}

std::string to_string(Focus focus) {
  switch (focus) {
    case Focus::speed: return "speed";
    case Focus::size: return "size";
    case Focus::accuracy: return "accuracy";
  }
  return "?";
}

Focus parse_focus(const std::string& s) {
  if (s == "speed") return Focus::speed;
  if (s == "size") return Focus::size;
  if (s == "accuracy") return Focus::accuracy;
  throw ConfigError("unknown focus '" + s + "' (expected speed, size or accuracy)");
}

int TransformerConfig::output_dim() const {
  if (task_kind == TaskKind::classification) return num_classes > 0 ? num_classes : vocab_size;
  return vocab_size;
}

void TransformerConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v < 1) throw ConfigError(std::string(name) + " must be >= 1");
  };
  if (num_layers < 0) throw ConfigError("num_layers must be >= 0");
  positive(hidden_dim, "hidden_dim");
  positive(num_heads, "num_heads");
  positive(ffn_dim, "ffn_dim");
  positive(context_len, "context_len");
  positive(vocab_size, "vocab_size");
  positive(weight_group_width, "weight_group_width");
  positive(kv_group_width, "kv_group_width");
  if (hidden_dim % num_heads != 0) throw ConfigError("d not divisible by h");
  if (hidden_dim % weight_group_width != 0) throw ConfigError("d not divisible by W");
  if (context_len % kv_group_width != 0) throw ConfigError("n not divisible by W_pos");
  if (num_classes < 0) throw ConfigError("num_classes must be >= 0");
  if (task_kind != TaskKind::classification && !autoregressive) {
    throw ConfigError("language_model and copy tasks require autoregressive = true");
  }
}

}  // namespace transapprox
