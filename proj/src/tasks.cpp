#include "transapprox/tasks.hpp"

#include "transapprox/rng.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace transapprox {

std::string to_string(TaskFamily family) {
  switch (family) {
    case TaskFamily::majority: return "majority";
    case TaskFamily::parity: return "parity";
    case TaskFamily::copy: return "copy";
    case TaskFamily::toy_lm: return "toy_lm";
  }
  return "?";
}

TaskFamily parse_task_family(const std::string& s) {
  for (auto f : {TaskFamily::majority, TaskFamily::parity, TaskFamily::copy, TaskFamily::toy_lm}) {
    if (to_string(f) == s) return f;
  }
  throw ConfigError("unknown task '" + s + "' (expected majority, parity, copy or toy_lm)");
}

TaskKind task_kind_of(TaskFamily family) {
  switch (family) {
    case TaskFamily::majority:
    case TaskFamily::parity: return TaskKind::classification;
    case TaskFamily::copy: return TaskKind::copy;
    case TaskFamily::toy_lm: return TaskKind::language_model;
  }
  return TaskKind::classification;
}

int num_classes_of(const TaskSpec& spec) {
  switch (spec.family) {
    case TaskFamily::majority: return spec.vocab_size - 1;
    case TaskFamily::parity: return 2;
    default: return 0;
  }
}

void TaskSpec::validate() const {
  const int symbols = vocab_size - 1;
  if (symbols < 2) throw ConfigError("task needs at least 2 symbols besides padding");
  if (family == TaskFamily::majority && context_len < 2) throw ConfigError("majority needs context_len >= 2");
  if (family == TaskFamily::copy && context_len < 4) throw ConfigError("copy needs context_len >= 4");
  if (val_fraction <= 0 || val_fraction >= 1) throw ConfigError("val_fraction must lie in (0, 1)");
  const auto val = static_cast<int>(std::lround(val_fraction * train_size));
  if (val < 1 || train_size - val < 1) {
    throw ConfigError("train_size " + std::to_string(train_size) + " too small to split");
  }
}

int majority_label(const std::vector<int>& tokens) {
  std::map<int, int> counts;
  for (int t : tokens) ++counts[t];
  int best = -1, best_count = 0;
  bool tie = false;
  for (auto [tok, c] : counts) {
    if (c > best_count) {
      best = tok;
      best_count = c;
      tie = false;
    } else if (c == best_count) {
      tie = true;
    }
  }
  if (tie) throw std::invalid_argument("majority_label: no unique mode");
  return best;
}

namespace {

int margin_of_mode(const std::vector<int>& tokens, int symbols) {
  std::vector<int> counts(static_cast<std::size_t>(symbols), 0);
  for (int t : tokens) ++counts[static_cast<std::size_t>(t)];
  std::sort(counts.rbegin(), counts.rend());
  return counts[0] - counts[1];
}

Example majority_example(const TaskSpec& spec, Rng& rng) {
  const int symbols = spec.vocab_size - 1;
  // A 2-token margin keeps the label stable and the task learnable exactly.
  for (;;) {
    Example ex;
    for (int t = 0; t < spec.context_len; ++t) ex.tokens.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(symbols))));
    if (margin_of_mode(ex.tokens, symbols) >= 2) {
      ex.labels = {majority_label(ex.tokens)};
      return ex;
    }
  }
}

Example parity_example(const TaskSpec& spec, Rng& rng) {
  Example ex;
  int ones = 0;
  for (int t = 0; t < spec.context_len; ++t) {
    const int bit = static_cast<int>(rng.below(2));
    ones += bit;
    ex.tokens.push_back(bit);
  }
  ex.labels = {ones % 2};
  return ex;
}

Example copy_example(const TaskSpec& spec, Rng& rng) {
  const int symbols = spec.vocab_size - 1;
  const int half = spec.context_len / 2;
  Example ex;
  for (int t = 0; t < half; ++t) ex.tokens.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(symbols))));
  for (int t = half; t < spec.context_len; ++t) ex.tokens.push_back(ex.tokens[static_cast<std::size_t>(t - half)]);
  // Only positions whose successor is a copy carry a label.
  ex.labels.assign(static_cast<std::size_t>(spec.context_len), -1);
  for (int t = half - 1; t + 1 < spec.context_len; ++t) {
    ex.labels[static_cast<std::size_t>(t)] = ex.tokens[static_cast<std::size_t>(t + 1)];
  }
  return ex;
}

struct MarkovChain {
  std::vector<std::vector<double>> cumulative;  // per token, over successors
};

MarkovChain make_chain(int symbols, Rng& rng) {
  MarkovChain chain;
  for (int s = 0; s < symbols; ++s) {
    std::vector<double> w(static_cast<std::size_t>(symbols), 0.05);
    w[rng.below(static_cast<std::uint64_t>(symbols))] += 1.0;
    w[rng.below(static_cast<std::uint64_t>(symbols))] += 0.5;
    double total = 0;
    for (double& x : w) total += x;
    double acc = 0;
    for (double& x : w) x = (acc += x / total);
    chain.cumulative.push_back(std::move(w));
  }
  return chain;
}

Example lm_example(const TaskSpec& spec, const MarkovChain& chain, Rng& rng) {
  const int symbols = spec.vocab_size - 1;
  Example ex;
  ex.tokens.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(symbols))));
  while (static_cast<int>(ex.tokens.size()) < spec.context_len) {
    const auto& cdf = chain.cumulative[static_cast<std::size_t>(ex.tokens.back())];
    const double u = rng.uniform();
    const auto next = std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin();
    ex.tokens.push_back(static_cast<int>(std::min<std::ptrdiff_t>(next, symbols - 1)));
  }
  ex.labels.assign(static_cast<std::size_t>(spec.context_len), -1);
  for (int t = 0; t + 1 < spec.context_len; ++t) {
    ex.labels[static_cast<std::size_t>(t)] = ex.tokens[static_cast<std::size_t>(t + 1)];
  }
  return ex;
}

}  // namespace

Dataset generate_task(const TaskSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const MarkovChain chain = spec.family == TaskFamily::toy_lm ? make_chain(spec.vocab_size - 1, rng) : MarkovChain{};
  std::vector<Example> all;
  for (int i = 0; i < spec.train_size; ++i) {
    switch (spec.family) {
      case TaskFamily::majority: all.push_back(majority_example(spec, rng)); break;
      case TaskFamily::parity: all.push_back(parity_example(spec, rng)); break;
      case TaskFamily::copy: all.push_back(copy_example(spec, rng)); break;
      case TaskFamily::toy_lm: all.push_back(lm_example(spec, chain, rng)); break;
    }
  }
  const auto val = static_cast<std::size_t>(std::lround(spec.val_fraction * spec.train_size));
  Dataset out;
  out.train.assign(all.begin(), all.end() - static_cast<std::ptrdiff_t>(val));
  out.validation.assign(all.end() - static_cast<std::ptrdiff_t>(val), all.end());
  return out;
}

}  // namespace transapprox
