#include "doctest.h"

#include "transapprox/checkpoint.hpp"
#include "transapprox/experiment.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace transapprox;
namespace fs = std::filesystem;

namespace {

nlohmann::json tiny_doc() {
  return nlohmann::json::parse(R"({
    "model": {"num_layers": 2, "hidden_dim": 8, "num_heads": 2, "ffn_dim": 16, "context_len": 8,
              "vocab_size": 4, "weight_group_width": 4, "kv_group_width": 4},
    "task": {"family": "majority", "train_size": 120},
    "epochs": {"baseline": 4, "per_candidate": 1, "final": 1},
    "focus": {"mode": "speed", "max_degradation": 0.05},
    "latency_repeats": 3
  })");
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("synthetic tasks have well-formed labels") {
  for (auto family : {TaskFamily::majority, TaskFamily::parity, TaskFamily::copy, TaskFamily::toy_lm}) {
    TaskSpec spec;
    spec.family = family;
    spec.vocab_size = 6;
    spec.context_len = 8;
    spec.train_size = 50;
    spec.val_fraction = 0.2;
    const Dataset d = generate_task(spec);
    CHECK(d.train.size() == 40);
    CHECK(d.validation.size() == 10);
    CHECK(generate_task(spec).train == d.train);
    spec.seed += 1;
    CHECK_FALSE(generate_task(spec).train == d.train);

    for (const auto* split : {&d.train, &d.validation}) {
      for (const auto& ex : *split) {
        REQUIRE(ex.tokens.size() == 8);
        for (int t : ex.tokens) CHECK((t >= 0 && t < spec.vocab_size - 1));
        switch (family) {
          case TaskFamily::majority: {
            REQUIRE(ex.labels.size() == 1);
            std::vector<int> counts(5, 0);
            for (int t : ex.tokens) ++counts[static_cast<std::size_t>(t)];
            const int label = ex.labels[0];
            for (int s = 0; s < 5; ++s) {
              if (s != label) CHECK(counts[static_cast<std::size_t>(label)] >= counts[static_cast<std::size_t>(s)] + 2);
            }
            break;
          }
          case TaskFamily::parity: {
            int ones = 0;
            for (int t : ex.tokens) {
              CHECK(t <= 1);
              ones += t;
            }
            CHECK(ex.labels == std::vector<int>{ones % 2});
            break;
          }
          case TaskFamily::copy:
            for (int t = 0; t < 4; ++t) CHECK(ex.tokens[static_cast<std::size_t>(t + 4)] == ex.tokens[static_cast<std::size_t>(t)]);
            for (int t = 0; t < 8; ++t) {
              const int expected = t >= 3 && t < 7 ? ex.tokens[static_cast<std::size_t>(t + 1)] : -1;
              CHECK(ex.labels[static_cast<std::size_t>(t)] == expected);
            }
            break;
          case TaskFamily::toy_lm:
            for (int t = 0; t < 7; ++t) CHECK(ex.labels[static_cast<std::size_t>(t)] == ex.tokens[static_cast<std::size_t>(t + 1)]);
            CHECK(ex.labels[7] == -1);
            break;
        }
      }
    }
  }
  TaskSpec tiny;
  tiny.train_size = 2;
  CHECK_THROWS_AS(generate_task(tiny), ConfigError);
  CHECK(majority_label({1, 2, 2, 0}) == 2);
  CHECK_THROWS(majority_label({1, 2}));
  CHECK_THROWS_AS(parse_task_family("sorting"), ConfigError);
}

TEST_CASE("experiment configs parse, round-trip and reject unknown keys") {
  const ExperimentConfig c = experiment_from_json(tiny_doc());
  CHECK(c.model.num_classes == 3);
  CHECK(c.model.task_kind == TaskKind::classification);
  CHECK_FALSE(c.model.autoregressive);
  CHECK(c.task.vocab_size == 4);
  CHECK(to_json(experiment_from_json(to_json(c))) == to_json(c));
  CHECK_FALSE(c.thresholds.eps_skip.has_value());

  nlohmann::json lm = tiny_doc();
  lm["task"]["family"] = "toy_lm";
  const ExperimentConfig lc = experiment_from_json(lm);
  CHECK(lc.model.autoregressive);
  CHECK(lc.model.task_kind == TaskKind::language_model);

  nlohmann::json bad = tiny_doc();
  bad["model"]["hiden_dim"] = 8;
  CHECK_THROWS_AS(experiment_from_json(bad), ConfigError);
  nlohmann::json indivisible = tiny_doc();
  indivisible["model"]["hidden_dim"] = 7;
  CHECK_THROWS_AS(experiment_from_json(indivisible), ConfigError);
  nlohmann::json inverted = tiny_doc();
  inverted["thresholds"] = {{"eps_skip", 0.2}, {"eps_approx", 0.1}};
  CHECK_THROWS_AS(experiment_from_json(inverted), ConfigError);
}

TEST_CASE("overrides set nested fields") {
  nlohmann::json doc = tiny_doc();
  apply_override(doc, "focus.mode=size");
  apply_override(doc, "focus.max_degradation=0.25");
  apply_override(doc, "thresholds.eps_skip=0.1");
  apply_override(doc, "analysis.encompass=false");
  const ExperimentConfig c = experiment_from_json(doc);
  CHECK(c.focus.focus == Focus::size);
  CHECK(c.focus.acceptable_degradation == 0.25);
  CHECK(c.thresholds.eps_skip == 0.1);
  CHECK_FALSE(c.analysis.encompass);
  CHECK_THROWS_AS(apply_override(doc, "no_equals"), ConfigError);
  CHECK_THROWS_AS(apply_override(doc, "focus..mode=speed"), ConfigError);
}

TEST_CASE("a full run writes consistent artifacts") {
  const ExperimentConfig c = experiment_from_json(tiny_doc());
  const fs::path dir = fs::temp_directory_path() / "transapprox_harness_run";
  fs::remove_all(dir);
  const RunReport r = run_experiment(c, nullptr, dir);

  for (const char* f : {"config.json", "plan.json", "decisions.jsonl", "elements.json", "report.json", "model.json",
                        "model.bin"}) {
    CHECK(fs::exists(dir / f));
  }
  const auto report = nlohmann::json::parse(slurp(dir / "report.json"));
  CHECK(report["ratios"]["mac_count"].get<double>() ==
        doctest::Approx(static_cast<double>(r.baseline.cost.mac_count) / static_cast<double>(r.optimized.cost.mac_count)));
  CHECK(report["optimized"]["bytes"] == r.optimized.cost.bytes);
  CHECK(r.optimized.cost == cost(c.model, r.plan));
  CHECK(r.baseline.cost == cost(c.model, ApproxPlan{}));

  int skipped = 0, approximated = 0;
  for (const auto& [s, a] : r.layer_histogram()) {
    skipped += s;
    approximated += a;
  }
  CHECK(skipped == static_cast<int>(r.plan.skiplist().size()));
  CHECK(approximated == static_cast<int>(r.plan.approxlist().size()));

  const std::string log = slurp(dir / "decisions.jsonl");
  CHECK(static_cast<std::size_t>(std::count(log.begin(), log.end(), '\n')) == r.decisions.size());
  CHECK(ApproxPlan::from_json(nlohmann::json::parse(slurp(dir / "plan.json"))) == r.plan);

  const TransformerModel back = load_checkpoint(dir);
  CHECK(evaluate(back, r.plan, make_dataset(c).validation).loss == doctest::Approx(r.optimized.loss).epsilon(1e-12));
  CHECK(r.feasible == (r.optimized.accuracy >= (1 - 0.05) * r.baseline.accuracy - 1e-12));

  const RunReport again = run_experiment(c);
  CHECK(again.plan == r.plan);
  CHECK(decisions_jsonl(again.decisions) == decisions_jsonl(r.decisions));
  fs::remove_all(dir);
}

TEST_CASE("sweep rows render as CSV") {
  const std::vector<SweepRow> rows{{0.1, 0.2, 1.0, 1.5, 2.25}, {0.5, 1.0, 0.875, 3.0, 4.0}};
  CHECK(sweep_csv(rows) ==
        "eps_skip,eps_approx,accuracy,mac_ratio,bytes_ratio\n0.1,0.2,1,1.5,2.25\n0.5,1,0.875,3,4\n");
  const ExperimentConfig c = experiment_from_json(tiny_doc());
  CHECK_THROWS_AS(sweep_thresholds(c, {}), ConfigError);
  CHECK_THROWS_AS(sweep_thresholds(c, {{0.2, 0.1}}), ConfigError);
}
