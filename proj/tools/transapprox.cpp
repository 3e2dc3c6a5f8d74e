#include "transapprox/checkpoint.hpp"
#include "transapprox/experiment.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

using namespace transapprox;
namespace fs = std::filesystem;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitInfeasible = 3;

struct CommonArgs {
  std::string config_path;
  std::string out_dir = "run";
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "Experiment config JSON");
  cmd->add_option("--out", args.out_dir, "Output directory")->capture_default_str();
  cmd->add_option("--set", args.overrides, "Override a config field: path.to.field=value");
  cmd->add_option("--seed", args.seed, "Experiment seed");
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot read " + p.string());
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError(p.string() + " is not valid JSON");
  return j;
}

ExperimentConfig load_config(const CommonArgs& args, nlohmann::json doc = nlohmann::json::object()) {
  nlohmann::json base = args.config_path.empty() ? nlohmann::json::object() : read_json(args.config_path);
  for (const auto& [key, value] : doc.items()) base[nlohmann::json::json_pointer(key)] = value;
  if (args.seed) base["seed"] = *args.seed;
  for (const auto& o : args.overrides) apply_override(base, o);
  return experiment_from_json(base);
}

void write_file(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path().empty() ? fs::path(".") : p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
}

/// "s" or "s:a"; the approximation slack defaults to twice the skip slack.
std::pair<double, double> parse_eps_pair(const std::string& text) {
  try {
    const auto colon = text.find(':');
    const double skip = std::stod(text.substr(0, colon));
    const double approx = colon == std::string::npos ? 2 * skip : std::stod(text.substr(colon + 1));
    return {skip, approx};
  } catch (const std::exception&) {
    throw ConfigError("bad epsilon '" + text + "' (expected eps_skip or eps_skip:eps_approx)");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Greedy significance analysis and approximation of small transformers"};
  app.require_subcommand(1);

  CommonArgs train_args, opt_args, eval_args, cmp_args, sweep_args;

  auto* train = app.add_subcommand("train", "Fine-tune the unmodified model and write a checkpoint");
  add_common(train, train_args);

  auto* optimize = app.add_subcommand("optimize", "Run significance analysis and write the optimized model");
  add_common(optimize, opt_args);
  std::string focus;
  std::optional<double> max_degradation, eps_skip, eps_approx;
  std::optional<int> epochs_candidate;
  bool train_loss_only = false;
  std::string model_dir;
  optimize->add_option("--focus", focus, "speed | size | accuracy")
      ->check(CLI::IsMember({"speed", "size", "accuracy"}));
  optimize->add_option("--max-degradation", max_degradation, "Acceptable relative degradation");
  optimize->add_option("--eps-skip", eps_skip, "Relative slack of the skip threshold");
  optimize->add_option("--eps-approx", eps_approx, "Relative slack of the approximation threshold");
  optimize->add_option("--epochs-candidate", epochs_candidate, "Fine-tuning epochs per candidate");
  optimize->add_flag("--train-loss-only", train_loss_only, "Decide on training loss alone");
  optimize->add_option("--model", model_dir, "Start from this checkpoint instead of training a baseline");

  auto* evaluate_cmd = app.add_subcommand("evaluate", "Evaluate a checkpoint, optionally under a plan");
  add_common(evaluate_cmd, eval_args);
  std::string eval_model, eval_plan;
  evaluate_cmd->add_option("--model", eval_model, "Checkpoint directory")->required();
  evaluate_cmd->add_option("--plan", eval_plan, "plan.json to apply");

  auto* compare = app.add_subcommand("compare-baselines", "Compare greedy analysis with oracle and Taylor pruning");
  add_common(compare, cmp_args);

  auto* sweep = app.add_subcommand("sweep", "Run one experiment per threshold slack pair");
  add_common(sweep, sweep_args);
  std::vector<std::string> eps_list;
  int jobs = 1;
  sweep->add_option("--eps", eps_list, "eps_skip[:eps_approx], repeatable")->required();
  sweep->add_option("--jobs", jobs, "Parallel experiments")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*train) {
      const ExperimentConfig config = load_config(train_args);
      const Dataset data = make_dataset(config);
      const TransformerModel model = train_baseline(config, data);
      const fs::path out = train_args.out_dir;
      fs::create_directories(out);
      write_file(out / "config.json", to_json(config).dump(2) + "\n");
      save_checkpoint(model, out);
      const Metrics m = measure(model, ApproxPlan{}, data, config.latency_repeats);
      write_file(out / "report.json", nlohmann::json{{"baseline", m.to_json()}}.dump(2) + "\n");
      std::cout << m.to_json().dump(2) << "\n";
    } else if (*optimize) {
      nlohmann::json doc = nlohmann::json::object();
      if (!focus.empty()) doc["/focus/mode"] = focus;
      if (max_degradation) doc["/focus/max_degradation"] = *max_degradation;
      if (eps_skip) doc["/thresholds/eps_skip"] = *eps_skip;
      if (eps_approx) doc["/thresholds/eps_approx"] = *eps_approx;
      if (epochs_candidate) doc["/epochs/per_candidate"] = *epochs_candidate;
      if (train_loss_only) doc["/analysis/train_loss_only"] = true;
      const ExperimentConfig config = load_config(opt_args, doc);
      std::optional<TransformerModel> pretrained;
      if (!model_dir.empty()) pretrained = load_checkpoint(model_dir);
      const RunReport report =
          run_experiment(config, pretrained ? &*pretrained : nullptr, fs::path(opt_args.out_dir));
      const auto j = report.to_json();
      std::cout << nlohmann::json{{"baseline", j["baseline"]}, {"optimized", j["optimized"]}, {"ratios", j["ratios"]},
                                  {"plan_summary", j["plan_summary"]}, {"feasible", j["feasible"]}}
                       .dump(2)
                << "\n";
      if (!report.feasible) {
        std::cerr << "optimized model violates the accuracy constraint; artifacts kept in " << opt_args.out_dir << "\n";
        return kExitInfeasible;
      }
    } else if (*evaluate_cmd) {
      const TransformerModel model = load_checkpoint(eval_model);
      nlohmann::json doc = nlohmann::json::object();
      if (eval_args.config_path.empty()) doc["/model"] = to_json(model.config);
      ExperimentConfig config = load_config(eval_args, doc);
      if (!(config.model == model.config)) throw ConfigError("checkpoint config differs from the experiment config");
      const ApproxPlan plan = eval_plan.empty() ? ApproxPlan{} : ApproxPlan::from_json(read_json(eval_plan));
      const Metrics m = measure(model, plan, make_dataset(config), config.latency_repeats);
      std::cout << m.to_json().dump(2) << "\n";
    } else if (*compare) {
      const ExperimentConfig config = load_config(cmp_args);
      const Comparison c = compare_baselines(config);
      write_file(fs::path(cmp_args.out_dir) / "comparison.json", c.to_json().dump(2) + "\n");
      std::cout << c.to_json().dump(2) << "\n";
    } else if (*sweep) {
      const ExperimentConfig config = load_config(sweep_args);
      std::vector<std::pair<double, double>> eps;
      for (const auto& e : eps_list) eps.push_back(parse_eps_pair(e));
      const std::string csv = sweep_csv(sweep_thresholds(config, eps, jobs));
      write_file(fs::path(sweep_args.out_dir) / "sweep.csv", csv);
      std::cout << csv;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const PlanError& e) {
    std::cerr << "plan error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const InfeasibleError& e) {
    std::cerr << "infeasible: " << e.what() << "\n";
    return kExitInfeasible;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
