#include "transapprox/checkpoint.hpp"

#include "transapprox/rng.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <set>

namespace transapprox {

namespace {

constexpr const char* kFormat = "transapprox-checkpoint";
constexpr int kVersion = 1;

void put_f64(std::ostream& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  out.write(bytes, 8);
}

double get_f64(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

nlohmann::json to_json(const TransformerConfig& c) {
  return {{"num_layers", c.num_layers},
          {"hidden_dim", c.hidden_dim},
          {"num_heads", c.num_heads},
          {"ffn_dim", c.ffn_dim},
          {"context_len", c.context_len},
          {"vocab_size", c.vocab_size},
          {"autoregressive", c.autoregressive},
          {"weight_group_width", c.weight_group_width},
          {"kv_group_width", c.kv_group_width},
          {"task_kind", to_string(c.task_kind)},
          {"num_classes", c.num_classes}};
}

TransformerConfig config_from_json(const nlohmann::json& j, TransformerConfig c) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  static const std::set<std::string> known = {"num_layers",  "hidden_dim",         "num_heads",
                                              "ffn_dim",     "context_len",        "vocab_size",
                                              "autoregressive", "weight_group_width", "kv_group_width",
                                              "task_kind",   "num_classes"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown model field '" + key + "'");
  }
  try {
    auto read = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    read("num_layers", c.num_layers);
    read("hidden_dim", c.hidden_dim);
    read("num_heads", c.num_heads);
    read("ffn_dim", c.ffn_dim);
    read("context_len", c.context_len);
    read("vocab_size", c.vocab_size);
    read("autoregressive", c.autoregressive);
    read("weight_group_width", c.weight_group_width);
    read("kv_group_width", c.kv_group_width);
    read("num_classes", c.num_classes);
    if (j.contains("task_kind")) c.task_kind = parse_task_kind(j.at("task_kind").get<std::string>());
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("bad model config: ") + ex.what());
  }
  return c;
}

void save_checkpoint(const TransformerModel& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream bin(dir / "model.bin", std::ios::binary | std::ios::trunc);
  if (!bin) throw CheckpointError("cannot write " + (dir / "model.bin").string());
  auto tensors = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : model.named_parameters()) {
    const Matrix& v = t.value();
    for (double x : t.data()) put_f64(bin, x);
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}, {"count", v.size()}});
    offset += static_cast<std::uint64_t>(v.size()) * 8;
  }
  if (!bin) throw CheckpointError("failed writing " + (dir / "model.bin").string());
  nlohmann::json manifest = {{"format", kFormat},
                             {"version", kVersion},
                             {"config", to_json(model.config)},
                             {"seed", model.seed},
                             {"rng", Rng::kAlgorithm},
                             {"dtype", "float64"},
                             {"byte_order", "little"},
                             {"data_file", "model.bin"},
                             {"data_bytes", offset},
                             {"tensors", tensors}};
  std::ofstream(dir / "model.json") << manifest.dump(2) << "\n";
}

TransformerModel load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream js(dir / "model.json");
  if (!js) throw CheckpointError("cannot read " + (dir / "model.json").string());
  nlohmann::json manifest;
  try {
    js >> manifest;
  } catch (const nlohmann::json::exception& ex) {
    throw CheckpointError(std::string("malformed model.json: ") + ex.what());
  }
  if (manifest.value("format", "") != kFormat || manifest.value("version", 0) != kVersion) {
    throw CheckpointError("unsupported checkpoint format");
  }
  std::ifstream bin(dir / manifest.value("data_file", "model.bin"), std::ios::binary);
  if (!bin) throw CheckpointError("cannot read checkpoint data file");
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());

  const TransformerConfig config = config_from_json(manifest.at("config"));
  Rng rng(manifest.at("seed").get<std::uint64_t>());
  TransformerModel model = build_model(config, rng);
  auto params = model.named_parameters();
  const auto& entries = manifest.at("tensors");
  if (entries.size() != params.size()) throw CheckpointError("checkpoint tensor count does not match its config");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& [name, t] = params[i];
    const auto& e = entries[i];
    if (e.at("name").get<std::string>() != name || e.at("shape").get<Shape>() != t.shape()) {
      throw CheckpointError("checkpoint tensor " + e.at("name").get<std::string>() + " does not match " + name);
    }
    const auto offset = e.at("offset").get<std::uint64_t>();
    const auto count = e.at("count").get<std::uint64_t>();
    if (count != t.numel() || offset + count * 8 > bytes.size()) {
      throw CheckpointError("checkpoint data for " + name + " is truncated");
    }
    Matrix& v = t.mutable_value();
    for (std::uint64_t k = 0; k < count; ++k) v.data()[k] = get_f64(bytes.data() + offset + 8 * k);
  }
  return model;
}

}  // namespace transapprox
