#include "transapprox/elements.hpp"

#include "transapprox/cost.hpp"

#include <algorithm>
#include <set>

namespace transapprox {

std::string to_string(ElementKind kind) {
  switch (kind) {
    case ElementKind::FfnBlock: return "FfnBlock";
    case ElementKind::AttnBlock: return "AttnBlock";
    case ElementKind::Head: return "Head";
    case ElementKind::FfnWeightGroup: return "FfnWeightGroup";
    case ElementKind::QkvWeightGroup: return "QkvWeightGroup";
    case ElementKind::KvPositionGroup: return "KvPositionGroup";
  }
  return "?";
}

ElementKind parse_element_kind(const std::string& s) {
  for (auto k : {ElementKind::FfnBlock, ElementKind::AttnBlock, ElementKind::Head,
                 ElementKind::FfnWeightGroup, ElementKind::QkvWeightGroup, ElementKind::KvPositionGroup}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown element kind '" + s + "'");
}

Granularity TransElement::granularity() const {
  switch (kind) {
    case ElementKind::FfnBlock:
    case ElementKind::AttnBlock: return Granularity::block;
    case ElementKind::Head: return Granularity::head;
    default: return Granularity::group;
  }
}

TransElement TransElement::parent_block() const {
  switch (kind) {
    case ElementKind::FfnBlock:
    case ElementKind::FfnWeightGroup: return {ElementKind::FfnBlock, layer, 0};
    default: return {ElementKind::AttnBlock, layer, 0};
  }
}

bool TransElement::inside(const TransElement& block) const {
  return !is_block() && block.is_block() && parent_block() == block;
}

std::string TransElement::to_string() const {
  return transapprox::to_string(kind) + ":" + std::to_string(layer) + ":" + std::to_string(index);
}

TransElement TransElement::parse(const std::string& s) {
  const auto a = s.find(':');
  const auto b = a == std::string::npos ? a : s.find(':', a + 1);
  if (b == std::string::npos) throw ConfigError("malformed element '" + s + "' (expected kind:layer:index)");
  TransElement e;
  e.kind = parse_element_kind(s.substr(0, a));
  try {
    std::size_t used = 0;
    const std::string layer = s.substr(a + 1, b - a - 1), index = s.substr(b + 1);
    e.layer = std::stoi(layer, &used);
    if (used != layer.size()) throw std::invalid_argument(layer);
    e.index = std::stoi(index, &used);
    if (used != index.size()) throw std::invalid_argument(index);
  } catch (const std::logic_error&) {
    throw ConfigError("malformed element '" + s + "'");
  }
  return e;
}

void to_json(nlohmann::json& j, const TransElement& e) { j = e.to_string(); }
void from_json(const nlohmann::json& j, TransElement& e) { e = TransElement::parse(j.get<std::string>()); }

void check_element(const TransElement& e, const TransformerConfig& config) {
  auto fail = [&](const std::string& why) {
    throw ConfigError("element " + e.to_string() + " " + why);
  };
  if (e.layer < 0 || e.layer >= config.num_layers) fail("references a nonexistent layer");
  int limit = 1;
  switch (e.kind) {
    case ElementKind::FfnBlock:
    case ElementKind::AttnBlock: limit = 1; break;
    case ElementKind::Head: limit = config.num_heads; break;
    case ElementKind::FfnWeightGroup:
    case ElementKind::QkvWeightGroup: limit = config.num_weight_groups(); break;
    case ElementKind::KvPositionGroup: limit = config.num_kv_groups(); break;
  }
  if (e.index < 0 || e.index >= limit) fail("has index outside [0, " + std::to_string(limit) + ")");
}

std::vector<TransElement> enumerate_elements(const TransformerConfig& config) {
  config.validate();
  std::vector<TransElement> out;
  const int L = config.num_layers;
  for (int l = 0; l < L; ++l) {
    out.push_back({ElementKind::AttnBlock, l, 0});
    out.push_back({ElementKind::FfnBlock, l, 0});
  }
  for (int l = 0; l < L; ++l) {
    for (int h = 0; h < config.num_heads; ++h) out.push_back({ElementKind::Head, l, h});
  }
  for (int l = 0; l < L; ++l) {
    for (int g = 0; g < config.num_weight_groups(); ++g) out.push_back({ElementKind::FfnWeightGroup, l, g});
  }
  for (int l = 0; l < L; ++l) {
    for (int g = 0; g < config.num_weight_groups(); ++g) out.push_back({ElementKind::QkvWeightGroup, l, g});
  }
  for (int l = 0; l < L; ++l) {
    for (int g = 0; g < config.num_kv_groups(); ++g) out.push_back({ElementKind::KvPositionGroup, l, g});
  }
  return out;
}

ElementQueue::ElementQueue(std::vector<TransElement> ordered) {
  std::set<TransElement> seen;
  for (const auto& e : ordered) {
    if (!seen.insert(e).second) throw ConfigError("duplicate element " + e.to_string() + " in queue");
    pending_.push_back(e);
  }
}

TransElement ElementQueue::pop() {
  if (pending_.empty()) throw std::logic_error("pop() on empty element queue");
  TransElement e = pending_.front();
  pending_.pop_front();
  dequeued_.push_back(e);
  return e;
}

std::size_t ElementQueue::remove_if(const std::function<bool(const TransElement&)>& pred,
                                    const std::string& reason) {
  std::size_t removed = 0;
  std::deque<TransElement> kept;
  for (const auto& e : pending_) {
    if (pred(e)) {
      removed_.push_back({e, reason});
      ++removed;
    } else {
      kept.push_back(e);
    }
  }
  pending_ = std::move(kept);
  return removed;
}

nlohmann::json ElementQueue::to_json() const {
  nlohmann::json j;
  j["dequeued"] = dequeued_;
  j["pending"] = std::vector<TransElement>(pending_.begin(), pending_.end());
  auto removed = nlohmann::json::array();
  for (const auto& r : removed_) removed.push_back({{"element", r.element}, {"reason", r.reason}});
  j["removed"] = std::move(removed);
  return j;
}

bool attention_first(const TransformerConfig& config, Focus focus) {
  if (config.num_layers == 0) return false;
  const auto breakdown = cost_breakdown(config, ApproxPlan{});
  CostModel attn, ffn;
  for (const auto& part : breakdown.parts) {
    if (part.name == "layer0.attn") attn = part.cost;
    if (part.name == "layer0.ffn") ffn = part.cost;
  }
  if (focus == Focus::size) return attn.param_count > ffn.param_count;
  return attn.mac_count > ffn.mac_count;
}

ElementQueue order_queue(std::vector<TransElement> elements, Focus focus,
                         const TransformerConfig& config, const QueueOptions& options) {
  if (options.flat) return ElementQueue(std::move(elements));

  const bool attn_first = attention_first(config, focus);
  auto kind_rank = [&](ElementKind k) {
    switch (k) {
      case ElementKind::AttnBlock: return attn_first ? 0 : 1;
      case ElementKind::FfnBlock: return attn_first ? 1 : 0;
      case ElementKind::Head: return 2;
      case ElementKind::QkvWeightGroup: return attn_first ? 3 : 4;
      case ElementKind::KvPositionGroup: return attn_first ? 4 : 5;
      case ElementKind::FfnWeightGroup: return attn_first ? 5 : 3;
    }
    return 6;
  };
  auto layer_key = [&](int layer) {
    return options.layer_order == LayerOrder::last_to_first ? -layer : layer;
  };
  std::stable_sort(elements.begin(), elements.end(), [&](const TransElement& a, const TransElement& b) {
    const auto ka = std::tuple(static_cast<int>(a.granularity()), kind_rank(a.kind), layer_key(a.layer), a.index);
    const auto kb = std::tuple(static_cast<int>(b.granularity()), kind_rank(b.kind), layer_key(b.layer), b.index);
    return ka < kb;
  });
  return ElementQueue(std::move(elements));
}

void encompass_filter(ElementQueue& queue, const TransElement& block, BlockDecision decision) {
  if (!block.is_block()) return;
  const char* reason = decision == BlockDecision::kept ? "encompassed" : "parent skipped";
  queue.remove_if([&](const TransElement& e) { return e.inside(block); }, reason);
}

}  // namespace transapprox
