#pragma once

#include "transapprox/config.hpp"
#include "transapprox/focus.hpp"

#include <json.hpp>

#include <compare>
#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <vector>

namespace transapprox {

enum class ElementKind { FfnBlock, AttnBlock, Head, FfnWeightGroup, QkvWeightGroup, KvPositionGroup };
enum class Granularity { block = 0, head = 1, group = 2 };

std::string to_string(ElementKind kind);
ElementKind parse_element_kind(const std::string& s);

/// One prunable or approximable unit. `index` is the head / group / position-group
/// id and 0 for blocks.
struct TransElement {
  ElementKind kind = ElementKind::FfnBlock;
  int layer = 0;
  int index = 0;

  Granularity granularity() const;
  bool is_block() const { return granularity() == Granularity::block; }
  /// True for every finer element that lives inside `block`.
  bool inside(const TransElement& block) const;
  /// The enclosing block (identity for blocks).
  TransElement parent_block() const;

  /// "kind:layer:index", e.g. "Head:1:0".
  std::string to_string() const;
  static TransElement parse(const std::string& s);

  auto operator<=>(const TransElement&) const = default;
};

void to_json(nlohmann::json& j, const TransElement& e);
void from_json(const nlohmann::json& j, TransElement& e);

/// Throws ConfigError if the element's layer or index is outside the config.
void check_element(const TransElement& e, const TransformerConfig& config);

/// Every element of the model: 2L blocks, L*h heads, L*(d/W) FFN groups,
/// L*(d/W) QKV groups and L*(n/W_pos) key/value position groups.
std::vector<TransElement> enumerate_elements(const TransformerConfig& config);

enum class LayerOrder { last_to_first, first_to_last };

struct QueueOptions {
  /// Default is final layer first for every task kind.
  LayerOrder layer_order = LayerOrder::last_to_first;
  /// Disables all ordering heuristics: elements stay in enumeration order.
  bool flat = false;
};

/// Sequential analysis queue with an audit log of filtered elements.
class ElementQueue {
 public:
  struct Removal {
    TransElement element;
    std::string reason;
  };

  ElementQueue() = default;
  explicit ElementQueue(std::vector<TransElement> ordered);

  bool empty() const { return pending_.empty(); }
  std::size_t size() const { return pending_.size(); }
  const std::deque<TransElement>& pending() const { return pending_; }
  const std::vector<TransElement>& dequeued() const { return dequeued_; }
  const std::vector<Removal>& removed() const { return removed_; }

  TransElement pop();
  /// Moves every pending element matching `pred` to the removal log.
  std::size_t remove_if(const std::function<bool(const TransElement&)>& pred, const std::string& reason);

  nlohmann::json to_json() const;

 private:
  std::deque<TransElement> pending_;
  std::vector<TransElement> dequeued_;
  std::vector<Removal> removed_;
};

/// True when ATTN blocks should be analysed before FFN blocks: the block type with
/// the larger analytic cost (MACs, or parameters under size focus) goes first.
bool attention_first(const TransformerConfig& config, Focus focus);

/// Orders by increasing granularity; within each tier by the runtime-aware block
/// order and the layer order. Heads and groups use ascending index within a layer.
ElementQueue order_queue(std::vector<TransElement> elements, Focus focus,
                         const TransformerConfig& config, const QueueOptions& options = {});

enum class BlockDecision { kept, skipped };

/// Drops every finer element inside `block` from the queue once the block is
/// resolved as kept-high-importance or skipped.
void encompass_filter(ElementQueue& queue, const TransElement& block, BlockDecision decision);

}  // namespace transapprox
