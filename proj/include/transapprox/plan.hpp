#pragma once

#include "transapprox/config.hpp"
#include "transapprox/elements.hpp"

#include <json.hpp>

#include <map>
#include <set>
#include <string>
#include <variant>
#include <vector>

namespace transapprox {

namespace params {
/// Whole-element removal; the implicit parameters of every skiplist entry.
struct Skip {
  bool operator==(const Skip&) const = default;
};
struct HeadPrune {
  bool operator==(const HeadPrune&) const = default;
};
/// Kept weight groups [lo, hi); all others along d are pruned.
struct GroupShrink {
  int lo = 0;
  int hi = 0;
  bool operator==(const GroupShrink&) const = default;
};
struct GroupPruneSet {
  std::vector<int> indices;
  bool operator==(const GroupPruneSet&) const = default;
};
struct KvPrune {
  std::vector<int> positions;
  bool operator==(const KvPrune&) const = default;
};
/// Symmetric per-group quantization; scales are derived from the weights.
struct Quantize {
  int bits = 8;
  bool operator==(const Quantize&) const = default;
};
struct SignMatch {
  int k = 1;
  bool operator==(const SignMatch&) const = default;
};
}  // namespace params

using ApproxParams = std::variant<params::Skip, params::HeadPrune, params::GroupShrink,
                                  params::GroupPruneSet, params::KvPrune, params::Quantize,
                                  params::SignMatch>;

std::string variant_name(const ApproxParams& p);
nlohmann::json params_to_json(const ApproxParams& p);
ApproxParams params_from_json(const std::string& variant, const nlohmann::json& j);

class PlanError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Skiplist plus approxlist.
///
/// Group-range variants (GroupShrink, GroupPruneSet) describe a whole block's
/// group axis and are keyed by that block's group-0 element; KvPrune likewise
/// lives on KvPositionGroup(layer, 0). SignMatch is keyed by the ATTN block.
class ApproxPlan {
 public:
  const std::set<TransElement>& skiplist() const { return skip_; }
  const std::map<TransElement, ApproxParams>& approxlist() const { return approx_; }

  bool empty() const { return skip_.empty() && approx_.empty(); }
  bool is_skipped(const TransElement& e) const { return skip_.count(e) != 0; }
  const ApproxParams* approx_of(const TransElement& e) const;

  /// Throws PlanError if `e` already has an approximation.
  void skip(const TransElement& e);
  void unskip(const TransElement& e) { skip_.erase(e); }
  /// Throws PlanError if `e` is skipped or if the variant does not fit the element.
  void approximate(const TransElement& e, ApproxParams p);
  void remove_approx(const TransElement& e) { approx_.erase(e); }

  /// Checks element ranges, per-variant parameter invariants and kind/variant fit.
  void validate(const TransformerConfig& config) const;

  nlohmann::json to_json() const;
  static ApproxPlan from_json(const nlohmann::json& j);

  bool operator==(const ApproxPlan&) const = default;

 private:
  std::set<TransElement> skip_;
  std::map<TransElement, ApproxParams> approx_;
};

}  // namespace transapprox
