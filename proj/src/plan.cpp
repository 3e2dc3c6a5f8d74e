#include "transapprox/plan.hpp"

#include "transapprox/approx.hpp"

#include <algorithm>

namespace transapprox {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

bool is_group_anchor(const TransElement& e) {
  return (e.kind == ElementKind::FfnWeightGroup || e.kind == ElementKind::QkvWeightGroup) && e.index == 0;
}

void check_fit(const TransElement& e, const ApproxParams& p) {
  auto fail = [&](const std::string& why) {
    throw PlanError(variant_name(p) + " cannot be applied to " + e.to_string() + ": " + why);
  };
  std::visit(overloaded{
                 [&](const params::Skip&) { fail("pruning entries belong in the skiplist"); },
                 [&](const params::HeadPrune&) { fail("pruning entries belong in the skiplist"); },
                 [&](const params::GroupShrink&) {
                   if (!is_group_anchor(e)) fail("group ranges are keyed by the block's group 0");
                 },
                 [&](const params::GroupPruneSet&) {
                   if (!is_group_anchor(e)) fail("group ranges are keyed by the block's group 0");
                 },
                 [&](const params::KvPrune&) {
                   if (e.kind != ElementKind::KvPositionGroup || e.index != 0) {
                     fail("position pruning is keyed by KvPositionGroup:<layer>:0");
                   }
                 },
                 [&](const params::Quantize&) {
                   if (e.kind == ElementKind::KvPositionGroup) fail("position groups own no weights");
                 },
                 [&](const params::SignMatch&) {
                   if (e.kind != ElementKind::AttnBlock) fail("sign matching replaces a whole ATTN block");
                 },
             },
             p);
}

}  // namespace

std::string variant_name(const ApproxParams& p) {
  return std::visit(overloaded{
                        [](const params::Skip&) { return std::string("Skip"); },
                        [](const params::HeadPrune&) { return std::string("HeadPrune"); },
                        [](const params::GroupShrink&) { return std::string("GroupShrink"); },
                        [](const params::GroupPruneSet&) { return std::string("GroupPruneSet"); },
                        [](const params::KvPrune&) { return std::string("KvPrune"); },
                        [](const params::Quantize&) { return std::string("Quantize"); },
                        [](const params::SignMatch&) { return std::string("SignMatch"); },
                    },
                    p);
}

nlohmann::json params_to_json(const ApproxParams& p) {
  return std::visit(overloaded{
                        [](const params::Skip&) { return nlohmann::json::object(); },
                        [](const params::HeadPrune&) { return nlohmann::json::object(); },
                        [](const params::GroupShrink& v) { return nlohmann::json{{"lo", v.lo}, {"hi", v.hi}}; },
                        [](const params::GroupPruneSet& v) { return nlohmann::json{{"indices", v.indices}}; },
                        [](const params::KvPrune& v) { return nlohmann::json{{"positions", v.positions}}; },
                        [](const params::Quantize& v) { return nlohmann::json{{"bits", v.bits}}; },
                        [](const params::SignMatch& v) { return nlohmann::json{{"k", v.k}}; },
                    },
                    p);
}

ApproxParams params_from_json(const std::string& variant, const nlohmann::json& j) {
  try {
    if (variant == "Skip") return params::Skip{};
    if (variant == "HeadPrune") return params::HeadPrune{};
    if (variant == "GroupShrink") return params::GroupShrink{j.at("lo").get<int>(), j.at("hi").get<int>()};
    if (variant == "GroupPruneSet") return params::GroupPruneSet{j.at("indices").get<std::vector<int>>()};
    if (variant == "KvPrune") return params::KvPrune{j.at("positions").get<std::vector<int>>()};
    if (variant == "Quantize") return params::Quantize{j.at("bits").get<int>()};
    if (variant == "SignMatch") return params::SignMatch{j.at("k").get<int>()};
  } catch (const nlohmann::json::exception& ex) {
    throw PlanError("bad parameters for " + variant + ": " + ex.what());
  }
  throw PlanError("unknown approximation variant '" + variant + "'");
}

const ApproxParams* ApproxPlan::approx_of(const TransElement& e) const {
  auto it = approx_.find(e);
  return it == approx_.end() ? nullptr : &it->second;
}

void ApproxPlan::skip(const TransElement& e) {
  if (approx_.count(e)) throw PlanError(e.to_string() + " is already approximated");
  skip_.insert(e);
}

void ApproxPlan::approximate(const TransElement& e, ApproxParams p) {
  if (skip_.count(e)) throw PlanError(e.to_string() + " is already skipped");
  check_fit(e, p);
  approx_[e] = std::move(p);
}

void ApproxPlan::validate(const TransformerConfig& config) const {
  for (const auto& e : skip_) {
    check_element(e, config);
    if (approx_.count(e)) throw PlanError(e.to_string() + " is in both skiplist and approxlist");
  }
  const int groups = config.num_weight_groups();
  for (const auto& [e, p] : approx_) {
    check_element(e, config);
    check_fit(e, p);
    std::visit(overloaded{
                   [](const params::Skip&) {},
                   [](const params::HeadPrune&) {},
                   [&](const params::GroupShrink& v) {
                     if (v.lo < 0 || v.hi < v.lo || v.hi > groups) {
                       throw PlanError("GroupShrink on " + e.to_string() + " needs 0 <= lo <= hi <= " +
                                       std::to_string(groups));
                     }
                   },
                   [&](const params::GroupPruneSet& v) {
                     for (int g : v.indices) {
                       if (g < 0 || g >= groups) {
                         throw PlanError("GroupPruneSet on " + e.to_string() + " has group " +
                                         std::to_string(g) + " out of range");
                       }
                     }
                   },
                   [&](const params::KvPrune& v) {
                     for (int pos : v.positions) {
                       if (pos < 0 || pos >= config.context_len) {
                         throw PlanError("KvPrune on " + e.to_string() + " has position " +
                                         std::to_string(pos) + " out of range");
                       }
                     }
                   },
                   [&](const params::Quantize& v) {
                     if (!valid_quant_bits(v.bits)) {
                       throw PlanError("Quantize on " + e.to_string() + " needs bits in {2,4,8}");
                     }
                   },
                   [&](const params::SignMatch& v) {
                     if (v.k < 1 || v.k > config.context_len) {
                       throw PlanError("SignMatch on " + e.to_string() + " needs 1 <= K <= n");
                     }
                   },
               },
               p);
  }
}

nlohmann::json ApproxPlan::to_json() const {
  nlohmann::json j;
  j["skip"] = std::vector<TransElement>(skip_.begin(), skip_.end());
  auto approx = nlohmann::json::array();
  for (const auto& [e, p] : approx_) {
    approx.push_back({{"element", e}, {"variant", variant_name(p)}, {"params", params_to_json(p)}});
  }
  j["approx"] = std::move(approx);
  return j;
}

ApproxPlan ApproxPlan::from_json(const nlohmann::json& j) {
  ApproxPlan plan;
  try {
    for (const auto& s : j.at("skip")) plan.skip(s.get<TransElement>());
    for (const auto& a : j.at("approx")) {
      plan.approximate(a.at("element").get<TransElement>(),
                       params_from_json(a.at("variant").get<std::string>(), a.at("params")));
    }
  } catch (const nlohmann::json::exception& ex) {
    throw PlanError(std::string("malformed plan JSON: ") + ex.what());
  }
  return plan;
}

}  // namespace transapprox
