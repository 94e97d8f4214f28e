#include "revlab/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "revlab/rng.hpp"
#include "revlab/util.hpp"

namespace revlab {

std::string objective_name(Objective o) {
  switch (o) {
    case Objective::Ntp: return "ntp";
    case Objective::Mlm: return "mlm";
    case Objective::NtpMasking: return "ntp_masking";
  }
  return "unknown";
}

Objective parse_objective(const std::string& s) {
  if (s == "ntp") return Objective::Ntp;
  if (s == "mlm") return Objective::Mlm;
  if (s == "ntp_masking" || s == "ntpm") return Objective::NtpMasking;
  throw std::invalid_argument("unknown objective: " + s);
}

AttentionMode attention_for(Objective o) {
  return o == Objective::Mlm ? AttentionMode::Bidirectional : AttentionMode::Causal;
}

void validate_policy(const MaskingPolicy& p) {
  if (p.n_maskable() == 0) throw std::invalid_argument("masking policy: maskable slot set is empty");
  if (p.mode == MaskMode::TokenRate && (p.rate <= 0.0 || p.rate >= 1.0))
    throw std::invalid_argument("masking policy: token rate must be in (0, 1)");
  if (p.mode == MaskMode::RatioRange &&
      (p.ratio_lo <= 0.0 || p.ratio_hi >= 1.0 || p.ratio_lo >= p.ratio_hi))
    throw std::invalid_argument("masking policy: ratio range must satisfy 0 < lo < hi < 1");
}

namespace {

std::string format_ratio(double x) {
  char buf[32];
  snprintf(buf, sizeof buf, "%g", x);
  return buf;
}

Span slot_span(const Document& d, Slot s) {
  switch (s) {
    case Slot::Source: return d.source_span;
    case Slot::Relation: return d.relation_span;
    case Slot::Target: return d.target_span;
  }
  return {};
}

bool slot_maskable(const MaskingPolicy& p, Slot s) {
  switch (s) {
    case Slot::Source: return p.source;
    case Slot::Relation: return p.relation;
    case Slot::Target: return p.target;
  }
  return false;
}

// positions to mask for one example; throws when the policy cannot mask anything
std::vector<int32_t> draw_mask_positions(const Document& d, const MaskingPolicy& p, Rng& rng) {
  validate_policy(p);
  constexpr Slot kSlots[] = {Slot::Source, Slot::Relation, Slot::Target};

  if (p.mode == MaskMode::ExactlyOneSlot || p.mode == MaskMode::SlotPairs) {
    std::vector<Slot> candidates;
    for (Slot s : kSlots)
      if (slot_maskable(p, s) && slot_span(d, s).len() > 0) candidates.push_back(s);
    if (candidates.empty())
      throw std::invalid_argument("masking policy: no maskable slot present in document");
    Span span = slot_span(d, candidates[rng.uniform_int(candidates.size())]);
    std::vector<int32_t> out;
    for (int32_t i = span.begin; i < span.end; ++i) out.push_back(i);
    return out;
  }

  // token-level modes: all positions eligible except slots outside the maskable set
  std::vector<int32_t> eligible;
  for (int32_t i = 0; i < static_cast<int32_t>(d.tokens.size()); ++i) {
    bool blocked = false;
    for (Slot s : kSlots) {
      Span span = slot_span(d, s);
      if (i >= span.begin && i < span.end && !slot_maskable(p, s)) blocked = true;
    }
    if (!blocked) eligible.push_back(i);
  }
  if (eligible.empty())
    throw std::invalid_argument("masking policy: no eligible token to mask in document");

  if (p.mode == MaskMode::TokenRate) {
    std::vector<int32_t> out;
    for (int attempt = 0; attempt < 100 && out.empty(); ++attempt)
      for (int32_t i : eligible)
        if (rng.uniform() < p.rate) out.push_back(i);
    if (out.empty()) out.push_back(eligible[rng.uniform_int(eligible.size())]);
    return out;
  }

  // RatioRange
  double u = p.ratio_lo + (p.ratio_hi - p.ratio_lo) * rng.uniform();
  int64_t n = static_cast<int64_t>(eligible.size());
  int64_t k = std::clamp<int64_t>(std::llround(u * n), 1, n);
  std::vector<int32_t> out;
  for (int64_t idx : rng.sample_without_replacement(n, k)) out.push_back(eligible[idx]);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TrainingExample build_ntp(const Document& doc) {
  if (doc.tokens.empty()) throw std::invalid_argument("build_ntp: empty document");
  TrainingExample e;
  e.attention = AttentionMode::Causal;
  e.input = doc.tokens;
  size_t n = e.input.size();
  e.target.assign(n, -1);
  e.loss_mask.assign(n, 0);
  for (size_t i = 0; i + 1 < n; ++i) {
    e.target[i] = e.input[i + 1];
    e.loss_mask[i] = 1;
  }
  return e;
}

TrainingExample build_mlm(const Document& doc, const Vocab& v, const MaskingPolicy& p, uint64_t seed) {
  if (doc.tokens.empty()) throw std::invalid_argument("build_mlm: empty document");
  Rng rng(seed);
  auto positions = draw_mask_positions(doc, p, rng);
  TrainingExample e;
  e.attention = AttentionMode::Bidirectional;
  e.input = doc.tokens;
  size_t n = e.input.size();
  e.target.assign(n, -1);
  e.loss_mask.assign(n, 0);
  for (int32_t i : positions) {
    e.target[i] = doc.tokens[i];
    e.input[i] = v.mask_token();
    e.loss_mask[i] = 1;
  }
  return e;
}

TrainingExample build_ntp_masking(const Document& doc, const Vocab& v, const MaskingPolicy& p,
                                  uint64_t seed) {
  if (doc.tokens.empty()) throw std::invalid_argument("build_ntp_masking: empty document");
  Rng rng(seed);
  auto positions = draw_mask_positions(doc, p, rng);
  int32_t len = static_cast<int32_t>(doc.tokens.size());

  TrainingExample e;
  e.attention = AttentionMode::Causal;
  e.input = doc.tokens;
  for (int32_t i : positions) e.input[i] = v.mask_token();
  e.input.push_back(v.sep_token());
  e.input.insert(e.input.end(), doc.tokens.begin(), doc.tokens.end());

  size_t n = e.input.size();  // 2 * len + 1
  e.target.assign(n, -1);
  e.loss_mask.assign(n, 0);
  // every continuation token is predicted, starting from the [SEP] position;
  // [SEP] itself and the masked copy are never targets
  for (int32_t i = len; i < 2 * len; ++i) {
    e.target[i] = e.input[i + 1];
    e.loss_mask[i] = 1;
  }
  return e;
}

std::vector<MaskingPolicy> enumerate_sweep_policies() {
  std::vector<MaskingPolicy> out;
  for (int bits = 1; bits < 8; ++bits) {
    MaskingPolicy p;
    p.source = bits & 1;
    p.relation = bits & 2;
    p.target = bits & 4;
    p.mode = p.n_maskable() == 1 ? MaskMode::ExactlyOneSlot : MaskMode::SlotPairs;
    out.push_back(p);
  }
  return out;
}

MaskingPolicy ablation_policy(Ablation a) {
  MaskingPolicy p;
  p.mode = MaskMode::SlotPairs;
  if (a == Ablation::NeverMaskSource) {
    p.relation = p.target = true;
  } else {
    p.source = p.relation = true;
  }
  return p;
}

std::string policy_name(const MaskingPolicy& p) {
  if (p.mode == MaskMode::TokenRate) return "token_rate_" + format_ratio(p.rate);
  if (p.mode == MaskMode::RatioRange)
    return "ratio_range_" + format_ratio(p.ratio_lo) + "_" + format_ratio(p.ratio_hi);
  std::vector<std::string> parts;
  if (p.source) parts.push_back("source");
  if (p.relation) parts.push_back("relation");
  if (p.target) parts.push_back("target");
  return join(parts, "+");
}

MaskingPolicy parse_policy(const std::string& name) {
  MaskingPolicy p;
  if (name.rfind("token_rate_", 0) == 0) {
    p.source = p.relation = p.target = true;
    p.mode = MaskMode::TokenRate;
    p.rate = std::stod(name.substr(11));
    validate_policy(p);
    return p;
  }
  if (name.rfind("ratio_range_", 0) == 0) {
    auto parts = split(name.substr(12), '_');
    if (parts.size() != 2) throw std::invalid_argument("bad ratio_range policy: " + name);
    p.source = p.relation = p.target = true;
    p.mode = MaskMode::RatioRange;
    p.ratio_lo = std::stod(parts[0]);
    p.ratio_hi = std::stod(parts[1]);
    validate_policy(p);
    return p;
  }
  if (name == "standard") {
    p.source = p.relation = p.target = true;
    p.mode = MaskMode::SlotPairs;
    return p;
  }
  for (const auto& part : split(name, '+')) {
    if (part == "source") p.source = true;
    else if (part == "relation") p.relation = true;
    else if (part == "target") p.target = true;
    else throw std::invalid_argument("unknown slot in policy name: " + part);
  }
  p.mode = p.n_maskable() == 1 ? MaskMode::ExactlyOneSlot : MaskMode::SlotPairs;
  validate_policy(p);
  return p;
}

std::string serialize_example(const TrainingExample& e) {
  auto nums = [](const auto& xs) {
    std::vector<std::string> out;
    for (auto x : xs) out.push_back(std::to_string(static_cast<long long>(x)));
    return join(out, " ");
  };
  return nums(e.input) + " | " + nums(e.target) + " | " + nums(e.loss_mask) + " | " +
         (e.attention == AttentionMode::Causal ? "causal" : "bidirectional");
}

TrainingExample parse_example(const std::string& line) {
  auto fields = split(line, '|');
  if (fields.size() != 4) throw std::invalid_argument("example line must have 4 |-separated fields");
  auto ints = [](const std::string& s) {
    std::vector<int64_t> out;
    for (const auto& tok : split(s, ' '))
      if (!tok.empty()) out.push_back(std::stoll(tok));
    return out;
  };
  TrainingExample e;
  for (int64_t x : ints(fields[0])) e.input.push_back(static_cast<TokenId>(x));
  for (int64_t x : ints(fields[1])) e.target.push_back(static_cast<TokenId>(x));
  for (int64_t x : ints(fields[2])) e.loss_mask.push_back(static_cast<uint8_t>(x));
  std::string mode = fields[3];
  mode.erase(std::remove(mode.begin(), mode.end(), ' '), mode.end());
  if (mode == "causal") e.attention = AttentionMode::Causal;
  else if (mode == "bidirectional") e.attention = AttentionMode::Bidirectional;
  else throw std::invalid_argument("unknown attention mode: " + mode);
  if (e.target.size() != e.input.size() || e.loss_mask.size() != e.input.size())
    throw std::invalid_argument("example fields have mismatched lengths");
  return e;
}

}  // namespace revlab
