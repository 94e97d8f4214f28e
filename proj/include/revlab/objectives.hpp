#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "revlab/corpus.hpp"

namespace revlab {

enum class AttentionMode : uint8_t { Causal, Bidirectional };
enum class Objective : uint8_t { Ntp, Mlm, NtpMasking };

std::string objective_name(Objective o);
Objective parse_objective(const std::string& s);
AttentionMode attention_for(Objective o);

enum class Slot : uint8_t { Source, Relation, Target };

// Slot-level modes pick one maskable slot uniformly per example. Token-level
// modes mask individual tokens: every token is eligible except tokens of fact
// slots excluded from the maskable set, so never-mask ablations compose.
enum class MaskMode : uint8_t { ExactlyOneSlot, SlotPairs, TokenRate, RatioRange };

struct MaskingPolicy {
  bool source = false;
  bool relation = false;
  bool target = false;
  MaskMode mode = MaskMode::SlotPairs;
  double rate = 0.15;      // TokenRate: per-token masking probability
  double ratio_lo = 0.05;  // RatioRange: per-example ratio drawn uniformly
  double ratio_hi = 0.95;

  int n_maskable() const { return (source ? 1 : 0) + (relation ? 1 : 0) + (target ? 1 : 0); }
  bool operator==(const MaskingPolicy&) const = default;
};

// throws std::invalid_argument on an empty maskable set or out-of-range
// rate/ratio parameters
void validate_policy(const MaskingPolicy& p);

std::string policy_name(const MaskingPolicy& p);  // e.g. "source+target", "token_rate_0.15"
MaskingPolicy parse_policy(const std::string& name);  // accepts "standard" for all three slots

// Model-ready sequence. target is aligned with input and holds -1 at positions
// without a defined prediction; loss_mask marks exactly the defined ones.
// Causal examples predict input[i+1] at position i.
struct TrainingExample {
  std::vector<TokenId> input;
  std::vector<TokenId> target;
  std::vector<uint8_t> loss_mask;
  AttentionMode attention = AttentionMode::Causal;
};

// plain next-token prediction over the whole document (loss on shifted positions)
TrainingExample build_ntp(const Document& doc);

// masked-token prediction: mask per policy, loss only at masked positions
TrainingExample build_mlm(const Document& doc, const Vocab& v, const MaskingPolicy& p, uint64_t seed);

// masked copy ++ [SEP] ++ original document, causal, loss on every continuation
// token (the first is predicted from the [SEP] position); [SEP] is never a target
TrainingExample build_ntp_masking(const Document& doc, const Vocab& v, const MaskingPolicy& p,
                                  uint64_t seed);

// the 7 non-empty slot subsets: singletons in ExactlyOneSlot mode, larger
// subsets in SlotPairs mode
std::vector<MaskingPolicy> enumerate_sweep_policies();

enum class Ablation : uint8_t { NeverMaskSource, NeverMaskTarget };
MaskingPolicy ablation_policy(Ablation a);

// line format: `input | target | mask | mode`, token ids space-separated
std::string serialize_example(const TrainingExample& e);
TrainingExample parse_example(const std::string& line);

}  // namespace revlab
