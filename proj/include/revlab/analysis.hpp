#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "revlab/corpus.hpp"
#include "revlab/model.hpp"
#include "revlab/objectives.hpp"

namespace revlab {

enum class QueryKind { AnswerSlotMasked, AnswerSlotUnmasked };

// One MLP post-nonlinearity state at the answer slot. fact_id indexes the fact
// list handed to extract_states; direction says which way the fact was posed.
struct ActivationRecord {
  int64_t fact_id = 0;
  Direction direction = Direction::Forward;
  int32_t layer = 0;
  QueryKind query_kind = QueryKind::AnswerSlotMasked;
  std::vector<float> vec;
};

// Extracts answer-slot states for every (fact, direction, layer, query kind).
// MLM: AnswerSlotMasked is the [MASK] position of `A r [MASK]` (reverse:
// `B r_inv [MASK]`); AnswerSlotUnmasked is the answer position of the fully
// written-out sequence. Decoders: the final prompt position of `A r` / `B r_inv`,
// whose next-token prediction is the answer; with full_sequence_decoder_state
// the anchor moves to the answer-token position of the full sequence instead.
// Facts must be in forward orientation.
std::vector<ActivationRecord> extract_states(const Params& ps, const Vocab& vocab,
                                             const std::vector<Fact>& facts, Objective objective,
                                             bool full_sequence_decoder_state = false);

enum class ReferenceKind { ReverseFact, SameSource, SameRelation, Unrelated, MaskedVsUnmasked };

const char* reference_kind_name(ReferenceKind kind);

// 1 - cos(a, b), accumulated in double. Throws on a zero-norm vector.
double cosine_distance(std::span<const float> a, std::span<const float> b);

struct DistanceCurve {
  ReferenceKind kind;
  std::vector<double> mean;     // per layer
  std::vector<double> std_dev;  // per layer, sample standard deviation
  int32_t n_facts = 0;
};

// Mean cosine distance between n_facts sampled forward anchors and a partner
// chosen per kind: the fact's own reverse state, a fact sharing the source, a
// fact sharing the relation, a fact sharing nothing, or the same fact's
// unmasked state. Partner choice is seeded and shared across layers so each
// anchor contributes one curve. Throws if any sampled anchor has no eligible
// partner for the kind.
DistanceCurve mean_cosine_distance(const std::vector<ActivationRecord>& records,
                                   const std::vector<Fact>& facts, ReferenceKind kind,
                                   int32_t n_facts, uint64_t seed);

// Picks facts for state extraction: whole source groups whose facts are all
// trained in both directions, sampled by seed until at least min_facts facts
// are collected (or the groups run out). Whole groups keep same-source
// partners available for distance curves and probe datasets.
std::vector<Fact> analysis_fact_slice(const Corpus& corpus, int32_t min_facts, uint64_t seed);

}  // namespace revlab
