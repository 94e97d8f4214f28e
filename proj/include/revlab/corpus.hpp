#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "revlab/vocab.hpp"

namespace revlab {

enum class Direction : uint8_t { Forward, Reverse };

// One realized orientation of a stored relation triple. For Forward facts the
// source field is the subject of the canonical sequence `A r B`. reverse_fact
// produces the surface form of the other direction (`B r~ A`), so a Reverse
// fact's *canonical* source is its target field; use canonical_* helpers when
// you mean "the A side" irrespective of orientation.
struct Fact {
  TokenId source = -1;
  TokenId relation = -1;
  TokenId target = -1;
  Direction direction = Direction::Forward;

  bool operator==(const Fact&) const = default;
};

Fact reverse_fact(const Vocab& v, const Fact& f);
Fact canonical(const Vocab& v, const Fact& f);  // forward orientation
TokenId canonical_source(const Fact& f);
TokenId canonical_target(const Fact& f);
TokenId canonical_relation(const Vocab& v, const Fact& f);

struct Span {
  int32_t begin = 0;
  int32_t end = 0;  // half-open
  int32_t len() const { return end - begin; }
  bool operator==(const Span&) const = default;
};

// A training sequence: filler prefix + realized fact + filler suffix.
// Spans are canonical: source_span marks where the canonical source (A) sits,
// which for Reverse documents is the LAST fact position.
struct Document {
  std::vector<TokenId> tokens;
  Span source_span, relation_span, target_span;
  int32_t fact_id = -1;  // index into Corpus::facts
  Direction direction = Direction::Forward;
};

struct Corpus {
  Vocab vocab;
  std::vector<Fact> facts;  // canonical forward universe, unique triples
  std::vector<Document> train_docs;
  std::vector<Fact> heldout_facts;  // forward orientation; reverse never trained
  nlohmann::json manifest;          // kind, seed, params, counts
};

// filler-token pool shared by both generators
inline constexpr int32_t kFillerPool = 100;
// the nonsense generator's comparison-word inventory; requests beyond it are rejected
inline constexpr int32_t kMaxComparisonWords = 28;

// Entity-pair universe: every (entity, relation) is the source of exactly one
// fact; per relation the target map is a random permutation with min cycle
// length 3 (n_entities == 2 uses the swap, the only derangement there). Every
// fact is realized forward; all but the heldout facts are also realized in
// reverse. Affix lengths are drawn uniformly from {0..max_affix} per side.
Corpus generate_simple_reversal(int32_t n_entities, int32_t n_relations, int32_t n_heldout,
                                int32_t max_affix, uint64_t seed);

// Unique entity pairs compared under sampled comparison words; each fact gets
// `repeats` forward documents with sampled filler preambles, and a
// floor(reverse_fraction * n) subset is also realized in reverse. Facts never
// reversed form heldout_facts.
Corpus generate_nonsense(int32_t n_comparisons, int32_t n_comparison_words, int32_t repeats,
                         double reverse_fraction, uint64_t seed);

// Directory layout (all line-oriented, byte-exact; see docs/FORMATS.md):
//   manifest.json, vocab, train.tokens, heldout.facts
void save_corpus(const Corpus& c, const std::filesystem::path& dir);
Corpus load_corpus(const std::filesystem::path& dir);

// Structural audit: spans decode to the owning fact, id ranges are in role,
// and no train document realizes the reverse of a heldout fact (verified both
// by fact bookkeeping and by a token-window scan). Throws on violation.
void audit_corpus(const Corpus& c);

}  // namespace revlab
