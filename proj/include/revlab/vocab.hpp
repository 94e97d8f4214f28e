#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace revlab {

using TokenId = int32_t;

enum class TokenKind : uint8_t { Entity, Relation, InverseRelation, Filler, Mask, Sep, Pad };

// Token id space for a generated corpus. Ids are dense in [0, size()):
// entities, then forward relations, then their inverses (paired by index),
// then filler tokens, then [MASK], [SEP], pad.
struct Vocab {
  int32_t n_entities = 0;
  int32_t n_relations = 0;
  int32_t n_fillers = 0;

  int32_t size() const { return n_entities + 2 * n_relations + n_fillers + 3; }

  TokenId entity(int32_t i) const { return i; }
  TokenId relation(int32_t i) const { return n_entities + i; }
  TokenId inverse_relation(int32_t i) const { return n_entities + n_relations + i; }
  TokenId filler(int32_t i) const { return n_entities + 2 * n_relations + i; }
  TokenId mask_token() const { return size() - 3; }
  TokenId sep_token() const { return size() - 2; }
  TokenId pad_token() const { return size() - 1; }

  TokenKind kind(TokenId t) const;
  bool is_entity(TokenId t) const { return t >= 0 && t < n_entities; }
  bool is_relation_any(TokenId t) const {
    return t >= n_entities && t < n_entities + 2 * n_relations;
  }
  // involution over the 2*n_relations relation tokens
  TokenId inverse_of(TokenId relation_token) const;

  bool operator==(const Vocab&) const = default;
};

// throws std::runtime_error when counts are negative or a lookup would go out of range
void validate(const Vocab& v);

std::string token_kind_name(TokenKind k);

}  // namespace revlab
