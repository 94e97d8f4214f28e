#include "revlab/vocab.hpp"

#include <stdexcept>

namespace revlab {

TokenKind Vocab::kind(TokenId t) const {
  if (t < 0 || t >= size()) throw std::out_of_range("Vocab::kind: token id out of range");
  if (t < n_entities) return TokenKind::Entity;
  if (t < n_entities + n_relations) return TokenKind::Relation;
  if (t < n_entities + 2 * n_relations) return TokenKind::InverseRelation;
  if (t < n_entities + 2 * n_relations + n_fillers) return TokenKind::Filler;
  if (t == mask_token()) return TokenKind::Mask;
  if (t == sep_token()) return TokenKind::Sep;
  return TokenKind::Pad;
}

TokenId Vocab::inverse_of(TokenId t) const {
  TokenKind k = kind(t);
  if (k == TokenKind::Relation) return t + n_relations;
  if (k == TokenKind::InverseRelation) return t - n_relations;
  throw std::invalid_argument("Vocab::inverse_of: not a relation token");
}

void validate(const Vocab& v) {
  if (v.n_entities < 0 || v.n_relations < 0 || v.n_fillers < 0)
    throw std::runtime_error("Vocab: negative counts");
  // pairing must be an involution over every relation token
  for (int32_t i = 0; i < v.n_relations; ++i) {
    TokenId r = v.relation(i);
    if (v.inverse_of(v.inverse_of(r)) != r) throw std::runtime_error("Vocab: pairing not involutive");
  }
}

std::string token_kind_name(TokenKind k) {
  switch (k) {
    case TokenKind::Entity: return "entity";
    case TokenKind::Relation: return "relation";
    case TokenKind::InverseRelation: return "inverse_relation";
    case TokenKind::Filler: return "filler";
    case TokenKind::Mask: return "mask";
    case TokenKind::Sep: return "sep";
    case TokenKind::Pad: return "pad";
  }
  return "unknown";
}

}  // namespace revlab
