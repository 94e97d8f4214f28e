#include "revlab/corpus.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "revlab/rng.hpp"
#include "revlab/util.hpp"

namespace revlab {

namespace {

constexpr int32_t kNonsensePreambleMax = 5;

// packs a token triple into a set/map key; ids stay far below 2^21
uint64_t triple_key(TokenId a, TokenId b, TokenId c) {
  return (static_cast<uint64_t>(a) << 42) | (static_cast<uint64_t>(b) << 21) | static_cast<uint64_t>(c);
}

// permutation of [0, n) with every cycle length >= 3 (no self-loops, no swaps),
// so `B r ?` never has the probed source as its true completion. n == 2 only
// admits the swap, which the 2-entity universe example requires.
std::vector<int32_t> sample_target_permutation(int32_t n, Rng& rng) {
  if (n == 2) return {1, 0};
  std::vector<int32_t> perm(n);
  for (int attempt = 0; attempt < 10000; ++attempt) {
    for (int32_t i = 0; i < n; ++i) perm[i] = i;
    rng.shuffle(perm);
    bool ok = true;
    std::vector<bool> seen(n, false);
    for (int32_t i = 0; i < n && ok; ++i) {
      if (seen[i]) continue;
      int32_t len = 0, j = i;
      while (!seen[j]) {
        seen[j] = true;
        j = perm[j];
        ++len;
      }
      if (len < 3) ok = false;
    }
    if (ok) return perm;
  }
  throw std::logic_error("sample_target_permutation: rejection cap exceeded");
}

Document realize_document(const Fact& realized, int32_t fact_id, const Vocab& v, int32_t prefix_len,
                          int32_t suffix_len, Rng& rng) {
  Document d;
  d.fact_id = fact_id;
  d.direction = realized.direction;
  d.tokens.reserve(prefix_len + 3 + suffix_len);
  for (int32_t i = 0; i < prefix_len; ++i)
    d.tokens.push_back(v.filler(static_cast<int32_t>(rng.uniform_int(v.n_fillers))));
  int32_t p = prefix_len;
  d.tokens.push_back(realized.source);
  d.tokens.push_back(realized.relation);
  d.tokens.push_back(realized.target);
  for (int32_t i = 0; i < suffix_len; ++i)
    d.tokens.push_back(v.filler(static_cast<int32_t>(rng.uniform_int(v.n_fillers))));
  d.relation_span = {p + 1, p + 2};
  // spans are canonical: source_span marks A even when A sits last
  if (realized.direction == Direction::Forward) {
    d.source_span = {p, p + 1};
    d.target_span = {p + 2, p + 3};
  } else {
    d.source_span = {p + 2, p + 3};
    d.target_span = {p, p + 1};
  }
  return d;
}

}  // namespace

Fact reverse_fact(const Vocab& v, const Fact& f) {
  return Fact{f.target, v.inverse_of(f.relation), f.source,
              f.direction == Direction::Forward ? Direction::Reverse : Direction::Forward};
}

Fact canonical(const Vocab& v, const Fact& f) {
  return f.direction == Direction::Forward ? f : reverse_fact(v, f);
}

TokenId canonical_source(const Fact& f) { return f.direction == Direction::Forward ? f.source : f.target; }
TokenId canonical_target(const Fact& f) { return f.direction == Direction::Forward ? f.target : f.source; }
TokenId canonical_relation(const Vocab& v, const Fact& f) {
  return f.direction == Direction::Forward ? f.relation : v.inverse_of(f.relation);
}

Corpus generate_simple_reversal(int32_t n_entities, int32_t n_relations, int32_t n_heldout,
                                int32_t max_affix, uint64_t seed) {
  if (n_entities < 2) throw std::invalid_argument("generate_simple_reversal: need at least 2 entities");
  if (n_relations < 1) throw std::invalid_argument("generate_simple_reversal: need at least 1 relation");
  if (max_affix < 0) throw std::invalid_argument("generate_simple_reversal: max_affix must be >= 0");
  int64_t universe = static_cast<int64_t>(n_entities) * n_relations;
  if (n_heldout < 0 || n_heldout >= universe)
    throw std::invalid_argument("generate_simple_reversal: n_heldout must be < n_entities * n_relations");

  Corpus c;
  c.vocab = Vocab{n_entities, n_relations, kFillerPool};
  Rng rng(seed);

  // one fact per (entity, relation); targets via per-relation permutations
  std::vector<std::vector<int32_t>> target_of(n_relations);
  for (int32_t r = 0; r < n_relations; ++r) target_of[r] = sample_target_permutation(n_entities, rng);
  c.facts.reserve(universe);
  for (int32_t e = 0; e < n_entities; ++e)
    for (int32_t r = 0; r < n_relations; ++r)
      c.facts.push_back(Fact{c.vocab.entity(e), c.vocab.relation(r), c.vocab.entity(target_of[r][e]),
                             Direction::Forward});

  auto heldout_ids = rng.sample_without_replacement(universe, n_heldout);
  std::sort(heldout_ids.begin(), heldout_ids.end());
  std::unordered_set<int64_t> heldout_set(heldout_ids.begin(), heldout_ids.end());
  for (int64_t id : heldout_ids) c.heldout_facts.push_back(c.facts[id]);

  c.train_docs.reserve(2 * universe - n_heldout);
  for (int64_t id = 0; id < universe; ++id) {
    const Fact& f = c.facts[id];
    int32_t pre = static_cast<int32_t>(rng.uniform_int(max_affix + 1));
    int32_t suf = static_cast<int32_t>(rng.uniform_int(max_affix + 1));
    c.train_docs.push_back(realize_document(f, static_cast<int32_t>(id), c.vocab, pre, suf, rng));
    if (!heldout_set.count(id)) {
      pre = static_cast<int32_t>(rng.uniform_int(max_affix + 1));
      suf = static_cast<int32_t>(rng.uniform_int(max_affix + 1));
      c.train_docs.push_back(
          realize_document(reverse_fact(c.vocab, f), static_cast<int32_t>(id), c.vocab, pre, suf, rng));
    }
  }

  c.manifest = {
      {"format_version", 1},
      {"kind", "simple_reversal"},
      {"seed", seed},
      {"params",
       {{"n_entities", n_entities},
        {"n_relations", n_relations},
        {"n_heldout", n_heldout},
        {"max_affix", max_affix}}},
      {"counts",
       {{"facts", c.facts.size()},
        {"train_docs", c.train_docs.size()},
        {"heldout", c.heldout_facts.size()},
        {"vocab", c.vocab.size()}}},
  };
  return c;
}

Corpus generate_nonsense(int32_t n_comparisons, int32_t n_comparison_words, int32_t repeats,
                         double reverse_fraction, uint64_t seed) {
  if (n_comparisons < 1) throw std::invalid_argument("generate_nonsense: need at least 1 comparison");
  if (n_comparison_words < 1 || n_comparison_words > kMaxComparisonWords)
    throw std::invalid_argument("generate_nonsense: n_comparison_words outside the comparison-word inventory");
  if (repeats < 1) throw std::invalid_argument("generate_nonsense: repeats must be >= 1");
  if (reverse_fraction < 0.0 || reverse_fraction > 1.0)
    throw std::invalid_argument("generate_nonsense: reverse_fraction must be in [0, 1]");

  Corpus c;
  c.vocab = Vocab{2 * n_comparisons, n_comparison_words, kFillerPool};
  Rng rng(seed);

  // fresh entity pair per comparison, comparison word sampled per fact
  for (int32_t i = 0; i < n_comparisons; ++i) {
    int32_t r = static_cast<int32_t>(rng.uniform_int(n_comparison_words));
    c.facts.push_back(Fact{c.vocab.entity(2 * i), c.vocab.relation(r), c.vocab.entity(2 * i + 1),
                           Direction::Forward});
  }

  // floor of the true product; the epsilon absorbs binary representation noise
  // in inputs like 0.4 * 100
  int32_t n_reversed = static_cast<int32_t>(reverse_fraction * n_comparisons + 1e-9);
  auto reversed_ids = rng.sample_without_replacement(n_comparisons, n_reversed);
  std::unordered_set<int64_t> reversed_set(reversed_ids.begin(), reversed_ids.end());

  for (int32_t id = 0; id < n_comparisons; ++id) {
    const Fact& f = c.facts[id];
    for (int32_t k = 0; k < repeats; ++k) {
      int32_t pre = static_cast<int32_t>(rng.uniform_int(kNonsensePreambleMax + 1));
      c.train_docs.push_back(realize_document(f, id, c.vocab, pre, 0, rng));
    }
    if (reversed_set.count(id)) {
      for (int32_t k = 0; k < repeats; ++k) {
        int32_t pre = static_cast<int32_t>(rng.uniform_int(kNonsensePreambleMax + 1));
        c.train_docs.push_back(realize_document(reverse_fact(c.vocab, f), id, c.vocab, pre, 0, rng));
      }
    } else {
      c.heldout_facts.push_back(f);
    }
  }

  c.manifest = {
      {"format_version", 1},
      {"kind", "nonsense"},
      {"seed", seed},
      {"params",
       {{"n_comparisons", n_comparisons},
        {"n_comparison_words", n_comparison_words},
        {"repeats", repeats},
        {"reverse_fraction", reverse_fraction}}},
      {"counts",
       {{"facts", c.facts.size()},
        {"train_docs", c.train_docs.size()},
        {"heldout", c.heldout_facts.size()},
        {"vocab", c.vocab.size()}}},
  };
  return c;
}

void save_corpus(const Corpus& c, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_file(dir / "manifest.json", c.manifest.dump(2) + "\n");

  std::string vocab_text = "# revlab vocab v1\n";
  const Vocab& v = c.vocab;
  for (TokenId t = 0; t < v.size(); ++t) {
    TokenKind k = v.kind(t);
    vocab_text += std::to_string(t) + " " + token_kind_name(k);
    if (k == TokenKind::Relation || k == TokenKind::InverseRelation)
      vocab_text += " " + std::to_string(v.inverse_of(t));
    vocab_text += "\n";
  }
  write_file(dir / "vocab", vocab_text);

  std::string docs_text;
  for (const Document& d : c.train_docs) {
    for (size_t i = 0; i < d.tokens.size(); ++i) {
      if (i) docs_text += ' ';
      docs_text += std::to_string(d.tokens[i]);
    }
    docs_text += " | " + std::to_string(d.source_span.begin) + " " +
                 std::to_string(d.relation_span.begin) + " " + std::to_string(d.target_span.begin) + "\n";
  }
  write_file(dir / "train.tokens", docs_text);

  std::string held_text;
  for (const Fact& f : c.heldout_facts)
    held_text += std::to_string(f.source) + " " + std::to_string(f.relation) + " " +
                 std::to_string(f.target) + "\n";
  write_file(dir / "heldout.facts", held_text);
}

Corpus load_corpus(const std::filesystem::path& dir) {
  Corpus c;
  c.manifest = nlohmann::json::parse(slurp_file(dir / "manifest.json"));

  // vocab: verify the dense role layout the generators emit
  {
    std::istringstream ss(slurp_file(dir / "vocab"));
    std::string line;
    std::vector<std::pair<std::string, TokenId>> entries;  // (kind, inverse or -1)
    std::vector<TokenId> inverses;
    while (std::getline(ss, line)) {
      if (line.empty() || line[0] == '#') continue;
      auto parts = split(line, ' ');
      if (parts.size() < 2) throw std::runtime_error("vocab: malformed line: " + line);
      TokenId id = std::stoi(parts[0]);
      if (id != static_cast<TokenId>(entries.size()))
        throw std::runtime_error("vocab: ids must be dense and ascending");
      entries.emplace_back(parts[1], parts.size() > 2 ? std::stoi(parts[2]) : -1);
    }
    int32_t ne = 0, nr = 0, ninv = 0, nf = 0;
    for (auto& [kind, inv] : entries) {
      if (kind == "entity") ++ne;
      else if (kind == "relation") ++nr;
      else if (kind == "inverse_relation") ++ninv;
      else if (kind == "filler") ++nf;
    }
    if (nr != ninv) throw std::runtime_error("vocab: relation/inverse counts differ");
    c.vocab = Vocab{ne, nr, nf};
    if (c.vocab.size() != static_cast<int32_t>(entries.size()))
      throw std::runtime_error("vocab: unexpected token count");
    for (TokenId t = 0; t < c.vocab.size(); ++t) {
      if (entries[t].first != token_kind_name(c.vocab.kind(t)))
        throw std::runtime_error("vocab: role layout mismatch at id " + std::to_string(t));
      if (entries[t].second >= 0 && entries[t].second != c.vocab.inverse_of(t))
        throw std::runtime_error("vocab: inverse pairing mismatch at id " + std::to_string(t));
    }
  }

  // documents; the fact table is rebuilt in first-appearance order
  std::unordered_map<uint64_t, int32_t> fact_ids;
  {
    std::istringstream ss(slurp_file(dir / "train.tokens"));
    std::string line;
    while (std::getline(ss, line)) {
      if (line.empty()) continue;
      auto halves = split(line, '|');
      if (halves.size() != 2) throw std::runtime_error("train.tokens: missing span triple: " + line);
      Document d;
      for (const auto& tok : split(halves[0], ' '))
        if (!tok.empty()) d.tokens.push_back(std::stoi(tok));
      std::vector<int32_t> idx;
      for (const auto& tok : split(halves[1], ' '))
        if (!tok.empty()) idx.push_back(std::stoi(tok));
      if (idx.size() != 3) throw std::runtime_error("train.tokens: span triple must have 3 indices");
      d.source_span = {idx[0], idx[0] + 1};
      d.relation_span = {idx[1], idx[1] + 1};
      d.target_span = {idx[2], idx[2] + 1};
      for (Span s : {d.source_span, d.relation_span, d.target_span})
        if (s.begin < 0 || s.end > static_cast<int32_t>(d.tokens.size()))
          throw std::runtime_error("train.tokens: span out of bounds");
      TokenId rel = d.tokens[d.relation_span.begin];
      TokenKind rk = c.vocab.kind(rel);
      if (rk != TokenKind::Relation && rk != TokenKind::InverseRelation)
        throw std::runtime_error("train.tokens: relation span does not cover a relation token");
      d.direction = rk == TokenKind::Relation ? Direction::Forward : Direction::Reverse;
      Fact fwd{d.tokens[d.source_span.begin],
               rk == TokenKind::Relation ? rel : c.vocab.inverse_of(rel),
               d.tokens[d.target_span.begin], Direction::Forward};
      uint64_t key = triple_key(fwd.source, fwd.relation, fwd.target);
      auto [it, inserted] = fact_ids.emplace(key, static_cast<int32_t>(c.facts.size()));
      if (inserted) c.facts.push_back(fwd);
      d.fact_id = it->second;
      c.train_docs.push_back(std::move(d));
    }
  }

  {
    std::istringstream ss(slurp_file(dir / "heldout.facts"));
    std::string line;
    while (std::getline(ss, line)) {
      if (line.empty()) continue;
      auto parts = split(line, ' ');
      if (parts.size() != 3) throw std::runtime_error("heldout.facts: expected 3 ids per line");
      c.heldout_facts.push_back(
          Fact{std::stoi(parts[0]), std::stoi(parts[1]), std::stoi(parts[2]), Direction::Forward});
    }
  }
  return c;
}

void audit_corpus(const Corpus& c) {
  validate(c.vocab);
  const Vocab& v = c.vocab;

  std::unordered_set<uint64_t> heldout_reverse;
  for (const Fact& f : c.heldout_facts) {
    if (f.direction != Direction::Forward) throw std::runtime_error("audit: heldout facts must be forward");
    Fact r = reverse_fact(v, f);
    heldout_reverse.insert(triple_key(r.source, r.relation, r.target));
  }

  std::unordered_set<uint64_t> heldout_forward_seen;
  for (const Document& d : c.train_docs) {
    if (d.fact_id < 0 || d.fact_id >= static_cast<int32_t>(c.facts.size()))
      throw std::runtime_error("audit: document fact_id out of range");
    const Fact& fwd = c.facts[d.fact_id];
    Fact realized = d.direction == Direction::Forward ? fwd : reverse_fact(v, fwd);

    for (Span s : {d.source_span, d.relation_span, d.target_span})
      if (s.begin < 0 || s.end > static_cast<int32_t>(d.tokens.size()) || s.len() != 1)
        throw std::runtime_error("audit: span out of bounds or not single-token");
    if (d.tokens[d.source_span.begin] != fwd.source || d.tokens[d.target_span.begin] != fwd.target ||
        d.tokens[d.relation_span.begin] != realized.relation)
      throw std::runtime_error("audit: spans do not decode to the owning fact");

    for (int32_t i = 0; i < static_cast<int32_t>(d.tokens.size()); ++i) {
      bool in_span = (i >= d.source_span.begin && i < d.source_span.end) ||
                     (i >= d.relation_span.begin && i < d.relation_span.end) ||
                     (i >= d.target_span.begin && i < d.target_span.end);
      TokenKind k = v.kind(d.tokens[i]);
      if (in_span) {
        if (k == TokenKind::Filler || k == TokenKind::Mask || k == TokenKind::Sep || k == TokenKind::Pad)
          throw std::runtime_error("audit: span token has a non-fact role");
      } else if (k != TokenKind::Filler) {
        throw std::runtime_error("audit: non-filler token outside fact spans");
      }
    }

    // leakage: structural check plus a raw token-window scan
    if (d.direction == Direction::Reverse &&
        heldout_reverse.count(triple_key(realized.source, realized.relation, realized.target)))
      throw std::runtime_error("audit: train document realizes the reverse of a heldout fact");
    for (size_t i = 0; i + 3 <= d.tokens.size(); ++i)
      if (heldout_reverse.count(triple_key(d.tokens[i], d.tokens[i + 1], d.tokens[i + 2])))
        throw std::runtime_error("audit: heldout reverse triple appears verbatim in a train document");

    if (d.direction == Direction::Forward)
      heldout_forward_seen.insert(triple_key(fwd.source, fwd.relation, fwd.target));
  }

  for (const Fact& f : c.heldout_facts)
    if (!heldout_forward_seen.count(triple_key(f.source, f.relation, f.target)))
      throw std::runtime_error("audit: heldout fact has no forward train document");
}

}  // namespace revlab
