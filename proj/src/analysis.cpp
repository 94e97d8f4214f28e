#include "revlab/analysis.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "revlab/rng.hpp"

namespace revlab {

namespace {

constexpr uint64_t kSliceSalt = 0x5de0b6a94c17f382ull;

uint64_t record_key(int64_t fact_id, Direction dir, int32_t layer, QueryKind kind) {
  return (static_cast<uint64_t>(fact_id) << 16) | (static_cast<uint64_t>(layer) << 2) |
         (static_cast<uint64_t>(dir == Direction::Reverse) << 1) |
         static_cast<uint64_t>(kind == QueryKind::AnswerSlotUnmasked);
}

struct RecordIndex {
  std::unordered_map<uint64_t, const ActivationRecord*> map;
  int32_t n_layers = 0;
  int64_t max_fact_id = -1;

  explicit RecordIndex(const std::vector<ActivationRecord>& records) {
    for (const auto& r : records) {
      map.emplace(record_key(r.fact_id, r.direction, r.layer, r.query_kind), &r);
      n_layers = std::max(n_layers, r.layer + 1);
      max_fact_id = std::max(max_fact_id, r.fact_id);
    }
  }

  const ActivationRecord& at(int64_t fact_id, Direction dir, int32_t layer, QueryKind kind) const {
    auto it = map.find(record_key(fact_id, dir, layer, kind));
    if (it == map.end()) throw std::invalid_argument("missing activation record for requested fact");
    return *it->second;
  }

  bool has(int64_t fact_id, Direction dir, int32_t layer, QueryKind kind) const {
    return map.count(record_key(fact_id, dir, layer, kind)) > 0;
  }
};

bool same_fact(const Fact& a, const Fact& b) {
  return a.source == b.source && a.relation == b.relation && a.target == b.target;
}

bool shares_entity(const Fact& a, const Fact& b) {
  return b.source == a.source || b.source == a.target || b.target == a.source ||
         b.target == a.target;
}

bool kind_matches(ReferenceKind kind, const Fact& a, const Fact& b) {
  switch (kind) {
    case ReferenceKind::SameSource:
      return b.source == a.source && !same_fact(a, b);
    case ReferenceKind::SameRelation:
      return b.relation == a.relation && b.source != a.source;
    case ReferenceKind::Unrelated:
      return b.relation != a.relation && !shares_entity(a, b);
    default:
      throw std::logic_error("kind has no partner predicate");
  }
}

}  // namespace

const char* reference_kind_name(ReferenceKind kind) {
  switch (kind) {
    case ReferenceKind::ReverseFact:
      return "reverse_fact";
    case ReferenceKind::SameSource:
      return "same_source";
    case ReferenceKind::SameRelation:
      return "same_relation";
    case ReferenceKind::Unrelated:
      return "unrelated";
    case ReferenceKind::MaskedVsUnmasked:
      return "masked_vs_unmasked";
  }
  throw std::logic_error("unknown reference kind");
}

std::vector<ActivationRecord> extract_states(const Params& ps, const Vocab& vocab,
                                             const std::vector<Fact>& facts, Objective objective,
                                             bool full_sequence_decoder_state) {
  AttentionMode mode = attention_for(objective);
  bool mlm = objective == Objective::Mlm;
  std::vector<ActivationRecord> out;
  out.reserve(facts.size() * 2 * ps.config.n_layers * 2);

  auto trace_one = [&](std::span<const TokenId> tokens, int32_t pos, int64_t fact_id,
                       Direction dir, QueryKind qk) {
    ForwardTrace<float> trace;
    std::vector<int32_t> want{pos};
    forward(ps, tokens, mode, &trace, want);
    for (int32_t l = 0; l < ps.config.n_layers; ++l) {
      ActivationRecord rec;
      rec.fact_id = fact_id;
      rec.direction = dir;
      rec.layer = l;
      rec.query_kind = qk;
      rec.vec.assign(trace.acts[l].row(0), trace.acts[l].row(0) + ps.config.d_mlp);
      out.push_back(std::move(rec));
    }
  };

  for (size_t i = 0; i < facts.size(); ++i) {
    const Fact& f = facts[i];
    if (f.direction != Direction::Forward)
      throw std::invalid_argument("extract_states expects forward-orientation facts");
    TokenId inv = vocab.inverse_of(f.relation);
    struct Posed {
      Direction dir;
      TokenId first, rel, answer;
    } posed[2] = {{Direction::Forward, f.source, f.relation, f.target},
                  {Direction::Reverse, f.target, inv, f.source}};
    for (const Posed& p : posed) {
      std::vector<TokenId> full{p.first, p.rel, p.answer};
      if (mlm) {
        std::vector<TokenId> masked{p.first, p.rel, vocab.mask_token()};
        trace_one(masked, 2, static_cast<int64_t>(i), p.dir, QueryKind::AnswerSlotMasked);
      } else if (full_sequence_decoder_state) {
        trace_one(full, 2, static_cast<int64_t>(i), p.dir, QueryKind::AnswerSlotMasked);
      } else {
        std::vector<TokenId> prompt{p.first, p.rel};
        trace_one(prompt, 1, static_cast<int64_t>(i), p.dir, QueryKind::AnswerSlotMasked);
      }
      trace_one(full, 2, static_cast<int64_t>(i), p.dir, QueryKind::AnswerSlotUnmasked);
    }
  }
  return out;
}

double cosine_distance(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine: dimension mismatch");
  double dot = 0, na = 0, nb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0 || nb == 0) throw std::invalid_argument("cosine: zero-norm vector");
  return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

DistanceCurve mean_cosine_distance(const std::vector<ActivationRecord>& records,
                                   const std::vector<Fact>& facts, ReferenceKind kind,
                                   int32_t n_facts, uint64_t seed) {
  if (records.empty()) throw std::invalid_argument("no activation records");
  if (n_facts < 1) throw std::invalid_argument("n_facts must be >= 1");
  RecordIndex idx(records);
  int32_t n_layers = idx.n_layers;

  std::vector<int64_t> eligible;
  for (size_t i = 0; i < facts.size(); ++i)
    if (idx.has(static_cast<int64_t>(i), Direction::Forward, 0, QueryKind::AnswerSlotMasked))
      eligible.push_back(static_cast<int64_t>(i));
  if (static_cast<int32_t>(eligible.size()) < n_facts)
    throw std::invalid_argument("fewer facts with records than n_facts");

  Rng rng(seed);
  std::vector<int64_t> anchor_pick = rng.sample_without_replacement(
      static_cast<int64_t>(eligible.size()), n_facts);

  // one partner per anchor, shared across layers
  std::vector<std::pair<int64_t, int64_t>> pairs;
  for (int64_t pick : anchor_pick) {
    int64_t a = eligible[pick];
    int64_t partner = -1;
    if (kind == ReferenceKind::ReverseFact || kind == ReferenceKind::MaskedVsUnmasked) {
      partner = a;
    } else {
      std::vector<int64_t> candidates;
      for (int64_t b : eligible)
        if (b != a && kind_matches(kind, facts[a], facts[b])) candidates.push_back(b);
      if (candidates.empty())
        throw std::invalid_argument(std::string("empty reference set for kind ") +
                                    reference_kind_name(kind));
      partner = candidates[rng.uniform_int(static_cast<int64_t>(candidates.size()))];
    }
    pairs.emplace_back(a, partner);
  }

  DistanceCurve curve;
  curve.kind = kind;
  curve.n_facts = n_facts;
  for (int32_t l = 0; l < n_layers; ++l) {
    double sum = 0, sum_sq = 0;
    for (auto [a, b] : pairs) {
      const auto& anchor = idx.at(a, Direction::Forward, l, QueryKind::AnswerSlotMasked);
      const ActivationRecord* other = nullptr;
      switch (kind) {
        case ReferenceKind::ReverseFact:
          other = &idx.at(a, Direction::Reverse, l, QueryKind::AnswerSlotMasked);
          break;
        case ReferenceKind::MaskedVsUnmasked:
          other = &idx.at(a, Direction::Forward, l, QueryKind::AnswerSlotUnmasked);
          break;
        default:
          other = &idx.at(b, Direction::Forward, l, QueryKind::AnswerSlotMasked);
      }
      double d = cosine_distance(anchor.vec, other->vec);
      sum += d;
      sum_sq += d * d;
    }
    double mean = sum / n_facts;
    double var = n_facts > 1 ? std::max(0.0, (sum_sq - n_facts * mean * mean) / (n_facts - 1)) : 0.0;
    curve.mean.push_back(mean);
    curve.std_dev.push_back(std::sqrt(var));
  }
  return curve;
}

std::vector<Fact> analysis_fact_slice(const Corpus& corpus, int32_t min_facts, uint64_t seed) {
  if (min_facts < 1) throw std::invalid_argument("min_facts must be >= 1");
  auto key = [](const Fact& f) {
    return (static_cast<uint64_t>(f.source) << 42) ^ (static_cast<uint64_t>(f.relation) << 21) ^
           static_cast<uint64_t>(f.target);
  };
  std::unordered_set<uint64_t> heldout;
  for (const Fact& f : corpus.heldout_facts) heldout.insert(key(f));

  // source groups in first-appearance order; a group with any heldout member
  // is dropped so every slice fact has both directions trained
  struct Group {
    std::vector<Fact> facts;
    bool clean = true;
  };
  std::unordered_map<TokenId, size_t> group_of;
  std::vector<Group> groups;
  for (const Fact& f : corpus.facts) {
    auto [it, fresh] = group_of.try_emplace(f.source, groups.size());
    if (fresh) groups.emplace_back();
    Group& g = groups[it->second];
    if (heldout.count(key(f)))
      g.clean = false;
    else
      g.facts.push_back(f);
  }
  std::vector<size_t> order;
  for (size_t i = 0; i < groups.size(); ++i)
    if (groups[i].clean && groups[i].facts.size() >= 2) order.push_back(i);
  if (order.empty())
    throw std::invalid_argument("no source entity with 2+ fully trained facts to analyze");

  Rng rng(hash_combine(seed, kSliceSalt));
  rng.shuffle(order);
  std::vector<Fact> slice;
  for (size_t gi : order) {
    if (static_cast<int32_t>(slice.size()) >= min_facts) break;
    const auto& fs = groups[gi].facts;
    slice.insert(slice.end(), fs.begin(), fs.end());
  }
  return slice;
}

}  // namespace revlab
