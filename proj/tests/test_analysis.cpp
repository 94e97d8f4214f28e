#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "revlab/analysis.hpp"
#include "revlab/corpus.hpp"
#include "revlab/model.hpp"
#include "revlab/probe.hpp"
#include "revlab/rng.hpp"

using namespace revlab;

namespace {

ModelConfig analysis_model(const Corpus& corpus, Objective objective) {
  ModelConfig m;
  m.n_layers = 2;
  m.d_model = 16;
  m.n_heads = 2;
  m.d_mlp = 32;
  m.vocab_size = corpus.vocab.size();
  m.max_seq_len = 8;
  m.attention = attention_for(objective);
  return m;
}

ActivationRecord rec(int64_t id, Direction dir, int32_t layer, QueryKind kind,
                     std::vector<float> v) {
  ActivationRecord r;
  r.fact_id = id;
  r.direction = dir;
  r.layer = layer;
  r.query_kind = kind;
  r.vec = std::move(v);
  return r;
}

const ActivationRecord& find_record(const std::vector<ActivationRecord>& records, int64_t id,
                                    Direction dir, int32_t layer, QueryKind kind) {
  for (const auto& r : records)
    if (r.fact_id == id && r.direction == dir && r.layer == layer && r.query_kind == kind)
      return r;
  REQUIRE(false);
  return records.front();
}

// three facts: f0 and f1 share a source, f2 shares a relation with f0 only
std::vector<Fact> handmade_facts() {
  return {{100, 200, 101, Direction::Forward},
          {100, 201, 102, Direction::Forward},
          {103, 200, 104, Direction::Forward}};
}

// handmade two-layer records with known cosine geometry
std::vector<ActivationRecord> handmade_records() {
  std::vector<ActivationRecord> rs;
  auto add = [&](int64_t id, Direction d, int32_t l, QueryKind k, float x, float y) {
    rs.push_back(rec(id, d, l, k, {x, y}));
  };
  using enum QueryKind;
  // layer 0
  add(0, Direction::Forward, 0, AnswerSlotMasked, 1, 0);
  add(0, Direction::Reverse, 0, AnswerSlotMasked, 0, 1);    // d = 1
  add(0, Direction::Forward, 0, AnswerSlotUnmasked, -1, 0);  // d = 2
  add(1, Direction::Forward, 0, AnswerSlotMasked, 1, 1);     // d(f0,f1) = 1 - 1/sqrt(2)
  add(1, Direction::Reverse, 0, AnswerSlotMasked, 1, 0);
  add(1, Direction::Forward, 0, AnswerSlotUnmasked, 1, 1);
  add(2, Direction::Forward, 0, AnswerSlotMasked, 0, 2);
  add(2, Direction::Reverse, 0, AnswerSlotMasked, 0, 2);
  add(2, Direction::Forward, 0, AnswerSlotUnmasked, 0, 2);
  // layer 1
  add(0, Direction::Forward, 1, AnswerSlotMasked, 2, 0);
  add(0, Direction::Reverse, 1, AnswerSlotMasked, 2, 0);    // d = 0
  add(0, Direction::Forward, 1, AnswerSlotUnmasked, 0, 2);  // d = 1
  add(1, Direction::Forward, 1, AnswerSlotMasked, 0, 3);
  add(1, Direction::Reverse, 1, AnswerSlotMasked, 0, -3);  // d = 2
  add(1, Direction::Forward, 1, AnswerSlotUnmasked, 0, 3);
  add(2, Direction::Forward, 1, AnswerSlotMasked, 1, 0);
  add(2, Direction::Reverse, 1, AnswerSlotMasked, 1, 0);
  add(2, Direction::Forward, 1, AnswerSlotUnmasked, 1, 0);
  return rs;
}

}  // namespace

TEST_CASE("cosine distance geometry") {
  std::vector<float> e1 = {1, 0, 0}, e2 = {0, 1, 0}, neg = {-2, 0, 0}, mix = {1, 1, 0};
  CHECK(cosine_distance(e1, e1) == doctest::Approx(0).epsilon(1e-12));
  CHECK(cosine_distance(e1, e2) == doctest::Approx(1).epsilon(1e-12));
  CHECK(cosine_distance(e1, neg) == doctest::Approx(2).epsilon(1e-12));
  CHECK(cosine_distance(e1, mix) == doctest::Approx(1 - 1 / std::sqrt(2.0)).epsilon(1e-12));
  // scale invariance
  std::vector<float> e1_scaled = {7, 0, 0};
  CHECK(cosine_distance(e1_scaled, mix) == doctest::Approx(cosine_distance(e1, mix)).epsilon(1e-12));

  std::vector<float> zero = {0, 0, 0}, short_vec = {1, 0};
  CHECK_THROWS_AS((void)cosine_distance(e1, zero), std::invalid_argument);
  CHECK_THROWS_AS((void)cosine_distance(e1, short_vec), std::invalid_argument);
}

TEST_CASE("extract_states records every fact, direction, layer, and query kind") {
  Corpus corpus = generate_simple_reversal(10, 3, 4, 0, 7);
  auto ps = init_params<float>(analysis_model(corpus, Objective::Mlm), 3);
  std::vector<Fact> facts = {corpus.facts[0], corpus.facts[7], corpus.facts[13]};
  auto records = extract_states(ps, corpus.vocab, facts, Objective::Mlm);

  CHECK(records.size() == facts.size() * 2 * 2 * 2);  // dirs x layers x kinds
  std::set<std::tuple<int64_t, int, int, int>> seen;
  for (const auto& r : records) {
    CHECK(r.vec.size() == 32);
    seen.insert({r.fact_id, static_cast<int>(r.direction), r.layer,
                 static_cast<int>(r.query_kind)});
  }
  CHECK(seen.size() == records.size());

  auto again = extract_states(ps, corpus.vocab, facts, Objective::Mlm);
  for (size_t i = 0; i < records.size(); ++i) CHECK(records[i].vec == again[i].vec);

  std::vector<Fact> reversed = {reverse_fact(corpus.vocab, corpus.facts[0])};
  CHECK_THROWS_AS((void)extract_states(ps, corpus.vocab, reversed, Objective::Mlm),
                  std::invalid_argument);
}

TEST_CASE("extract_states anchors match hand-built prompts") {
  Corpus corpus = generate_simple_reversal(10, 3, 4, 0, 7);
  const Vocab& v = corpus.vocab;
  std::vector<Fact> facts = {corpus.facts[2]};
  const Fact& f = facts[0];
  TokenId inv = v.inverse_of(f.relation);

  auto probe_vec = [](const Params& ps, std::vector<TokenId> toks, AttentionMode mode,
                      int32_t pos, int32_t layer) {
    ForwardTrace<float> tr;
    std::vector<int32_t> want{pos};
    forward<float>(ps, toks, mode, &tr, want);
    return std::vector<float>(tr.acts[layer].row(0), tr.acts[layer].row(0) + tr.acts[layer].cols);
  };

  // MLM: mask sits at the answer slot of each orientation
  auto mlm_ps = init_params<float>(analysis_model(corpus, Objective::Mlm), 3);
  auto mlm_recs = extract_states(mlm_ps, v, facts, Objective::Mlm);
  for (int32_t l = 0; l < 2; ++l) {
    CHECK(find_record(mlm_recs, 0, Direction::Forward, l, QueryKind::AnswerSlotMasked).vec ==
          probe_vec(mlm_ps, {f.source, f.relation, v.mask_token()}, AttentionMode::Bidirectional,
                    2, l));
    CHECK(find_record(mlm_recs, 0, Direction::Reverse, l, QueryKind::AnswerSlotMasked).vec ==
          probe_vec(mlm_ps, {f.target, inv, v.mask_token()}, AttentionMode::Bidirectional, 2, l));
    CHECK(find_record(mlm_recs, 0, Direction::Forward, l, QueryKind::AnswerSlotUnmasked).vec ==
          probe_vec(mlm_ps, {f.source, f.relation, f.target}, AttentionMode::Bidirectional, 2, l));
  }

  // decoder: the state that predicts the answer is the last prompt position
  auto dec_ps = init_params<float>(analysis_model(corpus, Objective::Ntp), 4);
  auto dec_recs = extract_states(dec_ps, v, facts, Objective::Ntp);
  for (int32_t l = 0; l < 2; ++l) {
    CHECK(find_record(dec_recs, 0, Direction::Forward, l, QueryKind::AnswerSlotMasked).vec ==
          probe_vec(dec_ps, {f.source, f.relation}, AttentionMode::Causal, 1, l));
    CHECK(find_record(dec_recs, 0, Direction::Reverse, l, QueryKind::AnswerSlotMasked).vec ==
          probe_vec(dec_ps, {f.target, inv}, AttentionMode::Causal, 1, l));
    CHECK(find_record(dec_recs, 0, Direction::Forward, l, QueryKind::AnswerSlotUnmasked).vec ==
          probe_vec(dec_ps, {f.source, f.relation, f.target}, AttentionMode::Causal, 2, l));
  }

  // with the flag the anchor moves onto the answer token of the full sequence
  auto full_recs = extract_states(dec_ps, v, facts, Objective::Ntp, true);
  for (int32_t l = 0; l < 2; ++l)
    CHECK(find_record(full_recs, 0, Direction::Forward, l, QueryKind::AnswerSlotMasked).vec ==
          probe_vec(dec_ps, {f.source, f.relation, f.target}, AttentionMode::Causal, 2, l));
}

TEST_CASE("mean cosine distance against handmade geometry") {
  std::vector<Fact> facts = handmade_facts();
  auto records = handmade_records();
  double d01 = 1 - 1 / std::sqrt(2.0);

  // ReverseFact over facts 0 and 1: layer means are hand-computable
  DistanceCurve curve = mean_cosine_distance(records, facts, ReferenceKind::ReverseFact, 2, 5);
  // anchors are sampled from all three facts; restrict to a two-fact list
  std::vector<Fact> two = {facts[0], facts[1]};
  std::vector<ActivationRecord> two_recs;
  for (const auto& r : records)
    if (r.fact_id <= 1) two_recs.push_back(r);
  curve = mean_cosine_distance(two_recs, two, ReferenceKind::ReverseFact, 2, 5);
  REQUIRE(curve.mean.size() == 2);
  CHECK(curve.kind == ReferenceKind::ReverseFact);
  CHECK(curve.n_facts == 2);
  CHECK(curve.mean[0] == doctest::Approx((1 + d01) / 2).epsilon(1e-12));
  CHECK(curve.std_dev[0] == doctest::Approx(std::fabs(1 - d01) / std::sqrt(2.0)).epsilon(1e-9));
  CHECK(curve.mean[1] == doctest::Approx((0 + 2) / 2.0).epsilon(1e-12));
  CHECK(curve.std_dev[1] == doctest::Approx(std::sqrt(2.0)).epsilon(1e-9));

  DistanceCurve unmasked =
      mean_cosine_distance(two_recs, two, ReferenceKind::MaskedVsUnmasked, 2, 5);
  CHECK(unmasked.mean[0] == doctest::Approx((2 + 0) / 2.0).epsilon(1e-12));
  CHECK(unmasked.mean[1] == doctest::Approx((1 + 0) / 2.0).epsilon(1e-12));

  // SameSource: f0 and f1 are each other's only partner
  DistanceCurve same_source =
      mean_cosine_distance(two_recs, two, ReferenceKind::SameSource, 2, 5);
  CHECK(same_source.mean[0] == doctest::Approx(d01).epsilon(1e-12));
  CHECK(same_source.mean[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(same_source.std_dev[0] < 1e-6);

  // determinism under a fixed seed
  DistanceCurve again = mean_cosine_distance(two_recs, two, ReferenceKind::ReverseFact, 2, 5);
  CHECK(again.mean == curve.mean);
}

TEST_CASE("mean cosine distance error paths") {
  std::vector<Fact> facts = handmade_facts();
  auto records = handmade_records();

  CHECK_THROWS_AS((void)mean_cosine_distance({}, facts, ReferenceKind::ReverseFact, 1, 0),
                  std::invalid_argument);
  CHECK_THROWS_AS((void)mean_cosine_distance(records, facts, ReferenceKind::ReverseFact, 0, 0),
                  std::invalid_argument);
  CHECK_THROWS_AS((void)mean_cosine_distance(records, facts, ReferenceKind::ReverseFact, 4, 0),
                  std::invalid_argument);
  // f0's only unrelated candidate shares a relation, so the reference set is empty
  std::vector<Fact> pair = {facts[0], facts[2]};
  std::vector<ActivationRecord> pair_recs;
  for (const auto& r : records)
    if (r.fact_id == 0 || r.fact_id == 2) pair_recs.push_back(r);
  CHECK_THROWS_AS((void)mean_cosine_distance(pair_recs, pair, ReferenceKind::Unrelated, 2, 0),
                  std::invalid_argument);
}

TEST_CASE("analysis fact slice keeps whole trained source groups") {
  Corpus corpus = generate_simple_reversal(12, 3, 5, 0, 11);
  std::vector<Fact> slice = analysis_fact_slice(corpus, 9, 1);
  CHECK(slice.size() >= 9);

  std::set<std::tuple<TokenId, TokenId, TokenId>> heldout;
  for (const Fact& f : corpus.heldout_facts) heldout.insert({f.source, f.relation, f.target});
  std::set<TokenId> slice_sources;
  for (const Fact& f : slice) {
    CHECK(f.direction == Direction::Forward);
    CHECK(heldout.count({f.source, f.relation, f.target}) == 0);
    slice_sources.insert(f.source);
  }
  // whole groups: every corpus fact of an included source appears in the slice
  for (TokenId s : slice_sources) {
    size_t in_corpus = 0, in_slice = 0;
    for (const Fact& f : corpus.facts)
      if (f.source == s && !heldout.count({f.source, f.relation, f.target})) ++in_corpus;
    for (const Fact& f : slice)
      if (f.source == s) ++in_slice;
    CHECK(in_slice == in_corpus);
    CHECK(in_slice >= 2);
  }

  std::vector<Fact> replay = analysis_fact_slice(corpus, 9, 1);
  CHECK(replay == slice);

  // asking for more facts than exist returns every clean group
  std::vector<Fact> all = analysis_fact_slice(corpus, 100000, 1);
  std::vector<Fact> all2 = analysis_fact_slice(corpus, 100000, 99);
  CHECK(all.size() == all2.size());
  CHECK(all.size() <= corpus.facts.size());

  CHECK_THROWS_AS((void)analysis_fact_slice(corpus, 0, 1), std::invalid_argument);
  // one relation per entity: no source group reaches two facts
  Corpus thin = generate_simple_reversal(6, 1, 0, 0, 2);
  CHECK_THROWS_AS((void)analysis_fact_slice(thin, 2, 1), std::invalid_argument);
}

TEST_CASE("probe dataset is balanced, split by source group, and made of real deltas") {
  // wide corpus so the unrelated control finds partners inside a 30% test split
  Corpus corpus = generate_simple_reversal(20, 3, 4, 0, 7);
  auto ps = init_params<float>(analysis_model(corpus, Objective::Mlm), 3);
  std::vector<Fact> facts = analysis_fact_slice(corpus, 36, 1);
  auto records = extract_states(ps, corpus.vocab, facts, Objective::Mlm);

  for (ControlKind kind :
       {ControlKind::SameSource, ControlKind::SameRelation, ControlKind::Unrelated}) {
    ProbeDataset ds = build_probe_dataset(records, facts, kind, 1, 42);
    CHECK(ds.layer == 1);
    CHECK(ds.control_kind == kind);
    CHECK(ds.train_idx.size() + ds.test_idx.size() == ds.examples.size());
    CHECK(ds.examples.size() == facts.size() * 2);

    auto count_labels = [&](const std::vector<int32_t>& idx) {
      int ones = 0, zeros = 0;
      for (int32_t i : idx) (ds.examples[i].label == 1 ? ones : zeros)++;
      return std::pair(ones, zeros);
    };
    auto [tr1, tr0] = count_labels(ds.train_idx);
    auto [te1, te0] = count_labels(ds.test_idx);
    CHECK(tr1 == tr0);
    CHECK(te1 == te0);
    CHECK(te1 >= 2);

    // rebuild the per-fact states this dataset drew from
    std::vector<const std::vector<float>*> fwd(facts.size()), rev(facts.size());
    for (const auto& r : records) {
      if (r.layer != 1 || r.query_kind != QueryKind::AnswerSlotMasked) continue;
      (r.direction == Direction::Forward ? fwd : rev)[r.fact_id] = &r.vec;
    }
    auto matches_delta = [&](const std::vector<double>& d, const std::vector<float>& a,
                             const std::vector<float>& b) {
      for (size_t j = 0; j < d.size(); ++j)
        if (d[j] != static_cast<double>(a[j]) - static_cast<double>(b[j])) return false;
      return true;
    };
    // every label-1 delta is fwd-rev of some fact; label-0 is fwd-fwd of a
    // control-matched pair. recover the anchor of each example for the
    // group-disjointness check below.
    auto anchor_of = [&](const ProbeExample& ex) {
      for (size_t a = 0; a < facts.size(); ++a) {
        if (ex.label == 1) {
          if (matches_delta(ex.delta, *fwd[a], *rev[a])) return static_cast<int64_t>(a);
        } else {
          for (size_t b = 0; b < facts.size(); ++b)
            if (b != a && matches_delta(ex.delta, *fwd[a], *fwd[b])) {
              bool same =
                  facts[a].source == facts[b].source && facts[a].relation == facts[b].relation;
              CHECK(!same);
              if (kind == ControlKind::SameSource) CHECK(facts[a].source == facts[b].source);
              if (kind == ControlKind::SameRelation)
                CHECK(facts[a].relation == facts[b].relation);
              return static_cast<int64_t>(a);
            }
        }
      }
      return static_cast<int64_t>(-1);
    };
    std::set<TokenId> train_sources, test_sources;
    for (int32_t i : ds.train_idx) {
      int64_t a = anchor_of(ds.examples[i]);
      REQUIRE(a >= 0);
      train_sources.insert(facts[a].source);
    }
    for (int32_t i : ds.test_idx) {
      int64_t a = anchor_of(ds.examples[i]);
      REQUIRE(a >= 0);
      test_sources.insert(facts[a].source);
    }
    for (TokenId s : test_sources) CHECK(train_sources.count(s) == 0);
  }

  // too few source groups to split
  std::vector<Fact> narrow(facts.begin(), facts.begin() + 3);
  auto narrow_recs = extract_states(ps, corpus.vocab, narrow, Objective::Mlm);
  CHECK_THROWS_AS(
      (void)build_probe_dataset(narrow_recs, narrow, ControlKind::SameSource, 0, 42),
      std::invalid_argument);
}

TEST_CASE("probe separates a linearly separable dataset") {
  Rng rng(77);
  ProbeDataset ds;
  ds.control_kind = ControlKind::Unrelated;
  // unit-scale noise so per-dimension z-scoring keeps the margin dominant
  const int n_per = 40, dim = 8;
  for (int i = 0; i < n_per; ++i) {
    std::vector<double> pos(dim), neg(dim);
    for (int j = 0; j < dim; ++j) {
      pos[j] = rng.gaussian();
      neg[j] = rng.gaussian();
    }
    pos[0] += 6.0;
    neg[0] -= 6.0;
    ds.examples.push_back({pos, 1});
    ds.examples.push_back({neg, 0});
  }
  for (int i = 0; i < 2 * n_per; ++i)
    (i < n_per ? ds.train_idx : ds.test_idx).push_back(i);

  ProbeResult res = train_probe(ds);
  CHECK(res.test_accuracy == 1.0);
  CHECK(res.weights.size() == dim);
  bool in_grid = false;
  for (double lam : ProbeOptions{}.lambda_grid) in_grid |= res.lambda == lam;
  CHECK(in_grid);
}

TEST_CASE("probe stays near chance on label noise") {
  Rng rng(99);
  ProbeDataset ds;
  const int n = 240, dim = 16;
  for (int i = 0; i < n; ++i) {
    std::vector<double> x(dim);
    for (int j = 0; j < dim; ++j) x[j] = rng.gaussian();
    ds.examples.push_back({x, static_cast<int32_t>(i % 2)});
    (i < n * 7 / 10 ? ds.train_idx : ds.test_idx).push_back(i);
  }
  ProbeResult res = train_probe(ds);
  CHECK(res.test_accuracy > 0.3);
  CHECK(res.test_accuracy < 0.7);
}

TEST_CASE("probe symmetry: negating features and flipping labels preserves accuracy") {
  Rng rng(123);
  ProbeDataset a, b;
  const int n = 120, dim = 12;
  for (int i = 0; i < n; ++i) {
    std::vector<double> x(dim);
    for (int j = 0; j < dim; ++j) x[j] = rng.gaussian() + (i % 2 ? 0.4 : -0.4);
    std::vector<double> nx(dim);
    for (int j = 0; j < dim; ++j) nx[j] = -x[j];
    a.examples.push_back({x, static_cast<int32_t>(i % 2)});
    b.examples.push_back({nx, static_cast<int32_t>(1 - i % 2)});
    (i < n * 7 / 10 ? a.train_idx : a.test_idx).push_back(i);
    (i < n * 7 / 10 ? b.train_idx : b.test_idx).push_back(i);
  }
  ProbeOptions opts;
  opts.standardize = false;
  CHECK(train_probe(a, opts).test_accuracy == train_probe(b, opts).test_accuracy);
}

TEST_CASE("probe invariance under feature rotation") {
  Rng rng(321);
  ProbeDataset a, b;
  const int n = 120, dim = 12;
  // Givens rotation in the (0, 5) plane by 0.7 radians
  double c = std::cos(0.7), s = std::sin(0.7);
  for (int i = 0; i < n; ++i) {
    std::vector<double> x(dim);
    for (int j = 0; j < dim; ++j) x[j] = rng.gaussian() + (i % 2 ? 0.35 : -0.35);
    std::vector<double> rx = x;
    rx[0] = c * x[0] - s * x[5];
    rx[5] = s * x[0] + c * x[5];
    a.examples.push_back({x, static_cast<int32_t>(i % 2)});
    b.examples.push_back({rx, static_cast<int32_t>(i % 2)});
    (i < n * 7 / 10 ? a.train_idx : a.test_idx).push_back(i);
    (i < n * 7 / 10 ? b.train_idx : b.test_idx).push_back(i);
  }
  ProbeOptions opts;
  opts.standardize = false;
  CHECK(train_probe(a, opts).test_accuracy == train_probe(b, opts).test_accuracy);
}

TEST_CASE("probe rejects an empty or unsplit dataset") {
  ProbeDataset empty;
  CHECK_THROWS_AS((void)train_probe(empty), std::invalid_argument);
  ProbeDataset unsplit;
  unsplit.examples.push_back({{1.0, 2.0}, 1});
  CHECK_THROWS_AS((void)train_probe(unsplit), std::invalid_argument);
}

TEST_CASE("layer probe summary shapes and null-band calibration") {
  // pure-noise states: no layer should rise above its permutation band
  Rng rng(555);
  std::vector<Fact> facts;
  for (int g = 0; g < 8; ++g)
    for (int r = 0; r < 2; ++r)
      facts.push_back({static_cast<TokenId>(100 + g), static_cast<TokenId>(300 + r),
                       static_cast<TokenId>(200 + g * 2 + r), Direction::Forward});
  std::vector<ActivationRecord> records;
  const int n_layers = 2, dim = 12;
  for (size_t i = 0; i < facts.size(); ++i)
    for (int l = 0; l < n_layers; ++l)
      for (Direction d : {Direction::Forward, Direction::Reverse}) {
        std::vector<float> v(dim);
        for (auto& x : v) x = static_cast<float>(rng.gaussian());
        records.push_back(rec(static_cast<int64_t>(i), d, l, QueryKind::AnswerSlotMasked, v));
      }

  LayerProbeSummary sum =
      probe_all_layers(records, facts, ControlKind::SameRelation, 40, 4242);
  CHECK(sum.control_kind == ControlKind::SameRelation);
  REQUIRE(sum.layer_accuracy.size() == n_layers);
  REQUIRE(sum.null_low.size() == n_layers);
  REQUIRE(sum.null_high.size() == n_layers);
  CHECK(sum.max_accuracy ==
        *std::max_element(sum.layer_accuracy.begin(), sum.layer_accuracy.end()));
  for (int l = 0; l < n_layers; ++l) {
    CHECK(sum.null_low[l] <= sum.null_high[l]);
    // the 95% band of a 40-draw null must bracket chance on noise data
    CHECK(sum.null_low[l] <= 0.5);
    CHECK(sum.null_high[l] >= 0.5);
  }
  CHECK(sum.max_null_low <= sum.max_null_high);
  CHECK(sum.max_null_high >= sum.max_null_low);
  CHECK(sum.max_accuracy <= sum.max_null_high);

  CHECK_THROWS_AS((void)probe_all_layers(records, facts, ControlKind::SameRelation, 0, 1),
                  std::invalid_argument);
  CHECK_THROWS_AS((void)probe_all_layers({}, facts, ControlKind::SameRelation, 10, 1),
                  std::invalid_argument);
}

TEST_CASE("control and reference kind names round trip") {
  for (ControlKind k :
       {ControlKind::SameSource, ControlKind::SameRelation, ControlKind::Unrelated})
    CHECK(parse_control_kind(control_kind_name(k)) == k);
  CHECK_THROWS_AS((void)parse_control_kind("bogus"), std::invalid_argument);
  CHECK(std::string(reference_kind_name(ReferenceKind::ReverseFact)) == "reverse_fact");
  CHECK(std::string(reference_kind_name(ReferenceKind::MaskedVsUnmasked)) ==
        "masked_vs_unmasked");
}
