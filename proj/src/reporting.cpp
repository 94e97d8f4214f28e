#include "revlab/reporting.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <stdexcept>

#include "revlab/analysis.hpp"
#include "revlab/checkpoint.hpp"
#include "revlab/probe.hpp"
#include "revlab/rng.hpp"
#include "revlab/svg.hpp"
#include "revlab/util.hpp"
#include "revlab/version.hpp"

namespace revlab {

namespace {

namespace fs = std::filesystem;

constexpr uint64_t kCorpusSalt = 0xc03b9a517fd8e246ull;
constexpr uint64_t kDistanceSalt = 0x8e52f6c1a97d304bull;
constexpr uint64_t kProbeSalt = 0x2d74b8f09c16e5a3ull;

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

double now_sec() {
  using namespace std::chrono;
  return duration<double>(steady_clock::now().time_since_epoch()).count();
}

struct MetricsRow {
  MaskingPolicy policy;
  bool policy_applies = true;  // false for plain NTP
  Objective objective = Objective::Ntp;
  uint64_t seed = 0;
  double rev = 0, fwd = 0;
};

std::string row_policy_name(const MetricsRow& r) {
  return r.policy_applies ? policy_name(r.policy) : "none";
}

struct SuiteCtx {
  std::string out_dir, suite_dir;
  ExperimentShape shape;
  std::vector<uint64_t> seeds;
  ExperimentManifest man;

  void fail(const std::string& stage, const std::string& what) {
    man.failures.push_back(stage + ": " + what);
  }
  void check(const std::string& name, bool pass, const std::string& detail) {
    man.checks.push_back({name, pass, detail});
  }
  std::string path(const std::string& name) const { return suite_dir + "/" + name; }
  void artifact(const std::string& p) { man.artifacts.push_back(p); }
};

void write_metrics_csv(SuiteCtx& ctx, const std::string& name,
                       const std::vector<MetricsRow>& rows) {
  CsvTable t;
  t.header = {"policy", "objective", "seed", "reversal_acc", "forward_acc"};
  for (const auto& r : rows)
    t.rows.push_back({row_policy_name(r), objective_name(r.objective), std::to_string(r.seed),
                      fmt(r.rev), fmt(r.fwd)});
  std::string p = ctx.path(name);
  write_csv(p, t);
  ctx.artifact(p);
  if (!t.rows.empty()) {
    std::string svg = p.substr(0, p.size() - 4) + ".svg";
    render(p, svg);
    ctx.artifact(svg);
  }
}

std::string detail_of(const std::vector<MetricsRow>& rows, bool forward) {
  std::vector<std::string> parts;
  for (const auto& r : rows)
    parts.push_back("seed=" + std::to_string(r.seed) + " " + objective_name(r.objective) + "/" +
                    row_policy_name(r) + "=" + fmt(forward ? r.fwd : r.rev));
  return parts.empty() ? "no data" : join(parts, "; ");
}

template <typename Pred>
std::vector<MetricsRow> pick(const std::vector<MetricsRow>& rows, Pred pred) {
  std::vector<MetricsRow> out;
  for (const auto& r : rows)
    if (pred(r)) out.push_back(r);
  return out;
}

// data-present + every-row predicate; a suite with failed stages fails checks
template <typename Pred>
void check_rows(SuiteCtx& ctx, const std::string& name, const std::vector<MetricsRow>& rows,
                Pred pred, bool forward = false) {
  bool pass = !rows.empty();
  for (const auto& r : rows) pass = pass && pred(r);
  ctx.check(name, pass, detail_of(rows, forward));
}

bool is_standard(const MaskingPolicy& p) { return p.source && p.relation && p.target; }
bool is_source_target(const MaskingPolicy& p) { return p.source && !p.relation && p.target; }
bool is_source_only(const MaskingPolicy& p) { return p.source && !p.relation && !p.target; }

RunArtifacts standard_run(SuiteCtx& ctx, const Corpus& corpus, Objective obj, uint64_t seed) {
  return ensure_run(ctx.out_dir, corpus,
                    make_run(ctx.shape, corpus, obj, parse_policy("standard"), seed));
}

std::vector<Fact> suite_fact_slice(const Corpus& corpus, const ExperimentShape& shape,
                                   uint64_t seed) {
  return analysis_fact_slice(corpus, shape.analysis_facts, seed);
}

// exact pooled mean/std for k groups of equal size n with known group stats
void pool_stats(const std::vector<std::pair<double, double>>& groups, int32_t n_each,
                double* mean_out, double* std_out) {
  int64_t k = static_cast<int64_t>(groups.size()), total = k * n_each;
  double mean = 0;
  for (auto [m, s] : groups) mean += m;
  mean /= static_cast<double>(k);
  double ss = 0;
  for (auto [m, s] : groups) ss += (n_each - 1) * s * s + static_cast<double>(n_each) * m * m;
  ss -= static_cast<double>(total) * mean * mean;
  *mean_out = mean;
  *std_out = total > 1 ? std::sqrt(std::max(0.0, ss / static_cast<double>(total - 1))) : 0.0;
}

void suite_fig1(SuiteCtx& ctx) {
  std::vector<MetricsRow> rows;
  for (uint64_t seed : ctx.seeds) {
    std::string stage = "fig1/seed=" + std::to_string(seed);
    try {
      Corpus corpus = ensure_corpus(ctx.out_dir, ctx.shape, seed);
      for (Objective obj : {Objective::Ntp, Objective::Mlm, Objective::NtpMasking}) {
        RunArtifacts art = standard_run(ctx, corpus, obj, seed);
        rows.push_back({parse_policy("standard"), obj != Objective::Ntp, obj, seed,
                        art.reversal_accuracy, art.forward_accuracy});
      }
    } catch (const std::exception& e) {
      ctx.fail(stage, e.what());
    }
  }
  write_metrics_csv(ctx, "metrics.csv", rows);
  auto by_obj = [&](Objective o) { return pick(rows, [&](auto& r) { return r.objective == o; }); };
  check_rows(ctx, "ntp_reversal_leq_2pct", by_obj(Objective::Ntp),
             [](auto& r) { return r.rev <= kNearZeroMax; });
  check_rows(ctx, "mlm_reversal_geq_95pct", by_obj(Objective::Mlm),
             [](auto& r) { return r.rev >= kHighAccMin; });
  check_rows(ctx, "ntp_masking_reversal_geq_95pct", by_obj(Objective::NtpMasking),
             [](auto& r) { return r.rev >= kHighAccMin; });
  check_rows(ctx, "forward_geq_99pct_all_runs", rows,
             [](auto& r) { return r.fwd >= kForwardMin; }, true);
}

void suite_table1(SuiteCtx& ctx) {
  std::vector<std::pair<Objective, MaskingPolicy>> variants = {
      {Objective::Mlm, parse_policy("standard")},
      {Objective::NtpMasking, parse_policy("standard")},
      {Objective::Mlm, ablation_policy(Ablation::NeverMaskSource)},
      {Objective::NtpMasking, ablation_policy(Ablation::NeverMaskSource)},
  };
  std::vector<MetricsRow> rows;
  for (uint64_t seed : ctx.seeds) {
    for (const auto& [obj, policy] : variants) {
      std::string stage = "table1/seed=" + std::to_string(seed) + "/" + objective_name(obj) + "/" +
                          policy_name(policy);
      try {
        Corpus corpus = ensure_corpus(ctx.out_dir, ctx.shape, seed);
        RunArtifacts art = ensure_run(ctx.out_dir, corpus, make_run(ctx.shape, corpus, obj, policy, seed));
        rows.push_back({policy, true, obj, seed, art.reversal_accuracy, art.forward_accuracy});
      } catch (const std::exception& e) {
        ctx.fail(stage, e.what());
      }
    }
  }
  write_metrics_csv(ctx, "metrics.csv", rows);

  CsvTable summary;
  summary.header = {"policy", "objective", "mean_reversal", "std_reversal",
                    "mean_forward", "std_forward"};
  for (const auto& [obj, policy] : variants) {
    auto sel = pick(rows, [&, o = obj, p = policy](auto& r) {
      return r.objective == o && policy_name(r.policy) == policy_name(p);
    });
    if (sel.empty()) continue;
    double mr = 0, mf = 0;
    for (const auto& r : sel) {
      mr += r.rev;
      mf += r.fwd;
    }
    mr /= sel.size();
    mf /= sel.size();
    double vr = 0, vf = 0;
    for (const auto& r : sel) {
      vr += (r.rev - mr) * (r.rev - mr);
      vf += (r.fwd - mf) * (r.fwd - mf);
    }
    double dn = sel.size() > 1 ? sel.size() - 1.0 : 1.0;
    summary.rows.push_back({policy_name(policy), objective_name(obj), fmt(mr),
                            fmt(std::sqrt(vr / dn)), fmt(mf), fmt(std::sqrt(vf / dn))});
  }
  std::string sp = ctx.path("summary.csv");
  write_csv(sp, summary);
  ctx.artifact(sp);

  auto never_source = [&](Objective o) {
    return pick(rows, [&](auto& r) {
      return r.objective == o && !r.policy.source && r.policy.relation && r.policy.target;
    });
  };
  auto standard = [&](Objective o) {
    return pick(rows, [&](auto& r) { return r.objective == o && is_standard(r.policy); });
  };
  check_rows(ctx, "mlm_standard_geq_95pct", standard(Objective::Mlm),
             [](auto& r) { return r.rev >= kHighAccMin; });
  check_rows(ctx, "ntp_masking_standard_geq_95pct", standard(Objective::NtpMasking),
             [](auto& r) { return r.rev >= kHighAccMin; });
  check_rows(ctx, "mlm_never_mask_source_leq_2pct", never_source(Objective::Mlm),
             [](auto& r) { return r.rev <= kNearZeroMax; });
  check_rows(ctx, "ntp_masking_never_mask_source_leq_2pct", never_source(Objective::NtpMasking),
             [](auto& r) { return r.rev <= kNearZeroMax; });
}

void suite_fig2(SuiteCtx& ctx) {
  std::vector<MetricsRow> rows;
  for (uint64_t seed : ctx.seeds) {
    for (Objective obj : {Objective::Mlm, Objective::NtpMasking}) {
      for (const MaskingPolicy& policy : enumerate_sweep_policies()) {
        std::string stage = "fig2/seed=" + std::to_string(seed) + "/" + objective_name(obj) + "/" +
                            policy_name(policy);
        try {
          Corpus corpus = ensure_corpus(ctx.out_dir, ctx.shape, seed);
          RunArtifacts art =
              ensure_run(ctx.out_dir, corpus, make_run(ctx.shape, corpus, obj, policy, seed));
          rows.push_back({policy, true, obj, seed, art.reversal_accuracy, art.forward_accuracy});
        } catch (const std::exception& e) {
          ctx.fail(stage, e.what());
        }
      }
    }
  }
  write_metrics_csv(ctx, "metrics.csv", rows);

  auto ntpm = pick(rows, [](auto& r) { return r.objective == Objective::NtpMasking; });
  check_rows(ctx, "ntp_masking_source_excluded_leq_2pct",
             pick(ntpm, [](auto& r) { return !r.policy.source; }),
             [](auto& r) { return r.rev <= kNearZeroMax; });
  check_rows(ctx, "ntp_masking_source_included_gt_10pct",
             pick(ntpm, [](auto& r) { return r.policy.source; }),
             [](auto& r) { return r.rev > kSourceIncludedMin; });
  auto mlm = pick(rows, [](auto& r) { return r.objective == Objective::Mlm; });
  check_rows(ctx, "mlm_source_target_geq_95pct", pick(mlm, [](auto& r) { return is_source_target(r.policy); }),
             [](auto& r) { return r.rev >= kHighAccMin; });

  bool cmp_ok = true;
  std::vector<std::string> cmp_parts;
  for (uint64_t seed : ctx.seeds) {
    auto st = pick(mlm, [&](auto& r) { return r.seed == seed && is_source_target(r.policy); });
    auto so = pick(mlm, [&](auto& r) { return r.seed == seed && is_source_only(r.policy); });
    if (st.size() != 1 || so.size() != 1) {
      cmp_ok = false;
      cmp_parts.push_back("seed=" + std::to_string(seed) + " missing data");
      continue;
    }
    cmp_ok = cmp_ok && st[0].rev > so[0].rev;
    cmp_parts.push_back("seed=" + std::to_string(seed) + " source+target=" + fmt(st[0].rev) +
                        " vs source=" + fmt(so[0].rev));
  }
  ctx.check("mlm_source_target_exceeds_source_only", cmp_ok, join(cmp_parts, "; "));
}

struct DistanceCell {
  Objective objective;
  uint64_t seed;
  DistanceCurve curve;
};

void suite_fig3(SuiteCtx& ctx) {
  const ReferenceKind kinds[] = {ReferenceKind::ReverseFact, ReferenceKind::SameSource,
                                 ReferenceKind::SameRelation, ReferenceKind::Unrelated,
                                 ReferenceKind::MaskedVsUnmasked};
  std::vector<DistanceCell> cells;
  for (uint64_t seed : ctx.seeds) {
    std::string stage = "fig3/seed=" + std::to_string(seed);
    try {
      Corpus corpus = ensure_corpus(ctx.out_dir, ctx.shape, seed);
      std::vector<Fact> facts = suite_fact_slice(corpus, ctx.shape, seed);
      for (Objective obj : {Objective::Mlm, Objective::NtpMasking}) {
        RunArtifacts art = standard_run(ctx, corpus, obj, seed);
        auto records = extract_states(art.params, corpus.vocab, facts, obj);
        for (ReferenceKind kind : kinds)
          cells.push_back({obj, seed,
                           mean_cosine_distance(records, facts, kind, ctx.shape.distance_facts,
                                                hash_combine(seed, kDistanceSalt))});
      }
    } catch (const std::exception& e) {
      ctx.fail(stage, e.what());
    }
  }

  for (Objective obj : {Objective::Mlm, Objective::NtpMasking}) {
    CsvTable t;
    t.header = {"layer", "kind", "mean", "std", "n"};
    int32_t n_layers = ctx.shape.n_layers;
    for (ReferenceKind kind : kinds) {
      std::vector<const DistanceCurve*> curves;
      for (const auto& c : cells)
        if (c.objective == obj && c.curve.kind == kind) curves.push_back(&c.curve);
      if (curves.empty()) continue;
      for (int32_t l = 0; l < n_layers; ++l) {
        std::vector<std::pair<double, double>> groups;
        for (const auto* c : curves) groups.emplace_back(c->mean[l], c->std_dev[l]);
        double m, s;
        pool_stats(groups, ctx.shape.distance_facts, &m, &s);
        t.rows.push_back({std::to_string(l), reference_kind_name(kind), fmt(m), fmt(s),
                          std::to_string(ctx.shape.distance_facts * curves.size())});
      }
    }
    std::string p = ctx.path(std::string("distances_") + objective_name(obj) + ".csv");
    write_csv(p, t);
    ctx.artifact(p);
    if (!t.rows.empty()) {
      std::string svg = p.substr(0, p.size() - 4) + ".svg";
      render(p, svg);
      ctx.artifact(svg);
    }
  }

  bool mlm_ok = true, ntpm_ok = true, have_mlm = false, have_ntpm = false;
  std::vector<std::string> mlm_parts, ntpm_parts;
  for (uint64_t seed : ctx.seeds) {
    const DistanceCurve *rev = nullptr, *mvu = nullptr, *ss = nullptr, *un = nullptr;
    for (const auto& c : cells) {
      if (c.seed != seed) continue;
      if (c.objective == Objective::Mlm && c.curve.kind == ReferenceKind::ReverseFact) rev = &c.curve;
      if (c.objective == Objective::Mlm && c.curve.kind == ReferenceKind::MaskedVsUnmasked)
        mvu = &c.curve;
      if (c.objective == Objective::NtpMasking && c.curve.kind == ReferenceKind::SameSource)
        ss = &c.curve;
      if (c.objective == Objective::NtpMasking && c.curve.kind == ReferenceKind::Unrelated)
        un = &c.curve;
    }
    if (rev && mvu) {
      have_mlm = true;
      bool ok = true;
      for (size_t l = 0; l < rev->mean.size(); ++l) ok = ok && rev->mean[l] > mvu->mean[l];
      mlm_ok = mlm_ok && ok;
      mlm_parts.push_back("seed=" + std::to_string(seed) + (ok ? " ordered" : " violated"));
    }
    if (ss && un) {
      have_ntpm = true;
      int32_t below = 0;
      for (size_t l = 0; l < ss->mean.size(); ++l) below += ss->mean[l] < un->mean[l];
      bool ok = below * 2 > static_cast<int32_t>(ss->mean.size());
      ntpm_ok = ntpm_ok && ok;
      ntpm_parts.push_back("seed=" + std::to_string(seed) + " below=" + std::to_string(below) + "/" +
                           std::to_string(ss->mean.size()));
    }
  }
  ctx.check("mlm_reverse_fact_exceeds_masked_vs_unmasked_all_layers", have_mlm && mlm_ok,
            mlm_parts.empty() ? "no data" : join(mlm_parts, "; "));
  ctx.check("ntp_masking_same_source_below_unrelated_majority", have_ntpm && ntpm_ok,
            ntpm_parts.empty() ? "no data" : join(ntpm_parts, "; "));
}

struct ProbeCell {
  Objective objective;
  ControlKind kind;
  uint64_t seed;
  LayerProbeSummary sum;
};

void suite_fig4(SuiteCtx& ctx) {
  const ControlKind kinds[] = {ControlKind::SameSource, ControlKind::SameRelation,
                               ControlKind::Unrelated};
  std::vector<ProbeCell> cells;
  for (uint64_t seed : ctx.seeds) {
    std::string stage = "fig4/seed=" + std::to_string(seed);
    try {
      Corpus corpus = ensure_corpus(ctx.out_dir, ctx.shape, seed);
      std::vector<Fact> facts = suite_fact_slice(corpus, ctx.shape, seed);
      for (Objective obj : {Objective::Mlm, Objective::NtpMasking}) {
        RunArtifacts art = standard_run(ctx, corpus, obj, seed);
        auto records = extract_states(art.params, corpus.vocab, facts, obj);
        for (ControlKind kind : kinds)
          cells.push_back({obj, kind, seed,
                           probe_all_layers(records, facts, kind, ctx.shape.n_shuffles,
                                            hash_combine(seed, kProbeSalt))});
      }
    } catch (const std::exception& e) {
      ctx.fail(stage, e.what());
    }
  }

  auto mean_of = [](const std::vector<double>& v) {
    double m = 0;
    for (double x : v) m += x;
    return v.empty() ? 0.0 : m / v.size();
  };

  CsvTable summary;
  summary.header = {"objective", "control_kind", "max_accuracy", "max_null_low", "max_null_high"};
  for (Objective obj : {Objective::Mlm, Objective::NtpMasking}) {
    CsvTable t;
    t.header = {"layer", "control_kind", "accuracy", "null_low", "null_high"};
    for (ControlKind kind : kinds) {
      std::vector<const LayerProbeSummary*> sums;
      for (const auto& c : cells)
        if (c.objective == obj && c.kind == kind) sums.push_back(&c.sum);
      if (sums.empty()) continue;
      size_t n_layers = sums[0]->layer_accuracy.size();
      for (size_t l = 0; l < n_layers; ++l) {
        std::vector<double> acc, lo, hi;
        for (const auto* s : sums) {
          acc.push_back(s->layer_accuracy[l]);
          lo.push_back(s->null_low[l]);
          hi.push_back(s->null_high[l]);
        }
        t.rows.push_back({std::to_string(l), control_kind_name(kind), fmt(mean_of(acc)),
                          fmt(mean_of(lo)), fmt(mean_of(hi))});
      }
      std::vector<double> macc, mlo, mhi;
      for (const auto* s : sums) {
        macc.push_back(s->max_accuracy);
        mlo.push_back(s->max_null_low);
        mhi.push_back(s->max_null_high);
      }
      summary.rows.push_back({objective_name(obj), control_kind_name(kind), fmt(mean_of(macc)),
                              fmt(mean_of(mlo)), fmt(mean_of(mhi))});
    }
    std::string p = ctx.path(std::string("probes_") + objective_name(obj) + ".csv");
    write_csv(p, t);
    ctx.artifact(p);
    if (!t.rows.empty()) {
      std::string svg = p.substr(0, p.size() - 4) + ".svg";
      render(p, svg);
      ctx.artifact(svg);
    }
  }
  std::string sp = ctx.path("probe_summary.csv");
  write_csv(sp, summary);
  ctx.artifact(sp);

  auto inside = [](const LayerProbeSummary& s) {
    return s.max_accuracy >= s.max_null_low && s.max_accuracy <= s.max_null_high;
  };
  bool ntpm_ok = true, mlm_ok = true, power_ok = true;
  bool have_ntpm = false, have_mlm = false, have_power = false;
  std::vector<std::string> np, mp, pp;
  for (uint64_t seed : ctx.seeds) {
    bool seed_power = false;
    for (const auto& c : cells) {
      if (c.seed != seed) continue;
      std::string tag = "seed=" + std::to_string(seed) + " acc=" + fmt(c.sum.max_accuracy) +
                        " band=[" + fmt(c.sum.max_null_low) + "," + fmt(c.sum.max_null_high) + "]";
      if (c.objective == Objective::NtpMasking && c.kind == ControlKind::Unrelated) {
        have_ntpm = true;
        ntpm_ok = ntpm_ok && inside(c.sum);
        np.push_back(tag);
      } else if (c.objective == Objective::Mlm && c.kind == ControlKind::SameSource) {
        have_mlm = true;
        mlm_ok = mlm_ok && inside(c.sum);
        mp.push_back(tag);
      } else {
        have_power = true;
        if (c.sum.max_accuracy > c.sum.max_null_high) {
          seed_power = true;
          pp.push_back(std::string(objective_name(c.objective)) + "/" +
                       control_kind_name(c.kind) + " " + tag);
        }
      }
    }
    power_ok = power_ok && seed_power;
  }
  ctx.check("ntp_masking_unrelated_inside_null_band", have_ntpm && ntpm_ok,
            np.empty() ? "no data" : join(np, "; "));
  ctx.check("mlm_same_source_inside_null_band", have_mlm && mlm_ok,
            mp.empty() ? "no data" : join(mp, "; "));
  ctx.check("some_pairing_above_null_band", have_power && power_ok,
            pp.empty() ? "no pairing above its band" : join(pp, "; "));
}

void suite_ablation2(SuiteCtx& ctx) {
  CsvTable t;
  t.header = {"objective", "seed", "false_frame_acc"};
  struct Cell {
    Objective obj;
    uint64_t seed;
    double ff;
  };
  std::vector<Cell> cells;
  for (uint64_t seed : ctx.seeds) {
    std::string stage = "ablation2/seed=" + std::to_string(seed);
    try {
      Corpus corpus = ensure_corpus(ctx.out_dir, ctx.shape, seed);
      for (Objective obj : {Objective::Mlm, Objective::NtpMasking}) {
        RunArtifacts art = standard_run(ctx, corpus, obj, seed);
        cells.push_back({obj, seed, art.false_frame_accuracy});
        t.rows.push_back({objective_name(obj), std::to_string(seed), fmt(art.false_frame_accuracy)});
      }
    } catch (const std::exception& e) {
      ctx.fail(stage, e.what());
    }
  }
  std::string p = ctx.path("ablation2.csv");
  write_csv(p, t);
  ctx.artifact(p);

  for (Objective obj : {Objective::Mlm, Objective::NtpMasking}) {
    bool have = false, ok = true;
    std::vector<std::string> parts;
    for (const auto& c : cells)
      if (c.obj == obj) {
        have = true;
        ok = ok && c.ff <= kNearZeroMax;
        parts.push_back("seed=" + std::to_string(c.seed) + "=" + fmt(c.ff));
      }
    ctx.check(std::string(objective_name(obj)) + "_false_frame_leq_2pct", have && ok,
              parts.empty() ? "no data" : join(parts, "; "));
  }
}

void suite_ablation3(SuiteCtx& ctx) {
  CsvTable t;
  t.header = {"policy", "seed", "forward_acc", "reversal_acc"};
  struct Cell {
    bool never_target;
    uint64_t seed;
    double fwd, rev;
  };
  std::vector<Cell> cells;
  for (uint64_t seed : ctx.seeds) {
    std::string stage = "ablation3/seed=" + std::to_string(seed);
    try {
      Corpus corpus = ensure_corpus(ctx.out_dir, ctx.shape, seed);
      MaskingPolicy never = ablation_policy(Ablation::NeverMaskTarget);
      RunArtifacts art_never =
          ensure_run(ctx.out_dir, corpus, make_run(ctx.shape, corpus, Objective::Mlm, never, seed));
      RunArtifacts art_std = standard_run(ctx, corpus, Objective::Mlm, seed);
      cells.push_back({true, seed, art_never.forward_accuracy, art_never.reversal_accuracy});
      cells.push_back({false, seed, art_std.forward_accuracy, art_std.reversal_accuracy});
      t.rows.push_back({policy_name(never), std::to_string(seed), fmt(art_never.forward_accuracy),
                        fmt(art_never.reversal_accuracy)});
      t.rows.push_back({policy_name(parse_policy("standard")), std::to_string(seed),
                        fmt(art_std.forward_accuracy), fmt(art_std.reversal_accuracy)});
    } catch (const std::exception& e) {
      ctx.fail(stage, e.what());
    }
  }
  std::string p = ctx.path("ablation3.csv");
  write_csv(p, t);
  ctx.artifact(p);

  bool have_n = false, ok_n = true, have_s = false, ok_s = true;
  std::vector<std::string> pn, ps;
  for (const auto& c : cells) {
    std::string tag = "seed=" + std::to_string(c.seed) + " fwd=" + fmt(c.fwd);
    if (c.never_target) {
      have_n = true;
      ok_n = ok_n && c.fwd <= kNearZeroMax;
      pn.push_back(tag);
    } else {
      have_s = true;
      ok_s = ok_s && c.fwd >= kHighAccMin;
      ps.push_back(tag);
    }
  }
  ctx.check("never_mask_target_forward_leq_2pct", have_n && ok_n,
            pn.empty() ? "no data" : join(pn, "; "));
  ctx.check("standard_control_forward_geq_95pct", have_s && ok_s,
            ps.empty() ? "no data" : join(ps, "; "));
}

}  // namespace

nlohmann::json to_json(const ExperimentShape& s) {
  return {{"n_entities", s.n_entities},
          {"n_relations", s.n_relations},
          {"n_heldout", s.n_heldout},
          {"max_affix", s.max_affix},
          {"n_layers", s.n_layers},
          {"d_model", s.d_model},
          {"n_heads", s.n_heads},
          {"d_mlp", s.d_mlp},
          {"max_seq_len", s.max_seq_len},
          {"steps", s.steps},
          {"batch_size", s.batch_size},
          {"lr", s.lr},
          {"eval_every", s.eval_every},
          {"plain_ratio", s.plain_ratio},
          {"analysis_facts", s.analysis_facts},
          {"distance_facts", s.distance_facts},
          {"n_shuffles", s.n_shuffles}};
}

ExperimentShape shape_from_json(const nlohmann::json& j) {
  ExperimentShape s;
  s.n_entities = j.at("n_entities");
  s.n_relations = j.at("n_relations");
  s.n_heldout = j.at("n_heldout");
  s.max_affix = j.at("max_affix");
  s.n_layers = j.at("n_layers");
  s.d_model = j.at("d_model");
  s.n_heads = j.at("n_heads");
  s.d_mlp = j.at("d_mlp");
  s.max_seq_len = j.at("max_seq_len");
  s.steps = j.at("steps");
  s.batch_size = j.at("batch_size");
  s.lr = j.at("lr");
  s.eval_every = j.at("eval_every");
  s.plain_ratio = j.at("plain_ratio");
  s.analysis_facts = j.at("analysis_facts");
  s.distance_facts = j.at("distance_facts");
  s.n_shuffles = j.at("n_shuffles");
  return s;
}

uint64_t config_hash(const nlohmann::json& j) { return fnv1a(j.dump()); }

nlohmann::json to_json(const ExperimentManifest& m) {
  nlohmann::json checks = nlohmann::json::array();
  for (const auto& c : m.checks)
    checks.push_back({{"name", c.name}, {"pass", c.pass}, {"detail", c.detail}});
  return {{"suite", m.suite},
          {"config_hash", m.config_hash_hex},
          {"seeds", m.seeds},
          {"artifacts", m.artifacts},
          {"wall_clock_sec", m.wall_clock_sec},
          {"checks", checks},
          {"failures", m.failures},
          {"git_rev", kGitRevision}};
}

bool manifest_all_pass(const ExperimentManifest& m) {
  if (!m.failures.empty() || m.checks.empty()) return false;
  for (const auto& c : m.checks)
    if (!c.pass) return false;
  return true;
}

std::string default_out_dir() {
  const char* env = std::getenv("REVLAB_OUT");
  return env && *env ? env : "out";
}

const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names = {"fig1",  "table1",    "fig2",     "fig3",
                                                 "fig4",  "ablation2", "ablation3"};
  return names;
}

Corpus ensure_corpus(const std::string& out_dir, const ExperimentShape& shape, uint64_t seed) {
  uint64_t corpus_seed = hash_combine(seed, kCorpusSalt);
  nlohmann::json key = {{"dataset", "simple_reversal"}, {"n_entities", shape.n_entities},
                        {"n_relations", shape.n_relations}, {"n_heldout", shape.n_heldout},
                        {"max_affix", shape.max_affix},   {"seed", corpus_seed}};
  std::string dir = out_dir + "/corpora/sr_" + hex64(config_hash(key));
  if (fs::exists(dir + "/manifest.json")) return load_corpus(dir);
  Corpus c = generate_simple_reversal(shape.n_entities, shape.n_relations, shape.n_heldout,
                                      shape.max_affix, corpus_seed);
  save_corpus(c, dir);
  return c;
}

RunArtifacts ensure_run(const std::string& out_dir, const Corpus& corpus, const RunConfig& run) {
  nlohmann::json key = {{"corpus", corpus.manifest}, {"run", to_json(run)}};
  std::string hash = hex64(config_hash(key));
  RunArtifacts art;
  art.dir = out_dir + "/runs/run_" + hash;
  std::string result_path = art.dir + "/result.json";
  if (fs::exists(result_path)) {
    nlohmann::json j = nlohmann::json::parse(slurp_file(result_path));
    if (j.value("config_hash", "") == hash) {
      art.params = load_checkpoint(art.dir + "/checkpoint.bin");
      art.reversal_accuracy = j.at("metrics").at("reversal_acc");
      art.forward_accuracy = j.at("metrics").at("forward_acc");
      art.false_frame_accuracy = j.at("metrics").at("false_frame_acc");
      art.steps_run = j.at("steps_run");
      art.from_cache = true;
      return art;
    }
  }
  double t0 = now_sec();
  TrainResult tr = train(corpus, run);
  EvalReport rep = eval_reversal(tr.params, corpus, run.objective);
  save_checkpoint(art.dir + "/checkpoint.bin", tr.params);
  nlohmann::json result = {
      {"config_hash", hash},
      {"run", to_json(run)},
      {"git_rev", kGitRevision},
      {"steps_run", tr.steps_run},
      {"early_stopped", tr.early_stopped},
      {"final_loss", tr.loss_log.empty() ? 0.0 : tr.loss_log.back()},
      {"wall_clock_sec", now_sec() - t0},
      {"metrics",
       {{"reversal_acc", rep.reversal_accuracy},
        {"forward_acc", rep.forward_accuracy},
        {"false_frame_acc", rep.false_frame_accuracy}}}};
  write_file(result_path, result.dump(2) + "\n");
  art.params = std::move(tr.params);
  art.reversal_accuracy = rep.reversal_accuracy;
  art.forward_accuracy = rep.forward_accuracy;
  art.false_frame_accuracy = rep.false_frame_accuracy;
  art.steps_run = tr.steps_run;
  return art;
}

RunConfig make_run(const ExperimentShape& shape, const Corpus& corpus, Objective objective,
                   const MaskingPolicy& policy, uint64_t seed) {
  RunConfig run;
  run.objective = objective;
  run.policy = policy;
  run.model.n_layers = shape.n_layers;
  run.model.d_model = shape.d_model;
  run.model.n_heads = shape.n_heads;
  run.model.d_mlp = shape.d_mlp;
  run.model.vocab_size = corpus.vocab.size();
  run.model.max_seq_len = shape.max_seq_len;
  run.model.attention = attention_for(objective);
  run.steps = shape.steps;
  run.batch_size = shape.batch_size;
  run.lr = shape.lr;
  run.eval_every = shape.eval_every;
  run.plain_ratio = shape.plain_ratio;
  run.seed = seed;
  return run;
}

ExperimentManifest run_suite(const std::string& suite, const std::vector<uint64_t>& seeds,
                             const std::string& out_dir, const ExperimentShape& shape) {
  if (seeds.empty()) throw std::invalid_argument("empty seed list");
  const auto& names = suite_names();
  if (std::find(names.begin(), names.end(), suite) == names.end())
    throw std::invalid_argument("unknown suite: " + suite);

  SuiteCtx ctx;
  ctx.out_dir = out_dir;
  ctx.suite_dir = out_dir + "/" + suite;
  ctx.shape = shape;
  ctx.seeds = seeds;
  fs::create_directories(ctx.suite_dir);
  ctx.man.suite = suite;
  ctx.man.seeds = seeds;
  ctx.man.config_hash_hex =
      hex64(config_hash({{"suite", suite}, {"shape", to_json(shape)}, {"seeds", seeds}}));

  double t0 = now_sec();
  if (suite == "fig1")
    suite_fig1(ctx);
  else if (suite == "table1")
    suite_table1(ctx);
  else if (suite == "fig2")
    suite_fig2(ctx);
  else if (suite == "fig3")
    suite_fig3(ctx);
  else if (suite == "fig4")
    suite_fig4(ctx);
  else if (suite == "ablation2")
    suite_ablation2(ctx);
  else
    suite_ablation3(ctx);
  ctx.man.wall_clock_sec = now_sec() - t0;

  for (const auto& p : ctx.man.artifacts)
    if (!fs::exists(p)) throw std::logic_error("manifest lists missing artifact: " + p);
  write_file(ctx.path("manifest.json"), to_json(ctx.man).dump(2) + "\n");
  return ctx.man;
}

void render(const std::string& csv_path, const std::string& svg_path) {
  CsvTable t = read_csv(csv_path);
  if (t.rows.empty()) throw std::invalid_argument("empty CSV: " + csv_path);

  static const std::vector<std::string> kMetrics = {"policy", "objective", "seed", "reversal_acc",
                                                    "forward_acc"};
  static const std::vector<std::string> kDistances = {"layer", "kind", "mean", "std", "n"};
  static const std::vector<std::string> kProbes = {"layer", "control_kind", "accuracy", "null_low",
                                                   "null_high"};

  if (t.header == kMetrics) {
    std::vector<std::string> policies, objectives;
    std::map<std::pair<std::string, std::string>, std::pair<double, int>> agg;
    for (const auto& r : t.rows) {
      if (std::find(policies.begin(), policies.end(), r[0]) == policies.end())
        policies.push_back(r[0]);
      if (std::find(objectives.begin(), objectives.end(), r[1]) == objectives.end())
        objectives.push_back(r[1]);
      auto& cell = agg[{r[0], r[1]}];
      cell.first += std::stod(r[3]);
      cell.second += 1;
    }
    std::vector<std::vector<double>> values;
    for (const auto& p : policies) {
      std::vector<double> row;
      for (const auto& o : objectives) {
        auto it = agg.find({p, o});
        row.push_back(it == agg.end() ? 0.0 : it->second.first / it->second.second);
      }
      values.push_back(row);
    }
    write_grouped_bar_chart(svg_path, "Reversal accuracy by masking policy", "reversal accuracy",
                            policies, objectives, values);
    return;
  }
  if (t.header == kDistances) {
    std::vector<Series> series;
    for (const auto& r : t.rows) {
      auto it = std::find_if(series.begin(), series.end(),
                             [&](const Series& s) { return s.label == r[1]; });
      if (it == series.end()) {
        series.push_back({r[1], {}, {}});
        it = series.end() - 1;
      }
      it->x.push_back(std::stod(r[0]));
      it->y.push_back(std::stod(r[2]));
    }
    write_line_chart(svg_path, "Mean cosine distance by layer", "layer", "mean cosine distance",
                     series);
    return;
  }
  if (t.header == kProbes) {
    std::vector<std::string> layers, kinds;
    std::map<std::pair<std::string, std::string>, double> acc;
    for (const auto& r : t.rows) {
      if (std::find(layers.begin(), layers.end(), r[0]) == layers.end()) layers.push_back(r[0]);
      if (std::find(kinds.begin(), kinds.end(), r[1]) == kinds.end()) kinds.push_back(r[1]);
      acc[{r[0], r[1]}] = std::stod(r[2]);
    }
    std::vector<std::vector<double>> values;
    for (const auto& l : layers) {
      std::vector<double> row;
      for (const auto& k : kinds) {
        auto it = acc.find({l, k});
        row.push_back(it == acc.end() ? 0.0 : it->second);
      }
      values.push_back(row);
    }
    write_grouped_bar_chart(svg_path, "Probe accuracy by layer", "probe accuracy", layers, kinds,
                            values);
    return;
  }

  // name the offending column against the closest documented schema
  const std::vector<const std::vector<std::string>*> schemas = {&kMetrics, &kDistances, &kProbes};
  const std::vector<std::string>* best = schemas[0];
  size_t best_overlap = 0;
  for (const auto* s : schemas) {
    size_t overlap = 0;
    for (const auto& col : *s)
      if (std::find(t.header.begin(), t.header.end(), col) != t.header.end()) ++overlap;
    if (overlap > best_overlap) {
      best_overlap = overlap;
      best = s;
    }
  }
  for (const auto& col : *best)
    if (std::find(t.header.begin(), t.header.end(), col) == t.header.end())
      throw std::invalid_argument("csv schema mismatch in " + csv_path + ": missing column '" +
                                  col + "'");
  for (const auto& col : t.header)
    if (std::find(best->begin(), best->end(), col) == best->end())
      throw std::invalid_argument("csv schema mismatch in " + csv_path + ": unexpected column '" +
                                  col + "'");
  throw std::invalid_argument("csv schema mismatch in " + csv_path + ": column order differs");
}

}  // namespace revlab
