#include "revlab/probe.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

#include "revlab/rng.hpp"

namespace revlab {

namespace {

constexpr uint64_t kSplitSalt = 0x7c9d3e1f5a2b8064ull;
constexpr uint64_t kPartnerSalt = 0x31f6a8c4d90e572bull;

bool control_matches(ControlKind kind, const Fact& a, const Fact& b) {
  bool same = a.source == b.source && a.relation == b.relation && a.target == b.target;
  switch (kind) {
    case ControlKind::SameSource:
      return b.source == a.source && !same;
    case ControlKind::SameRelation:
      return b.relation == a.relation && b.source != a.source;
    case ControlKind::Unrelated:
      return b.relation != a.relation && b.source != a.source && b.source != a.target &&
             b.target != a.source && b.target != a.target;
  }
  throw std::logic_error("unknown control kind");
}

struct LayerStates {
  // per fact index in `eligible`: forward and reverse answer-slot vectors
  std::vector<const std::vector<float>*> fwd, rev;
};

std::vector<double> delta(const std::vector<float>& a, const std::vector<float>& b) {
  std::vector<double> d(a.size());
  for (size_t i = 0; i < a.size(); ++i) d[i] = static_cast<double>(a[i]) - b[i];
  return d;
}

// standardized copies of the dataset, features scaled so gradient steps are
// dimension-free
struct Prepared {
  std::vector<std::vector<double>> x;  // all examples, transformed
  std::vector<int32_t> labels;
  std::vector<int32_t> train_idx, test_idx;
  size_t dim = 0;
};

Prepared prepare(const ProbeDataset& ds, bool standardize) {
  if (ds.examples.empty() || ds.train_idx.empty() || ds.test_idx.empty())
    throw std::invalid_argument("probe dataset is empty or unsplit");
  Prepared p;
  p.dim = ds.examples[0].delta.size();
  p.train_idx = ds.train_idx;
  p.test_idx = ds.test_idx;
  std::vector<double> mean(p.dim, 0.0), sd(p.dim, 1.0);
  if (standardize) {
    for (int32_t i : ds.train_idx)
      for (size_t j = 0; j < p.dim; ++j) mean[j] += ds.examples[i].delta[j];
    for (size_t j = 0; j < p.dim; ++j) mean[j] /= static_cast<double>(ds.train_idx.size());
    std::vector<double> var(p.dim, 0.0);
    for (int32_t i : ds.train_idx)
      for (size_t j = 0; j < p.dim; ++j) {
        double c = ds.examples[i].delta[j] - mean[j];
        var[j] += c * c;
      }
    for (size_t j = 0; j < p.dim; ++j)
      sd[j] = std::max(1e-8, std::sqrt(var[j] / static_cast<double>(ds.train_idx.size())));
  }
  double scale = 1.0 / std::sqrt(static_cast<double>(p.dim));
  for (const auto& ex : ds.examples) {
    std::vector<double> row(p.dim);
    for (size_t j = 0; j < p.dim; ++j) row[j] = (ex.delta[j] - (standardize ? mean[j] : 0.0)) / sd[j] * scale;
    p.x.push_back(std::move(row));
    p.labels.push_back(ex.label);
  }
  return p;
}

struct FitOut {
  std::vector<double> w;
  bool converged = false;
  double grad_norm = 0;
};

FitOut fit_logistic(const Prepared& p, const std::vector<int32_t>& labels,
                    const std::vector<int32_t>& idx, double lambda, const ProbeOptions& opts) {
  FitOut out;
  out.w.assign(p.dim, 0.0);
  size_t n = idx.size();
  std::vector<double> grad(p.dim);
  for (int32_t iter = 0; iter < opts.max_iters; ++iter) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (int32_t i : idx) {
      const auto& xi = p.x[i];
      double m = 0;
      for (size_t j = 0; j < p.dim; ++j) m += xi[j] * out.w[j];
      double y = labels[i] == 1 ? 1.0 : -1.0;
      double coef = -y / (1.0 + std::exp(y * m));  // d/dm of log(1+exp(-y m))
      for (size_t j = 0; j < p.dim; ++j) grad[j] += coef * xi[j];
    }
    double gn = 0;
    for (size_t j = 0; j < p.dim; ++j) {
      grad[j] = grad[j] / static_cast<double>(n) + lambda * out.w[j];
      gn += grad[j] * grad[j];
    }
    out.grad_norm = std::sqrt(gn);
    if (out.grad_norm < opts.tol) {
      out.converged = true;
      return out;
    }
    for (size_t j = 0; j < p.dim; ++j) out.w[j] -= opts.lr * grad[j];
  }
  return out;
}

double accuracy(const Prepared& p, const std::vector<int32_t>& labels,
                const std::vector<int32_t>& idx, const std::vector<double>& w) {
  int64_t ok = 0;
  for (int32_t i : idx) {
    double m = 0;
    for (size_t j = 0; j < p.dim; ++j) m += p.x[i][j] * w[j];
    ok += (m > 0 ? 1 : 0) == labels[i];
  }
  return static_cast<double>(ok) / static_cast<double>(idx.size());
}

double select_lambda(const Prepared& p, const ProbeOptions& opts) {
  size_t train_n = p.train_idx.size();
  if (train_n < 8 || opts.lambda_grid.size() < 2) return opts.lambda_default;
  size_t val_n = std::max<size_t>(2, train_n / 4);
  std::vector<int32_t> sub(p.train_idx.begin(), p.train_idx.end() - val_n);
  std::vector<int32_t> val(p.train_idx.end() - val_n, p.train_idx.end());
  double best = opts.lambda_default;
  double best_acc = accuracy(p, p.labels, val, fit_logistic(p, p.labels, sub, best, opts).w);
  for (double lam : opts.lambda_grid) {
    if (lam == opts.lambda_default) continue;
    double acc = accuracy(p, p.labels, val, fit_logistic(p, p.labels, sub, lam, opts).w);
    if (acc > best_acc) {
      best_acc = acc;
      best = lam;
    }
  }
  return best;
}

}  // namespace

const char* control_kind_name(ControlKind kind) {
  switch (kind) {
    case ControlKind::SameSource:
      return "same_source";
    case ControlKind::SameRelation:
      return "same_relation";
    case ControlKind::Unrelated:
      return "unrelated";
  }
  throw std::logic_error("unknown control kind");
}

ControlKind parse_control_kind(const std::string& name) {
  if (name == "same_source") return ControlKind::SameSource;
  if (name == "same_relation") return ControlKind::SameRelation;
  if (name == "unrelated") return ControlKind::Unrelated;
  throw std::invalid_argument("unknown control kind: " + name);
}

ProbeDataset build_probe_dataset(const std::vector<ActivationRecord>& records,
                                 const std::vector<Fact>& facts, ControlKind control_kind,
                                 int32_t layer, uint64_t seed) {
  // collect facts with both direction states at this layer
  std::unordered_map<int64_t, const std::vector<float>*> fwd, rev;
  for (const auto& r : records) {
    if (r.layer != layer || r.query_kind != QueryKind::AnswerSlotMasked) continue;
    (r.direction == Direction::Forward ? fwd : rev)[r.fact_id] = &r.vec;
  }
  std::vector<int64_t> eligible;
  for (size_t i = 0; i < facts.size(); ++i) {
    int64_t id = static_cast<int64_t>(i);
    if (fwd.count(id) && rev.count(id)) eligible.push_back(id);
  }
  if (eligible.size() < 4)
    throw std::invalid_argument("insufficient facts with recorded states to build a probe dataset");

  // split whole source groups so every anchor keeps an in-split same-source
  // partner; group-disjoint implies the fact-disjoint invariant
  std::unordered_map<TokenId, std::vector<int64_t>> by_source;
  std::vector<TokenId> sources;
  for (int64_t id : eligible) {
    auto& ids = by_source[facts[id].source];
    if (ids.empty()) sources.push_back(facts[id].source);
    ids.push_back(id);
  }
  if (sources.size() < 4)
    throw std::invalid_argument("probe split needs at least 4 source groups");
  Rng split_rng(hash_combine(seed, kSplitSalt));
  split_rng.shuffle(sources);
  size_t n_test_groups = std::clamp<size_t>(
      static_cast<size_t>(std::llround(static_cast<double>(sources.size()) * 0.3)), 2,
      sources.size() - 2);
  std::vector<int64_t> train_pool, test_pool;
  for (size_t g = 0; g < sources.size(); ++g) {
    const auto& ids = by_source[sources[g]];
    auto& pool = g < sources.size() - n_test_groups ? train_pool : test_pool;
    pool.insert(pool.end(), ids.begin(), ids.end());
  }

  ProbeDataset ds;
  ds.control_kind = control_kind;
  ds.layer = layer;
  Rng partner_rng(hash_combine(seed, kPartnerSalt));
  auto emit_split = [&](const std::vector<int64_t>& pool, std::vector<int32_t>& idx_out) {
    for (int64_t a : pool) {
      std::vector<int64_t> candidates;
      for (int64_t b : pool)
        if (b != a && control_matches(control_kind, facts[a], facts[b])) candidates.push_back(b);
      if (candidates.empty())
        throw std::invalid_argument(std::string("no in-split control partner of kind ") +
                                    control_kind_name(control_kind));
      int64_t b = candidates[partner_rng.uniform_int(static_cast<int64_t>(candidates.size()))];
      idx_out.push_back(static_cast<int32_t>(ds.examples.size()));
      ds.examples.push_back({delta(*fwd[a], *rev[a]), 1});
      idx_out.push_back(static_cast<int32_t>(ds.examples.size()));
      ds.examples.push_back({delta(*fwd[a], *fwd[b]), 0});
    }
  };
  emit_split(train_pool, ds.train_idx);
  emit_split(test_pool, ds.test_idx);
  return ds;
}

ProbeResult train_probe(const ProbeDataset& ds, const ProbeOptions& opts) {
  Prepared p = prepare(ds, opts.standardize);
  double lambda = select_lambda(p, opts);
  FitOut fit = fit_logistic(p, p.labels, p.train_idx, lambda, opts);
  ProbeResult res;
  res.test_accuracy = accuracy(p, p.labels, p.test_idx, fit.w);
  res.weights = std::move(fit.w);
  res.lambda = lambda;
  res.converged = fit.converged;
  res.final_grad_norm = fit.grad_norm;
  return res;
}

LayerProbeSummary probe_all_layers(const std::vector<ActivationRecord>& records,
                                   const std::vector<Fact>& facts, ControlKind control_kind,
                                   int32_t n_shuffles, uint64_t seed, const ProbeOptions& opts) {
  if (n_shuffles < 1) throw std::invalid_argument("n_shuffles must be >= 1");
  int32_t n_layers = 0;
  for (const auto& r : records) n_layers = std::max(n_layers, r.layer + 1);
  if (n_layers == 0) throw std::invalid_argument("no activation records");

  LayerProbeSummary sum;
  sum.control_kind = control_kind;
  std::vector<Prepared> preps;
  std::vector<double> lambdas;
  for (int32_t l = 0; l < n_layers; ++l) {
    // same seed per layer: identical fact split and partners, aligned examples
    ProbeDataset ds = build_probe_dataset(records, facts, control_kind, l, seed);
    Prepared p = prepare(ds, opts.standardize);
    double lambda = select_lambda(p, opts);
    FitOut fit = fit_logistic(p, p.labels, p.train_idx, lambda, opts);
    sum.layer_accuracy.push_back(accuracy(p, p.labels, p.test_idx, fit.w));
    preps.push_back(std::move(p));
    lambdas.push_back(lambda);
  }
  sum.max_accuracy = *std::max_element(sum.layer_accuracy.begin(), sum.layer_accuracy.end());

  size_t n_examples = preps[0].labels.size();
  Rng shuffle_rng(hash_combine(seed, 0x6b1ce4f29d07a853ull));
  std::vector<std::vector<double>> null_acc(n_layers);
  std::vector<double> null_max;
  std::vector<int32_t> perm(n_examples);
  for (int32_t s = 0; s < n_shuffles; ++s) {
    for (size_t i = 0; i < n_examples; ++i) perm[i] = static_cast<int32_t>(i);
    shuffle_rng.shuffle(perm);
    double mx = 0;
    for (int32_t l = 0; l < n_layers; ++l) {
      std::vector<int32_t> shuffled(n_examples);
      for (size_t i = 0; i < n_examples; ++i) shuffled[i] = preps[l].labels[perm[i]];
      FitOut fit = fit_logistic(preps[l], shuffled, preps[l].train_idx, lambdas[l], opts);
      double acc = accuracy(preps[l], shuffled, preps[l].test_idx, fit.w);
      null_acc[l].push_back(acc);
      mx = std::max(mx, acc);
    }
    null_max.push_back(mx);
  }

  auto band = [&](std::vector<double> v, double* lo, double* hi) {
    std::sort(v.begin(), v.end());
    size_t n = v.size();
    size_t lo_i = static_cast<size_t>(std::floor(0.025 * n));
    size_t hi_i = std::min(n - 1, static_cast<size_t>(std::ceil(0.975 * n)) - 1);
    *lo = v[lo_i];
    *hi = v[hi_i];
  };
  for (int32_t l = 0; l < n_layers; ++l) {
    double lo, hi;
    band(null_acc[l], &lo, &hi);
    sum.null_low.push_back(lo);
    sum.null_high.push_back(hi);
  }
  band(null_max, &sum.max_null_low, &sum.max_null_high);
  return sum;
}

}  // namespace revlab
