#include "revlab/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "revlab/rng.hpp"

namespace revlab {

namespace {

constexpr uint64_t kInitSalt = 0x9a1f0c3d5b7e2468ull;
constexpr uint64_t kEpochSalt = 0x51ed270693ab44c1ull;

enum class ProbeSlot { Source, Relation, Target };

// The probe must ask a question the objective actually trained. MLM runs are
// probed at a maskable slot (target preferred, then source, then relation);
// decoder runs are probed as a bare forward continuation.
ProbeSlot probe_slot_for(const RunConfig& run) {
  if (run.objective != Objective::Mlm) return ProbeSlot::Target;
  if (run.policy.target) return ProbeSlot::Target;
  if (run.policy.source) return ProbeSlot::Source;
  return ProbeSlot::Relation;
}

TokenId mlm_argmax(const Params& ps, std::vector<TokenId> tokens, int32_t pos) {
  return argmax_at(ps, std::span<const TokenId>(tokens), AttentionMode::Bidirectional, pos);
}

TokenId decoder_next(const Params& ps, std::vector<TokenId> tokens) {
  return argmax_next(ps, std::span<const TokenId>(tokens), AttentionMode::Causal);
}

double heldout_forward_probe(const Params& ps, const Corpus& corpus, const RunConfig& run) {
  const Vocab& v = corpus.vocab;
  ProbeSlot slot = probe_slot_for(run);
  int64_t correct = 0;
  for (const Fact& f : corpus.heldout_facts) {
    TokenId pred, want;
    if (run.objective == Objective::Mlm) {
      switch (slot) {
        case ProbeSlot::Target:
          pred = mlm_argmax(ps, {f.source, f.relation, v.mask_token()}, 2);
          want = f.target;
          break;
        case ProbeSlot::Source:
          pred = mlm_argmax(ps, {v.mask_token(), f.relation, f.target}, 0);
          want = f.source;
          break;
        case ProbeSlot::Relation:
          pred = mlm_argmax(ps, {f.source, v.mask_token(), f.target}, 1);
          want = f.relation;
          break;
        default:
          throw std::logic_error("unreachable probe slot");
      }
    } else {
      pred = decoder_next(ps, {f.source, f.relation});
      want = f.target;
    }
    if (pred == want) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(corpus.heldout_facts.size());
}

TrainingExample build_example(const Document& doc, const Vocab& v, const RunConfig& run,
                              uint64_t seed) {
  switch (run.objective) {
    case Objective::Ntp:
      return build_ntp(doc);
    case Objective::Mlm:
      return build_mlm(doc, v, run.policy, seed);
    case Objective::NtpMasking: {
      Rng r(seed);
      bool plain = r.uniform() < run.plain_ratio;
      uint64_t mask_seed = r.next_u64();
      return plain ? build_ntp(doc) : build_ntp_masking(doc, v, run.policy, mask_seed);
    }
  }
  throw std::logic_error("unknown objective");
}

}  // namespace

nlohmann::json to_json(const RunConfig& run) {
  return {{"objective", objective_name(run.objective)},
          {"policy", policy_name(run.policy)},
          {"model", to_json(run.model)},
          {"steps", run.steps},
          {"batch_size", run.batch_size},
          {"lr", run.lr},
          {"warmup_frac", run.warmup_frac},
          {"plain_ratio", run.plain_ratio},
          {"eval_every", run.eval_every},
          {"probe_saturation", run.probe_saturation},
          {"saturation_patience", run.saturation_patience},
          {"plateau_tol", run.plateau_tol},
          {"seed", run.seed}};
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig run;
  run.objective = parse_objective(j.at("objective"));
  run.policy = parse_policy(j.at("policy"));
  run.model = model_config_from_json(j.at("model"));
  run.steps = j.at("steps");
  run.batch_size = j.at("batch_size");
  run.lr = j.at("lr");
  run.warmup_frac = j.at("warmup_frac");
  run.plain_ratio = j.at("plain_ratio");
  run.eval_every = j.at("eval_every");
  run.probe_saturation = j.at("probe_saturation");
  run.saturation_patience = j.at("saturation_patience");
  run.plateau_tol = j.at("plateau_tol");
  run.seed = j.at("seed");
  return run;
}

void validate_run(const RunConfig& run) {
  if (run.model.attention != attention_for(run.objective))
    throw std::invalid_argument("attention mode inconsistent with objective");
  if (run.objective != Objective::Ntp) validate_policy(run.policy);
  if (run.steps < 0) throw std::invalid_argument("steps must be >= 0");
  if (run.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (run.warmup_frac < 0 || run.warmup_frac > 1)
    throw std::invalid_argument("warmup_frac must be in [0,1]");
  if (run.plain_ratio < 0 || run.plain_ratio > 1)
    throw std::invalid_argument("plain_ratio must be in [0,1]");
  if (run.eval_every < 1) throw std::invalid_argument("eval_every must be >= 1");
  if (run.probe_saturation <= 0 || run.probe_saturation > 1)
    throw std::invalid_argument("probe_saturation must be in (0,1]");
  if (run.saturation_patience < 1) throw std::invalid_argument("saturation_patience must be >= 1");
  if (run.plateau_tol < 0) throw std::invalid_argument("plateau_tol must be >= 0");
}

TrainResult train(const Corpus& corpus, const RunConfig& run) {
  validate_run(run);
  if (run.model.vocab_size != corpus.vocab.size())
    throw std::invalid_argument("model vocab_size does not match corpus vocabulary");
  if (corpus.train_docs.empty()) throw std::invalid_argument("corpus has no training documents");
  audit_corpus(corpus);

  int32_t needed = 0;
  for (const auto& doc : corpus.train_docs) {
    int32_t len = static_cast<int32_t>(doc.tokens.size());
    needed = std::max(needed, run.objective == Objective::NtpMasking ? 2 * len + 1 : len);
  }
  if (needed > run.model.max_seq_len)
    throw std::invalid_argument("max_seq_len too small for this corpus/objective");

  TrainResult res;
  res.params = init_params<float>(run.model, hash_combine(run.seed, kInitSalt));
  if (run.steps == 0) return res;

  AdamState opt = make_adam_state(res.params);
  Rng epoch_rng(hash_combine(run.seed, kEpochSalt));
  std::vector<int32_t> order(corpus.train_docs.size());
  std::iota(order.begin(), order.end(), 0);
  epoch_rng.shuffle(order);
  size_t cursor = 0;

  int64_t warmup_steps = std::max<int64_t>(1, std::llround(run.warmup_frac * run.steps));
  int32_t saturated = 0;
  std::vector<TrainingExample> batch(run.batch_size);

  for (int64_t step = 0; step < run.steps; ++step) {
    for (int32_t i = 0; i < run.batch_size; ++i) {
      if (cursor == order.size()) {
        epoch_rng.shuffle(order);
        cursor = 0;
      }
      const Document& doc = corpus.train_docs[order[cursor++]];
      uint64_t ex_seed = hash_combine(hash_combine(run.seed, static_cast<uint64_t>(step)),
                                      static_cast<uint64_t>(i));
      batch[i] = build_example(doc, corpus.vocab, run, ex_seed);
    }

    float lr = run.lr;
    if (step < warmup_steps)
      lr = run.lr * static_cast<float>(step + 1) / static_cast<float>(warmup_steps);

    auto loss = grad_step(res.params, batch, opt, lr);
    res.steps_run = step + 1;
    if (loss) {
      if (!std::isfinite(*loss))
        throw std::runtime_error("training diverged at step " + std::to_string(step));
      res.loss_log.push_back(*loss);
    }

    bool at_probe = (step + 1) % run.eval_every == 0 || step + 1 == run.steps;
    if (!at_probe) continue;

    double probe = heldout_forward_probe(res.params, corpus, run);
    res.probe_log.push_back({step + 1, probe});
    saturated = probe >= run.probe_saturation ? saturated + 1 : 0;
    if (saturated < run.saturation_patience) continue;

    size_t w = static_cast<size_t>(run.eval_every);
    if (res.loss_log.size() < 2 * w) continue;
    double cur = 0, prev = 0;
    for (size_t k = res.loss_log.size() - w; k < res.loss_log.size(); ++k) cur += res.loss_log[k];
    for (size_t k = res.loss_log.size() - 2 * w; k < res.loss_log.size() - w; ++k)
      prev += res.loss_log[k];
    cur /= w;
    prev /= w;
    if (prev - cur < run.plateau_tol * std::max(prev, 1e-12)) {
      res.early_stopped = true;
      break;
    }
  }
  return res;
}

EvalReport eval_reversal(const Params& ps, const Corpus& corpus, Objective objective) {
  if (corpus.heldout_facts.empty()) throw std::invalid_argument("no heldout facts to evaluate");
  const Vocab& v = corpus.vocab;
  EvalReport rep;
  int64_t n = static_cast<int64_t>(corpus.heldout_facts.size());
  int64_t rev_ok = 0, fwd_ok = 0, ff_hits = 0;
  for (const Fact& f : corpus.heldout_facts) {
    TokenId inv = v.inverse_of(f.relation);
    TokenId rev_pred, fwd_pred, ff_pred;
    if (objective == Objective::Mlm) {
      rev_pred = mlm_argmax(ps, {f.target, inv, v.mask_token()}, 2);
      fwd_pred = mlm_argmax(ps, {f.source, f.relation, v.mask_token()}, 2);
      ff_pred = mlm_argmax(ps, {f.target, f.relation, v.mask_token()}, 2);
    } else {
      rev_pred = decoder_next(ps, {f.target, inv});
      fwd_pred = decoder_next(ps, {f.source, f.relation});
      ff_pred = decoder_next(ps, {f.target, f.relation});
    }
    bool rev_correct = rev_pred == f.source;
    bool fwd_correct = fwd_pred == f.target;
    rev_ok += rev_correct;
    fwd_ok += fwd_correct;
    ff_hits += ff_pred == f.source;
    rep.reverse_outcomes.push_back({f, rev_pred, rev_correct});
    rep.forward_outcomes.push_back({f, fwd_pred, fwd_correct});
  }
  rep.reversal_accuracy = static_cast<double>(rev_ok) / n;
  rep.forward_accuracy = static_cast<double>(fwd_ok) / n;
  rep.false_frame_accuracy = static_cast<double>(ff_hits) / n;
  return rep;
}

double eval_false_frame(const Params& ps, const Corpus& corpus, Objective objective) {
  return eval_reversal(ps, corpus, objective).false_frame_accuracy;
}

std::vector<SweepRow> run_sweep(const Corpus& corpus, const RunConfig& base) {
  if (base.objective == Objective::Ntp)
    throw std::invalid_argument("sweep applies to masking objectives only");
  std::vector<SweepRow> rows;
  for (const MaskingPolicy& policy : enumerate_sweep_policies()) {
    RunConfig run = base;
    run.policy = policy;
    TrainResult tr = train(corpus, run);
    EvalReport rep = eval_reversal(tr.params, corpus, run.objective);
    rows.push_back({policy, run.objective, rep.reversal_accuracy, rep.forward_accuracy});
  }
  return rows;
}

double eval_forward_after_never_mask_target(const Corpus& corpus, const RunConfig& run) {
  if (run.objective != Objective::Mlm)
    throw std::invalid_argument("never-mask-target ablation is an MLM experiment");
  if (run.policy.target) throw std::invalid_argument("policy must never mask the target");
  TrainResult tr = train(corpus, run);
  return eval_reversal(tr.params, corpus, run.objective).forward_accuracy;
}

}  // namespace revlab
