#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "revlab/corpus.hpp"
#include "revlab/model.hpp"
#include "revlab/objectives.hpp"

namespace revlab {

struct RunConfig {
  Objective objective = Objective::Ntp;
  MaskingPolicy policy;  // ignored for plain NTP
  ModelConfig model;
  int64_t steps = 30000;
  int32_t batch_size = 64;
  float lr = 1e-3f;
  double warmup_frac = 0.01;   // linear lr warmup over this fraction of steps
  double plain_ratio = 0.5;    // NTP+Masking: chance a drawn example is a plain NTP sequence
  int64_t eval_every = 200;    // steps between heldout forward probes
  double probe_saturation = 0.995;
  int32_t saturation_patience = 2;  // consecutive saturated probes required to stop
  double plateau_tol = 0.005;       // relative loss improvement below this counts as plateau
  uint64_t seed = 0;
};

nlohmann::json to_json(const RunConfig& run);
RunConfig run_config_from_json(const nlohmann::json& j);
void validate_run(const RunConfig& run);

struct ProbePoint {
  int64_t step;
  double accuracy;
};

struct TrainResult {
  Params params;
  int64_t steps_run = 0;
  bool early_stopped = false;
  std::vector<double> loss_log;       // one entry per optimizer step
  std::vector<ProbePoint> probe_log;  // heldout forward-probe trajectory
};

// Trains from scratch on corpus.train_docs. Deterministic under run.seed.
// Stops early once the heldout forward probe saturates (probe_saturation,
// saturation_patience times in a row) and the loss has plateaued across the
// last two eval windows. Throws on divergence with the offending step index.
TrainResult train(const Corpus& corpus, const RunConfig& run);

struct FactOutcome {
  Fact fact;  // heldout fact, forward orientation
  TokenId predicted = -1;
  bool correct = false;
};

struct EvalReport {
  double reversal_accuracy = 0;
  double forward_accuracy = 0;
  double false_frame_accuracy = 0;
  std::vector<FactOutcome> reverse_outcomes;
  std::vector<FactOutcome> forward_outcomes;
};

// Exact-match evaluation over heldout facts. Reverse query: MLM answers
// `B r_inv [MASK]` at the mask; decoders greedily continue the bare `B r_inv`
// prompt. Forward query is the analogous `A r ...` probe. False frame keeps
// the forward relation but swaps the entities (`B r ...`) and reports the
// fraction of prompts answered with the training-time source.
EvalReport eval_reversal(const Params& ps, const Corpus& corpus, Objective objective);
double eval_false_frame(const Params& ps, const Corpus& corpus, Objective objective);

struct SweepRow {
  MaskingPolicy policy;
  Objective objective;
  double reversal_accuracy = 0;
  double forward_accuracy = 0;
};

// One run per enumerate_sweep_policies() entry, all from base.seed so the
// initialization is shared and only the policy varies.
std::vector<SweepRow> run_sweep(const Corpus& corpus, const RunConfig& base);

// Trains an MLM run whose policy never masks the target, then asks the
// forward question `A r [MASK]`. The target was never a prediction target, so
// the expected accuracy is ~0 even though the fact was seen every epoch.
double eval_forward_after_never_mask_target(const Corpus& corpus, const RunConfig& run);

}  // namespace revlab
