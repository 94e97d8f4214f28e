#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "revlab/analysis.hpp"

namespace revlab {

enum class ControlKind { SameSource, SameRelation, Unrelated };

const char* control_kind_name(ControlKind kind);
ControlKind parse_control_kind(const std::string& name);

// label 1: delta_rev = fwd(F) - rev(F); label 0: delta_2 = fwd(F) - fwd(control)
struct ProbeExample {
  std::vector<double> delta;
  int32_t label = 0;
};

struct ProbeDataset {
  ControlKind control_kind = ControlKind::Unrelated;
  int32_t layer = 0;
  std::vector<ProbeExample> examples;
  std::vector<int32_t> train_idx, test_idx;
};

// Balanced dataset of difference vectors at one layer, built from forward and
// reverse answer-slot states. Facts are split 70/30 and control partners are
// drawn within the anchor's split, so no fact contributes to both sides.
ProbeDataset build_probe_dataset(const std::vector<ActivationRecord>& records,
                                 const std::vector<Fact>& facts, ControlKind control_kind,
                                 int32_t layer, uint64_t seed);

struct ProbeOptions {
  bool standardize = true;  // per-dimension z-scoring fit on the train split
  std::vector<double> lambda_grid = {0.01, 0.1, 1.0};
  double lambda_default = 0.1;  // kept unless another grid value wins on validation
  int32_t max_iters = 1000;
  double tol = 1e-5;
  double lr = 1.0;
};

struct ProbeResult {
  double test_accuracy = 0;
  std::vector<double> weights;
  double lambda = 0;
  bool converged = false;
  double final_grad_norm = 0;
};

// Bias-free L2 logistic regression by deterministic full-batch gradient
// descent. Lambda is picked on a validation slice of the train split, then the
// probe is refit on the whole train split and scored on the test split.
ProbeResult train_probe(const ProbeDataset& ds, const ProbeOptions& opts = {});

struct LayerProbeSummary {
  ControlKind control_kind = ControlKind::Unrelated;
  std::vector<double> layer_accuracy;
  std::vector<double> null_low, null_high;  // per-layer permutation band
  double max_accuracy = 0;                  // max over layers
  double max_null_low = 0, max_null_high = 0;  // band of the max-over-layers statistic
};

// Per-layer probes plus a label-permutation null (n_shuffles refits per layer,
// one shared permutation per shuffle across layers). Bands are the 2.5th and
// 97.5th percentiles; the max-over-layers band uses the max statistic per
// shuffle so the summary accounts for layer selection.
LayerProbeSummary probe_all_layers(const std::vector<ActivationRecord>& records,
                                   const std::vector<Fact>& facts, ControlKind control_kind,
                                   int32_t n_shuffles, uint64_t seed,
                                   const ProbeOptions& opts = {});

}  // namespace revlab
