#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "revlab/corpus.hpp"
#include "revlab/training.hpp"

namespace revlab {

// pass/fail thresholds shared by suite checks and the acceptance gate
inline constexpr double kNearZeroMax = 0.02;        // "near 0%" operationalized
inline constexpr double kHighAccMin = 0.95;         // "reliably succeeds"
inline constexpr double kForwardMin = 0.99;         // trained-direction sanity floor
inline constexpr double kSourceIncludedMin = 0.10;  // "non-zero performance"

// Everything a suite cell needs to be reproducible: corpus shape, model shape,
// optimization, and analysis sizes. Defaults match the full-size experiments;
// tests shrink them.
struct ExperimentShape {
  int32_t n_entities = 1000, n_relations = 20, n_heldout = 200, max_affix = 5;
  int32_t n_layers = 4, d_model = 256, n_heads = 4, d_mlp = 1024, max_seq_len = 32;
  int64_t steps = 30000;
  int32_t batch_size = 64;
  float lr = 1e-3f;
  int64_t eval_every = 200;
  double plain_ratio = 0.5;
  int32_t analysis_facts = 100, distance_facts = 20, n_shuffles = 100;
};

nlohmann::json to_json(const ExperimentShape& s);
ExperimentShape shape_from_json(const nlohmann::json& j);

// fnv1a over the canonical (key-sorted) JSON dump; stable under field reorder
uint64_t config_hash(const nlohmann::json& j);

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct ExperimentManifest {
  std::string suite;
  std::string config_hash_hex;
  std::vector<uint64_t> seeds;
  std::vector<std::string> artifacts;
  double wall_clock_sec = 0;
  std::vector<CheckResult> checks;
  std::vector<std::string> failures;  // per-stage errors; the suite keeps going
};

nlohmann::json to_json(const ExperimentManifest& m);
bool manifest_all_pass(const ExperimentManifest& m);

// REVLAB_OUT env var, falling back to "out"
std::string default_out_dir();

const std::vector<std::string>& suite_names();

// Runs one named suite over the seeds, reusing cached corpora and runs under
// out_dir, and writes CSVs, SVGs, and a manifest under out_dir/<suite>/.
ExperimentManifest run_suite(const std::string& suite, const std::vector<uint64_t>& seeds,
                             const std::string& out_dir, const ExperimentShape& shape);

// Cached building blocks. ensure_corpus generates-or-loads a fact corpus keyed
// by its generation parameters; ensure_run trains-or-loads a run keyed by the
// (corpus manifest, run config) hash. Both are what make suites resumable.
Corpus ensure_corpus(const std::string& out_dir, const ExperimentShape& shape, uint64_t seed);

struct RunArtifacts {
  Params params;
  double reversal_accuracy = 0, forward_accuracy = 0, false_frame_accuracy = 0;
  int64_t steps_run = 0;
  bool from_cache = false;
  std::string dir;
};

RunArtifacts ensure_run(const std::string& out_dir, const Corpus& corpus, const RunConfig& run);

RunConfig make_run(const ExperimentShape& shape, const Corpus& corpus, Objective objective,
                   const MaskingPolicy& policy, uint64_t seed);

// Renders a metrics, distances, or probes CSV to an SVG chart. Throws on an
// empty table or a header that matches no documented schema, naming the
// offending column.
void render(const std::string& csv_path, const std::string& svg_path);

}  // namespace revlab
