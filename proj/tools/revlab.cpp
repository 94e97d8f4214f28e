#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "revlab/analysis.hpp"
#include "revlab/checkpoint.hpp"
#include "revlab/corpus.hpp"
#include "revlab/probe.hpp"
#include "revlab/reporting.hpp"
#include "revlab/rng.hpp"
#include "revlab/svg.hpp"
#include "revlab/training.hpp"
#include "revlab/util.hpp"
#include "revlab/version.hpp"

namespace {

using namespace revlab;

struct GenArgs {
  std::string dataset = "simple_reversal";
  int32_t entities = 1000, relations = 20, heldout = 200, max_affix = 5;
  int32_t comparisons = 100, words = 10, repeats = 3;
  double reverse_fraction = 0.0;
  uint64_t seed = 0;
  std::string out;
};

struct TrainArgs {
  std::string corpus_dir, out;
  std::string objective = "ntp", policy = "standard";
  ExperimentShape shape;  // model + optimization fields reused
  double warmup_frac = 0.01;
  uint64_t seed = 0;
  bool tie_embeddings = false;
};

void add_model_flags(CLI::App* cmd, ExperimentShape& s) {
  cmd->add_option("--layers", s.n_layers, "transformer layers");
  cmd->add_option("--d-model", s.d_model, "residual width");
  cmd->add_option("--heads", s.n_heads, "attention heads");
  cmd->add_option("--d-mlp", s.d_mlp, "mlp hidden width");
  cmd->add_option("--max-seq", s.max_seq_len, "maximum sequence length");
}

void add_optim_flags(CLI::App* cmd, ExperimentShape& s) {
  cmd->add_option("--steps", s.steps, "optimizer steps");
  cmd->add_option("--batch", s.batch_size, "batch size");
  cmd->add_option("--lr", s.lr, "learning rate");
  cmd->add_option("--eval-every", s.eval_every, "steps between heldout probes");
  cmd->add_option("--plain-ratio", s.plain_ratio, "plain-sequence ratio for ntp_masking");
}

RunConfig run_from_args(const TrainArgs& a, const Corpus& corpus) {
  RunConfig run = make_run(a.shape, corpus, parse_objective(a.objective), parse_policy(a.policy),
                           a.seed);
  run.warmup_frac = a.warmup_frac;
  run.model.tie_embeddings = a.tie_embeddings;
  return run;
}

void print_report(const EvalReport& rep) {
  std::printf("reversal_acc %.4f\n", rep.reversal_accuracy);
  std::printf("forward_acc %.4f\n", rep.forward_accuracy);
  std::printf("false_frame_acc %.4f\n", rep.false_frame_accuracy);
}

int cmd_gen(const GenArgs& a) {
  Corpus corpus =
      a.dataset == "simple_reversal"
          ? generate_simple_reversal(a.entities, a.relations, a.heldout, a.max_affix, a.seed)
          : generate_nonsense(a.comparisons, a.words, a.repeats, a.reverse_fraction, a.seed);
  save_corpus(corpus, a.out);
  std::printf("wrote %s: %zu train docs, %zu facts, %zu heldout\n", a.out.c_str(),
              corpus.train_docs.size(), corpus.facts.size(), corpus.heldout_facts.size());
  return 0;
}

int cmd_train(const TrainArgs& a) {
  Corpus corpus = load_corpus(a.corpus_dir);
  RunConfig run = run_from_args(a, corpus);
  TrainResult tr = train(corpus, run);
  EvalReport rep = eval_reversal(tr.params, corpus, run.objective);
  save_checkpoint(a.out + "/checkpoint.bin", tr.params);
  nlohmann::json manifest = {{"run", to_json(run)},
                             {"corpus", corpus.manifest},
                             {"git_rev", kGitRevision},
                             {"steps_run", tr.steps_run},
                             {"early_stopped", tr.early_stopped},
                             {"final_loss", tr.loss_log.empty() ? 0.0 : tr.loss_log.back()},
                             {"metrics",
                              {{"reversal_acc", rep.reversal_accuracy},
                               {"forward_acc", rep.forward_accuracy},
                               {"false_frame_acc", rep.false_frame_accuracy}}}};
  write_file(a.out + "/manifest.json", manifest.dump(2) + "\n");
  std::printf("trained %lld steps (early_stopped=%d)\n",
              static_cast<long long>(tr.steps_run), tr.early_stopped ? 1 : 0);
  print_report(rep);
  return 0;
}

int cmd_eval(const std::string& corpus_dir, const std::string& ckpt, const std::string& objective) {
  Corpus corpus = load_corpus(corpus_dir);
  Params ps = load_checkpoint(ckpt);
  print_report(eval_reversal(ps, corpus, parse_objective(objective)));
  return 0;
}

int cmd_sweep(const TrainArgs& a) {
  Corpus corpus = load_corpus(a.corpus_dir);
  Objective obj = parse_objective(a.objective);
  if (obj == Objective::Ntp) throw std::invalid_argument("sweep applies to masking objectives only");
  CsvTable t;
  t.header = {"policy", "objective", "seed", "reversal_acc", "forward_acc"};
  for (const MaskingPolicy& policy : enumerate_sweep_policies()) {
    TrainArgs cell = a;
    cell.policy = policy_name(policy);
    RunConfig run = run_from_args(cell, corpus);
    RunArtifacts art = ensure_run(a.out, corpus, run);
    char rev[32], fwd[32];
    std::snprintf(rev, sizeof rev, "%.6g", art.reversal_accuracy);
    std::snprintf(fwd, sizeof fwd, "%.6g", art.forward_accuracy);
    t.rows.push_back({policy_name(policy), objective_name(obj), std::to_string(a.seed), rev, fwd});
    std::printf("%-22s %s reversal=%.4f forward=%.4f%s\n", policy_name(policy).c_str(),
                objective_name(obj).c_str(), art.reversal_accuracy, art.forward_accuracy,
                art.from_cache ? " (cached)" : "");
  }
  write_csv(a.out + "/metrics.csv", t);
  render(a.out + "/metrics.csv", a.out + "/metrics.svg");
  nlohmann::json manifest = {{"objective", objective_name(obj)},
                             {"corpus", corpus.manifest},
                             {"seed", a.seed},
                             {"git_rev", kGitRevision},
                             {"artifacts", {a.out + "/metrics.csv", a.out + "/metrics.svg"}}};
  write_file(a.out + "/manifest.json", manifest.dump(2) + "\n");
  return 0;
}

int cmd_ablate(const std::string& which, const TrainArgs& a, const std::string& ckpt) {
  Corpus corpus = load_corpus(a.corpus_dir);
  if (which == "false-frame") {
    Params ps = load_checkpoint(ckpt);
    double ff = eval_false_frame(ps, corpus, parse_objective(a.objective));
    std::printf("false_frame_acc %.4f\n", ff);
    return 0;
  }
  Ablation ab = which == "never-source" ? Ablation::NeverMaskSource : Ablation::NeverMaskTarget;
  TrainArgs cell = a;
  cell.policy = policy_name(ablation_policy(ab));
  if (ab == Ablation::NeverMaskSource) {
    for (const char* obj : {"mlm", "ntp_masking"}) {
      cell.objective = obj;
      RunArtifacts art = ensure_run(a.out, corpus, run_from_args(cell, corpus));
      std::printf("%s %s reversal=%.4f forward=%.4f\n", obj, cell.policy.c_str(),
                  art.reversal_accuracy, art.forward_accuracy);
    }
    return 0;
  }
  cell.objective = "mlm";
  RunArtifacts art = ensure_run(a.out, corpus, run_from_args(cell, corpus));
  std::printf("mlm %s forward=%.4f reversal=%.4f\n", cell.policy.c_str(), art.forward_accuracy,
              art.reversal_accuracy);
  return 0;
}

int cmd_analyze(const std::string& corpus_dir, const std::string& ckpt,
                const std::string& objective, int32_t n_facts, int32_t anchors, int32_t shuffles,
                uint64_t seed, bool full_seq_anchor, const std::string& out) {
  Corpus corpus = load_corpus(corpus_dir);
  Params ps = load_checkpoint(ckpt);
  Objective obj = parse_objective(objective);
  std::vector<Fact> facts = analysis_fact_slice(corpus, n_facts, seed);
  auto records = extract_states(ps, corpus.vocab, facts, obj, full_seq_anchor);

  CsvTable dist;
  dist.header = {"layer", "kind", "mean", "std", "n"};
  const ReferenceKind kinds[] = {ReferenceKind::ReverseFact, ReferenceKind::SameSource,
                                 ReferenceKind::SameRelation, ReferenceKind::Unrelated,
                                 ReferenceKind::MaskedVsUnmasked};
  for (ReferenceKind kind : kinds) {
    DistanceCurve curve = mean_cosine_distance(records, facts, kind, anchors, seed);
    for (size_t l = 0; l < curve.mean.size(); ++l) {
      char m[32], s[32];
      std::snprintf(m, sizeof m, "%.6g", curve.mean[l]);
      std::snprintf(s, sizeof s, "%.6g", curve.std_dev[l]);
      dist.rows.push_back({std::to_string(l), reference_kind_name(kind), m, s,
                           std::to_string(curve.n_facts)});
    }
  }
  write_csv(out + "/distances.csv", dist);
  render(out + "/distances.csv", out + "/distances.svg");

  CsvTable probes, summary;
  probes.header = {"layer", "control_kind", "accuracy", "null_low", "null_high"};
  summary.header = {"objective", "control_kind", "max_accuracy", "max_null_low", "max_null_high"};
  for (ControlKind kind :
       {ControlKind::SameSource, ControlKind::SameRelation, ControlKind::Unrelated}) {
    LayerProbeSummary sum = probe_all_layers(records, facts, kind, shuffles, seed);
    for (size_t l = 0; l < sum.layer_accuracy.size(); ++l) {
      char acc[32], lo[32], hi[32];
      std::snprintf(acc, sizeof acc, "%.6g", sum.layer_accuracy[l]);
      std::snprintf(lo, sizeof lo, "%.6g", sum.null_low[l]);
      std::snprintf(hi, sizeof hi, "%.6g", sum.null_high[l]);
      probes.rows.push_back({std::to_string(l), control_kind_name(kind), acc, lo, hi});
    }
    char acc[32], lo[32], hi[32];
    std::snprintf(acc, sizeof acc, "%.6g", sum.max_accuracy);
    std::snprintf(lo, sizeof lo, "%.6g", sum.max_null_low);
    std::snprintf(hi, sizeof hi, "%.6g", sum.max_null_high);
    summary.rows.push_back({objective_name(obj), control_kind_name(kind), acc, lo, hi});
  }
  write_csv(out + "/probes.csv", probes);
  render(out + "/probes.csv", out + "/probes.svg");
  write_csv(out + "/probe_summary.csv", summary);

  nlohmann::json manifest = {{"corpus", corpus.manifest},
                             {"checkpoint", ckpt},
                             {"objective", objective_name(obj)},
                             {"n_facts", static_cast<int64_t>(facts.size())},
                             {"anchors", anchors},
                             {"shuffles", shuffles},
                             {"seed", seed},
                             {"full_sequence_decoder_state", full_seq_anchor},
                             {"git_rev", kGitRevision}};
  write_file(out + "/manifest.json", manifest.dump(2) + "\n");
  std::printf("wrote %s/{distances,probes,probe_summary}.csv\n", out.c_str());
  return 0;
}

int cmd_report(const std::string& suite, const std::vector<uint64_t>& seeds,
               const std::string& out, const ExperimentShape& shape) {
  ExperimentManifest man = run_suite(suite, seeds, out, shape);
  for (const auto& c : man.checks)
    std::printf("[%s] %s: %s\n", c.pass ? "PASS" : "FAIL", c.name.c_str(), c.detail.c_str());
  for (const auto& f : man.failures) std::printf("[STAGE FAILURE] %s\n", f.c_str());
  std::printf("suite %s: %zu artifacts, %.1fs\n", man.suite.c_str(), man.artifacts.size(),
              man.wall_clock_sec);
  return manifest_all_pass(man) ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"reversal-curse experiment toolkit"};
  app.set_version_flag("--version", std::string(kGitRevision));
  app.require_subcommand(1);

  GenArgs gen;
  auto* cg = app.add_subcommand("gen", "generate a fact corpus");
  cg->add_option("dataset", gen.dataset, "simple_reversal or nonsense")
      ->check(CLI::IsMember({"simple_reversal", "nonsense"}));
  cg->add_option("--entities", gen.entities, "entity count");
  cg->add_option("--relations", gen.relations, "relation count");
  cg->add_option("--heldout", gen.heldout, "heldout fact count");
  cg->add_option("--max-affix", gen.max_affix, "max filler prefix/suffix length");
  cg->add_option("--comparisons", gen.comparisons, "nonsense comparison count");
  cg->add_option("--words", gen.words, "nonsense comparison word count");
  cg->add_option("--repeats", gen.repeats, "nonsense repeats per fact");
  cg->add_option("--reverse-fraction", gen.reverse_fraction, "fraction also trained reversed");
  cg->add_option("--seed", gen.seed, "rng seed");
  cg->add_option("--out", gen.out, "output directory")->required();

  TrainArgs tr;
  auto* ct = app.add_subcommand("train", "train one run from scratch");
  ct->add_option("--corpus", tr.corpus_dir, "corpus directory")->required();
  ct->add_option("--objective", tr.objective, "ntp, mlm, or ntp_masking");
  ct->add_option("--policy", tr.policy, "masking policy name");
  ct->add_option("--warmup-frac", tr.warmup_frac, "lr warmup fraction");
  ct->add_option("--seed", tr.seed, "rng seed");
  ct->add_flag("--tie-embeddings", tr.tie_embeddings, "tie input embedding and output head");
  ct->add_option("--out", tr.out, "output directory")->required();
  add_model_flags(ct, tr.shape);
  add_optim_flags(ct, tr.shape);

  std::string ev_corpus, ev_ckpt, ev_obj = "ntp";
  auto* ce = app.add_subcommand("eval", "evaluate a checkpoint on heldout facts");
  ce->add_option("--corpus", ev_corpus)->required();
  ce->add_option("--checkpoint", ev_ckpt)->required();
  ce->add_option("--objective", ev_obj);

  TrainArgs sw;
  auto* cs = app.add_subcommand("sweep", "train every masking-policy variant");
  cs->add_option("--corpus", sw.corpus_dir)->required();
  cs->add_option("--objective", sw.objective, "mlm or ntp_masking");
  cs->add_option("--warmup-frac", sw.warmup_frac);
  cs->add_option("--seed", sw.seed);
  cs->add_option("--out", sw.out, "output directory")->required();
  add_model_flags(cs, sw.shape);
  add_optim_flags(cs, sw.shape);

  TrainArgs ab;
  std::string ab_which, ab_ckpt;
  auto* ca = app.add_subcommand("ablate", "run a masking ablation");
  ca->add_option("which", ab_which, "never-source, never-target, or false-frame")
      ->required()
      ->check(CLI::IsMember({"never-source", "never-target", "false-frame"}));
  ca->add_option("--corpus", ab.corpus_dir)->required();
  ca->add_option("--objective", ab.objective, "objective for false-frame eval");
  ca->add_option("--checkpoint", ab_ckpt, "checkpoint for false-frame eval");
  ca->add_option("--warmup-frac", ab.warmup_frac);
  ca->add_option("--seed", ab.seed);
  ca->add_option("--out", ab.out, "output directory");
  add_model_flags(ca, ab.shape);
  add_optim_flags(ca, ab.shape);

  std::string an_corpus, an_ckpt, an_obj = "mlm", an_out;
  int32_t an_facts = 100, an_anchors = 20, an_shuffles = 100;
  uint64_t an_seed = 0;
  bool an_full_seq = false;
  auto* cn = app.add_subcommand("analyze", "representation distances and linear probes");
  cn->add_option("--corpus", an_corpus)->required();
  cn->add_option("--checkpoint", an_ckpt)->required();
  cn->add_option("--objective", an_obj);
  cn->add_option("--facts", an_facts, "facts to extract states for");
  cn->add_option("--anchors", an_anchors, "anchor facts per distance curve");
  cn->add_option("--shuffles", an_shuffles, "permutation-null shuffles");
  cn->add_option("--seed", an_seed);
  cn->add_flag("--full-seq-decoder-anchor", an_full_seq,
               "trace the answer-token state of the full sequence for decoders");
  cn->add_option("--out", an_out, "output directory")->required();

  std::string rp_suite, rp_out = default_out_dir();
  std::vector<uint64_t> rp_seeds = {0, 1, 2};
  ExperimentShape rp_shape;
  auto* cr = app.add_subcommand("report", "run a full experiment suite");
  cr->add_option("--suite", rp_suite, "fig1 table1 fig2 fig3 fig4 ablation2 ablation3")->required();
  cr->add_option("--seeds", rp_seeds, "seeds, comma separated")->delimiter(',');
  cr->add_option("--out", rp_out, "output directory (default $REVLAB_OUT or ./out)");
  cr->add_option("--entities", rp_shape.n_entities);
  cr->add_option("--relations", rp_shape.n_relations);
  cr->add_option("--heldout", rp_shape.n_heldout);
  cr->add_option("--max-affix", rp_shape.max_affix);
  cr->add_option("--analysis-facts", rp_shape.analysis_facts);
  cr->add_option("--anchors", rp_shape.distance_facts);
  cr->add_option("--shuffles", rp_shape.n_shuffles);
  add_model_flags(cr, rp_shape);
  add_optim_flags(cr, rp_shape);

  std::string rd_csv, rd_svg;
  auto* cd = app.add_subcommand("render", "render a metrics/distances/probes csv to svg");
  cd->add_option("--csv", rd_csv)->required();
  cd->add_option("--svg", rd_svg)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (cg->parsed()) return cmd_gen(gen);
    if (ct->parsed()) return cmd_train(tr);
    if (ce->parsed()) return cmd_eval(ev_corpus, ev_ckpt, ev_obj);
    if (cs->parsed()) return cmd_sweep(sw);
    if (ca->parsed()) {
      if (ab.out.empty()) ab.out = default_out_dir();
      return cmd_ablate(ab_which, ab, ab_ckpt);
    }
    if (cn->parsed())
      return cmd_analyze(an_corpus, an_ckpt, an_obj, an_facts, an_anchors, an_shuffles, an_seed,
                         an_full_seq, an_out);
    if (cr->parsed()) return cmd_report(rp_suite, rp_seeds, rp_out, rp_shape);
    if (cd->parsed()) {
      render(rd_csv, rd_svg);
      std::printf("wrote %s\n", rd_svg.c_str());
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
