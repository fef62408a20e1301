#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "xal/acquisition.hpp"
#include "xal/explain.hpp"
#include "xal/trainer.hpp"

namespace xal {

inline constexpr int kArtifactSchemaVersion = 1;

struct ALProtocol {
  enum class Mode { kFixedBudget, kToTarget };
  Mode mode = Mode::kFixedBudget;
  size_t init_size = 100;
  size_t per_round = 100;  // L
  int rounds = 4;          // M, fixed-budget mode
  double target_fraction = 0.9;  // to-target mode
  double upper_bound_f1 = 0.0;   // to-target mode
  std::string strategy = "xal";

  // ablations: me_exp keeps the XAL objective but selects by entropy alone;
  // no_rank drops the ranking loss; no_me selects by explanation score alone
  bool me_exp = false;
  bool no_rank = false;
  bool no_me = false;

  int halt_after_round = -1;  // stop after completing this round (resumable)

  size_t budget() const { return init_size + per_round * static_cast<size_t>(rounds); }
  void validate() const;
};

struct ExperimentConfig {
  ALProtocol protocol;
  TrainConfig train;
  ModelConfig model;
  StrategyConfig strategy;
  uint64_t init_seed = 1;
  uint64_t run_seed = 1;
  int oracle_jobs = 1;

  // Returns a copy with the ablation flags folded into the training and
  // selection parameters.
  ExperimentConfig normalized() const;
  bool needs_explanations() const;
};

struct RoundRecord {
  int round = 0;
  std::vector<std::string> selected;  // empty for round 0 only when init_size == 0
  EvalReport eval;
  TrainingFingerprint fingerprint;
  size_t generation_failures = 0;
};

struct RunRecord {
  std::string out_dir;
  ExperimentConfig config;
  uint64_t corpus_fingerprint = 0;
  std::string status;  // running | halted | complete | target_reached | target_not_reached
  std::vector<RoundRecord> rounds;
  double wall_clock_seconds = 0.0;
  std::optional<size_t> labeled_at_stop;  // to-target mode

  void check_audit() const;  // bookkeeping invariants over the recorded rounds
};

// Executes init -> [train -> score -> select -> annotate -> explain] x M with
// an evaluation after every training pass; all artifacts are persisted under
// out_dir before return. The oracle may be null when the objective needs no
// explanations.
RunRecord run_fixed_budget(const ExperimentConfig& config, const Dataset& train_set,
                           const Dataset& test_set, ExplanationOracle* oracle,
                           ExplanationCache* cache, const ModelFactory& factory,
                           const std::filesystem::path& out_dir);

// Rounds of size per_round until macro-F1 reaches target_fraction x
// upper_bound_f1 or the pool is exhausted.
RunRecord run_to_target(const ExperimentConfig& config, const Dataset& train_set,
                        const Dataset& test_set, ExplanationOracle* oracle,
                        ExplanationCache* cache, const ModelFactory& factory,
                        const std::filesystem::path& out_dir);

// Continues an incomplete run directory; completed rounds are reused from
// their persisted artifacts, so the remaining trajectory matches an unhalted
// run exactly.
RunRecord resume_run(const ExperimentConfig& config, const Dataset& train_set,
                     const Dataset& test_set, ExplanationOracle* oracle, ExplanationCache* cache,
                     const ModelFactory& factory, const std::filesystem::path& out_dir);

RunRecord load_run_record(const std::filesystem::path& out_dir);

struct RoundAggregate {
  int round = 0;
  size_t labeled = 0;
  double mean_macro_f1 = 0.0;
  double sd_macro_f1 = 0.0;  // sample standard deviation (n-1)
  size_t n = 0;
};

// Per-round mean and sample standard deviation of macro-F1 across runs of
// identical shape; offenders are named on mismatch.
std::vector<RoundAggregate> aggregate_runs(const std::vector<RunRecord>& records);
std::string aggregate_to_csv(const std::vector<RoundAggregate>& rows);

// One row per dataset example: id, pool flag, gold label, h0 vector.
void export_embeddings(const ClassifierExplainer& model, const Dataset& dataset,
                       const PoolState& pool, const std::vector<std::string>& selected_this_round,
                       const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Synthetic task

struct SyntheticSpec {
  size_t train_size = 1000;
  size_t test_size = 300;
  int num_classes = 3;
  RationaleLexicon lexicon;            // leave empty to use default_lexicon()
  std::vector<double> class_weights;   // empty = uniform
  double noise_rate = 0.0;
  int filler_tokens = 8;
  uint64_t seed = 0;
};

struct SyntheticTask {
  Dataset train;
  Dataset test;
  RationaleLexicon lexicon;
};

RationaleLexicon default_lexicon(int num_classes);

// Every example embeds exactly one rationale token that determines its
// label (flipped with probability noise_rate), so the mock oracle's
// explanations carry real signal.
SyntheticTask make_synthetic_task(const SyntheticSpec& spec);

void write_dataset_jsonl(const Dataset& dataset, const std::filesystem::path& path);

}  // namespace xal
