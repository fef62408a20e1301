#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xal/corpus.hpp"
#include "xal/model.hpp"
#include "xal/objective.hpp"

namespace xal {

struct CandidateScore {
  std::string example_id;
  std::optional<double> entropy;     // c_i
  std::optional<double> expl_score;  // p_i (<= 0)
  std::optional<double> combined;    // the score the strategy ranked by
  bool selected = false;
  bool generation_failed = false;
};

struct SelectionResult {
  std::string strategy;
  std::vector<std::string> selected;        // ordered, length min(L, |pool|)
  std::vector<CandidateScore> table;        // one row per candidate, pool order
  uint64_t seed = 0;
  size_t generation_failures = 0;

  std::string to_csv() const;  // example_id,entropy,expl_score,combined,selected
};

// Combined selection score: softmax of -p and softmax of c over the pool,
// weighted lambda/(1+lambda) and 1/(1+lambda). Sums to 1.
std::vector<double> xal_score(std::span<const double> entropies,
                              std::span<const double> expl_scores, double lambda);

// Indices of the L largest scores. Ties are broken by a seeded shuffle rank,
// then index order.
std::vector<size_t> select_top_L(std::span<const double> scores, size_t L, uint64_t tie_seed);

// I = H(mean of samples) - mean(H(sample)); >= 0.
double bald_mutual_information(const std::vector<ProbDist>& samples);

// Greedy farthest-first in Euclidean distance, seeded from the labeled
// centers. Returns picks (indices into `unlabeled`) in selection order.
std::vector<size_t> coreset_greedy(const std::vector<std::vector<double>>& unlabeled,
                                   const std::vector<std::vector<double>>& labeled, size_t L,
                                   uint64_t tie_seed);

// (P - onehot(argmax P)) outer h0, flattened row-major (class-major).
std::vector<double> badge_gradient_embedding(const ProbDist& pred, std::span<const double> h0);

// k-means++ seeding used by BADGE: first center uniform, then squared-
// distance-proportional draws without replacement.
std::vector<size_t> kmeanspp_select(const std::vector<std::vector<double>>& points, size_t L,
                                    uint64_t seed);

// Mean KL(neighbor || candidate) over the m given neighbors.
double cal_score(const ProbDist& candidate, const std::vector<const ProbDist*>& neighbors);

// CoreMSE-style scores from a per-candidate posterior ensemble.
// ensemble[i][t] is candidate i's distribution under ensemble member t; the
// change vector of candidate i spans eval_subset (indices into ensemble).
struct BempsScores {
  std::vector<double> scores;                       // expected score change, >= 0
  std::vector<std::vector<double>> change_vectors;  // one per candidate
};
BempsScores bemps_core(const std::vector<std::vector<ProbDist>>& ensemble,
                       const std::vector<size_t>& eval_subset);

// Diversity selection over BEMPS change vectors: k-means with cluster
// representatives; degenerates to a seeded uniform draw when every change
// vector is zero.
std::vector<size_t> bemps_select(const BempsScores& bemps, size_t L, uint64_t seed);

// Per-candidate entropy and explanation score for the unlabeled pool, in
// pool order. Generation failures leave the explanation score empty and are
// counted; those candidates fall back to the entropy term alone.
struct XalCandidateTable {
  std::vector<double> entropies;
  std::vector<std::optional<double>> expl_scores;
  size_t failures = 0;
};
XalCandidateTable xal_candidate_scores(const Dataset& dataset, const PoolState& pool,
                                       const ClassifierExplainer& model, int beam_width,
                                       bool with_generation, int jobs);

struct StrategyConfig {
  double lambda_select = 0.5;   // Eq. 8 lambda
  bool explanation_only = false;  // rank purely by -p ("w/o ME")
  int beam_width = 4;
  int mc_samples = 25;          // BALD / BEMPS dropout samples
  double dropout_rate = 0.1;
  int cal_neighbors = 10;
  size_t bemps_eval_cap = 256;  // eval-pool subsample bound (0 = whole pool)
  int jobs = 2;                 // per-candidate scoring fan-out
};

class Strategy {
 public:
  virtual ~Strategy() = default;
  virtual std::string id() const = 0;
  // `model` may be null only for strategies that never consult it (random).
  virtual SelectionResult select(const Dataset& dataset, const PoolState& pool,
                                 const ClassifierExplainer* model, size_t L,
                                 uint64_t seed) const = 0;
};

// Ids: random, max-entropy, bald, breaking-ties, least-confidence, coreset,
// badge, bemps, cal, xal.
std::unique_ptr<Strategy> make_strategy(const std::string& id, StrategyConfig config = {});
std::vector<std::string> strategy_ids();

}  // namespace xal
