#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "xal/explain.hpp"
#include "xal/model.hpp"

namespace xal {

struct TrainConfig {
  int epochs = 10;
  double learning_rate = 1e-4;
  enum class Schedule { kConstant, kLinearDecay };
  Schedule schedule = Schedule::kLinearDecay;
  int batch_size = 1;
  double lambda1 = 0.1;
  double lambda2 = 0.01;
  uint64_t seed = 0;

  void validate() const;
};

struct StepLog {
  int round = 0;
  int epoch = 0;
  int step = 0;
  LossBreakdown loss;
};
using StepLogger = std::function<void(const StepLog&)>;

// One labeled training item; `explanations` may be null only when both
// lambda1 and lambda2 are zero.
struct TrainItem {
  const Example* example = nullptr;
  const ExplanationSet* explanations = nullptr;
};

using ModelFactory = std::function<std::unique_ptr<TrainableModel>(uint64_t seed)>;

// Adam over a flat parameter vector; conventional defaults.
struct AdamOptimizer {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void step(std::span<double> params, std::span<const double> grads, double lr);

 private:
  std::vector<double> m_;
  std::vector<double> v_;
  uint64_t t_ = 0;
};

// Trains a freshly initialized model for config.epochs over the items,
// minimizing cls + lambda1*gen + lambda2*rank, and stamps the snapshot
// fingerprint (seed, epochs, data hash, step count). Epoch order is shuffled
// with the run seed. Throws ConfigError before any step if explanations are
// required but missing.
std::unique_ptr<TrainableModel> train_round(const ModelFactory& factory,
                                            const std::vector<TrainItem>& items,
                                            const TrainConfig& config, int round,
                                            const StepLogger& logger = {});

struct EvalReport {
  double macro_f1 = 0.0;
  std::vector<double> precision;
  std::vector<double> recall;
  std::vector<double> f1;
  std::vector<size_t> support;           // gold count per class
  std::optional<double> ranking_accuracy;
  size_t labeled_count = 0;  // filled by the experiment loop
};

// Confusion-matrix macro-F1; classes absent from both predictions and gold
// contribute F1 = 0 to the unweighted mean.
EvalReport evaluate_macro_f1(const ClassifierExplainer& model,
                             const std::vector<const Example*>& test_examples);

struct RankingPair {
  const Example* example = nullptr;
  std::string reasonable_text;
  std::string unreasonable_text;
};

// Fraction of pairs where the reasonable explanation outscores the
// unreasonable one under length-normalized scoring; ties count as incorrect.
double evaluate_ranking_accuracy(const ClassifierExplainer& model,
                                 const std::vector<RankingPair>& pairs);

// Expands each ExplanationSet into (reasonable, unreasonable) pairs, one per
// wrong-label explanation.
std::vector<RankingPair> ranking_pairs_from_sets(
    const std::vector<std::pair<const Example*, const ExplanationSet*>>& sets);

// Stable hash of the training data (ids, labels, explanation texts).
uint64_t training_data_hash(const std::vector<TrainItem>& items);

}  // namespace xal
