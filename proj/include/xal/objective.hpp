#pragma once

#include <span>
#include <vector>

#include "xal/common.hpp"

namespace xal {

// Probability distribution over the label space. Entries >= 0, sum to 1
// within 1e-6; validate() enforces both.
struct ProbDist {
  std::vector<double> p;

  int num_classes() const { return static_cast<int>(p.size()); }
  int argmax() const;
  void validate() const;
};

struct LossBreakdown {
  double cls = 0.0;
  double gen = 0.0;
  double rank = 0.0;
  double total = 0.0;
};

// Floor for every logarithm in the objective; probabilities below this are
// clipped before taking logs.
inline constexpr double kLogEps = 1e-12;

// -log p[gold], clipped below by -log(kLogEps).
double classification_loss(const ProbDist& pred, int gold);

// -sum p log p, in [0, ln C]; 0*log 0 treated as 0.
double predictive_entropy(const ProbDist& pred);

// Negative sum of token log-probabilities of the reasonable explanation
// under teacher forcing. No length normalization.
double generation_loss(std::span<const double> token_logprobs);

// Length-normalized conditional log-probability: mean of token logprobs.
double explanation_score(std::span<const double> token_logprobs);

// sum_{r>0} max(0, scores[r] - scores[0] + margin). Index 0 must hold the
// reasonable explanation's score. margin defaults to 0.
double ranking_loss(std::span<const double> scores, double margin = 0.0);

// total = cls + lambda1 * gen + lambda2 * rank
LossBreakdown total_loss(double cls, double gen, double rank, double lambda1, double lambda2);

// KL(p || q) with probabilities clipped at kLogEps.
double kl_divergence(const ProbDist& p, const ProbDist& q);

}  // namespace xal
