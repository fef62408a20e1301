#include "xal/objective.hpp"

#include <algorithm>
#include <cmath>

namespace xal {

int ProbDist::argmax() const {
  return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

void ProbDist::validate() const {
  if (p.empty()) throw ValidationError("ProbDist: empty");
  double sum = 0.0;
  for (double x : p) {
    if (!std::isfinite(x) || x < 0.0) throw ValidationError("ProbDist: entry out of range");
    sum += x;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw ValidationError("ProbDist: sum != 1");
}

double classification_loss(const ProbDist& pred, int gold) {
  pred.validate();
  if (gold < 0 || gold >= pred.num_classes()) throw ValidationError("classification_loss: gold out of range");
  return -std::log(std::max(pred.p[gold], kLogEps));
}

double predictive_entropy(const ProbDist& pred) {
  pred.validate();
  double h = 0.0;
  for (double x : pred.p) {
    if (x > kLogEps) h -= x * std::log(x);
  }
  return std::max(h, 0.0);
}

double generation_loss(std::span<const double> token_logprobs) {
  if (token_logprobs.empty()) throw DegenerateInputError("generation_loss: empty sequence");
  double s = 0.0;
  for (double lp : token_logprobs) s += lp;
  return -s;
}

double explanation_score(std::span<const double> token_logprobs) {
  if (token_logprobs.empty()) throw DegenerateInputError("explanation_score: empty sequence");
  double s = 0.0;
  for (double lp : token_logprobs) s += lp;
  return s / static_cast<double>(token_logprobs.size());
}

double ranking_loss(std::span<const double> scores, double margin) {
  if (scores.size() < 2) throw DegenerateInputError("ranking_loss: needs >= 2 scores");
  const double p0 = scores[0];
  double loss = 0.0;
  for (size_t r = 1; r < scores.size(); ++r) {
    loss += std::max(0.0, scores[r] - p0 + margin);
  }
  return loss;
}

LossBreakdown total_loss(double cls, double gen, double rank, double lambda1, double lambda2) {
  if (lambda1 < 0.0 || lambda2 < 0.0) throw ValidationError("total_loss: negative lambda");
  if (!std::isfinite(cls) || !std::isfinite(gen) || !std::isfinite(rank)) {
    throw ValidationError("total_loss: non-finite component");
  }
  LossBreakdown b;
  b.cls = cls;
  b.gen = gen;
  b.rank = rank;
  b.total = cls + lambda1 * gen + lambda2 * rank;
  return b;
}

double kl_divergence(const ProbDist& p, const ProbDist& q) {
  if (p.num_classes() != q.num_classes()) throw ValidationError("kl_divergence: size mismatch");
  double kl = 0.0;
  for (int i = 0; i < p.num_classes(); ++i) {
    const double pi = std::max(p.p[i], kLogEps);
    const double qi = std::max(q.p[i], kLogEps);
    if (p.p[i] > 0.0) kl += p.p[i] * (std::log(pi) - std::log(qi));
  }
  return std::max(kl, 0.0);
}

}  // namespace xal
