#include "xal/acquisition.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace xal {

namespace {

std::vector<double> shifted_softmax(std::span<const double> x) {
  std::vector<double> out(x.begin(), x.end());
  softmax_row_inplace(out);
  return out;
}

// Shuffle-derived tie ranks: rank[i] is candidate i's position after a
// seeded shuffle.
std::vector<size_t> tie_ranks(size_t n, uint64_t tie_seed) {
  std::vector<size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng = make_rng(tie_seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<size_t> rank(n);
  for (size_t i = 0; i < n; ++i) rank[perm[i]] = i;
  return rank;
}

}  // namespace

std::vector<double> xal_score(std::span<const double> entropies,
                              std::span<const double> expl_scores, double lambda) {
  if (entropies.empty()) throw DegenerateInputError("xal_score: empty pool");
  if (entropies.size() != expl_scores.size()) throw ValidationError("xal_score: length mismatch");
  if (lambda < 0.0) throw ValidationError("xal_score: lambda must be >= 0");

  std::vector<double> neg_p(expl_scores.size());
  for (size_t i = 0; i < expl_scores.size(); ++i) neg_p[i] = -expl_scores[i];
  const auto sm_expl = shifted_softmax(neg_p);
  const auto sm_ent = shifted_softmax(entropies);

  const double w_expl = lambda / (1.0 + lambda);
  const double w_ent = 1.0 / (1.0 + lambda);
  std::vector<double> s(entropies.size());
  for (size_t i = 0; i < s.size(); ++i) s[i] = w_expl * sm_expl[i] + w_ent * sm_ent[i];
  return s;
}

std::vector<size_t> select_top_L(std::span<const double> scores, size_t L, uint64_t tie_seed) {
  const size_t n = scores.size();
  const auto rank = tie_ranks(n, tie_seed);
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    if (rank[a] != rank[b]) return rank[a] < rank[b];
    return a < b;
  });
  order.resize(std::min(L, n));
  return order;
}

double bald_mutual_information(const std::vector<ProbDist>& samples) {
  if (samples.size() < 2) throw ValidationError("bald: needs at least 2 samples");
  const int c = samples[0].num_classes();
  ProbDist mean;
  mean.p.assign(c, 0.0);
  double mean_entropy = 0.0;
  for (const auto& s : samples) {
    for (int i = 0; i < c; ++i) mean.p[i] += s.p[i];
    mean_entropy += predictive_entropy(s);
  }
  for (double& x : mean.p) x /= static_cast<double>(samples.size());
  mean_entropy /= static_cast<double>(samples.size());
  return std::max(0.0, predictive_entropy(mean) - mean_entropy);
}

std::vector<size_t> coreset_greedy(const std::vector<std::vector<double>>& unlabeled,
                                   const std::vector<std::vector<double>>& labeled, size_t L,
                                   uint64_t tie_seed) {
  if (labeled.empty()) throw ValidationError("coreset: labeled set must be non-empty");
  const size_t n = unlabeled.size();
  const auto rank = tie_ranks(n, tie_seed);

  std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
  for (size_t i = 0; i < n; ++i) {
    for (const auto& center : labeled) {
      min_d2[i] = std::min(min_d2[i], squared_distance(unlabeled[i], center));
    }
  }

  std::vector<bool> picked(n, false);
  std::vector<size_t> picks;
  const size_t want = std::min(L, n);
  while (picks.size() < want) {
    size_t best = n;
    for (size_t i = 0; i < n; ++i) {
      if (picked[i]) continue;
      if (best == n || min_d2[i] > min_d2[best] ||
          (min_d2[i] == min_d2[best] && (rank[i] < rank[best] || (rank[i] == rank[best] && i < best)))) {
        best = i;
      }
    }
    picked[best] = true;
    picks.push_back(best);
    for (size_t i = 0; i < n; ++i) {
      if (!picked[i]) min_d2[i] = std::min(min_d2[i], squared_distance(unlabeled[i], unlabeled[best]));
    }
  }
  return picks;
}

std::vector<double> badge_gradient_embedding(const ProbDist& pred, std::span<const double> h0) {
  const int c = pred.num_classes();
  const int argmax = pred.argmax();
  std::vector<double> g(static_cast<size_t>(c) * h0.size());
  for (int y = 0; y < c; ++y) {
    const double residual = pred.p[y] - (y == argmax ? 1.0 : 0.0);
    for (size_t j = 0; j < h0.size(); ++j) {
      g[static_cast<size_t>(y) * h0.size() + j] = residual * h0[j];
    }
  }
  return g;
}

std::vector<size_t> kmeanspp_select(const std::vector<std::vector<double>>& points, size_t L,
                                    uint64_t seed) {
  const size_t n = points.size();
  const size_t want = std::min(L, n);
  std::vector<size_t> picks;
  if (want == 0) return picks;

  Rng rng = make_rng(seed);
  std::vector<bool> picked(n, false);
  std::uniform_int_distribution<size_t> uni(0, n - 1);
  const size_t first = uni(rng);
  picked[first] = true;
  picks.push_back(first);

  std::vector<double> d2(n, 0.0);
  for (size_t i = 0; i < n; ++i) d2[i] = squared_distance(points[i], points[first]);

  while (picks.size() < want) {
    double total = 0.0;
    for (size_t i = 0; i < n; ++i) {
      if (!picked[i]) total += d2[i];
    }
    size_t chosen = n;
    if (total <= 1e-300) {
      // all residual mass zero: uniform among the remaining
      std::vector<size_t> remaining;
      for (size_t i = 0; i < n; ++i) {
        if (!picked[i]) remaining.push_back(i);
      }
      std::uniform_int_distribution<size_t> pick_uni(0, remaining.size() - 1);
      chosen = remaining[pick_uni(rng)];
    } else {
      std::uniform_real_distribution<double> u(0.0, total);
      double r = u(rng);
      for (size_t i = 0; i < n; ++i) {
        if (picked[i]) continue;
        r -= d2[i];
        if (r <= 0.0) {
          chosen = i;
          break;
        }
      }
      if (chosen == n) {  // floating point slack: last unpicked index
        for (size_t i = n; i-- > 0;) {
          if (!picked[i]) {
            chosen = i;
            break;
          }
        }
      }
    }
    picked[chosen] = true;
    picks.push_back(chosen);
    for (size_t i = 0; i < n; ++i) {
      if (!picked[i]) d2[i] = std::min(d2[i], squared_distance(points[i], points[chosen]));
    }
  }
  return picks;
}

double cal_score(const ProbDist& candidate, const std::vector<const ProbDist*>& neighbors) {
  if (neighbors.empty()) throw ValidationError("cal: needs at least one neighbor");
  double sum = 0.0;
  for (const ProbDist* n : neighbors) sum += kl_divergence(*n, candidate);
  return sum / static_cast<double>(neighbors.size());
}

BempsScores bemps_core(const std::vector<std::vector<ProbDist>>& ensemble,
                       const std::vector<size_t>& eval_subset) {
  const size_t n = ensemble.size();
  if (n == 0) throw DegenerateInputError("bemps: empty pool");
  const size_t t_count = ensemble[0].size();
  if (t_count < 2) throw ValidationError("bemps: needs an ensemble of >= 2");
  const int c = ensemble[0][0].num_classes();

  // posterior means per candidate
  std::vector<std::vector<double>> mean(n, std::vector<double>(c, 0.0));
  for (size_t i = 0; i < n; ++i) {
    for (size_t t = 0; t < t_count; ++t)
      for (int y = 0; y < c; ++y) mean[i][y] += ensemble[i][t].p[y];
    for (int y = 0; y < c; ++y) mean[i][y] /= static_cast<double>(t_count);
  }

  BempsScores out;
  out.scores.assign(n, 0.0);
  out.change_vectors.assign(n, std::vector<double>(eval_subset.size(), 0.0));

  std::vector<double> weights(t_count);
  std::vector<double> reweighted(c);
  for (size_t i = 0; i < n; ++i) {
    for (int y = 0; y < c; ++y) {
      const double p_y = mean[i][y];
      if (p_y <= 0.0) continue;
      double norm = 0.0;
      for (size_t t = 0; t < t_count; ++t) {
        weights[t] = ensemble[i][t].p[y];
        norm += weights[t];
      }
      if (norm <= kLogEps) {
        std::fill(weights.begin(), weights.end(), 1.0 / static_cast<double>(t_count));
      } else {
        for (double& w : weights) w /= norm;
      }
      for (size_t s = 0; s < eval_subset.size(); ++s) {
        const size_t j = eval_subset[s];
        std::fill(reweighted.begin(), reweighted.end(), 0.0);
        for (size_t t = 0; t < t_count; ++t) {
          const double w = weights[t];
          for (int yy = 0; yy < c; ++yy) reweighted[yy] += w * ensemble[j][t].p[yy];
        }
        double d2 = 0.0;
        for (int yy = 0; yy < c; ++yy) {
          const double d = reweighted[yy] - mean[j][yy];
          d2 += d * d;
        }
        out.change_vectors[i][s] += p_y * std::sqrt(d2);
      }
    }
    double total = 0.0;
    for (double v : out.change_vectors[i]) total += v;
    out.scores[i] = eval_subset.empty() ? 0.0 : total / static_cast<double>(eval_subset.size());
  }
  return out;
}

std::vector<size_t> bemps_select(const BempsScores& bemps, size_t L, uint64_t seed) {
  const size_t n = bemps.scores.size();
  const size_t want = std::min(L, n);
  if (want == 0) return {};

  double max_score = 0.0;
  for (double s : bemps.scores) max_score = std::max(max_score, s);
  if (max_score < 1e-12) {
    // no expected change anywhere: seeded uniform draw
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng = make_rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(want);
    return order;
  }

  // k-means over change vectors, representatives by score
  const auto centers_init = kmeanspp_select(bemps.change_vectors, want, derive_seed(seed, "centers"));
  std::vector<std::vector<double>> centers;
  for (size_t c : centers_init) centers.push_back(bemps.change_vectors[c]);

  std::vector<size_t> assign(n, 0);
  for (int iter = 0; iter < 10; ++iter) {
    bool moved = false;
    for (size_t i = 0; i < n; ++i) {
      size_t best = 0;
      double best_d2 = std::numeric_limits<double>::infinity();
      for (size_t k = 0; k < centers.size(); ++k) {
        const double d2 = squared_distance(bemps.change_vectors[i], centers[k]);
        if (d2 < best_d2) {
          best_d2 = d2;
          best = k;
        }
      }
      if (assign[i] != best) {
        assign[i] = best;
        moved = true;
      }
    }
    if (!moved && iter > 0) break;
    for (size_t k = 0; k < centers.size(); ++k) {
      std::vector<double> sum(centers[k].size(), 0.0);
      size_t count = 0;
      for (size_t i = 0; i < n; ++i) {
        if (assign[i] != k) continue;
        for (size_t d = 0; d < sum.size(); ++d) sum[d] += bemps.change_vectors[i][d];
        ++count;
      }
      if (count > 0) {
        for (double& x : sum) x /= static_cast<double>(count);
        centers[k] = std::move(sum);
      }
    }
  }

  std::vector<size_t> picks;
  std::set<size_t> chosen;
  for (size_t k = 0; k < centers.size(); ++k) {
    size_t best = n;
    for (size_t i = 0; i < n; ++i) {
      if (assign[i] != k || chosen.count(i)) continue;
      if (best == n || bemps.scores[i] > bemps.scores[best] ||
          (bemps.scores[i] == bemps.scores[best] && i < best)) {
        best = i;
      }
    }
    if (best < n) {
      picks.push_back(best);
      chosen.insert(best);
    }
  }
  // fill any empty-cluster shortfall by global score order
  if (picks.size() < want) {
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      if (bemps.scores[a] != bemps.scores[b]) return bemps.scores[a] > bemps.scores[b];
      return a < b;
    });
    for (size_t i : order) {
      if (picks.size() >= want) break;
      if (!chosen.count(i)) {
        picks.push_back(i);
        chosen.insert(i);
      }
    }
  }
  return picks;
}

// ---------------------------------------------------------------------------
// Strategies

namespace {

std::vector<const Example*> pool_candidates(const Dataset& dataset, const PoolState& pool) {
  std::vector<const Example*> out;
  out.reserve(pool.unlabeled_ids().size());
  for (const auto& id : pool.unlabeled_ids()) out.push_back(&dataset.by_id(id));
  return out;
}

const ClassifierExplainer& require_model(const ClassifierExplainer* model, const std::string& id) {
  if (model == nullptr) throw ConfigError("strategy '" + id + "' needs a trained model");
  return *model;
}

SelectionResult finalize(const std::string& strategy, const std::vector<const Example*>& candidates,
                         std::vector<CandidateScore> table, const std::vector<size_t>& pick_indices,
                         uint64_t seed) {
  SelectionResult result;
  result.strategy = strategy;
  result.seed = seed;
  result.table = std::move(table);
  for (size_t idx : pick_indices) {
    result.table[idx].selected = true;
    result.selected.push_back(candidates[idx]->id);
  }
  for (const auto& row : result.table) {
    if (row.generation_failed) ++result.generation_failures;
  }
  return result;
}

// Strategies whose ranking is one scalar per candidate share this skeleton.
class ScalarScoreStrategy : public Strategy {
 public:
  explicit ScalarScoreStrategy(StrategyConfig config) : config_(config) {}

  SelectionResult select(const Dataset& dataset, const PoolState& pool,
                         const ClassifierExplainer* model, size_t L, uint64_t seed) const override {
    const auto candidates = pool_candidates(dataset, pool);
    std::vector<CandidateScore> table(candidates.size());
    std::vector<double> scores(candidates.size(), 0.0);
    score_pool(dataset, pool, model, candidates, seed, scores, table);
    for (size_t i = 0; i < candidates.size(); ++i) {
      table[i].example_id = candidates[i]->id;
      if (!table[i].combined) table[i].combined = scores[i];
    }
    const auto picks = select_top_L(scores, L, derive_seed(seed, "tie"));
    return finalize(id(), candidates, std::move(table), picks, seed);
  }

 protected:
  virtual void score_pool(const Dataset& dataset, const PoolState& pool,
                          const ClassifierExplainer* model,
                          const std::vector<const Example*>& candidates, uint64_t seed,
                          std::vector<double>& scores, std::vector<CandidateScore>& table) const = 0;

  StrategyConfig config_;
};

class RandomStrategy final : public ScalarScoreStrategy {
 public:
  using ScalarScoreStrategy::ScalarScoreStrategy;
  std::string id() const override { return "random"; }

 protected:
  void score_pool(const Dataset&, const PoolState&, const ClassifierExplainer*,
                  const std::vector<const Example*>& candidates, uint64_t seed,
                  std::vector<double>& scores, std::vector<CandidateScore>&) const override {
    Rng rng = make_rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (size_t i = 0; i < candidates.size(); ++i) scores[i] = u(rng);
  }
};

enum class UncertaintyKind { kEntropy, kBreakingTies, kLeastConfidence };

class UncertaintyStrategy final : public ScalarScoreStrategy {
 public:
  UncertaintyStrategy(StrategyConfig config, UncertaintyKind kind)
      : ScalarScoreStrategy(config), kind_(kind) {}

  std::string id() const override {
    switch (kind_) {
      case UncertaintyKind::kEntropy: return "max-entropy";
      case UncertaintyKind::kBreakingTies: return "breaking-ties";
      default: return "least-confidence";
    }
  }

 protected:
  void score_pool(const Dataset&, const PoolState&, const ClassifierExplainer* model_ptr,
                  const std::vector<const Example*>& candidates, uint64_t,
                  std::vector<double>& scores, std::vector<CandidateScore>& table) const override {
    const auto& model = require_model(model_ptr, id());
    if (kind_ == UncertaintyKind::kBreakingTies && model.num_classes() < 2)
      throw ValidationError("breaking-ties: needs at least 2 classes");
    parallel_for(candidates.size(), config_.jobs, [&](size_t i) {
      const ProbDist dist = model.classify(model_input_text(*candidates[i]));
      table[i].entropy = predictive_entropy(dist);
      switch (kind_) {
        case UncertaintyKind::kEntropy:
          scores[i] = *table[i].entropy;
          break;
        case UncertaintyKind::kBreakingTies: {
          std::vector<double> p = dist.p;
          std::nth_element(p.begin(), p.begin() + 1, p.end(), std::greater<double>());
          const double first = std::max(p[0], p[1]);
          const double second = std::min(p[0], p[1]);
          scores[i] = -(first - second);
          break;
        }
        case UncertaintyKind::kLeastConfidence:
          scores[i] = 1.0 - dist.p[dist.argmax()];
          break;
      }
    });
  }

 private:
  UncertaintyKind kind_;
};

class BaldStrategy final : public ScalarScoreStrategy {
 public:
  using ScalarScoreStrategy::ScalarScoreStrategy;
  std::string id() const override { return "bald"; }

 protected:
  void score_pool(const Dataset&, const PoolState&, const ClassifierExplainer* model_ptr,
                  const std::vector<const Example*>& candidates, uint64_t seed,
                  std::vector<double>& scores, std::vector<CandidateScore>&) const override {
    const auto& model = require_model(model_ptr, id());
    if (config_.mc_samples < 2) throw ValidationError("bald: mc_samples must be >= 2");
    parallel_for(candidates.size(), config_.jobs, [&](size_t i) {
      const auto samples =
          model.stochastic_classify(model_input_text(*candidates[i]), config_.mc_samples,
                                    config_.dropout_rate, derive_seed(seed, candidates[i]->id));
      scores[i] = bald_mutual_information(samples);
    });
  }
};

class CalStrategy final : public ScalarScoreStrategy {
 public:
  using ScalarScoreStrategy::ScalarScoreStrategy;
  std::string id() const override { return "cal"; }

 protected:
  void score_pool(const Dataset& dataset, const PoolState& pool,
                  const ClassifierExplainer* model_ptr, const std::vector<const Example*>& candidates,
                  uint64_t, std::vector<double>& scores,
                  std::vector<CandidateScore>&) const override {
    const auto& model = require_model(model_ptr, id());
    const size_t m = static_cast<size_t>(config_.cal_neighbors);
    if (m < 1) throw ValidationError("cal: neighbors must be >= 1");
    if (m > pool.labeled_ids().size())
      throw ValidationError("cal: m=" + std::to_string(m) + " exceeds labeled set of " +
                            std::to_string(pool.labeled_ids().size()));

    const auto& labeled_ids = pool.labeled_ids();
    std::vector<std::vector<double>> labeled_emb(labeled_ids.size());
    std::vector<ProbDist> labeled_dist(labeled_ids.size());
    parallel_for(labeled_ids.size(), config_.jobs, [&](size_t i) {
      const std::string text = model_input_text(dataset.by_id(labeled_ids[i]));
      labeled_emb[i] = model.sentence_embedding(text);
      labeled_dist[i] = model.classify(text);
    });

    parallel_for(candidates.size(), config_.jobs, [&](size_t i) {
      const std::string text = model_input_text(*candidates[i]);
      const auto emb = model.sentence_embedding(text);
      const ProbDist dist = model.classify(text);

      std::vector<size_t> order(labeled_ids.size());
      std::iota(order.begin(), order.end(), 0);
      std::vector<double> d2(labeled_ids.size());
      for (size_t j = 0; j < labeled_ids.size(); ++j) d2[j] = squared_distance(emb, labeled_emb[j]);
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m), order.end(),
                        [&](size_t a, size_t b) { return d2[a] != d2[b] ? d2[a] < d2[b] : a < b; });
      std::vector<const ProbDist*> neighbors;
      for (size_t j = 0; j < m; ++j) neighbors.push_back(&labeled_dist[order[j]]);
      scores[i] = cal_score(dist, neighbors);
    });
  }
};

class CoresetStrategy final : public Strategy {
 public:
  explicit CoresetStrategy(StrategyConfig config) : config_(config) {}
  std::string id() const override { return "coreset"; }

  SelectionResult select(const Dataset& dataset, const PoolState& pool,
                         const ClassifierExplainer* model_ptr, size_t L,
                         uint64_t seed) const override {
    const auto& model = require_model(model_ptr, id());
    const auto candidates = pool_candidates(dataset, pool);
    const auto& labeled_ids = pool.labeled_ids();

    std::vector<std::vector<double>> labeled_emb(labeled_ids.size());
    parallel_for(labeled_ids.size(), config_.jobs, [&](size_t i) {
      labeled_emb[i] = model.sentence_embedding(model_input_text(dataset.by_id(labeled_ids[i])));
    });
    std::vector<std::vector<double>> unlabeled_emb(candidates.size());
    parallel_for(candidates.size(), config_.jobs, [&](size_t i) {
      unlabeled_emb[i] = model.sentence_embedding(model_input_text(*candidates[i]));
    });

    const auto picks = coreset_greedy(unlabeled_emb, labeled_emb, L, derive_seed(seed, "tie"));

    std::vector<CandidateScore> table(candidates.size());
    // report each candidate's final distance to the grown center set
    std::vector<double> min_d2(candidates.size(), std::numeric_limits<double>::infinity());
    for (size_t i = 0; i < candidates.size(); ++i) {
      table[i].example_id = candidates[i]->id;
      for (const auto& center : labeled_emb) {
        min_d2[i] = std::min(min_d2[i], squared_distance(unlabeled_emb[i], center));
      }
      for (size_t p : picks) {
        if (p != i) min_d2[i] = std::min(min_d2[i], squared_distance(unlabeled_emb[i], unlabeled_emb[p]));
      }
      table[i].combined = std::sqrt(min_d2[i]);
    }
    return finalize(id(), candidates, std::move(table), picks, seed);
  }

 private:
  StrategyConfig config_;
};

class BadgeStrategy final : public Strategy {
 public:
  explicit BadgeStrategy(StrategyConfig config) : config_(config) {}
  std::string id() const override { return "badge"; }

  SelectionResult select(const Dataset& dataset, const PoolState& pool,
                         const ClassifierExplainer* model_ptr, size_t L,
                         uint64_t seed) const override {
    const auto& model = require_model(model_ptr, id());
    const auto candidates = pool_candidates(dataset, pool);

    std::vector<std::vector<double>> grads(candidates.size());
    std::vector<CandidateScore> table(candidates.size());
    parallel_for(candidates.size(), config_.jobs, [&](size_t i) {
      const std::string text = model_input_text(*candidates[i]);
      const auto h0 = model.sentence_embedding(text);
      const ProbDist dist = model.classify(text);
      grads[i] = badge_gradient_embedding(dist, h0);
      table[i].example_id = candidates[i]->id;
      double norm2 = 0.0;
      for (double g : grads[i]) norm2 += g * g;
      table[i].combined = std::sqrt(norm2);
    });

    const auto picks = kmeanspp_select(grads, L, derive_seed(seed, "kmeanspp"));
    return finalize(id(), candidates, std::move(table), picks, seed);
  }

 private:
  StrategyConfig config_;
};

class BempsStrategy final : public Strategy {
 public:
  explicit BempsStrategy(StrategyConfig config) : config_(config) {}
  std::string id() const override { return "bemps"; }

  SelectionResult select(const Dataset& dataset, const PoolState& pool,
                         const ClassifierExplainer* model_ptr, size_t L,
                         uint64_t seed) const override {
    const auto& model = require_model(model_ptr, id());
    if (config_.mc_samples < 2) throw ValidationError("bemps: mc_samples must be >= 2");
    const auto candidates = pool_candidates(dataset, pool);
    if (candidates.empty()) return finalize(id(), candidates, {}, {}, seed);

    std::vector<std::vector<ProbDist>> ensemble(candidates.size());
    parallel_for(candidates.size(), config_.jobs, [&](size_t i) {
      ensemble[i] =
          model.stochastic_classify(model_input_text(*candidates[i]), config_.mc_samples,
                                    config_.dropout_rate, derive_seed(seed, candidates[i]->id));
    });

    std::vector<size_t> eval_subset(candidates.size());
    std::iota(eval_subset.begin(), eval_subset.end(), 0);
    if (config_.bemps_eval_cap > 0 && eval_subset.size() > config_.bemps_eval_cap) {
      Rng rng = make_rng(derive_seed(seed, "eval"));
      std::shuffle(eval_subset.begin(), eval_subset.end(), rng);
      eval_subset.resize(config_.bemps_eval_cap);
      std::sort(eval_subset.begin(), eval_subset.end());
    }

    const auto bemps = bemps_core(ensemble, eval_subset);
    const auto picks = bemps_select(bemps, L, derive_seed(seed, "select"));

    std::vector<CandidateScore> table(candidates.size());
    for (size_t i = 0; i < candidates.size(); ++i) {
      table[i].example_id = candidates[i]->id;
      table[i].combined = bemps.scores[i];
    }
    return finalize(id(), candidates, std::move(table), picks, seed);
  }

 private:
  StrategyConfig config_;
};

class XalStrategy final : public Strategy {
 public:
  explicit XalStrategy(StrategyConfig config) : config_(config) {}
  std::string id() const override { return "xal"; }

  SelectionResult select(const Dataset& dataset, const PoolState& pool,
                         const ClassifierExplainer* model_ptr, size_t L,
                         uint64_t seed) const override {
    const auto& model = require_model(model_ptr, id());
    const auto candidates = pool_candidates(dataset, pool);
    if (candidates.empty()) return finalize(id(), candidates, {}, {}, seed);

    const bool with_generation = config_.explanation_only || config_.lambda_select > 0.0;
    const auto scored = xal_candidate_scores(dataset, pool, model, config_.beam_width,
                                             with_generation, config_.jobs);

    std::vector<CandidateScore> table(candidates.size());
    for (size_t i = 0; i < candidates.size(); ++i) {
      table[i].example_id = candidates[i]->id;
      table[i].entropy = scored.entropies[i];
      if (scored.expl_scores[i]) table[i].expl_score = scored.expl_scores[i];
      table[i].generation_failed = with_generation && !scored.expl_scores[i];
    }

    const auto combined = combine(scored);
    for (size_t i = 0; i < candidates.size(); ++i) table[i].combined = combined[i];
    const auto picks = select_top_L(combined, L, derive_seed(seed, "tie"));
    return finalize(id(), candidates, std::move(table), picks, seed);
  }

 private:
  // Combined score with the documented fallback: candidates whose generation failed
  // contribute nothing to the explanation softmax and keep their entropy
  // term.
  std::vector<double> combine(const XalCandidateTable& scored) const {
    const size_t n = scored.entropies.size();
    if (config_.explanation_only) {
      std::vector<double> neg_p(n, -std::numeric_limits<double>::infinity());
      for (size_t i = 0; i < n; ++i) {
        if (scored.expl_scores[i]) neg_p[i] = -*scored.expl_scores[i];
      }
      return shifted_softmax_with_failures(neg_p);
    }
    const double lambda = config_.lambda_select;
    const auto sm_ent = shifted_softmax(scored.entropies);
    if (lambda == 0.0) return sm_ent;

    std::vector<double> neg_p(n, -std::numeric_limits<double>::infinity());
    for (size_t i = 0; i < n; ++i) {
      if (scored.expl_scores[i]) neg_p[i] = -*scored.expl_scores[i];
    }
    const auto sm_expl = shifted_softmax_with_failures(neg_p);
    const double w_expl = lambda / (1.0 + lambda);
    const double w_ent = 1.0 / (1.0 + lambda);
    std::vector<double> s(n);
    for (size_t i = 0; i < n; ++i) s[i] = w_expl * sm_expl[i] + w_ent * sm_ent[i];
    return s;
  }

  // softmax where -inf entries get probability 0 (and the rest renormalize)
  static std::vector<double> shifted_softmax_with_failures(const std::vector<double>& x) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : x) mx = std::max(mx, v);
    std::vector<double> out(x.size(), 0.0);
    if (!std::isfinite(mx)) return out;
    double sum = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
      if (std::isfinite(x[i])) {
        out[i] = std::exp(x[i] - mx);
        sum += out[i];
      }
    }
    for (double& v : out) v /= sum;
    return out;
  }

  StrategyConfig config_;
};

}  // namespace

XalCandidateTable xal_candidate_scores(const Dataset& dataset, const PoolState& pool,
                                       const ClassifierExplainer& model, int beam_width,
                                       bool with_generation, int jobs) {
  const auto candidates = pool_candidates(dataset, pool);
  XalCandidateTable out;
  out.entropies.assign(candidates.size(), 0.0);
  out.expl_scores.assign(candidates.size(), std::nullopt);

  parallel_for(candidates.size(), jobs, [&](size_t i) {
    const std::string text = model_input_text(*candidates[i]);
    out.entropies[i] = predictive_entropy(model.classify(text));
    if (!with_generation) return;
    const Generation gen = model.generate_explanation(text, beam_width);
    if (!gen.tokens.empty() && std::isfinite(gen.score)) {
      // gen.score is the length-normalized log-probability of the generated
      // explanation, identical to rescoring its own tokens with the decoder
      out.expl_scores[i] = gen.score;
    }
  });
  for (const auto& p : out.expl_scores) {
    if (with_generation && !p) ++out.failures;
  }
  return out;
}

std::string SelectionResult::to_csv() const {
  std::string out = "example_id,entropy,expl_score,combined,selected\n";
  for (const auto& row : table) {
    out += row.example_id;
    out += ',';
    if (row.entropy) out += format_double(*row.entropy);
    out += ',';
    if (row.expl_score) out += format_double(*row.expl_score);
    out += ',';
    if (row.combined) out += format_double(*row.combined);
    out += ',';
    out += row.selected ? '1' : '0';
    out += '\n';
  }
  return out;
}

std::unique_ptr<Strategy> make_strategy(const std::string& id, StrategyConfig config) {
  if (id == "random") return std::make_unique<RandomStrategy>(config);
  if (id == "max-entropy") return std::make_unique<UncertaintyStrategy>(config, UncertaintyKind::kEntropy);
  if (id == "breaking-ties")
    return std::make_unique<UncertaintyStrategy>(config, UncertaintyKind::kBreakingTies);
  if (id == "least-confidence")
    return std::make_unique<UncertaintyStrategy>(config, UncertaintyKind::kLeastConfidence);
  if (id == "bald") return std::make_unique<BaldStrategy>(config);
  if (id == "coreset") return std::make_unique<CoresetStrategy>(config);
  if (id == "badge") return std::make_unique<BadgeStrategy>(config);
  if (id == "bemps") return std::make_unique<BempsStrategy>(config);
  if (id == "cal") return std::make_unique<CalStrategy>(config);
  if (id == "xal") return std::make_unique<XalStrategy>(config);
  throw ConfigError("unknown strategy: " + id);
}

std::vector<std::string> strategy_ids() {
  return {"random", "max-entropy",     "bald", "breaking-ties", "least-confidence",
          "coreset", "badge",          "bemps", "cal",          "xal"};
}

}  // namespace xal
