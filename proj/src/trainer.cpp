#include "xal/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "xal/objective.hpp"

namespace xal {

void TrainConfig::validate() const {
  if (epochs < 1) throw ValidationError("train config: epochs must be >= 1");
  if (learning_rate <= 0.0) throw ValidationError("train config: learning_rate must be > 0");
  if (batch_size < 1) throw ValidationError("train config: batch_size must be >= 1");
  if (lambda1 < 0.0 || lambda2 < 0.0) throw ValidationError("train config: lambdas must be >= 0");
}

void AdamOptimizer::step(std::span<double> params, std::span<const double> grads, double lr) {
  if (m_.empty()) {
    m_.assign(params.size(), 0.0);
    v_.assign(params.size(), 0.0);
  }
  if (m_.size() != params.size()) throw ValidationError("adam: parameter size changed mid-run");
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    m_[i] = beta1 * m_[i] + (1.0 - beta1) * g;
    v_[i] = beta2 * v_[i] + (1.0 - beta2) * g * g;
    const double mhat = m_[i] / bc1;
    const double vhat = v_[i] / bc2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

uint64_t training_data_hash(const std::vector<TrainItem>& items) {
  uint64_t h = fnv1a("train-items");
  for (const auto& item : items) {
    h = hash_combine(h, fnv1a(item.example->id));
    h = hash_combine(h, static_cast<uint64_t>(item.example->gold_label));
    h = hash_combine(h, fnv1a(item.example->text));
    if (item.explanations) {
      for (const auto& e : item.explanations->explanations) h = hash_combine(h, fnv1a(e.text));
    }
  }
  return h;
}

std::unique_ptr<TrainableModel> train_round(const ModelFactory& factory,
                                            const std::vector<TrainItem>& items,
                                            const TrainConfig& config, int round,
                                            const StepLogger& logger) {
  config.validate();
  if (items.empty()) throw ValidationError("train_round: labeled set is empty");

  const bool needs_explanations = config.lambda1 > 0.0 || config.lambda2 > 0.0;
  auto model = factory(config.seed);
  if (!model) throw ConfigError("train_round: model factory returned null");
  if (needs_explanations) {
    for (const auto& item : items) {
      if (item.explanations == nullptr)
        throw ConfigError("train_round: example '" + item.example->id +
                          "' lacks an explanation set but lambda1/lambda2 > 0");
      validate_explanation_set(*item.explanations, item.example->gold_label, model->num_classes());
    }
  }

  // deterministic tokenizer memo: observe all training text up front
  for (const auto& item : items) {
    model->observe_text(model_input_text(*item.example));
    if (item.explanations) {
      for (const auto& e : item.explanations->explanations) model->observe_text(e.text);
    }
  }

  std::vector<LossInputs> inputs(items.size());
  for (size_t i = 0; i < items.size(); ++i) {
    inputs[i].input_text = model_input_text(*items[i].example);
    inputs[i].gold_label = items[i].example->gold_label;
    if (needs_explanations) {
      for (const auto& e : items[i].explanations->explanations) {
        inputs[i].explanation_texts.push_back(e.text);
      }
    }
  }

  AdamOptimizer adam;
  std::vector<double> grads(model->parameters().size(), 0.0);
  std::vector<size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);

  const uint64_t steps_per_epoch =
      (items.size() + static_cast<size_t>(config.batch_size) - 1) / config.batch_size;
  const uint64_t total_steps = steps_per_epoch * static_cast<uint64_t>(config.epochs);
  uint64_t step_index = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng shuffle_rng = make_rng(derive_seed(derive_seed(config.seed, "epoch-shuffle"), epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    for (size_t start = 0; start < order.size(); start += config.batch_size) {
      const size_t end = std::min(order.size(), start + config.batch_size);
      std::fill(grads.begin(), grads.end(), 0.0);
      LossBreakdown batch_loss;
      for (size_t k = start; k < end; ++k) {
        const auto b =
            model->loss_and_grad(inputs[order[k]], config.lambda1, config.lambda2, grads);
        batch_loss.cls += b.cls;
        batch_loss.gen += b.gen;
        batch_loss.rank += b.rank;
        batch_loss.total += b.total;
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      for (double& g : grads) g *= inv;
      batch_loss.cls *= inv;
      batch_loss.gen *= inv;
      batch_loss.rank *= inv;
      batch_loss.total *= inv;

      double lr = config.learning_rate;
      if (config.schedule == TrainConfig::Schedule::kLinearDecay) {
        lr *= 1.0 - static_cast<double>(step_index) / static_cast<double>(total_steps);
      }
      adam.step(model->parameters(), grads, lr);
      ++step_index;

      if (logger) {
        logger(StepLog{round, epoch, static_cast<int>(step_index), batch_loss});
      }
    }
  }

  TrainingFingerprint fp;
  fp.init_seed = config.seed;
  fp.epochs = config.epochs;
  fp.data_hash = training_data_hash(items);
  fp.steps = step_index;
  model->set_fingerprint(fp);
  return model;
}

EvalReport evaluate_macro_f1(const ClassifierExplainer& model,
                             const std::vector<const Example*>& test_examples) {
  if (test_examples.empty()) throw ValidationError("evaluate_macro_f1: empty test set");
  const int c = model.num_classes();
  std::vector<std::vector<size_t>> confusion(c, std::vector<size_t>(c, 0));  // [gold][pred]
  for (const Example* e : test_examples) {
    const ProbDist dist = model.classify(model_input_text(*e));
    if (e->gold_label < 0 || e->gold_label >= c)
      throw ValidationError("evaluate_macro_f1: gold label out of range for '" + e->id + "'");
    confusion[e->gold_label][dist.argmax()] += 1;
  }

  EvalReport report;
  report.precision.assign(c, 0.0);
  report.recall.assign(c, 0.0);
  report.f1.assign(c, 0.0);
  report.support.assign(c, 0);
  double f1_sum = 0.0;
  for (int y = 0; y < c; ++y) {
    size_t tp = confusion[y][y];
    size_t fp = 0, fn = 0;
    for (int other = 0; other < c; ++other) {
      if (other == y) continue;
      fp += confusion[other][y];
      fn += confusion[y][other];
    }
    for (int pred = 0; pred < c; ++pred) report.support[y] += confusion[y][pred];
    report.precision[y] = (tp + fp) > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
    report.recall[y] = (tp + fn) > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
    const double pr = report.precision[y] + report.recall[y];
    report.f1[y] = pr > 0.0 ? 2.0 * report.precision[y] * report.recall[y] / pr : 0.0;
    f1_sum += report.f1[y];
  }
  report.macro_f1 = f1_sum / static_cast<double>(c);
  return report;
}

double evaluate_ranking_accuracy(const ClassifierExplainer& model,
                                 const std::vector<RankingPair>& pairs) {
  if (pairs.empty()) throw DegenerateInputError("evaluate_ranking_accuracy: no pairs");
  size_t correct = 0;
  for (const auto& pair : pairs) {
    const std::string text = model_input_text(*pair.example);
    const auto lp_r = model.token_logprobs(text, pair.reasonable_text);
    const auto lp_u = model.token_logprobs(text, pair.unreasonable_text);
    if (explanation_score(lp_r) > explanation_score(lp_u)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(pairs.size());
}

std::vector<RankingPair> ranking_pairs_from_sets(
    const std::vector<std::pair<const Example*, const ExplanationSet*>>& sets) {
  std::vector<RankingPair> pairs;
  for (const auto& [example, set] : sets) {
    if (set == nullptr || set->explanations.size() < 2) continue;
    for (size_t r = 1; r < set->explanations.size(); ++r) {
      pairs.push_back({example, set->explanations[0].text, set->explanations[r].text});
    }
  }
  return pairs;
}

}  // namespace xal
