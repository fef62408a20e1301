// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Every tolerance is pinned in code next to its check.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <vector>

#include "xal/acquisition.hpp"
#include "xal/experiment.hpp"
#include "xal/objective.hpp"
#include "xal/trainer.hpp"

using namespace xal;

namespace {

struct Checker {
  int failures = 0;
  std::string current;
  std::vector<std::string> notes;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      ++failures;
      notes.push_back(what);
    }
  }
  void require_close(double got, double want, double tol, const std::string& what) {
    std::ostringstream msg;
    msg << what << " (got " << got << ", want " << want << " +- " << tol << ")";
    require(std::abs(got - want) <= tol, msg.str());
  }
};

using CriterionFn = std::function<void(Checker&)>;

// Rationale tokens chosen so no two share a hashed id (collisions would
// blur class boundaries).
RationaleLexicon collision_free_lexicon(int num_classes, int per_group, int vocab) {
  HashTokenizer tok(vocab);
  std::set<int> used;
  RationaleLexicon lex;
  lex.filler = {"the", "a", "on", "it", "is", "was", "to", "and", "of", "in", "near", "with"};
  for (const auto& f : lex.filler) used.insert(tok.token_id(f));
  for (const char* w : {"The", "label", "because", "text", "mentions"}) used.insert(tok.token_id(w));
  for (int c = 0; c < num_classes; ++c) used.insert(tok.token_id("class_" + std::to_string(c)));
  int counter = 0;
  for (int c = 0; c < num_classes; ++c) {
    std::vector<std::string> group;
    while (static_cast<int>(group.size()) < per_group) {
      const std::string cand = "tok" + std::to_string(counter++);
      if (used.insert(tok.token_id(cand)).second) group.push_back(cand);
    }
    lex.groups.push_back(std::move(group));
  }
  return lex;
}

// Minimal scripted model for the sort-oracle comparisons.
class TableModel : public ClassifierExplainer {
 public:
  int classes = 3;
  std::map<std::string, ProbDist> dists;

  int num_classes() const override { return classes; }
  EncoderStates encode(const std::string&) const override { return {}; }
  ProbDist classify(const std::string& text) const override { return dists.at(text); }
  Generation generate_explanation(const std::string&, int) const override { return {}; }
  std::vector<double> token_logprobs(const std::string&, const std::string&) const override {
    return {-1.0};
  }
  std::vector<double> sentence_embedding(const std::string&) const override { return {0.0}; }
  std::vector<ProbDist> stochastic_classify(const std::string& text, int samples, double,
                                            uint64_t) const override {
    return std::vector<ProbDist>(static_cast<size_t>(samples), classify(text));
  }
};

Dataset table_dataset(int n, int classes) {
  Dataset ds;
  ds.schema_id = "synthetic";
  ds.dataset_id = "table";
  ds.labels.num_classes = classes;
  for (int c = 0; c < classes; ++c) ds.labels.names.push_back("class_" + std::to_string(c));
  for (int i = 0; i < n; ++i) {
    Example e;
    e.id = "e" + std::to_string(i);
    e.text = "t" + std::to_string(i);
    e.gold_label = i % classes;
    ds.examples.push_back(e);
  }
  ds.rebuild_index();
  return ds;
}

ProbDist random_dist(Rng& rng, int classes) {
  std::uniform_real_distribution<double> u(0.02, 1.0);
  ProbDist d;
  d.p.resize(classes);
  double sum = 0.0;
  for (double& x : d.p) {
    x = u(rng);
    sum += x;
  }
  for (double& x : d.p) x /= sum;
  return d;
}

// -------------------------------------------------------------------------
// 1. Formula suite (< 10 s)

void criterion_formulas(Checker& ck) {
  for (int c : {2, 3, 5}) {
    ProbDist onehot;
    onehot.p.assign(c, 0.0);
    onehot.p[0] = 1.0;
    ck.require_close(predictive_entropy(onehot), 0.0, 1e-9, "entropy of one-hot");
    ProbDist uniform;
    uniform.p.assign(c, 1.0 / c);
    ck.require_close(predictive_entropy(uniform), std::log(static_cast<double>(c)), 1e-9,
                     "entropy of uniform");
  }

  Rng rng = make_rng(17);
  std::uniform_real_distribution<double> u(-8.0, 0.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> lps(1 + static_cast<size_t>(trial) % 12);
    double sum = 0.0;
    for (double& x : lps) {
      x = u(rng);
      sum += x;
    }
    ck.require_close(explanation_score(lps), sum / static_cast<double>(lps.size()), 1e-12,
                     "explanation score mean identity");
  }

  const std::vector<double> ok{-1.0, -2.0};
  ck.require(ranking_loss(ok) == 0.0, "ranking loss (-1,-2) exactly 0");
  const std::vector<double> bad{-1.0, -0.5};
  ck.require(ranking_loss(bad) == 0.5, "ranking loss (-1,-0.5) exactly 0.5");

  ck.require_close(total_loss(1.0, 2.0, 0.5, 0.1, 0.01).total, 1.205, 1e-12, "total loss composite");

  const std::vector<double> c2{0.0, std::log(3.0)};
  const std::vector<double> p2{-1.0, -1.0};
  const auto s = xal_score(c2, p2, 0.5);
  ck.require_close(s[0], 1.0 / 3, 1e-9, "combined-score hand case s_0");
  ck.require_close(s[1], 2.0 / 3, 1e-9, "combined-score hand case s_1");

  std::uniform_real_distribution<double> ue(0.0, std::log(5.0));
  std::uniform_real_distribution<double> up(-6.0, 0.0);
  for (size_t n : {1ul, 10ul, 1000ul, 100000ul}) {
    std::vector<double> ent(n), expl(n);
    for (size_t i = 0; i < n; ++i) {
      ent[i] = ue(rng);
      expl[i] = up(rng);
    }
    const auto scores = xal_score(ent, expl, 0.5);
    double total = 0.0;
    for (double v : scores) total += v;
    ck.require_close(total, 1.0, 1e-9, "combined scores sum to 1 at N=" + std::to_string(n));
  }
}

// -------------------------------------------------------------------------
// 2. Argsort equivalences

void criterion_argsort(Checker& ck) {
  Rng rng = make_rng(23);
  std::uniform_real_distribution<double> ue(0.0, std::log(3.0));
  std::uniform_real_distribution<double> up(-6.0, 0.0);
  for (int pool = 0; pool < 100; ++pool) {
    const size_t n = 20 + static_cast<size_t>(pool) % 80;
    std::vector<double> ent(n), expl(n);
    for (size_t i = 0; i < n; ++i) {
      ent[i] = ue(rng);
      expl[i] = up(rng);
    }
    const uint64_t tie_seed = derive_seed(900, pool);
    const size_t L = 5 + pool % 7;

    auto xal_sel = select_top_L(xal_score(ent, expl, 0.0), L, tie_seed);
    auto me_sel = select_top_L(ent, L, tie_seed);
    ck.require(std::set<size_t>(xal_sel.begin(), xal_sel.end()) ==
                   std::set<size_t>(me_sel.begin(), me_sel.end()),
               "lambda=0 selection equals max-entropy on pool " + std::to_string(pool));

    // explanation-only mode ranks by -p
    std::vector<double> neg_p(n);
    for (size_t i = 0; i < n; ++i) neg_p[i] = -expl[i];
    std::vector<double> ones(n, 0.5);  // equal entropies: only -p matters at lambda -> inf
    auto only = xal_score(ones, expl, 1e12);
    auto only_sel = select_top_L(only, L, tie_seed);
    auto negp_sel = select_top_L(neg_p, L, tie_seed);
    ck.require(std::set<size_t>(only_sel.begin(), only_sel.end()) ==
                   std::set<size_t>(negp_sel.begin(), negp_sel.end()),
               "explanation-only ranking equals -p on pool " + std::to_string(pool));
  }
}

// -------------------------------------------------------------------------
// 3. Oracle equivalences on small instances

void criterion_small_oracles(Checker& ck) {
  // coreset vs exhaustive farthest-first, 200 seeded trials
  Rng rng = make_rng(31);
  std::uniform_real_distribution<double> u(-4.0, 4.0);
  for (int trial = 0; trial < 200; ++trial) {
    const size_t nu = 1 + static_cast<size_t>(rng() % 8);
    const size_t nl = 1 + static_cast<size_t>(rng() % 3);
    const int dims = 1 + static_cast<int>(rng() % 3);
    std::vector<std::vector<double>> unlabeled(nu), labeled(nl);
    for (auto& v : unlabeled) {
      v.resize(dims);
      for (double& x : v) x = u(rng);
    }
    for (auto& v : labeled) {
      v.resize(dims);
      for (double& x : v) x = u(rng);
    }
    const size_t L = std::min<size_t>(3, nu);
    const uint64_t tie_seed = derive_seed(777, trial);

    // naive oracle: recompute all distances at each step
    std::vector<size_t> perm(nu);
    std::iota(perm.begin(), perm.end(), 0);
    Rng tie_rng = make_rng(tie_seed);
    std::shuffle(perm.begin(), perm.end(), tie_rng);
    std::vector<size_t> rank(nu);
    for (size_t i = 0; i < nu; ++i) rank[perm[i]] = i;
    std::vector<std::vector<double>> centers = labeled;
    std::vector<bool> used(nu, false);
    std::vector<size_t> oracle;
    for (size_t step = 0; step < L; ++step) {
      size_t best = nu;
      double best_d = -1.0;
      for (size_t i = 0; i < nu; ++i) {
        if (used[i]) continue;
        double mind = std::numeric_limits<double>::infinity();
        for (const auto& ctr : centers) mind = std::min(mind, squared_distance(unlabeled[i], ctr));
        if (best == nu || mind > best_d || (mind == best_d && rank[i] < rank[best])) {
          best = i;
          best_d = mind;
        }
      }
      used[best] = true;
      centers.push_back(unlabeled[best]);
      oracle.push_back(best);
    }
    ck.require(coreset_greedy(unlabeled, labeled, L, tie_seed) == oracle,
               "coreset equals farthest-first oracle, trial " + std::to_string(trial));
  }

  // breaking-ties / least-confidence vs full-sort oracles
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 30;
    auto ds = table_dataset(n, 3);
    auto pool = init_pools(ds.examples, 0, 1);
    TableModel model;
    Rng drng = make_rng(derive_seed(55, trial));
    std::vector<double> bk_scores(n), lc_scores(n);
    for (int i = 0; i < n; ++i) {
      const auto dist = random_dist(drng, 3);
      model.dists["t" + std::to_string(i)] = dist;
      std::vector<double> p = dist.p;
      std::sort(p.begin(), p.end(), std::greater<double>());
      bk_scores[static_cast<size_t>(i)] = -(p[0] - p[1]);
      lc_scores[static_cast<size_t>(i)] = 1.0 - p[0];
    }
    const uint64_t seed = derive_seed(99, trial);
    const auto tie = derive_seed(seed, "tie");
    for (auto [id, scores] :
         std::vector<std::pair<std::string, std::vector<double>*>>{{"breaking-ties", &bk_scores},
                                                                   {"least-confidence", &lc_scores}}) {
      auto sel = make_strategy(id)->select(ds, pool, &model, 8, seed);
      auto oracle_idx = select_top_L(*scores, 8, tie);
      std::vector<std::string> expect;
      for (size_t i : oracle_idx) expect.push_back("e" + std::to_string(i));
      ck.require(sel.selected == expect, id + " equals full-sort oracle, trial " + std::to_string(trial));
    }
  }

  // beam search vs exhaustive enumeration on a toy 2-token decoder: covered
  // by construction here with a fully tabulated decoder
  struct ToyDecoder : StepDecoder {
    std::map<std::vector<int>, std::vector<double>> table;
    std::vector<double> fallback;
    struct S final : State {
      std::vector<int> prefix;
      std::unique_ptr<State> clone() const override { return std::make_unique<S>(*this); }
    };
    int vocab_size() const override { return 3; }
    std::unique_ptr<State> initial_state() const override { return std::make_unique<S>(); }
    std::unique_ptr<State> advanced(const State& s, int token) const override {
      auto n = std::make_unique<S>(static_cast<const S&>(s));
      n->prefix.push_back(token);
      return n;
    }
    std::vector<double> next_logprobs(const State& s) const override {
      auto it = table.find(static_cast<const S&>(s).prefix);
      return it != table.end() ? it->second : fallback;
    }
  };

  Rng trng = make_rng(2024);
  std::uniform_real_distribution<double> tu(0.05, 1.0);
  for (int trial = 0; trial < 40; ++trial) {
    ToyDecoder dec;
    auto norm_lps = [&] {
      std::vector<double> lp(3);
      double sum = 0.0;
      for (double& x : lp) {
        x = tu(trng);
        sum += x;
      }
      for (double& x : lp) x = std::log(x / sum);
      return lp;
    };
    dec.fallback = norm_lps();
    std::vector<std::vector<int>> prefixes{{}};
    for (int d = 0; d < 3; ++d) {
      std::vector<std::vector<int>> next;
      for (auto& p : prefixes) {
        dec.table[p] = norm_lps();
        for (int v = 0; v < 2; ++v) {
          auto q = p;
          q.push_back(v);
          next.push_back(q);
        }
      }
      prefixes = next;
    }
    const int cap = 4;
    // exhaustive enumeration over all prefixes
    std::vector<int> best_tokens;
    double best_score = -std::numeric_limits<double>::infinity();
    bool have = false;
    std::function<void(std::vector<int>&, double)> walk = [&](std::vector<int>& prefix, double sum) {
      ToyDecoder::S state;
      state.prefix = prefix;
      const auto lps = dec.next_logprobs(state);
      if (lps[2] > -1e30) {
        const double score = prefix.empty() ? -std::numeric_limits<double>::infinity()
                                            : sum / static_cast<double>(prefix.size());
        if (!have || score > best_score ||
            (score == best_score &&
             std::lexicographical_compare(prefix.begin(), prefix.end(), best_tokens.begin(),
                                          best_tokens.end()))) {
          best_tokens = prefix;
          best_score = score;
          have = true;
        }
      }
      if (static_cast<int>(prefix.size()) == cap) return;
      for (int v = 0; v < 2; ++v) {
        prefix.push_back(v);
        walk(prefix, sum + lps[v]);
        prefix.pop_back();
      }
    };
    std::vector<int> root;
    walk(root, 0.0);

    const auto beam = beam_search(dec, 64, 2, cap);
    ck.require(beam.tokens == best_tokens && beam.score == best_score,
               "beam equals exhaustive enumeration, trial " + std::to_string(trial));
  }
}

// -------------------------------------------------------------------------
// 4. Gradient check (< 60 s)

void criterion_gradients(Checker& ck) {
  ModelConfig cfg;
  cfg.dim = 10;
  cfg.vocab_size = 32;
  cfg.ff_dim = 12;
  cfg.num_classes = 3;
  cfg.max_src_tokens = 12;
  cfg.max_gen_tokens = 10;
  TinyEncDec model(cfg, 4242);

  LossInputs in;
  in.input_text = "a crimson bird on the wire";
  in.gold_label = 1;
  in.explanation_texts = {"because crimson marks the first class", "because azure is wrong here",
                          "because emerald is also wrong"};
  const double l1 = 0.1, l2 = 0.01;

  std::vector<double> grad(model.parameters().size(), 0.0);
  model.loss_and_grad(in, l1, l2, grad);

  size_t passed = 0;
  const size_t total = model.parameters().size();
  for (size_t j = 0; j < total; ++j) {
    const double orig = model.parameters()[j];
    const double h = 1e-6 * std::max(1.0, std::abs(orig));
    model.parameters()[j] = orig + h;
    const double lp = model.loss(in, l1, l2).total;
    model.parameters()[j] = orig - h;
    const double lm = model.loss(in, l1, l2).total;
    model.parameters()[j] = orig;
    const double fd = (lp - lm) / (2.0 * h);
    const double rel = std::abs(grad[j] - fd) / std::max(1e-5, std::abs(grad[j]) + std::abs(fd));
    if (rel <= 1e-4) ++passed;
  }
  const double fraction = static_cast<double>(passed) / static_cast<double>(total);
  std::ostringstream msg;
  msg << "finite differences agree on " << passed << "/" << total << " coordinates ("
      << fraction * 100.0 << "%), need >= 95%";
  ck.require(fraction >= 0.95, msg.str());
  ck.notes.push_back("  gradient coordinates checked: " + std::to_string(total) +
                     ", within 1e-4: " + std::to_string(passed));
}

// -------------------------------------------------------------------------
// Desk-scale fixtures shared by criteria 5-8

SyntheticTask desk_task() {
  SyntheticSpec spec;
  spec.train_size = 1000;
  spec.test_size = 300;
  spec.num_classes = 3;
  spec.class_weights = {0.55, 0.3, 0.15};
  spec.lexicon = collision_free_lexicon(3, 12, 512);
  spec.seed = 2024;
  return make_synthetic_task(spec);
}

ExperimentConfig desk_config() {
  ExperimentConfig cfg;
  cfg.protocol.init_size = 20;
  cfg.protocol.per_round = 20;
  cfg.protocol.rounds = 4;
  cfg.train.epochs = 15;
  cfg.train.learning_rate = 1e-3;
  cfg.model.dim = 32;
  cfg.model.vocab_size = 512;
  cfg.model.ff_dim = 64;
  cfg.model.num_classes = 3;
  cfg.model.max_src_tokens = 16;
  cfg.model.max_gen_tokens = 12;
  cfg.model.beam_width = 4;
  cfg.strategy.jobs = 2;
  return cfg;
}

ModelFactory desk_factory(const ModelConfig& mc) {
  return [mc](uint64_t seed) { return std::make_unique<TinyEncDec>(mc, seed); };
}

// 5. Desk-scale end-to-end: XAL vs random over 5 seeds (< 10 min)

void criterion_desk_scale(Checker& ck, const std::filesystem::path& tmp) {
  const auto started = std::chrono::steady_clock::now();
  auto task = desk_task();
  const ExperimentConfig base = desk_config();

  double xal_sum = 0.0, random_sum = 0.0;
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    {
      ExperimentConfig cfg = base;
      cfg.protocol.strategy = "xal";
      cfg.init_seed = seed;
      cfg.run_seed = 100 + seed;
      MockOracle oracle(task.train.labels, task.lexicon);
      ExplanationCache cache(tmp / "cache", task.train.dataset_id);
      auto record = run_fixed_budget(cfg, task.train, task.test, &oracle, &cache,
                                     desk_factory(cfg.model), tmp / ("xal_" + std::to_string(seed)));
      record.check_audit();
      xal_sum += record.rounds.back().eval.macro_f1;
    }
    {
      ExperimentConfig cfg = base;
      cfg.protocol.strategy = "random";
      cfg.train.lambda1 = 0.0;  // baselines train the plain classifier
      cfg.train.lambda2 = 0.0;
      cfg.init_seed = seed;
      cfg.run_seed = 100 + seed;
      auto record = run_fixed_budget(cfg, task.train, task.test, nullptr, nullptr,
                                     desk_factory(cfg.model), tmp / ("rnd_" + std::to_string(seed)));
      record.check_audit();
      random_sum += record.rounds.back().eval.macro_f1;
    }
  }
  const double xal_mean = xal_sum / 5.0;
  const double random_mean = random_sum / 5.0;
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

  std::ostringstream msg;
  msg << "mean final macro-F1: xal " << xal_mean << " vs random " << random_mean
      << " (need xal >= random + 0.02)";
  ck.require(xal_mean >= random_mean + 0.02, msg.str());
  ck.require(wall < 600.0, "desk-scale runtime " + std::to_string(wall) + "s exceeds 10 min");
  ck.notes.push_back("  xal " + format_double(xal_mean) + ", random " + format_double(random_mean) +
                     ", wall " + std::to_string(static_cast<int>(wall)) + "s");
}

// 6. Ranking-loss effect over 5 seeds

void criterion_ranking_effect(Checker& ck, const std::filesystem::path& tmp) {
  SyntheticSpec spec;
  spec.train_size = 400;
  spec.test_size = 150;
  spec.num_classes = 3;
  spec.lexicon = collision_free_lexicon(3, 8, 512);
  spec.seed = 77;
  auto task = make_synthetic_task(spec);

  ModelConfig mc;
  mc.dim = 32;
  mc.vocab_size = 512;
  mc.ff_dim = 64;
  mc.num_classes = 3;
  mc.max_src_tokens = 16;
  mc.max_gen_tokens = 12;
  mc.beam_width = 4;

  MockOracle oracle(task.train.labels, task.lexicon);
  ExplanationCache train_cache(tmp / "cache6", task.train.dataset_id);
  ExplanationCache test_cache(tmp / "cache6", task.test.dataset_id);
  const auto& schema = schema_by_id("synthetic");

  std::vector<const Example*> test_ptrs;
  for (const auto& e : task.test.examples) test_ptrs.push_back(&e);
  auto test_sets = build_explanation_sets(test_ptrs, task.test.labels, schema, oracle, test_cache, 2);
  std::vector<std::pair<const Example*, const ExplanationSet*>> paired;
  for (size_t i = 0; i < test_ptrs.size(); ++i) paired.push_back({test_ptrs[i], &test_sets[i]});
  const auto pairs = ranking_pairs_from_sets(paired);

  double with_sum = 0.0, without_sum = 0.0;
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    auto pool = init_pools(task.train.examples, 150, seed);
    std::vector<const Example*> ptrs;
    for (const auto& id : pool.labeled_ids()) ptrs.push_back(&task.train.by_id(id));
    auto sets = build_explanation_sets(ptrs, task.train.labels, schema, oracle, train_cache, 2);
    std::vector<TrainItem> items;
    for (size_t i = 0; i < ptrs.size(); ++i) items.push_back({ptrs[i], &sets[i]});

    TrainConfig tc;
    tc.epochs = 15;
    tc.learning_rate = 1e-3;
    tc.seed = 300 + seed;
    tc.lambda1 = 0.1;
    tc.lambda2 = 0.01;
    auto with_rank = train_round(desk_factory(mc), items, tc, 0);
    with_sum += evaluate_ranking_accuracy(*with_rank, pairs);

    tc.lambda2 = 0.0;
    auto without_rank = train_round(desk_factory(mc), items, tc, 0);
    without_sum += evaluate_ranking_accuracy(*without_rank, pairs);
  }
  const double with_mean = with_sum / 5.0;
  const double without_mean = without_sum / 5.0;
  std::ostringstream msg;
  msg << "ranking accuracy with lambda2=0.01: " << with_mean << ", without: " << without_mean;
  ck.require(with_mean >= without_mean, msg.str() + " (need with >= without)");
  ck.require(with_mean > 0.5, "with-rank accuracy must exceed 0.5, got " + format_double(with_mean));
  ck.require(without_mean > 0.5,
             "no-rank accuracy must exceed 0.5, got " + format_double(without_mean));
  ck.notes.push_back("  with rank " + format_double(with_mean) + ", without " +
                     format_double(without_mean) + " over " + std::to_string(pairs.size()) + " pairs");
}

// 7. Protocol bookkeeping: init 100, L=100, M=4

void criterion_bookkeeping(Checker& ck, const std::filesystem::path& tmp) {
  auto task = desk_task();
  ExperimentConfig cfg = desk_config();
  cfg.protocol.init_size = 100;
  cfg.protocol.per_round = 100;
  cfg.protocol.rounds = 4;
  cfg.protocol.strategy = "random";
  cfg.train.epochs = 2;  // bookkeeping is about counts, not accuracy
  cfg.train.lambda1 = 0.0;
  cfg.train.lambda2 = 0.0;
  cfg.init_seed = 9;
  cfg.run_seed = 10;

  auto record = run_fixed_budget(cfg, task.train, task.test, nullptr, nullptr,
                                 desk_factory(cfg.model), tmp / "bookkeeping");
  ck.require(record.rounds.size() == 5, "expected 5 evaluations (init + 4 rounds)");
  const std::vector<size_t> expected{100, 200, 300, 400, 500};
  for (size_t r = 0; r < record.rounds.size() && r < 5; ++r) {
    ck.require(record.rounds[r].eval.labeled_count == expected[r],
               "round " + std::to_string(r) + " evaluated at " +
                   std::to_string(record.rounds[r].eval.labeled_count) + ", expected " +
                   std::to_string(expected[r]));
  }
  std::set<std::string> seen;
  bool disjoint = true;
  for (const auto& round : record.rounds) {
    for (const auto& id : round.selected) {
      if (!seen.insert(id).second) disjoint = false;
    }
  }
  ck.require(disjoint, "per-round selections must be disjoint");
  ck.require(seen.size() == 500, "union of selections must cover 500 ids, got " +
                                     std::to_string(seen.size()));
  record.check_audit();
}

// 8. Determinism: byte-identical selection.csv across identical runs

void criterion_determinism(Checker& ck, const std::filesystem::path& tmp) {
  SyntheticSpec spec;
  spec.train_size = 150;
  spec.test_size = 40;
  spec.num_classes = 3;
  spec.lexicon = collision_free_lexicon(3, 6, 512);
  spec.seed = 5;
  auto task = make_synthetic_task(spec);

  ExperimentConfig cfg = desk_config();
  cfg.protocol.init_size = 15;
  cfg.protocol.per_round = 10;
  cfg.protocol.rounds = 2;
  cfg.protocol.strategy = "xal";
  cfg.train.epochs = 3;
  cfg.init_seed = 3;
  cfg.run_seed = 4;

  for (const char* name : {"da", "db"}) {
    MockOracle oracle(task.train.labels, task.lexicon);
    ExplanationCache cache(tmp / (std::string("cache8_") + name), task.train.dataset_id);
    run_fixed_budget(cfg, task.train, task.test, &oracle, &cache, desk_factory(cfg.model),
                     tmp / name);
  }
  for (int r = 0; r <= 2; ++r) {
    const auto rel = std::filesystem::path("rounds") / std::to_string(r) / "selection.csv";
    const std::string a = read_text_file(tmp / "da" / rel);
    const std::string b = read_text_file(tmp / "db" / rel);
    ck.require(a == b, "selection.csv differs at round " + std::to_string(r));
    ck.require(!a.empty(), "selection.csv empty at round " + std::to_string(r));
  }
}

}  // namespace

int main() {
  const auto tmp = std::filesystem::temp_directory_path() /
                   ("xal_acceptance_" + std::to_string(std::random_device{}()));
  std::filesystem::create_directories(tmp);

  struct Entry {
    std::string name;
    double time_limit;  // seconds; 0 = none
    CriterionFn fn;
  };
  std::vector<Entry> criteria{
      {"1. formula suite", 10.0, [](Checker& ck) { criterion_formulas(ck); }},
      {"2. argsort equivalences", 0.0, [](Checker& ck) { criterion_argsort(ck); }},
      {"3. small-instance oracle equivalences", 0.0, [](Checker& ck) { criterion_small_oracles(ck); }},
      {"4. gradient check", 60.0, [](Checker& ck) { criterion_gradients(ck); }},
      {"5. desk-scale xal vs random", 600.0, [&](Checker& ck) { criterion_desk_scale(ck, tmp); }},
      {"6. ranking-loss effect", 0.0, [&](Checker& ck) { criterion_ranking_effect(ck, tmp); }},
      {"7. protocol bookkeeping", 0.0, [&](Checker& ck) { criterion_bookkeeping(ck, tmp); }},
      {"8. run determinism", 0.0, [&](Checker& ck) { criterion_determinism(ck, tmp); }},
  };

  int failed = 0;
  for (auto& entry : criteria) {
    Checker ck;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      entry.fn(ck);
    } catch (const std::exception& e) {
      ck.failures++;
      ck.notes.push_back(std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (entry.time_limit > 0.0 && secs > entry.time_limit) {
      ck.failures++;
      ck.notes.push_back("time limit exceeded: " + std::to_string(secs) + "s > " +
                         std::to_string(entry.time_limit) + "s");
    }
    const bool ok = ck.failures == 0;
    if (!ok) ++failed;
    std::printf("[%s] %s (%.1fs)\n", ok ? "PASS" : "FAIL", entry.name.c_str(), secs);
    for (const auto& note : ck.notes) std::printf("%s\n", note.c_str());
    std::fflush(stdout);
  }

  std::error_code ec;
  std::filesystem::remove_all(tmp, ec);
  if (failed > 0) {
    std::printf("%d criteria failed\n", failed);
    return 1;
  }
  std::printf("all criteria passed\n");
  return 0;
}
