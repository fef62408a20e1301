#include "xal/cli.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "xal/experiment.hpp"

namespace xal {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  json cfg;
  try {
    cfg = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw ParseError("config file " + path + ": " + e.what());
  }
  if (!cfg.is_object()) throw ParseError("config file " + path + ": expected a JSON object");
  return cfg;
}

// flags beat config-file values; config-file values beat defaults
template <class T>
void merge_option(const json& cfg, const char* key, const CLI::Option* opt, T& target) {
  if (opt != nullptr && opt->count() > 0) return;
  if (!cfg.contains(key)) return;
  try {
    target = cfg.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config key '") + key + "': " + e.what());
  }
}

std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v != nullptr && *v != '\0' ? std::string(v) : fallback;
}

struct OracleBundle {
  std::unique_ptr<ExplanationOracle> oracle;
  std::unique_ptr<ExplanationCache> cache;
};

OracleBundle make_oracle(bool mock, const std::string& lexicon_path, const Dataset& dataset,
                         const std::string& cache_dir, const std::string& audit_log) {
  OracleBundle bundle;
  if (mock) {
    if (lexicon_path.empty())
      throw ConfigError("--mock-oracle needs --lexicon (emitted by `prepare --synthetic`)");
    bundle.oracle =
        std::make_unique<MockOracle>(dataset.labels, RationaleLexicon::load(lexicon_path));
  } else {
    bundle.oracle = HttpOracle::from_environment();
  }
  if (!audit_log.empty()) bundle.oracle->set_audit_log(audit_log);
  const std::string root = cache_dir.empty() ? "xal_cache" : cache_dir;
  bundle.cache = std::make_unique<ExplanationCache>(root, dataset.dataset_id);
  return bundle;
}

// ---------------------------------------------------------------------------
// prepare

struct PrepareArgs {
  bool synthetic = false;
  std::string input;
  std::string schema = "synthetic";
  std::string out;
  size_t train_size = 1000;
  size_t test_size = 300;
  int classes = 3;
  double noise_rate = 0.0;
  int filler_tokens = 8;
  uint64_t seed = 0;
  std::vector<double> class_weights;
  double dev_fraction = 0.0;
  uint64_t split_seed = 0;
};

int cmd_prepare(const PrepareArgs& args) {
  if (args.out.empty()) throw ValidationError("prepare: --out is required");
  fs::create_directories(args.out);
  json manifest{{"schema_version", kArtifactSchemaVersion}};

  if (args.synthetic) {
    SyntheticSpec spec;
    spec.train_size = args.train_size;
    spec.test_size = args.test_size;
    spec.num_classes = args.classes;
    spec.noise_rate = args.noise_rate;
    spec.filler_tokens = args.filler_tokens;
    spec.seed = args.seed;
    spec.class_weights = args.class_weights;
    auto task = make_synthetic_task(spec);
    write_dataset_jsonl(task.train, fs::path(args.out) / "train.jsonl");
    write_dataset_jsonl(task.test, fs::path(args.out) / "test.jsonl");
    task.lexicon.save(fs::path(args.out) / "lexicon.json");
    manifest["mode"] = "synthetic";
    manifest["config"] = {{"train_size", spec.train_size},   {"test_size", spec.test_size},
                          {"classes", spec.num_classes},     {"noise_rate", spec.noise_rate},
                          {"filler_tokens", spec.filler_tokens}, {"seed", spec.seed},
                          {"class_weights", spec.class_weights}};
    manifest["train_fingerprint"] = task.train.fingerprint();
    manifest["test_fingerprint"] = task.test.fingerprint();
    std::cout << "prepared synthetic task: " << task.train.examples.size() << " train / "
              << task.test.examples.size() << " test, C=" << spec.num_classes << "\n";
  } else {
    if (args.input.empty()) throw ValidationError("prepare: --input is required without --synthetic");
    auto dataset = load_dataset(args.input, args.schema);
    manifest["mode"] = "dataset";
    manifest["schema"] = args.schema;
    manifest["config"] = {{"input", args.input},
                          {"dev_fraction", args.dev_fraction},
                          {"split_seed", args.split_seed}};
    if (args.dev_fraction > 0.0) {
      if (args.dev_fraction >= 1.0) throw ValidationError("prepare: --dev-fraction must be < 1");
      // seeded shuffle split; the seed lands in the manifest for provenance
      std::vector<size_t> order(dataset.examples.size());
      std::iota(order.begin(), order.end(), 0);
      Rng rng = make_rng(args.split_seed);
      std::shuffle(order.begin(), order.end(), rng);
      const size_t dev_count =
          static_cast<size_t>(args.dev_fraction * static_cast<double>(dataset.examples.size()));
      Dataset dev = dataset;
      Dataset train = dataset;
      dev.examples.clear();
      train.examples.clear();
      for (size_t i = 0; i < order.size(); ++i) {
        (i < dev_count ? dev : train).examples.push_back(dataset.examples[order[i]]);
      }
      dev.rebuild_index();
      train.rebuild_index();
      write_dataset_jsonl(train, fs::path(args.out) / "train.jsonl");
      write_dataset_jsonl(dev, fs::path(args.out) / "dev.jsonl");
      manifest["train_fingerprint"] = train.fingerprint();
      manifest["dev_fingerprint"] = dev.fingerprint();
      std::cout << "prepared " << args.schema << ": " << train.examples.size() << " train / "
                << dev.examples.size() << " dev\n";
    } else {
      write_dataset_jsonl(dataset, fs::path(args.out) / "train.jsonl");
      manifest["train_fingerprint"] = dataset.fingerprint();
      std::cout << "prepared " << args.schema << ": " << dataset.examples.size() << " examples\n";
    }
  }
  write_text_file_atomic(fs::path(args.out) / "manifest.json", manifest.dump(2) + "\n");
  return 0;
}

// ---------------------------------------------------------------------------
// cache-explanations

struct CacheArgs {
  std::string dataset;
  std::string schema = "synthetic";
  std::string cache_dir;
  bool mock = false;
  std::string lexicon;
  std::string audit_log;
  int jobs = 1;
};

int cmd_cache(const CacheArgs& args) {
  auto dataset = load_dataset(args.dataset, args.schema);
  auto bundle = make_oracle(args.mock, args.lexicon, dataset, args.cache_dir, args.audit_log);
  std::vector<const Example*> ptrs;
  for (const auto& e : dataset.examples) ptrs.push_back(&e);
  const auto& schema = schema_by_id(args.schema);
  auto sets =
      build_explanation_sets(ptrs, dataset.labels, schema, *bundle.oracle, *bundle.cache, args.jobs);

  json manifest{{"schema_version", kArtifactSchemaVersion},
                {"dataset_fingerprint", dataset.fingerprint()},
                {"template_version", kPromptTemplateVersion},
                {"oracle_id", bundle.oracle->id()},
                {"complete_sets", sets.size()}};
  write_text_file_atomic(bundle.cache->dataset_dir() / "manifest.json", manifest.dump(2) + "\n");
  std::cout << "cached " << sets.size() << " explanation sets under "
            << bundle.cache->dataset_dir().string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// run

struct RunArgs {
  std::string config_file;
  std::string train_path;
  std::string test_path;
  std::string schema = "synthetic";
  std::string out;
  std::string mode = "fixed-budget";
  std::string strategy = "xal";
  size_t init_size = 100;
  size_t per_round = 100;
  int rounds = 4;
  double target_fraction = 0.9;
  double upper_bound_f1 = 0.0;
  double lambda_select = 0.5;
  double lambda1 = 0.1;
  double lambda2 = 0.01;
  int epochs = 10;
  double learning_rate = 1e-4;
  int batch_size = 1;
  std::string schedule = "linear-decay";
  uint64_t init_seed = 1;
  uint64_t run_seed = 1;
  std::string ablation;
  bool mock_oracle = false;
  std::string lexicon;
  std::string cache_dir;
  std::string audit_log;
  int model_dim = 64;
  int model_vocab = 512;
  int model_ff = 128;
  int beam_width = 4;
  int max_src_tokens = 64;
  int max_gen_tokens = 64;
  int jobs = 2;
  int oracle_jobs = 1;
  int mc_samples = 25;
  double dropout_rate = 0.1;
  int cal_neighbors = 10;
  int halt_after_round = -1;
  bool resume = false;
};

ExperimentConfig build_experiment_config(const RunArgs& args, int num_classes) {
  ExperimentConfig cfg;
  cfg.protocol.mode =
      args.mode == "to-target" ? ALProtocol::Mode::kToTarget : ALProtocol::Mode::kFixedBudget;
  if (args.mode != "to-target" && args.mode != "fixed-budget")
    throw ValidationError("protocol.mode: expected fixed-budget or to-target");
  cfg.protocol.init_size = args.init_size;
  cfg.protocol.per_round = args.per_round;
  cfg.protocol.rounds = args.rounds;
  cfg.protocol.target_fraction = args.target_fraction;
  cfg.protocol.upper_bound_f1 = args.upper_bound_f1;
  cfg.protocol.strategy = args.strategy;
  cfg.protocol.halt_after_round = args.halt_after_round;
  if (!args.ablation.empty()) {
    if (args.ablation == "me-exp") cfg.protocol.me_exp = true;
    else if (args.ablation == "no-rank") cfg.protocol.no_rank = true;
    else if (args.ablation == "no-me") cfg.protocol.no_me = true;
    else throw ValidationError("protocol.ablation: expected me-exp, no-rank or no-me");
  }

  cfg.train.epochs = args.epochs;
  cfg.train.learning_rate = args.learning_rate;
  cfg.train.batch_size = args.batch_size;
  if (args.schedule == "constant") cfg.train.schedule = TrainConfig::Schedule::kConstant;
  else if (args.schedule == "linear-decay") cfg.train.schedule = TrainConfig::Schedule::kLinearDecay;
  else throw ValidationError("train.schedule: expected constant or linear-decay");
  cfg.train.lambda1 = args.lambda1;
  cfg.train.lambda2 = args.lambda2;
  if (args.lambda_select < 0.0) throw ValidationError("strategy.lambda_select: must be >= 0");

  cfg.model.dim = args.model_dim;
  cfg.model.vocab_size = args.model_vocab;
  cfg.model.ff_dim = args.model_ff;
  cfg.model.num_classes = num_classes;
  cfg.model.beam_width = args.beam_width;
  cfg.model.max_src_tokens = args.max_src_tokens;
  cfg.model.max_gen_tokens = args.max_gen_tokens;

  cfg.strategy.lambda_select = args.lambda_select;
  cfg.strategy.jobs = args.jobs;
  cfg.strategy.mc_samples = args.mc_samples;
  cfg.strategy.dropout_rate = args.dropout_rate;
  cfg.strategy.cal_neighbors = args.cal_neighbors;

  cfg.init_seed = args.init_seed;
  cfg.run_seed = args.run_seed;
  cfg.oracle_jobs = args.oracle_jobs;

  // cross-field validation happens before any side effect
  cfg.protocol.validate();
  cfg.train.validate();
  make_strategy(cfg.protocol.strategy);  // rejects unknown ids
  return cfg;
}

int cmd_run(const RunArgs& args) {
  if (args.train_path.empty() || args.test_path.empty())
    throw ValidationError("run: --train and --test are required");
  if (args.out.empty()) throw ValidationError("run: --out is required");

  auto train_set = load_dataset(args.train_path, args.schema);
  auto test_set = load_dataset(args.test_path, args.schema);
  if (train_set.labels.num_classes != test_set.labels.num_classes) {
    // synthetic label spaces are inferred per file; align to the larger one
    const int c = std::max(train_set.labels.num_classes, test_set.labels.num_classes);
    ValidationError mismatch("run: train/test label spaces disagree");
    if (args.schema != "synthetic") throw mismatch;
    auto widen = [&](Dataset& ds) {
      while (ds.labels.num_classes < c) {
        ds.labels.names.push_back("class_" + std::to_string(ds.labels.num_classes));
        ds.labels.num_classes++;
      }
    };
    widen(train_set);
    widen(test_set);
  }

  ExperimentConfig cfg = build_experiment_config(args, train_set.labels.num_classes);

  OracleBundle bundle;
  ExplanationOracle* oracle = nullptr;
  ExplanationCache* cache = nullptr;
  if (cfg.needs_explanations()) {
    bundle = make_oracle(args.mock_oracle, args.lexicon, train_set, args.cache_dir, args.audit_log);
    oracle = bundle.oracle.get();
    cache = bundle.cache.get();
  }

  ModelFactory factory = [mc = cfg.model](uint64_t seed) {
    return std::make_unique<TinyEncDec>(mc, seed);
  };

  RunRecord record;
  if (args.resume) {
    record = resume_run(cfg, train_set, test_set, oracle, cache, factory, args.out);
  } else if (cfg.protocol.mode == ALProtocol::Mode::kToTarget) {
    record = run_to_target(cfg, train_set, test_set, oracle, cache, factory, args.out);
  } else {
    record = run_fixed_budget(cfg, train_set, test_set, oracle, cache, factory, args.out);
  }

  std::cout << "status " << record.status << ", rounds " << record.rounds.size();
  if (!record.rounds.empty()) {
    std::cout << ", final macro-F1 " << format_double(record.rounds.back().eval.macro_f1) << " at "
              << record.rounds.back().eval.labeled_count << " labels";
  }
  if (record.labeled_at_stop) std::cout << ", labeled at stop " << *record.labeled_at_stop;
  std::cout << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// sweep

struct SweepArgs {
  std::string config_file;
  std::string out;
  int jobs = 1;
};

pid_t spawn_child(const std::vector<std::string>& args) {
  std::vector<char*> argv;
  static char self[] = "/proc/self/exe";
  argv.push_back(self);
  std::vector<std::string> copy = args;
  for (auto& a : copy) argv.push_back(a.data());
  argv.push_back(nullptr);

  const pid_t pid = fork();
  if (pid < 0) throw Error("sweep: fork failed");
  if (pid == 0) {
    execv("/proc/self/exe", argv.data());
    _exit(127);
  }
  return pid;
}

int cmd_sweep(const SweepArgs& args) {
  if (args.config_file.empty()) throw ValidationError("sweep: --config is required");
  if (args.out.empty()) throw ValidationError("sweep: --out is required");
  const json cfg = load_config_file(args.config_file);
  if (!cfg.contains("base") || !cfg["base"].is_object())
    throw ValidationError("sweep config: needs a 'base' object of run options");

  const auto strategies = cfg.value("strategies", std::vector<std::string>{"xal"});
  const auto init_seeds = cfg.value("init_seeds", std::vector<uint64_t>{1});
  const auto run_seeds = cfg.value("run_seeds", std::vector<uint64_t>{1});
  if (strategies.empty() || init_seeds.empty() || run_seeds.empty())
    throw ValidationError("sweep config: strategies/init_seeds/run_seeds must be non-empty");

  fs::create_directories(args.out);
  const fs::path base_path = fs::path(args.out) / "base_config.json";
  write_text_file_atomic(base_path, cfg["base"].dump(2) + "\n");

  struct Job {
    std::string strategy;
    uint64_t init_seed;
    uint64_t run_seed;
    fs::path dir;
  };
  std::vector<Job> todo;
  for (const auto& strategy : strategies) {
    for (uint64_t init : init_seeds) {
      for (uint64_t seed : run_seeds) {
        const fs::path dir = fs::path(args.out) / strategy /
                             ("i" + std::to_string(init) + "_s" + std::to_string(seed));
        todo.push_back({strategy, init, seed, dir});
      }
    }
  }

  std::map<pid_t, size_t> running;
  size_t next = 0;
  int failures = 0;
  const int jobs = std::max(1, args.jobs);
  auto launch = [&] {
    const Job& job = todo[next];
    std::vector<std::string> child{"run",
                                   "--config", base_path.string(),
                                   "--strategy", job.strategy,
                                   "--init-seed", std::to_string(job.init_seed),
                                   "--run-seed", std::to_string(job.run_seed),
                                   "--out", job.dir.string()};
    running[spawn_child(child)] = next;
    ++next;
  };
  while (next < todo.size() || !running.empty()) {
    while (next < todo.size() && running.size() < static_cast<size_t>(jobs)) launch();
    int status = 0;
    const pid_t done = waitpid(-1, &status, 0);
    if (done < 0) throw Error("sweep: waitpid failed");
    auto it = running.find(done);
    if (it == running.end()) continue;
    const Job& job = todo[it->second];
    const bool ok = WIFEXITED(status) && WEXITSTATUS(status) == 0;
    if (!ok) {
      ++failures;
      std::cerr << "sweep: child failed: " << job.dir.string() << "\n";
    }
    running.erase(it);
  }
  if (failures > 0) throw Error("sweep: " + std::to_string(failures) + " child runs failed");

  // per-strategy rollup
  json manifest{{"schema_version", kArtifactSchemaVersion},
                {"strategies", strategies},
                {"init_seeds", init_seeds},
                {"run_seeds", run_seeds},
                {"runs", todo.size()}};
  for (const auto& strategy : strategies) {
    std::vector<RunRecord> records;
    for (const auto& job : todo) {
      if (job.strategy == strategy) records.push_back(load_run_record(job.dir));
    }
    const bool fixed = records[0].config.protocol.mode == ALProtocol::Mode::kFixedBudget;
    if (fixed) {
      auto agg = aggregate_runs(records);
      write_text_file_atomic(fs::path(args.out) / strategy / "aggregate.csv", aggregate_to_csv(agg));
    } else {
      std::string csv = "# schema_version=" + std::to_string(kArtifactSchemaVersion) + "\n";
      csv += "strategy,init_seed,run_seed,status,labeled_at_stop\n";
      for (const auto& r : records) {
        csv += strategy + "," + std::to_string(r.config.init_seed) + "," +
               std::to_string(r.config.run_seed) + "," + r.status + "," +
               (r.labeled_at_stop ? std::to_string(*r.labeled_at_stop) : "") + "\n";
      }
      write_text_file_atomic(fs::path(args.out) / strategy / "stops.csv", csv);
    }
  }
  write_text_file_atomic(fs::path(args.out) / "manifest.json", manifest.dump(2) + "\n");
  std::cout << "sweep complete: " << todo.size() << " runs\n";
  return 0;
}

// ---------------------------------------------------------------------------
// aggregate / rank-eval / export-embeddings

struct AggregateArgs {
  std::vector<std::string> runs;
  std::string out;
};

int cmd_aggregate(const AggregateArgs& args) {
  if (args.runs.empty()) throw ValidationError("aggregate: pass at least one run directory");
  if (args.out.empty()) throw ValidationError("aggregate: --out is required");
  std::vector<RunRecord> records;
  for (const auto& dir : args.runs) records.push_back(load_run_record(dir));
  const auto agg = aggregate_runs(records);
  write_text_file_atomic(args.out, aggregate_to_csv(agg));
  json manifest{{"schema_version", kArtifactSchemaVersion},
                {"runs", args.runs},
                {"rounds", agg.size()},
                {"n", records.size()}};
  write_text_file_atomic(args.out + ".manifest.json", manifest.dump(2) + "\n");
  std::cout << "aggregated " << records.size() << " runs over " << agg.size() << " rounds -> "
            << args.out << "\n";
  return 0;
}

struct RankEvalArgs {
  std::string snapshot;
  std::string dataset;
  std::string schema = "synthetic";
  bool mock = false;
  std::string lexicon;
  std::string cache_dir;
  std::string out;
  std::string audit_log;
  int jobs = 1;
};

int cmd_rank_eval(const RankEvalArgs& args) {
  if (args.snapshot.empty()) throw ValidationError("rank-eval: --snapshot is required");
  if (args.dataset.empty()) throw ValidationError("rank-eval: --dataset is required");
  if (args.out.empty()) throw ValidationError("rank-eval: --out is required");
  auto dataset = load_dataset(args.dataset, args.schema);
  TinyEncDec model(ModelSnapshot::load(args.snapshot));
  if (model.num_classes() != dataset.labels.num_classes)
    throw ValidationError("rank-eval: snapshot class count differs from the dataset");

  auto bundle = make_oracle(args.mock, args.lexicon, dataset, args.cache_dir, args.audit_log);
  std::vector<const Example*> ptrs;
  for (const auto& e : dataset.examples) ptrs.push_back(&e);
  const auto& schema = schema_by_id(args.schema);
  auto sets = build_explanation_sets(ptrs, dataset.labels, schema, *bundle.oracle, *bundle.cache,
                                     args.jobs);
  std::vector<std::pair<const Example*, const ExplanationSet*>> paired;
  for (size_t i = 0; i < ptrs.size(); ++i) paired.push_back({ptrs[i], &sets[i]});
  const auto pairs = ranking_pairs_from_sets(paired);
  const double accuracy = evaluate_ranking_accuracy(model, pairs);

  json result{{"schema_version", kArtifactSchemaVersion},
              {"pairs", pairs.size()},
              {"ranking_accuracy", accuracy},
              {"dataset_fingerprint", dataset.fingerprint()}};
  write_text_file_atomic(args.out, result.dump(2) + "\n");
  std::cout << result.dump() << "\n";
  return 0;
}

struct ExportArgs {
  std::string snapshot;
  std::string dataset;
  std::string schema = "synthetic";
  std::string run_dir;
  int round = -1;
  std::string out;
};

int cmd_export_embeddings(const ExportArgs& args) {
  if (args.dataset.empty()) throw ValidationError("export-embeddings: --dataset is required");
  if (args.out.empty()) throw ValidationError("export-embeddings: --out is required");
  auto dataset = load_dataset(args.dataset, args.schema);

  std::string snapshot_path = args.snapshot;
  PoolState pool(std::vector<std::string>{}, [&] {
    std::vector<std::string> ids;
    for (const auto& e : dataset.examples) ids.push_back(e.id);
    return ids;
  }());
  std::vector<std::string> selected;

  if (!args.run_dir.empty()) {
    auto record = load_run_record(args.run_dir);
    const int round = args.round >= 0 ? args.round : static_cast<int>(record.rounds.size()) - 1;
    if (round < 0 || round >= static_cast<int>(record.rounds.size()))
      throw ValidationError("export-embeddings: round " + std::to_string(round) + " not in run");
    pool = init_pools(dataset.examples, record.config.protocol.init_size, record.config.init_seed);
    for (int r = 1; r < round; ++r) pool.move_to_labeled(record.rounds[r].selected, r);
    if (round >= 1) selected = record.rounds[round].selected;
    if (snapshot_path.empty())
      snapshot_path =
          (fs::path(args.run_dir) / "rounds" / std::to_string(round) / "snapshot.bin").string();
  }
  if (snapshot_path.empty())
    throw ValidationError("export-embeddings: --snapshot or --run is required");

  TinyEncDec model(ModelSnapshot::load(snapshot_path));
  export_embeddings(model, dataset, pool, selected, args.out);

  json manifest{{"schema_version", kArtifactSchemaVersion},
                {"dataset_fingerprint", dataset.fingerprint()},
                {"rows", dataset.examples.size()},
                {"snapshot", snapshot_path}};
  write_text_file_atomic(args.out + ".manifest.json", manifest.dump(2) + "\n");
  std::cout << "exported " << dataset.examples.size() << " embeddings -> " << args.out << "\n";
  return 0;
}

}  // namespace

// ---------------------------------------------------------------------------

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"Explanation-guided active learning experiments"};
  app.require_subcommand(0, 1);

  PrepareArgs prepare;
  auto* prep = app.add_subcommand("prepare", "Generate a synthetic task or validate a dataset");
  prep->add_flag("--synthetic", prepare.synthetic, "generate the synthetic task");
  prep->add_option("--input", prepare.input, "input JSONL dataset");
  prep->add_option("--schema", prepare.schema, "task schema id");
  prep->add_option("--out", prepare.out, "output directory");
  prep->add_option("--train-size", prepare.train_size);
  prep->add_option("--test-size", prepare.test_size);
  prep->add_option("--classes", prepare.classes);
  prep->add_option("--noise-rate", prepare.noise_rate);
  prep->add_option("--filler-tokens", prepare.filler_tokens);
  prep->add_option("--seed", prepare.seed);
  prep->add_option("--class-weights", prepare.class_weights);
  prep->add_option("--dev-fraction", prepare.dev_fraction);
  prep->add_option("--split-seed", prepare.split_seed);

  CacheArgs cache_args;
  auto* cache_cmd = app.add_subcommand("cache-explanations", "Build the explanation cache");
  cache_cmd->add_option("--dataset", cache_args.dataset)->required();
  cache_cmd->add_option("--schema", cache_args.schema);
  cache_cmd->add_option("--cache-dir", cache_args.cache_dir);
  cache_cmd->add_flag("--mock", cache_args.mock, "use the deterministic mock oracle");
  cache_cmd->add_option("--lexicon", cache_args.lexicon);
  cache_cmd->add_option("--audit-log", cache_args.audit_log);
  cache_cmd->add_option("--jobs", cache_args.jobs);

  RunArgs run_args;
  auto* run_cmd = app.add_subcommand("run", "Execute one active-learning run");
  auto* o_cfg = run_cmd->add_option("--config", run_args.config_file, "layered JSON config");
  auto* o_train = run_cmd->add_option("--train", run_args.train_path);
  auto* o_test = run_cmd->add_option("--test", run_args.test_path);
  auto* o_schema = run_cmd->add_option("--schema", run_args.schema);
  auto* o_out = run_cmd->add_option("--out", run_args.out);
  auto* o_mode = run_cmd->add_option("--mode", run_args.mode, "fixed-budget | to-target");
  auto* o_strategy = run_cmd->add_option("--strategy", run_args.strategy);
  auto* o_init_size = run_cmd->add_option("--init-size", run_args.init_size);
  auto* o_per_round = run_cmd->add_option("--per-round", run_args.per_round);
  auto* o_rounds = run_cmd->add_option("--rounds", run_args.rounds);
  auto* o_tf = run_cmd->add_option("--target-fraction", run_args.target_fraction);
  auto* o_ub = run_cmd->add_option("--upper-bound-f1", run_args.upper_bound_f1);
  auto* o_ls = run_cmd->add_option("--lambda-select", run_args.lambda_select);
  auto* o_l1 = run_cmd->add_option("--lambda1", run_args.lambda1);
  auto* o_l2 = run_cmd->add_option("--lambda2", run_args.lambda2);
  auto* o_epochs = run_cmd->add_option("--epochs", run_args.epochs);
  auto* o_lr = run_cmd->add_option("--lr", run_args.learning_rate);
  auto* o_bs = run_cmd->add_option("--batch-size", run_args.batch_size);
  auto* o_sched = run_cmd->add_option("--schedule", run_args.schedule);
  auto* o_iseed = run_cmd->add_option("--init-seed", run_args.init_seed);
  auto* o_rseed = run_cmd->add_option("--run-seed", run_args.run_seed);
  auto* o_abl = run_cmd->add_option("--ablation", run_args.ablation, "me-exp | no-rank | no-me");
  auto* o_mock = run_cmd->add_flag("--mock-oracle", run_args.mock_oracle);
  auto* o_lex = run_cmd->add_option("--lexicon", run_args.lexicon);
  auto* o_cdir = run_cmd->add_option("--cache-dir", run_args.cache_dir);
  auto* o_audit = run_cmd->add_option("--audit-log", run_args.audit_log);
  auto* o_dim = run_cmd->add_option("--model-dim", run_args.model_dim);
  auto* o_vocab = run_cmd->add_option("--model-vocab", run_args.model_vocab);
  auto* o_ff = run_cmd->add_option("--model-ff", run_args.model_ff);
  auto* o_beam = run_cmd->add_option("--beam-width", run_args.beam_width);
  auto* o_msrc = run_cmd->add_option("--max-src-tokens", run_args.max_src_tokens);
  auto* o_mgen = run_cmd->add_option("--max-gen-tokens", run_args.max_gen_tokens);
  auto* o_jobs = run_cmd->add_option("--jobs", run_args.jobs);
  auto* o_ojobs = run_cmd->add_option("--oracle-jobs", run_args.oracle_jobs);
  auto* o_mc = run_cmd->add_option("--mc-samples", run_args.mc_samples);
  auto* o_drop = run_cmd->add_option("--dropout-rate", run_args.dropout_rate);
  auto* o_cal = run_cmd->add_option("--cal-neighbors", run_args.cal_neighbors);
  auto* o_halt = run_cmd->add_option("--halt-after-round", run_args.halt_after_round);
  run_cmd->add_flag("--resume", run_args.resume, "continue an incomplete run directory");

  SweepArgs sweep_args;
  auto* sweep_cmd = app.add_subcommand("sweep", "Run a (strategy x init x seed) grid");
  sweep_cmd->add_option("--config", sweep_args.config_file)->required();
  sweep_cmd->add_option("--out", sweep_args.out)->required();
  sweep_cmd->add_option("--jobs", sweep_args.jobs);

  AggregateArgs agg_args;
  auto* agg_cmd = app.add_subcommand("aggregate", "Aggregate run records into mean +- sd");
  agg_cmd->add_option("--runs", agg_args.runs)->required();
  agg_cmd->add_option("--out", agg_args.out)->required();

  RankEvalArgs rank_args;
  auto* rank_cmd = app.add_subcommand("rank-eval", "Ranking accuracy of a snapshot");
  rank_cmd->add_option("--snapshot", rank_args.snapshot);
  rank_cmd->add_option("--dataset", rank_args.dataset);
  rank_cmd->add_option("--schema", rank_args.schema);
  rank_cmd->add_flag("--mock", rank_args.mock);
  rank_cmd->add_option("--lexicon", rank_args.lexicon);
  rank_cmd->add_option("--cache-dir", rank_args.cache_dir);
  rank_cmd->add_option("--audit-log", rank_args.audit_log);
  rank_cmd->add_option("--out", rank_args.out);
  rank_cmd->add_option("--jobs", rank_args.jobs);

  ExportArgs export_args;
  auto* export_cmd = app.add_subcommand("export-embeddings", "Write sentence embeddings as TSV");
  export_cmd->add_option("--snapshot", export_args.snapshot);
  export_cmd->add_option("--dataset", export_args.dataset);
  export_cmd->add_option("--schema", export_args.schema);
  export_cmd->add_option("--run", export_args.run_dir);
  export_cmd->add_option("--round", export_args.round);
  export_cmd->add_option("--out", export_args.out);

  // repeated flags take the last value, so scripts can append overrides
  for (CLI::App* sub : app.get_subcommands({})) {
    for (CLI::Option* opt : sub->get_options()) {
      if (opt->get_expected_max() == 1) opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    }
  }

  try {
    app.parse(argc, const_cast<char**>(argv));
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // help text, exit 0
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (prep->parsed()) return cmd_prepare(prepare);
    if (cache_cmd->parsed()) return cmd_cache(cache_args);
    if (run_cmd->parsed()) {
      // layered config: file values fill anything the flags left alone
      const json cfg = load_config_file(run_args.config_file);
      (void)o_cfg;
      merge_option(cfg, "train", o_train, run_args.train_path);
      merge_option(cfg, "test", o_test, run_args.test_path);
      merge_option(cfg, "schema", o_schema, run_args.schema);
      merge_option(cfg, "out", o_out, run_args.out);
      merge_option(cfg, "mode", o_mode, run_args.mode);
      merge_option(cfg, "strategy", o_strategy, run_args.strategy);
      merge_option(cfg, "init-size", o_init_size, run_args.init_size);
      merge_option(cfg, "per-round", o_per_round, run_args.per_round);
      merge_option(cfg, "rounds", o_rounds, run_args.rounds);
      merge_option(cfg, "target-fraction", o_tf, run_args.target_fraction);
      merge_option(cfg, "upper-bound-f1", o_ub, run_args.upper_bound_f1);
      merge_option(cfg, "lambda-select", o_ls, run_args.lambda_select);
      merge_option(cfg, "lambda1", o_l1, run_args.lambda1);
      merge_option(cfg, "lambda2", o_l2, run_args.lambda2);
      merge_option(cfg, "epochs", o_epochs, run_args.epochs);
      merge_option(cfg, "lr", o_lr, run_args.learning_rate);
      merge_option(cfg, "batch-size", o_bs, run_args.batch_size);
      merge_option(cfg, "schedule", o_sched, run_args.schedule);
      merge_option(cfg, "init-seed", o_iseed, run_args.init_seed);
      merge_option(cfg, "run-seed", o_rseed, run_args.run_seed);
      merge_option(cfg, "ablation", o_abl, run_args.ablation);
      merge_option(cfg, "mock-oracle", o_mock, run_args.mock_oracle);
      merge_option(cfg, "lexicon", o_lex, run_args.lexicon);
      merge_option(cfg, "cache-dir", o_cdir, run_args.cache_dir);
      merge_option(cfg, "audit-log", o_audit, run_args.audit_log);
      merge_option(cfg, "model-dim", o_dim, run_args.model_dim);
      merge_option(cfg, "model-vocab", o_vocab, run_args.model_vocab);
      merge_option(cfg, "model-ff", o_ff, run_args.model_ff);
      merge_option(cfg, "beam-width", o_beam, run_args.beam_width);
      merge_option(cfg, "max-src-tokens", o_msrc, run_args.max_src_tokens);
      merge_option(cfg, "max-gen-tokens", o_mgen, run_args.max_gen_tokens);
      merge_option(cfg, "jobs", o_jobs, run_args.jobs);
      merge_option(cfg, "oracle-jobs", o_ojobs, run_args.oracle_jobs);
      merge_option(cfg, "mc-samples", o_mc, run_args.mc_samples);
      merge_option(cfg, "dropout-rate", o_drop, run_args.dropout_rate);
      merge_option(cfg, "cal-neighbors", o_cal, run_args.cal_neighbors);
      merge_option(cfg, "halt-after-round", o_halt, run_args.halt_after_round);
      if (run_args.cache_dir.empty()) run_args.cache_dir = env_or("XAL_CACHE_DIR", "");
      return cmd_run(run_args);
    }
    if (sweep_cmd->parsed()) return cmd_sweep(sweep_args);
    if (agg_cmd->parsed()) return cmd_aggregate(agg_args);
    if (rank_cmd->parsed()) {
      if (rank_args.cache_dir.empty()) rank_args.cache_dir = env_or("XAL_CACHE_DIR", "");
      return cmd_rank_eval(rank_args);
    }
    if (export_cmd->parsed()) return cmd_export_embeddings(export_args);

    std::cout << app.help();
    return 2;  // no verb given
  } catch (const ValidationError& e) {
    std::cerr << "validation: " << e.what() << "\n";
    return 3;
  } catch (const ConfigError& e) {
    std::cerr << "config: " << e.what() << "\n";
    return 3;
  } catch (const ParseError& e) {
    std::cerr << "parse: " << e.what() << "\n";
    return 3;
  } catch (const TransportError& e) {
    std::cerr << "transport: " << e.what() << "\n";
    return 1;
  } catch (const OracleError& e) {
    std::cerr << "oracle: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace xal
