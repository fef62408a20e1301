#include "xal/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <set>

#include <json.hpp>

namespace xal {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Config serialization

namespace {

json protocol_to_json(const ALProtocol& p) {
  return {{"mode", p.mode == ALProtocol::Mode::kFixedBudget ? "fixed_budget" : "to_target"},
          {"init_size", p.init_size},
          {"per_round", p.per_round},
          {"rounds", p.rounds},
          {"target_fraction", p.target_fraction},
          {"upper_bound_f1", p.upper_bound_f1},
          {"strategy", p.strategy},
          {"me_exp", p.me_exp},
          {"no_rank", p.no_rank},
          {"no_me", p.no_me},
          {"halt_after_round", p.halt_after_round}};
}

ALProtocol protocol_from_json(const json& j) {
  ALProtocol p;
  p.mode = j.at("mode").get<std::string>() == "to_target" ? ALProtocol::Mode::kToTarget
                                                          : ALProtocol::Mode::kFixedBudget;
  p.init_size = j.at("init_size").get<size_t>();
  p.per_round = j.at("per_round").get<size_t>();
  p.rounds = j.at("rounds").get<int>();
  p.target_fraction = j.at("target_fraction").get<double>();
  p.upper_bound_f1 = j.at("upper_bound_f1").get<double>();
  p.strategy = j.at("strategy").get<std::string>();
  p.me_exp = j.at("me_exp").get<bool>();
  p.no_rank = j.at("no_rank").get<bool>();
  p.no_me = j.at("no_me").get<bool>();
  p.halt_after_round = j.at("halt_after_round").get<int>();
  return p;
}

json train_to_json(const TrainConfig& t) {
  return {{"epochs", t.epochs},
          {"learning_rate", t.learning_rate},
          {"schedule", t.schedule == TrainConfig::Schedule::kLinearDecay ? "linear-decay" : "constant"},
          {"batch_size", t.batch_size},
          {"lambda1", t.lambda1},
          {"lambda2", t.lambda2},
          {"seed", t.seed}};
}

TrainConfig train_from_json(const json& j) {
  TrainConfig t;
  t.epochs = j.at("epochs").get<int>();
  t.learning_rate = j.at("learning_rate").get<double>();
  t.schedule = j.at("schedule").get<std::string>() == "constant"
                   ? TrainConfig::Schedule::kConstant
                   : TrainConfig::Schedule::kLinearDecay;
  t.batch_size = j.at("batch_size").get<int>();
  t.lambda1 = j.at("lambda1").get<double>();
  t.lambda2 = j.at("lambda2").get<double>();
  t.seed = j.at("seed").get<uint64_t>();
  return t;
}

json model_to_json(const ModelConfig& m) {
  return {{"dim", m.dim},
          {"vocab_size", m.vocab_size},
          {"ff_dim", m.ff_dim},
          {"num_classes", m.num_classes},
          {"max_src_tokens", m.max_src_tokens},
          {"max_gen_tokens", m.max_gen_tokens},
          {"beam_width", m.beam_width}};
}

ModelConfig model_from_json(const json& j) {
  ModelConfig m;
  m.dim = j.at("dim").get<int>();
  m.vocab_size = j.at("vocab_size").get<int>();
  m.ff_dim = j.at("ff_dim").get<int>();
  m.num_classes = j.at("num_classes").get<int>();
  m.max_src_tokens = j.at("max_src_tokens").get<int>();
  m.max_gen_tokens = j.at("max_gen_tokens").get<int>();
  m.beam_width = j.at("beam_width").get<int>();
  return m;
}

json strategy_to_json(const StrategyConfig& s) {
  return {{"lambda_select", s.lambda_select},
          {"explanation_only", s.explanation_only},
          {"beam_width", s.beam_width},
          {"mc_samples", s.mc_samples},
          {"dropout_rate", s.dropout_rate},
          {"cal_neighbors", s.cal_neighbors},
          {"bemps_eval_cap", s.bemps_eval_cap},
          {"jobs", s.jobs}};
}

StrategyConfig strategy_from_json(const json& j) {
  StrategyConfig s;
  s.lambda_select = j.at("lambda_select").get<double>();
  s.explanation_only = j.at("explanation_only").get<bool>();
  s.beam_width = j.at("beam_width").get<int>();
  s.mc_samples = j.at("mc_samples").get<int>();
  s.dropout_rate = j.at("dropout_rate").get<double>();
  s.cal_neighbors = j.at("cal_neighbors").get<int>();
  s.bemps_eval_cap = j.at("bemps_eval_cap").get<size_t>();
  s.jobs = j.at("jobs").get<int>();
  return s;
}

json config_to_json(const ExperimentConfig& c) {
  return {{"protocol", protocol_to_json(c.protocol)},
          {"train", train_to_json(c.train)},
          {"model", model_to_json(c.model)},
          {"strategy", strategy_to_json(c.strategy)},
          {"init_seed", c.init_seed},
          {"run_seed", c.run_seed},
          {"oracle_jobs", c.oracle_jobs}};
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  c.protocol = protocol_from_json(j.at("protocol"));
  c.train = train_from_json(j.at("train"));
  c.model = model_from_json(j.at("model"));
  c.strategy = strategy_from_json(j.at("strategy"));
  c.init_seed = j.at("init_seed").get<uint64_t>();
  c.run_seed = j.at("run_seed").get<uint64_t>();
  c.oracle_jobs = j.at("oracle_jobs").get<int>();
  return c;
}

json eval_to_json(const EvalReport& r) {
  json out{{"schema_version", kArtifactSchemaVersion},
           {"macro_f1", r.macro_f1},
           {"precision", r.precision},
           {"recall", r.recall},
           {"f1", r.f1},
           {"support", r.support},
           {"labeled_count", r.labeled_count}};
  if (r.ranking_accuracy) out["ranking_accuracy"] = *r.ranking_accuracy;
  return out;
}

EvalReport eval_from_json(const json& j) {
  EvalReport r;
  r.macro_f1 = j.at("macro_f1").get<double>();
  r.precision = j.at("precision").get<std::vector<double>>();
  r.recall = j.at("recall").get<std::vector<double>>();
  r.f1 = j.at("f1").get<std::vector<double>>();
  r.support = j.at("support").get<std::vector<size_t>>();
  r.labeled_count = j.at("labeled_count").get<size_t>();
  if (j.contains("ranking_accuracy")) r.ranking_accuracy = j.at("ranking_accuracy").get<double>();
  return r;
}

json fingerprint_to_json(const TrainingFingerprint& fp) {
  return {{"init_seed", fp.init_seed}, {"epochs", fp.epochs}, {"data_hash", fp.data_hash}, {"steps", fp.steps}};
}

TrainingFingerprint fingerprint_from_json(const json& j) {
  TrainingFingerprint fp;
  fp.init_seed = j.at("init_seed").get<uint64_t>();
  fp.epochs = j.at("epochs").get<int>();
  fp.data_hash = j.at("data_hash").get<uint64_t>();
  fp.steps = j.at("steps").get<uint64_t>();
  return fp;
}

}  // namespace

// ---------------------------------------------------------------------------
// Protocol / config plumbing

void ALProtocol::validate() const {
  if (init_size < 1) throw ValidationError("protocol.init_size: must be >= 1");
  if (mode == Mode::kFixedBudget) {
    if (rounds < 0) throw ValidationError("protocol.rounds: must be >= 0");
    if (rounds > 0 && per_round == 0)
      throw ValidationError("protocol.per_round: must be >= 1 when rounds > 0");
  } else {
    if (per_round == 0) throw ValidationError("protocol.per_round: must be >= 1");
    if (target_fraction < 0.0 || target_fraction > 1.0)
      throw ValidationError("protocol.target_fraction: must be in [0, 1]");
    if (upper_bound_f1 < 0.0 || upper_bound_f1 > 1.0)
      throw ValidationError("protocol.upper_bound_f1: must be in [0, 1]");
  }
  if (static_cast<int>(me_exp) + static_cast<int>(no_me) > 1)
    throw ValidationError("protocol: me_exp and no_me are mutually exclusive");
}

ExperimentConfig ExperimentConfig::normalized() const {
  ExperimentConfig out = *this;
  out.train.seed = out.run_seed;
  if (out.protocol.me_exp) {
    out.protocol.strategy = "xal";
    out.strategy.lambda_select = 0.0;
    out.strategy.explanation_only = false;
  }
  if (out.protocol.no_me) {
    out.protocol.strategy = "xal";
    out.strategy.explanation_only = true;
  }
  if (out.protocol.no_rank) out.train.lambda2 = 0.0;
  out.strategy.beam_width = out.model.beam_width;
  return out;
}

bool ExperimentConfig::needs_explanations() const {
  return train.lambda1 > 0.0 || train.lambda2 > 0.0;
}

void RunRecord::check_audit() const {
  std::set<std::string> seen;
  for (size_t r = 0; r < rounds.size(); ++r) {
    const auto& round = rounds[r];
    for (const auto& id : round.selected) {
      if (!seen.insert(id).second)
        throw StateError("audit: id '" + id + "' selected twice across rounds");
    }
    const size_t expected = config.protocol.init_size + config.protocol.per_round * r;
    if (config.protocol.mode == ALProtocol::Mode::kFixedBudget &&
        round.eval.labeled_count != expected) {
      throw StateError("audit: round " + std::to_string(round.round) + " evaluated at " +
                       std::to_string(round.eval.labeled_count) + " labels, expected " +
                       std::to_string(expected));
    }
  }
}

// ---------------------------------------------------------------------------
// Run loop

namespace {

fs::path round_dir(const fs::path& out, int round) {
  return out / "rounds" / std::to_string(round);
}

void persist_manifest(const fs::path& out_dir, const RunRecord& record) {
  json rounds = json::array();
  for (const auto& r : record.rounds) {
    rounds.push_back({{"round", r.round},
                      {"selected", r.selected},
                      {"eval", eval_to_json(r.eval)},
                      {"fingerprint", fingerprint_to_json(r.fingerprint)},
                      {"generation_failures", r.generation_failures}});
  }
  json manifest{{"schema_version", kArtifactSchemaVersion},
                {"config", config_to_json(record.config)},
                {"corpus_fingerprint", record.corpus_fingerprint},
                {"status", record.status},
                {"completed_rounds", record.rounds.size()},
                {"wall_clock_seconds", record.wall_clock_seconds},
                {"rounds", rounds}};
  if (record.labeled_at_stop) manifest["labeled_at_stop"] = *record.labeled_at_stop;
  write_text_file_atomic(out_dir / "manifest.json", manifest.dump(2) + "\n");
}

void write_selection_csv(const fs::path& out_dir, int round, const SelectionResult& result) {
  std::string content = "# schema_version=" + std::to_string(kArtifactSchemaVersion) +
                        " strategy=" + result.strategy + "\n";
  content += result.to_csv();
  write_text_file_atomic(round_dir(out_dir, round) / "selection.csv", content);
}

SelectionResult init_selection(const std::vector<std::string>& ids, uint64_t seed) {
  SelectionResult result;
  result.strategy = "init";
  result.seed = seed;
  result.selected = ids;
  for (const auto& id : ids) {
    CandidateScore row;
    row.example_id = id;
    row.selected = true;
    result.table.push_back(std::move(row));
  }
  return result;
}

struct RunIo {
  const Dataset& train_set;
  const Dataset& test_set;
  ExplanationOracle* oracle;
  ExplanationCache* cache;
  const ModelFactory& factory;
};

std::vector<TrainItem> gather_items(const ExperimentConfig& cfg, const RunIo& io,
                                    const PoolState& pool,
                                    std::map<std::string, ExplanationSet>& sets) {
  if (cfg.needs_explanations()) {
    if (io.oracle == nullptr || io.cache == nullptr)
      throw ConfigError("run: explanations required but no oracle/cache configured");
    std::vector<const Example*> missing;
    for (const auto& id : pool.labeled_ids()) {
      if (!sets.count(id)) missing.push_back(&io.train_set.by_id(id));
    }
    const auto& schema = schema_by_id(io.train_set.schema_id);
    auto built = build_explanation_sets(missing, io.train_set.labels, schema, *io.oracle, *io.cache,
                                        cfg.oracle_jobs);
    for (auto& set : built) sets[set.example_id] = std::move(set);
  }
  std::vector<TrainItem> items;
  for (const auto& id : pool.labeled_ids()) {
    const Example* e = &io.train_set.by_id(id);
    const ExplanationSet* s = cfg.needs_explanations() ? &sets.at(id) : nullptr;
    items.push_back({e, s});
  }
  return items;
}

std::vector<const Example*> test_pointers(const Dataset& test_set) {
  std::vector<const Example*> out;
  for (const auto& e : test_set.examples) out.push_back(&e);
  return out;
}

enum class StopCheck { kContinue, kStop };

RunRecord run_loop(const ExperimentConfig& raw_config, const RunIo& io, const fs::path& out_dir,
                   bool resuming) {
  const ExperimentConfig cfg = raw_config.normalized();
  cfg.protocol.validate();
  cfg.train.validate();
  const auto t0 = std::chrono::steady_clock::now();

  RunRecord record;
  record.out_dir = out_dir.string();
  record.config = cfg;
  record.corpus_fingerprint = io.train_set.fingerprint();
  record.status = "running";

  fs::create_directories(out_dir / "rounds");
  PoolState pool = init_pools(io.train_set.examples, cfg.protocol.init_size, cfg.init_seed);
  std::map<std::string, ExplanationSet> sets;
  std::unique_ptr<TrainableModel> model;
  int start_round = 0;

  if (resuming) {
    RunRecord previous = load_run_record(out_dir);
    if (previous.corpus_fingerprint != record.corpus_fingerprint)
      throw ConfigError("resume: corpus fingerprint mismatch");
    // the halt hook is transient: a resume may drop or move it
    ExperimentConfig prev_cmp = previous.config;
    ExperimentConfig cur_cmp = cfg;
    prev_cmp.protocol.halt_after_round = -1;
    cur_cmp.protocol.halt_after_round = -1;
    if (config_to_json(prev_cmp) != config_to_json(cur_cmp))
      throw ConfigError("resume: run configuration differs from the manifest");
    if (previous.status == "complete" || previous.status == "target_reached" ||
        previous.status == "target_not_reached") {
      return previous;  // nothing to do
    }
    record.rounds = previous.rounds;
    for (size_t r = 1; r < record.rounds.size(); ++r) {
      pool.move_to_labeled(record.rounds[r].selected, static_cast<int>(r));
    }
    start_round = static_cast<int>(record.rounds.size());
    if (start_round > 0) {
      auto snap = ModelSnapshot::load(round_dir(out_dir, start_round - 1) / "snapshot.bin");
      model = std::make_unique<TinyEncDec>(snap);
    }
  } else {
    write_selection_csv(out_dir, 0, init_selection(pool.labeled_ids(), cfg.init_seed));
  }

  const bool fixed = cfg.protocol.mode == ALProtocol::Mode::kFixedBudget;
  auto strategy = make_strategy(cfg.protocol.strategy, cfg.strategy);
  const auto test_ptrs = test_pointers(io.test_set);

  for (int round = start_round;; ++round) {
    if (fixed && round > cfg.protocol.rounds) break;

    if (round > 0) {
      if (pool.unlabeled_ids().empty()) {
        record.status = fixed ? "complete" : "target_not_reached";
        break;
      }
      const uint64_t select_seed = derive_seed(derive_seed(cfg.run_seed, "select"), round);
      auto selection =
          strategy->select(io.train_set, pool, model.get(), cfg.protocol.per_round, select_seed);
      write_selection_csv(out_dir, round, selection);
      pool.move_to_labeled(selection.selected, round);

      RoundRecord rr;
      rr.round = round;
      rr.selected = selection.selected;
      rr.generation_failures = selection.generation_failures;
      record.rounds.push_back(std::move(rr));
    } else {
      RoundRecord rr;
      rr.round = 0;
      rr.selected = pool.labeled_ids();
      record.rounds.push_back(std::move(rr));
    }
    RoundRecord& rr = record.rounds.back();

    const auto items = gather_items(cfg, io, pool, sets);

    const fs::path rdir = round_dir(out_dir, round);
    fs::create_directories(rdir);
    std::string trainlog = json{{"schema_version", kArtifactSchemaVersion}}.dump() + "\n";
    auto logger = [&](const StepLog& log) {
      trainlog += json{{"round", log.round},
                       {"epoch", log.epoch},
                       {"step", log.step},
                       {"cls", log.loss.cls},
                       {"gen", log.loss.gen},
                       {"rank", log.loss.rank},
                       {"total", log.loss.total}}
                      .dump() +
                  "\n";
    };
    model = train_round(io.factory, items, cfg.train, round, logger);
    write_text_file_atomic(rdir / "trainlog.jsonl", trainlog);
    model->make_snapshot().save(rdir / "snapshot.bin");

    rr.eval = evaluate_macro_f1(*model, test_ptrs);
    rr.eval.labeled_count = pool.labeled_ids().size();
    rr.fingerprint = model->fingerprint();
    write_text_file_atomic(rdir / "eval.json", eval_to_json(rr.eval).dump(2) + "\n");

    const auto now = std::chrono::steady_clock::now();
    record.wall_clock_seconds = std::chrono::duration<double>(now - t0).count();

    // stopping rules
    if (!fixed) {
      if (rr.eval.macro_f1 >= cfg.protocol.target_fraction * cfg.protocol.upper_bound_f1) {
        record.status = "target_reached";
        record.labeled_at_stop = pool.labeled_ids().size();
        persist_manifest(out_dir, record);
        break;
      }
      if (pool.unlabeled_ids().empty()) {
        record.status = "target_not_reached";
        record.labeled_at_stop = pool.labeled_ids().size();
        persist_manifest(out_dir, record);
        break;
      }
    } else if (round == cfg.protocol.rounds) {
      record.status = "complete";
      persist_manifest(out_dir, record);
      break;
    }

    if (cfg.protocol.halt_after_round >= 0 && round >= cfg.protocol.halt_after_round) {
      record.status = "halted";
      persist_manifest(out_dir, record);
      return record;
    }
    persist_manifest(out_dir, record);
  }

  if (record.status == "running") {
    record.status = fixed ? "complete" : "target_not_reached";
  }
  const auto now = std::chrono::steady_clock::now();
  record.wall_clock_seconds = std::chrono::duration<double>(now - t0).count();
  persist_manifest(out_dir, record);
  record.check_audit();
  return record;
}

}  // namespace

RunRecord run_fixed_budget(const ExperimentConfig& config, const Dataset& train_set,
                           const Dataset& test_set, ExplanationOracle* oracle,
                           ExplanationCache* cache, const ModelFactory& factory,
                           const fs::path& out_dir) {
  ExperimentConfig cfg = config;
  cfg.protocol.mode = ALProtocol::Mode::kFixedBudget;
  return run_loop(cfg, {train_set, test_set, oracle, cache, factory}, out_dir, false);
}

RunRecord run_to_target(const ExperimentConfig& config, const Dataset& train_set,
                        const Dataset& test_set, ExplanationOracle* oracle, ExplanationCache* cache,
                        const ModelFactory& factory, const fs::path& out_dir) {
  ExperimentConfig cfg = config;
  cfg.protocol.mode = ALProtocol::Mode::kToTarget;
  return run_loop(cfg, {train_set, test_set, oracle, cache, factory}, out_dir, false);
}

RunRecord resume_run(const ExperimentConfig& config, const Dataset& train_set,
                     const Dataset& test_set, ExplanationOracle* oracle, ExplanationCache* cache,
                     const ModelFactory& factory, const fs::path& out_dir) {
  return run_loop(config, {train_set, test_set, oracle, cache, factory}, out_dir, true);
}

RunRecord load_run_record(const fs::path& out_dir) {
  json manifest;
  try {
    manifest = json::parse(read_text_file(out_dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw ParseError("manifest " + (out_dir / "manifest.json").string() + ": " + e.what());
  }
  RunRecord record;
  record.out_dir = out_dir.string();
  record.config = config_from_json(manifest.at("config"));
  record.corpus_fingerprint = manifest.at("corpus_fingerprint").get<uint64_t>();
  record.status = manifest.at("status").get<std::string>();
  record.wall_clock_seconds = manifest.at("wall_clock_seconds").get<double>();
  if (manifest.contains("labeled_at_stop"))
    record.labeled_at_stop = manifest.at("labeled_at_stop").get<size_t>();
  for (const auto& r : manifest.at("rounds")) {
    RoundRecord rr;
    rr.round = r.at("round").get<int>();
    rr.selected = r.at("selected").get<std::vector<std::string>>();
    rr.eval = eval_from_json(r.at("eval"));
    rr.fingerprint = fingerprint_from_json(r.at("fingerprint"));
    rr.generation_failures = r.at("generation_failures").get<size_t>();
    record.rounds.push_back(std::move(rr));
  }
  return record;
}

// ---------------------------------------------------------------------------
// Aggregation

std::vector<RoundAggregate> aggregate_runs(const std::vector<RunRecord>& records) {
  if (records.empty()) throw AggregationError("aggregate: no runs");
  const size_t rounds = records[0].rounds.size();
  for (const auto& r : records) {
    if (r.rounds.size() != rounds) {
      throw AggregationError("aggregate: run '" + r.out_dir + "' has " +
                             std::to_string(r.rounds.size()) + " rounds, expected " +
                             std::to_string(rounds) + " (like '" + records[0].out_dir + "')");
    }
  }
  std::vector<RoundAggregate> out;
  for (size_t i = 0; i < rounds; ++i) {
    RoundAggregate agg;
    agg.round = records[0].rounds[i].round;
    agg.labeled = records[0].rounds[i].eval.labeled_count;
    agg.n = records.size();
    double sum = 0.0;
    for (const auto& r : records) {
      if (r.rounds[i].eval.labeled_count != agg.labeled)
        throw AggregationError("aggregate: run '" + r.out_dir + "' evaluated round " +
                               std::to_string(agg.round) + " at " +
                               std::to_string(r.rounds[i].eval.labeled_count) + " labels");
      sum += r.rounds[i].eval.macro_f1;
    }
    agg.mean_macro_f1 = sum / static_cast<double>(records.size());
    double ss = 0.0;
    for (const auto& r : records) {
      const double d = r.rounds[i].eval.macro_f1 - agg.mean_macro_f1;
      ss += d * d;
    }
    agg.sd_macro_f1 = records.size() > 1 ? std::sqrt(ss / static_cast<double>(records.size() - 1)) : 0.0;
    out.push_back(agg);
  }
  return out;
}

std::string aggregate_to_csv(const std::vector<RoundAggregate>& rows) {
  std::string out = "# schema_version=" + std::to_string(kArtifactSchemaVersion) + "\n";
  out += "round,labeled,mean_macro_f1,sd_macro_f1,n\n";
  for (const auto& r : rows) {
    out += std::to_string(r.round) + "," + std::to_string(r.labeled) + "," +
           format_double(r.mean_macro_f1) + "," + format_double(r.sd_macro_f1) + "," +
           std::to_string(r.n) + "\n";
  }
  return out;
}

void export_embeddings(const ClassifierExplainer& model, const Dataset& dataset,
                       const PoolState& pool, const std::vector<std::string>& selected_this_round,
                       const fs::path& path) {
  const std::set<std::string> selected(selected_this_round.begin(), selected_this_round.end());
  std::string out = "# schema_version=" + std::to_string(kArtifactSchemaVersion) + "\n";
  out += "id\tflag\tgold_label\tembedding\n";
  for (const auto& e : dataset.examples) {
    const char* flag = selected.count(e.id) ? "selected"
                       : pool.is_labeled(e.id) ? "labeled"
                                               : "unlabeled";
    const auto emb = model.sentence_embedding(model_input_text(e));
    out += e.id;
    out += '\t';
    out += flag;
    out += '\t';
    out += std::to_string(e.gold_label);
    for (double v : emb) {
      out += '\t';
      out += format_double(v);
    }
    out += '\n';
  }
  write_text_file_atomic(path, out);
}

// ---------------------------------------------------------------------------
// Synthetic task

RationaleLexicon default_lexicon(int num_classes) {
  static const std::vector<std::vector<std::string>> kGroups{
      {"crimson", "scarlet", "ruby", "maroon"},    {"azure", "cobalt", "indigo", "sapphire"},
      {"emerald", "jade", "olive", "fern"},        {"amber", "saffron", "ochre", "marigold"},
      {"violet", "lilac", "mauve", "orchid"},      {"slate", "pewter", "graphite", "charcoal"},
  };
  if (num_classes < 2 || num_classes > static_cast<int>(kGroups.size()))
    throw ConfigError("default_lexicon: supports 2.." + std::to_string(kGroups.size()) + " classes");
  RationaleLexicon lex;
  lex.groups.assign(kGroups.begin(), kGroups.begin() + num_classes);
  lex.filler = {"the", "a", "on", "it", "is", "was", "to", "and", "of", "in", "near", "with"};
  return lex;
}

SyntheticTask make_synthetic_task(const SyntheticSpec& spec) {
  if (spec.num_classes < 2) throw ConfigError("synthetic: num_classes must be >= 2");
  if (spec.noise_rate < 0.0 || spec.noise_rate > 1.0)
    throw ConfigError("synthetic: noise_rate must be in [0, 1]");
  RationaleLexicon lexicon = spec.lexicon.groups.empty() ? default_lexicon(spec.num_classes) : spec.lexicon;
  lexicon.validate(spec.num_classes);
  if (lexicon.filler.empty()) throw ConfigError("synthetic: lexicon needs filler tokens");

  std::vector<double> weights = spec.class_weights;
  if (weights.empty()) weights.assign(spec.num_classes, 1.0);
  if (static_cast<int>(weights.size()) != spec.num_classes)
    throw ConfigError("synthetic: class_weights size must equal num_classes");
  double wsum = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw ConfigError("synthetic: class_weights must be >= 0");
    wsum += w;
  }
  if (wsum <= 0.0) throw ConfigError("synthetic: class_weights sum to zero");

  Rng rng = make_rng(spec.seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  auto sample_class = [&]() {
    double r = u01(rng) * wsum;
    for (int c = 0; c < spec.num_classes; ++c) {
      r -= weights[c];
      if (r <= 0.0) return c;
    }
    return spec.num_classes - 1;
  };

  auto gen_example = [&](const std::string& id) {
    const int cls = sample_class();
    const auto& group = lexicon.groups[cls];
    std::uniform_int_distribution<size_t> gpick(0, group.size() - 1);
    const std::string rationale = group[gpick(rng)];

    const int n = std::max(1, spec.filler_tokens);
    std::uniform_int_distribution<size_t> fpick(0, lexicon.filler.size() - 1);
    std::uniform_int_distribution<int> pos(0, n);
    const int insert_at = pos(rng);
    std::string text;
    for (int i = 0; i <= n; ++i) {
      if (!text.empty()) text += ' ';
      text += (i == insert_at) ? rationale : lexicon.filler[fpick(rng)];
    }

    int gold = cls;
    if (spec.noise_rate > 0.0 && u01(rng) < spec.noise_rate) {
      std::uniform_int_distribution<int> other(0, spec.num_classes - 2);
      int flip = other(rng);
      gold = flip >= cls ? flip + 1 : flip;
    }

    Example e;
    e.id = id;
    e.text = std::move(text);
    e.gold_label = gold;
    return e;
  };

  SyntheticTask task;
  task.lexicon = lexicon;
  auto make_split = [&](const std::string& name, const std::string& prefix, size_t count) {
    Dataset ds;
    ds.schema_id = "synthetic";
    ds.dataset_id = name;
    ds.labels.num_classes = spec.num_classes;
    for (int c = 0; c < spec.num_classes; ++c) ds.labels.names.push_back("class_" + std::to_string(c));
    for (size_t i = 0; i < count; ++i) ds.examples.push_back(gen_example(prefix + std::to_string(i)));
    ds.rebuild_index();
    return ds;
  };
  task.train = make_split("synthetic_train", "tr", spec.train_size);
  task.test = make_split("synthetic_test", "te", spec.test_size);
  return task;
}

void write_dataset_jsonl(const Dataset& dataset, const fs::path& path) {
  std::string out;
  for (const auto& e : dataset.examples) {
    json rec{{"id", e.id}, {"text", e.text}, {"label", dataset.labels.names[e.gold_label]}};
    if (e.text_pair) rec["text_pair"] = *e.text_pair;
    if (e.target) rec["target"] = *e.target;
    out += rec.dump();
    out += '\n';
  }
  write_text_file_atomic(path, out);
}

}  // namespace xal
