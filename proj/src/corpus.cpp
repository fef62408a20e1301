#include "xal/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <regex>
#include <sstream>

#include <json.hpp>

namespace xal {

int LabelSpace::index_of(const std::string& name) const {
  for (int i = 0; i < num_classes; ++i)
    if (names[i] == name) return i;
  return -1;
}

void LabelSpace::validate() const {
  if (num_classes < 2) throw ValidationError("LabelSpace: needs at least 2 classes");
  if (static_cast<int>(names.size()) != num_classes) throw ValidationError("LabelSpace: names/num_classes mismatch");
  std::set<std::string> distinct(names.begin(), names.end());
  if (static_cast<int>(distinct.size()) != num_classes) throw ValidationError("LabelSpace: duplicate names");
}

namespace {

std::vector<TaskSchema> build_schemas() {
  std::vector<TaskSchema> s;
  s.push_back({"rte",
               {"Entail", "Not Entail"},
               true,
               false,
               "Sentence 1: {text}. Sentence 2: {text_pair}. Sentence 1 can {label} sentence 2, "
               "explain the reason within 50 words"});
  s.push_back({"mrpc",
               {"Paraphrase Equivalent", "Not Paraphrase Equivalent"},
               true,
               false,
               "Sentence 1: {text}. Sentence 2: {text_pair}. The relation between the above two "
               "sentences is {label}, explain the reason within 50 words"});
  s.push_back({"mams",
               {"Positive", "Negative", "Neutral"},
               false,
               true,
               "{text}. The sentiment polarity of this review to the category {target} is {label}, "
               "explain the reason within 50 words"});
  s.push_back({"covid19",
               {"Favor", "Neutral", "Against"},
               false,
               true,
               "{text}. The stance of this tweet to the target {target} is {label}, explain the "
               "reason within 50 words"});
  s.push_back({"deba",
               {"Agree", "Neutral", "Disagree"},
               true,
               false,
               "Sentence 1: {text}. Sentence 2: {text_pair}. The stance of sentence 2 is {label} to "
               "sentence 1, explain the reason within 50 words"});
  s.push_back({"clef",
               {"Relevant", "Not Relevant"},
               false,
               true,
               "{text}. The scientific document is {label} to the research topic {target}, explain "
               "the reason within 100 words"});
  // Label names for the synthetic schema are class_0..class_{C-1}; C is
  // inferred from the file contents (two classes for an empty file).
  s.push_back({"synthetic",
               {},
               false,
               false,
               "{text}. The label of this text is {label}, explain the reason within 50 words"});
  return s;
}

const std::vector<TaskSchema>& schemas() {
  static const std::vector<TaskSchema> s = build_schemas();
  return s;
}

}  // namespace

const TaskSchema& schema_by_id(const std::string& schema_id) {
  for (const auto& s : schemas())
    if (s.id == schema_id) return s;
  throw ConfigError("unknown schema id: " + schema_id);
}

std::vector<std::string> registered_schema_ids() {
  std::vector<std::string> ids;
  for (const auto& s : schemas()) ids.push_back(s.id);
  return ids;
}

const Example& Dataset::by_id(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw StateError("unknown example id: " + id);
  return examples[it->second];
}

bool Dataset::contains(const std::string& id) const { return index_.count(id) > 0; }

uint64_t Dataset::fingerprint() const {
  uint64_t h = fnv1a(schema_id);
  for (const auto& e : examples) {
    h = hash_combine(h, fnv1a(e.id));
    h = hash_combine(h, fnv1a(e.text));
    if (e.text_pair) h = hash_combine(h, fnv1a(*e.text_pair));
    if (e.target) h = hash_combine(h, fnv1a(*e.target));
    h = hash_combine(h, static_cast<uint64_t>(e.gold_label));
  }
  return h;
}

void Dataset::rebuild_index() {
  index_.clear();
  for (size_t i = 0; i < examples.size(); ++i) {
    auto [it, inserted] = index_.emplace(examples[i].id, i);
    if (!inserted) throw ValidationError("duplicate example id: " + examples[i].id);
  }
}

namespace {

LabelSpace synthetic_label_space(int num_classes) {
  LabelSpace ls;
  ls.num_classes = num_classes;
  for (int i = 0; i < num_classes; ++i) ls.names.push_back("class_" + std::to_string(i));
  return ls;
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& path, const std::string& schema_id) {
  const TaskSchema& schema = schema_by_id(schema_id);
  std::ifstream in(path);
  if (!in) throw Error("cannot open dataset file: " + path.string());

  struct RawRecord {
    std::string id;
    std::string text;
    std::optional<std::string> text_pair;
    std::optional<std::string> target;
    std::string label;
    size_t line_no = 0;
  };
  std::vector<RawRecord> raw;

  std::string line;
  size_t line_no = 0;
  size_t position = 0;
  static const std::regex synthetic_label_re("^class_([0-9]+)$");
  int max_synthetic_class = -1;

  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;

    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("line " + std::to_string(line_no) + ": invalid JSON: " + e.what());
    }
    if (!rec.is_object()) throw ParseError("line " + std::to_string(line_no) + ": record is not an object");

    auto require_string = [&](const char* key) -> std::string {
      if (!rec.contains(key) || !rec[key].is_string())
        throw ParseError("line " + std::to_string(line_no) + ": missing string field '" + key + "'");
      return rec[key].get<std::string>();
    };

    RawRecord r;
    r.line_no = line_no;
    r.text = require_string("text");
    if (r.text.empty()) throw ValidationError("line " + std::to_string(line_no) + ": empty text");
    r.label = require_string("label");
    if (rec.contains("id")) {
      r.id = rec["id"].is_string() ? rec["id"].get<std::string>() : rec["id"].dump();
    } else {
      r.id = std::to_string(position);
    }
    if (schema.needs_text_pair) {
      r.text_pair = require_string("text_pair");
    } else if (rec.contains("text_pair") && rec["text_pair"].is_string()) {
      r.text_pair = rec["text_pair"].get<std::string>();
    }
    if (schema.needs_target) {
      r.target = require_string("target");
    } else if (rec.contains("target") && rec["target"].is_string()) {
      r.target = rec["target"].get<std::string>();
    }

    if (schema.label_names.empty()) {
      std::smatch m;
      if (!std::regex_match(r.label, m, synthetic_label_re))
        throw ValidationError("line " + std::to_string(line_no) + ": unknown label '" + r.label +
                              "' for schema " + schema.id);
      max_synthetic_class = std::max(max_synthetic_class, std::stoi(m[1].str()));
    }

    raw.push_back(std::move(r));
    ++position;
  }

  Dataset ds;
  ds.schema_id = schema.id;
  ds.dataset_id = path.stem().string();
  if (!schema.label_names.empty()) {
    ds.labels.num_classes = static_cast<int>(schema.label_names.size());
    ds.labels.names = schema.label_names;
  } else {
    ds.labels = synthetic_label_space(std::max(max_synthetic_class + 1, 2));
  }
  ds.labels.validate();

  for (auto& r : raw) {
    Example e;
    e.gold_label = ds.labels.index_of(r.label);
    if (e.gold_label < 0)
      throw ValidationError("line " + std::to_string(r.line_no) + ": unknown label '" + r.label +
                            "' for schema " + schema.id);
    e.id = std::move(r.id);
    e.text = std::move(r.text);
    e.text_pair = std::move(r.text_pair);
    e.target = std::move(r.target);
    ds.examples.push_back(std::move(e));
  }
  ds.rebuild_index();
  return ds;
}

PoolState::PoolState(std::vector<std::string> labeled, std::vector<std::string> unlabeled)
    : initial_labeled_(labeled),
      initial_unlabeled_(unlabeled),
      labeled_(std::move(labeled)),
      unlabeled_(std::move(unlabeled)),
      labeled_set_(labeled_.begin(), labeled_.end()),
      unlabeled_set_(unlabeled_.begin(), unlabeled_.end()) {
  check_invariants();
}

void PoolState::move_to_labeled(const std::vector<std::string>& ids, int round) {
  // Validate fully before touching anything: errors leave the pool unchanged.
  std::set<std::string> unique(ids.begin(), ids.end());
  if (unique.size() != ids.size()) throw StateError("move_to_labeled: duplicate ids in request");
  for (const auto& id : ids) {
    if (!unlabeled_set_.count(id)) {
      throw StateError("move_to_labeled: id not in unlabeled pool: " + id);
    }
  }
  for (const auto& id : ids) {
    unlabeled_set_.erase(id);
    labeled_set_.insert(id);
    labeled_.push_back(id);
  }
  std::erase_if(unlabeled_, [&](const std::string& id) { return unique.count(id) > 0; });
  log_.push_back({round, ids});
}

bool PoolState::replay_matches() const {
  PoolState replayed(initial_labeled_, initial_unlabeled_);
  for (const auto& rec : log_) replayed.move_to_labeled(rec.ids, rec.round);
  return replayed.labeled_ == labeled_ && replayed.unlabeled_ == unlabeled_;
}

void PoolState::check_invariants() const {
  for (const auto& id : labeled_)
    if (unlabeled_set_.count(id)) throw StateError("pool invariant violated: id in both sets: " + id);
  if (labeled_.size() != labeled_set_.size() || unlabeled_.size() != unlabeled_set_.size())
    throw StateError("pool invariant violated: duplicate ids");
  if (labeled_.size() + unlabeled_.size() != initial_labeled_.size() + initial_unlabeled_.size())
    throw StateError("pool invariant violated: universe changed");
}

PoolState init_pools(const std::vector<Example>& examples, size_t init_size, uint64_t rng_seed) {
  if (init_size > examples.size())
    throw CapacityError("init_pools: init_size " + std::to_string(init_size) + " exceeds pool of " +
                        std::to_string(examples.size()));
  std::vector<size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(rng_seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<std::string> labeled;
  labeled.reserve(init_size);
  std::set<size_t> chosen;
  for (size_t i = 0; i < init_size; ++i) {
    labeled.push_back(examples[order[i]].id);
    chosen.insert(order[i]);
  }
  std::vector<std::string> unlabeled;
  unlabeled.reserve(examples.size() - init_size);
  for (size_t i = 0; i < examples.size(); ++i) {
    if (!chosen.count(i)) unlabeled.push_back(examples[i].id);
  }
  return PoolState(std::move(labeled), std::move(unlabeled));
}

std::vector<size_t> class_distribution(const PoolState& pool, const Dataset& dataset) {
  std::vector<size_t> counts(dataset.labels.num_classes, 0);
  for (const auto& id : pool.labeled_ids()) {
    const Example& e = dataset.by_id(id);
    counts.at(e.gold_label) += 1;
  }
  return counts;
}

}  // namespace xal
