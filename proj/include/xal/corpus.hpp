#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "xal/common.hpp"

namespace xal {

// One classification instance. `text_pair` carries the second sentence for
// pair tasks, `target` the stance target / aspect category / topic.
struct Example {
  std::string id;
  std::string text;
  std::optional<std::string> text_pair;
  std::optional<std::string> target;
  int gold_label = -1;
};

struct LabelSpace {
  int num_classes = 0;
  std::vector<std::string> names;

  // -1 if unknown.
  int index_of(const std::string& name) const;
  void validate() const;
};

// Static description of one task schema: its label set, required record
// fields, and the prompt template used by the explain module.
struct TaskSchema {
  std::string id;
  std::vector<std::string> label_names;  // empty for schemas with dynamic labels
  bool needs_text_pair = false;
  bool needs_target = false;
  std::string prompt_template;  // placeholders: {text} {text_pair} {target} {label}
};

// Registered schema ids: rte, mrpc, mams, covid19, deba, clef, synthetic.
const TaskSchema& schema_by_id(const std::string& schema_id);
std::vector<std::string> registered_schema_ids();

struct Dataset {
  std::string dataset_id;  // defaults to the file stem
  std::string schema_id;
  std::vector<Example> examples;
  LabelSpace labels;

  const Example& by_id(const std::string& id) const;
  bool contains(const std::string& id) const;
  // Stable content fingerprint over ids, texts and labels.
  uint64_t fingerprint() const;

  void rebuild_index();

 private:
  std::map<std::string, size_t> index_;
};

// Reads a JSONL dataset (one record per line, keys: id?, text, text_pair?,
// target?, label). Records without an id get their zero-based position.
Dataset load_dataset(const std::filesystem::path& path, const std::string& schema_id);

// Disjoint labeled/unlabeled id sets with an append-only move log. The
// union of the two sets never changes after construction.
class PoolState {
 public:
  struct MoveRecord {
    int round = 0;
    std::vector<std::string> ids;
  };

  PoolState() = default;
  PoolState(std::vector<std::string> labeled, std::vector<std::string> unlabeled);

  const std::vector<std::string>& labeled_ids() const { return labeled_; }
  const std::vector<std::string>& unlabeled_ids() const { return unlabeled_; }
  const std::vector<MoveRecord>& move_log() const { return log_; }

  bool is_labeled(const std::string& id) const { return labeled_set_.count(id) > 0; }
  bool is_unlabeled(const std::string& id) const { return unlabeled_set_.count(id) > 0; }
  size_t size() const { return labeled_.size() + unlabeled_.size(); }

  // Moves ids from unlabeled to labeled and appends to the move log.
  // Throws StateError (pool unchanged) if any id is not currently unlabeled.
  void move_to_labeled(const std::vector<std::string>& ids, int round);

  // Re-applies the move log to the initial state and checks the result
  // matches the current state exactly.
  bool replay_matches() const;

  void check_invariants() const;

 private:
  std::vector<std::string> initial_labeled_;
  std::vector<std::string> initial_unlabeled_;
  std::vector<std::string> labeled_;
  std::vector<std::string> unlabeled_;
  std::set<std::string> labeled_set_;
  std::set<std::string> unlabeled_set_;
  std::vector<MoveRecord> log_;
};

// Uniform random seed of the labeled pool; deterministic per seed.
PoolState init_pools(const std::vector<Example>& examples, size_t init_size, uint64_t rng_seed);

// Gold-label counts over the labeled set.
std::vector<size_t> class_distribution(const PoolState& pool, const Dataset& dataset);

}  // namespace xal
