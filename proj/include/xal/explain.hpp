#pragma once

#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "xal/corpus.hpp"

namespace xal {

// Bumping this invalidates every cached explanation (the version is part of
// the cache key).
inline constexpr const char* kPromptTemplateVersion = "v1";

struct Explanation {
  std::string text;
  std::vector<int> tokens;  // filled lazily by whoever tokenizes
  int source_label = -1;    // class index the prompt asserted
  bool reasonable = false;  // == (source_label == gold label of the owner)
};

struct ExplanationProvenance {
  std::string oracle_id;
  std::string template_version;
  std::string created_at;
};

// One reasonable (index 0) plus C-1 unreasonable explanations for a labeled
// example; one explanation per candidate label.
struct ExplanationSet {
  std::string example_id;
  std::vector<Explanation> explanations;
  ExplanationProvenance provenance;
};

// Throws ValidationError unless the set has exactly C members with distinct
// source labels covering all classes, the reasonable one at index 0, and
// every reasonable flag matching its derivation from (source_label, gold).
void validate_explanation_set(const ExplanationSet& set, int gold_label, int num_classes);

// Renders the schema's prompt template with Target/Label/Texts substituted
// verbatim. Pure: identical inputs give byte-identical prompts.
std::string render_prompt(const Example& example, int asserted_label, const TaskSchema& schema,
                          const LabelSpace& labels);

struct OracleRequest {
  const Example* example = nullptr;
  int asserted_label = -1;
  std::string prompt;
};

class ExplanationOracle {
 public:
  virtual ~ExplanationOracle() = default;
  virtual std::string id() const = 0;
  virtual std::string generate(const OracleRequest& request) = 0;

  void set_audit_log(std::filesystem::path path) { audit_log_ = std::move(path); }

 protected:
  // One JSONL line per non-cached oracle call.
  void append_audit(const std::string& prompt, const std::string& response, int attempts);

 private:
  std::filesystem::path audit_log_;
  std::mutex audit_mutex_;
};

// Disjoint token groups, one per class, used by the synthetic task and the
// mock oracle. `groups[c]` holds the rationale tokens of class c.
struct RationaleLexicon {
  std::vector<std::vector<std::string>> groups;
  std::vector<std::string> filler;

  void validate(int num_classes) const;  // >= C disjoint non-empty groups

  void save(const std::filesystem::path& path) const;
  static RationaleLexicon load(const std::filesystem::path& path);
};

// Deterministic offline explanation: "The label is {name} because the text
// mentions {token}". Asserting the gold label picks the example's own
// rationale token; asserting a wrong label picks a lexicon token absent from
// the example, so only gold-label explanations carry true signal.
std::string mock_generate(const Example& example, int asserted_label, const LabelSpace& labels,
                          const RationaleLexicon& lexicon);

class MockOracle final : public ExplanationOracle {
 public:
  MockOracle(LabelSpace labels, RationaleLexicon lexicon)
      : labels_(std::move(labels)), lexicon_(std::move(lexicon)) {}

  std::string id() const override { return "mock"; }
  std::string generate(const OracleRequest& request) override;

 private:
  LabelSpace labels_;
  RationaleLexicon lexicon_;
};

struct OracleTransportConfig {
  std::string endpoint;  // e.g. http://127.0.0.1:8080/v1/explain
  std::string api_key;
  int max_attempts = 3;
  double initial_backoff_seconds = 1.0;
  // Injectable for tests; defaults to std::this_thread::sleep_for.
  std::function<void(double)> sleeper;
};

// POSTs {"prompt": ...} to the endpoint and expects {"text": ...} back.
// Retries with exponential backoff; exhausted retries surface a
// TransportError carrying the attempt count, an empty response an
// OracleError.
class HttpOracle final : public ExplanationOracle {
 public:
  explicit HttpOracle(OracleTransportConfig config);
  // Reads endpoint/key from XAL_ORACLE_ENDPOINT / XAL_ORACLE_KEY.
  static std::unique_ptr<HttpOracle> from_environment();

  std::string id() const override;
  std::string generate(const OracleRequest& request) override;
  std::string oracle_query(const std::string& prompt);

 private:
  OracleTransportConfig config_;
};

// Immutable per-example explanation store under <root>/<dataset_id>/. Each
// entry is a JSONL file with one record per (example, asserted label):
// {example_id, label, text, template_version, oracle_id, created_at}.
// Writes are write-temp-then-rename and never partial.
class ExplanationCache {
 public:
  ExplanationCache(std::filesystem::path root, std::string dataset_id,
                   std::string template_version = kPromptTemplateVersion);

  // Complete, version-matching entry or nullopt.
  std::optional<ExplanationSet> lookup(const Example& example, const LabelSpace& labels) const;
  void store(const ExplanationSet& set, const Example& example, const LabelSpace& labels);

  std::filesystem::path entry_path(const std::string& example_id) const;
  const std::filesystem::path& dataset_dir() const { return dir_; }

  // Imports flat JSONL records (same fields as the cache) into per-example
  // entries; used for human-written explanation files. Returns the number of
  // complete sets imported.
  size_t import_flat_jsonl(const std::filesystem::path& file, const Dataset& dataset);

 private:
  std::filesystem::path dir_;
  std::string template_version_;
  mutable std::mutex mutex_;
};

// Cache-through construction of one ExplanationSet: zero oracle calls on a
// hit, one call per candidate label on a miss (gold label stored at index
// 0). Oracle failures carry the example id; partial sets are never cached.
ExplanationSet build_explanation_set(const Example& example, const LabelSpace& labels,
                                     const TaskSchema& schema, ExplanationOracle& oracle,
                                     ExplanationCache& cache);

// Builds sets for many examples with up to `jobs` concurrent builders.
// Returns sets in the order of `examples`.
std::vector<ExplanationSet> build_explanation_sets(const std::vector<const Example*>& examples,
                                                   const LabelSpace& labels, const TaskSchema& schema,
                                                   ExplanationOracle& oracle, ExplanationCache& cache,
                                                   int jobs = 1);

}  // namespace xal
