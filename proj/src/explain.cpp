#include "xal/explain.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <set>
#include <thread>

#include <json.hpp>

// cpp-httplib client; keep the build lean.
#define CPPHTTPLIB_NO_EXCEPTIONS
#include <httplib.h>

namespace xal {

namespace {

std::string utc_now_iso8601() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string replace_all(std::string s, const std::string& from, const std::string& to) {
  size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
  return s;
}

}  // namespace

void validate_explanation_set(const ExplanationSet& set, int gold_label, int num_classes) {
  if (static_cast<int>(set.explanations.size()) != num_classes)
    throw ValidationError("ExplanationSet: expected " + std::to_string(num_classes) +
                          " explanations, got " + std::to_string(set.explanations.size()));
  std::set<int> labels;
  for (const auto& e : set.explanations) {
    if (e.text.empty()) throw ValidationError("ExplanationSet: empty explanation text");
    if (e.source_label < 0 || e.source_label >= num_classes)
      throw ValidationError("ExplanationSet: source label out of range");
    labels.insert(e.source_label);
    if (e.reasonable != (e.source_label == gold_label))
      throw ValidationError("ExplanationSet: reasonable flag does not match derivation");
  }
  if (static_cast<int>(labels.size()) != num_classes)
    throw ValidationError("ExplanationSet: labels must cover all classes");
  if (!set.explanations[0].reasonable)
    throw ValidationError("ExplanationSet: index 0 must hold the reasonable explanation");
}

std::string render_prompt(const Example& example, int asserted_label, const TaskSchema& schema,
                          const LabelSpace& labels) {
  if (asserted_label < 0 || asserted_label >= labels.num_classes)
    throw ValidationError("render_prompt: asserted label out of range");
  if (schema.prompt_template.empty())
    throw ConfigError("render_prompt: schema '" + schema.id + "' has no prompt template");
  std::string out = schema.prompt_template;
  out = replace_all(out, "{text}", example.text);
  out = replace_all(out, "{text_pair}", example.text_pair.value_or(""));
  out = replace_all(out, "{target}", example.target.value_or(""));
  out = replace_all(out, "{label}", labels.names[asserted_label]);
  return out;
}

void ExplanationOracle::append_audit(const std::string& prompt, const std::string& response,
                                     int attempts) {
  if (audit_log_.empty()) return;
  nlohmann::json line{{"ts", utc_now_iso8601()},
                      {"oracle", id()},
                      {"prompt", prompt},
                      {"response", response},
                      {"attempts", attempts}};
  std::lock_guard<std::mutex> lock(audit_mutex_);
  append_line(audit_log_, line.dump());
}

// ---------------------------------------------------------------------------
// Rationale lexicon + mock oracle

void RationaleLexicon::validate(int num_classes) const {
  if (static_cast<int>(groups.size()) < num_classes)
    throw ConfigError("lexicon: needs at least " + std::to_string(num_classes) + " token groups");
  std::set<std::string> seen;
  for (const auto& g : groups) {
    if (g.empty()) throw ConfigError("lexicon: empty token group");
    for (const auto& t : g) {
      if (!seen.insert(t).second) throw ConfigError("lexicon: token groups overlap on '" + t + "'");
    }
  }
  for (const auto& f : filler) {
    if (seen.count(f)) throw ConfigError("lexicon: filler overlaps rationale token '" + f + "'");
  }
}

void RationaleLexicon::save(const std::filesystem::path& path) const {
  nlohmann::json j{{"groups", groups}, {"filler", filler}};
  write_text_file_atomic(path, j.dump(2) + "\n");
}

RationaleLexicon RationaleLexicon::load(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("lexicon file " + path.string() + ": " + e.what());
  }
  RationaleLexicon lex;
  lex.groups = j.at("groups").get<std::vector<std::vector<std::string>>>();
  if (j.contains("filler")) lex.filler = j.at("filler").get<std::vector<std::string>>();
  return lex;
}

std::string mock_generate(const Example& example, int asserted_label, const LabelSpace& labels,
                          const RationaleLexicon& lexicon) {
  if (asserted_label < 0 || asserted_label >= labels.num_classes)
    throw ValidationError("mock_generate: asserted label out of range");
  const auto text_tokens = split_whitespace(example.text);
  const std::set<std::string> present(text_tokens.begin(), text_tokens.end());

  const auto& group = lexicon.groups.at(asserted_label);
  std::string token;
  if (asserted_label == example.gold_label) {
    // the example's own rationale token; fall back to a deterministic pick
    // from the gold group when the label was noise-flipped
    for (const auto& t : text_tokens) {
      if (std::find(group.begin(), group.end(), t) != group.end()) {
        token = t;
        break;
      }
    }
    if (token.empty()) token = group[fnv1a(example.id) % group.size()];
  } else {
    // misleading signal: a token of the asserted class that the text lacks
    const size_t start = fnv1a(example.id) % group.size();
    for (size_t i = 0; i < group.size(); ++i) {
      const auto& cand = group[(start + i) % group.size()];
      if (!present.count(cand)) {
        token = cand;
        break;
      }
    }
    if (token.empty()) token = group[start];
  }
  return "The label is " + labels.names[asserted_label] + " because the text mentions " + token;
}

std::string MockOracle::generate(const OracleRequest& request) {
  if (request.example == nullptr) throw ValidationError("mock oracle: request without example");
  std::string response = mock_generate(*request.example, request.asserted_label, labels_, lexicon_);
  append_audit(request.prompt, response, 1);
  return response;
}

// ---------------------------------------------------------------------------
// HTTP oracle

HttpOracle::HttpOracle(OracleTransportConfig config) : config_(std::move(config)) {
  if (config_.endpoint.empty()) throw ConfigError("oracle endpoint not configured");
  if (config_.max_attempts < 1) throw ConfigError("oracle max_attempts must be >= 1");
  if (!config_.sleeper) {
    config_.sleeper = [](double seconds) {
      std::this_thread::sleep_for(std::chrono::duration<double>(seconds));
    };
  }
}

std::unique_ptr<HttpOracle> HttpOracle::from_environment() {
  OracleTransportConfig cfg;
  if (const char* ep = std::getenv("XAL_ORACLE_ENDPOINT")) cfg.endpoint = ep;
  if (const char* key = std::getenv("XAL_ORACLE_KEY")) cfg.api_key = key;
  if (cfg.endpoint.empty())
    throw ConfigError("XAL_ORACLE_ENDPOINT not set; pass --mock-oracle for offline runs");
  return std::make_unique<HttpOracle>(std::move(cfg));
}

std::string HttpOracle::id() const { return "http:" + config_.endpoint; }

std::string HttpOracle::generate(const OracleRequest& request) { return oracle_query(request.prompt); }

std::string HttpOracle::oracle_query(const std::string& prompt) {
  // split endpoint into origin + path
  std::string origin = config_.endpoint;
  std::string path = "/";
  const size_t scheme_end = origin.find("://");
  const size_t path_start = origin.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
  if (path_start != std::string::npos) {
    path = origin.substr(path_start);
    origin = origin.substr(0, path_start);
  }

  const nlohmann::json body{{"prompt", prompt}};
  std::string last_error;
  for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
    httplib::Client client(origin);
    client.set_connection_timeout(10);
    client.set_read_timeout(60);
    if (!config_.api_key.empty()) client.set_bearer_token_auth(config_.api_key);

    auto res = client.Post(path, body.dump(), "application/json");
    if (res && res->status >= 200 && res->status < 300) {
      std::string text;
      auto parsed = nlohmann::json::parse(res->body, nullptr, false);
      if (!parsed.is_discarded() && parsed.contains("text") && parsed["text"].is_string()) {
        text = parsed["text"].get<std::string>();
      }
      if (text.empty()) {
        append_audit(prompt, "<empty>", attempt);
        throw OracleError("oracle returned empty response");
      }
      append_audit(prompt, text, attempt);
      return text;
    }
    last_error = res ? "http status " + std::to_string(res->status)
                     : "transport: " + httplib::to_string(res.error());
    if (attempt < config_.max_attempts) {
      config_.sleeper(config_.initial_backoff_seconds * std::pow(2.0, attempt - 1));
    }
  }
  append_audit(prompt, "<failed: " + last_error + ">", config_.max_attempts);
  throw TransportError("oracle unreachable after " + std::to_string(config_.max_attempts) +
                       " attempts: " + last_error);
}

// ---------------------------------------------------------------------------
// Cache

namespace {

std::string sanitize_for_filename(const std::string& id) {
  std::string out;
  for (char c : id) {
    if (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') {
      out += c;
    } else {
      out += '_';
    }
    if (out.size() >= 40) break;
  }
  char hash[20];
  std::snprintf(hash, sizeof(hash), "%016llx", static_cast<unsigned long long>(fnv1a(id)));
  return out.empty() ? std::string(hash) : out + "-" + hash;
}

}  // namespace

ExplanationCache::ExplanationCache(std::filesystem::path root, std::string dataset_id,
                                   std::string template_version)
    : dir_(root / dataset_id), template_version_(std::move(template_version)) {
  std::filesystem::create_directories(dir_);
}

std::filesystem::path ExplanationCache::entry_path(const std::string& example_id) const {
  return dir_ / (sanitize_for_filename(example_id) + ".jsonl");
}

std::optional<ExplanationSet> ExplanationCache::lookup(const Example& example,
                                                       const LabelSpace& labels) const {
  std::lock_guard<std::mutex> lock(mutex_);
  const auto path = entry_path(example.id);
  if (!std::filesystem::exists(path)) return std::nullopt;

  std::map<int, Explanation> by_label;
  ExplanationProvenance prov;
  std::istringstream in(read_text_file(path));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto rec = nlohmann::json::parse(line, nullptr, false);
    if (rec.is_discarded()) return std::nullopt;  // corrupt entry: treat as miss
    if (rec.value("example_id", "") != example.id) return std::nullopt;
    if (rec.value("template_version", "") != template_version_) return std::nullopt;
    const int label = labels.index_of(rec.value("label", ""));
    if (label < 0) return std::nullopt;
    Explanation e;
    e.text = rec.value("text", "");
    e.source_label = label;
    e.reasonable = label == example.gold_label;
    if (e.text.empty()) return std::nullopt;
    by_label[label] = std::move(e);
    prov.oracle_id = rec.value("oracle_id", "");
    prov.template_version = rec.value("template_version", "");
    prov.created_at = rec.value("created_at", "");
  }
  if (static_cast<int>(by_label.size()) != labels.num_classes) return std::nullopt;

  ExplanationSet set;
  set.example_id = example.id;
  set.provenance = prov;
  set.explanations.push_back(by_label.at(example.gold_label));
  for (auto& [label, expl] : by_label) {
    if (label != example.gold_label) set.explanations.push_back(std::move(expl));
  }
  validate_explanation_set(set, example.gold_label, labels.num_classes);
  return set;
}

void ExplanationCache::store(const ExplanationSet& set, const Example& example,
                             const LabelSpace& labels) {
  validate_explanation_set(set, example.gold_label, labels.num_classes);
  std::string content;
  // records in ascending label order so identical sets serialize identically
  std::map<int, const Explanation*> by_label;
  for (const auto& e : set.explanations) by_label[e.source_label] = &e;
  for (const auto& [label, e] : by_label) {
    nlohmann::json rec{{"example_id", set.example_id},   {"label", labels.names[label]},
                       {"text", e->text},                {"template_version", set.provenance.template_version},
                       {"oracle_id", set.provenance.oracle_id}, {"created_at", set.provenance.created_at}};
    content += rec.dump();
    content += '\n';
  }
  std::lock_guard<std::mutex> lock(mutex_);
  write_text_file_atomic(entry_path(set.example_id), content);
}

size_t ExplanationCache::import_flat_jsonl(const std::filesystem::path& file, const Dataset& dataset) {
  std::istringstream in(read_text_file(file));
  std::string line;
  size_t line_no = 0;
  std::map<std::string, std::map<int, Explanation>> pending;
  std::map<std::string, ExplanationProvenance> provenance;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto rec = nlohmann::json::parse(line, nullptr, false);
    if (rec.is_discarded())
      throw ParseError("line " + std::to_string(line_no) + ": invalid JSON in " + file.string());
    const std::string example_id = rec.value("example_id", "");
    if (!dataset.contains(example_id))
      throw ValidationError("line " + std::to_string(line_no) + ": unknown example_id '" + example_id + "'");
    const int label = dataset.labels.index_of(rec.value("label", ""));
    if (label < 0)
      throw ValidationError("line " + std::to_string(line_no) + ": unknown label '" +
                            rec.value("label", "") + "'");
    Explanation e;
    e.text = rec.value("text", "");
    if (e.text.empty()) throw ValidationError("line " + std::to_string(line_no) + ": empty text");
    e.source_label = label;
    e.reasonable = label == dataset.by_id(example_id).gold_label;
    pending[example_id][label] = std::move(e);
    auto& prov = provenance[example_id];
    prov.oracle_id = rec.value("oracle_id", "human");
    prov.template_version = template_version_;
    prov.created_at = rec.value("created_at", utc_now_iso8601());
  }

  size_t stored = 0;
  for (auto& [example_id, by_label] : pending) {
    if (static_cast<int>(by_label.size()) != dataset.labels.num_classes) continue;  // incomplete set
    const Example& example = dataset.by_id(example_id);
    ExplanationSet set;
    set.example_id = example_id;
    set.provenance = provenance[example_id];
    set.explanations.push_back(by_label.at(example.gold_label));
    for (auto& [label, expl] : by_label) {
      if (label != example.gold_label) set.explanations.push_back(std::move(expl));
    }
    store(set, example, dataset.labels);
    ++stored;
  }
  return stored;
}

// ---------------------------------------------------------------------------
// Builders

ExplanationSet build_explanation_set(const Example& example, const LabelSpace& labels,
                                     const TaskSchema& schema, ExplanationOracle& oracle,
                                     ExplanationCache& cache) {
  if (example.gold_label < 0 || example.gold_label >= labels.num_classes)
    throw ValidationError("build_explanation_set: example '" + example.id + "' lacks a gold label");
  if (auto cached = cache.lookup(example, labels)) return *cached;

  ExplanationSet set;
  set.example_id = example.id;
  set.provenance = {oracle.id(), kPromptTemplateVersion, utc_now_iso8601()};

  auto query = [&](int label) {
    OracleRequest req{&example, label, render_prompt(example, label, schema, labels)};
    try {
      std::string text = oracle.generate(req);
      if (text.empty()) throw OracleError("empty explanation");
      return text;
    } catch (const Error& e) {
      throw OracleError("example " + example.id + ", label " + labels.names[label] + ": " + e.what());
    }
  };

  Explanation gold;
  gold.text = query(example.gold_label);
  gold.source_label = example.gold_label;
  gold.reasonable = true;
  set.explanations.push_back(std::move(gold));
  for (int label = 0; label < labels.num_classes; ++label) {
    if (label == example.gold_label) continue;
    Explanation e;
    e.text = query(label);
    e.source_label = label;
    e.reasonable = false;
    set.explanations.push_back(std::move(e));
  }

  cache.store(set, example, labels);
  return set;
}

std::vector<ExplanationSet> build_explanation_sets(const std::vector<const Example*>& examples,
                                                   const LabelSpace& labels, const TaskSchema& schema,
                                                   ExplanationOracle& oracle, ExplanationCache& cache,
                                                   int jobs) {
  std::vector<ExplanationSet> out(examples.size());
  if (examples.empty()) return out;
  jobs = std::max(1, std::min<int>(jobs, static_cast<int>(examples.size())));

  if (jobs == 1) {
    for (size_t i = 0; i < examples.size(); ++i) {
      out[i] = build_explanation_set(*examples[i], labels, schema, oracle, cache);
    }
    return out;
  }

  std::atomic<size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= examples.size()) return;
      try {
        out[i] = build_explanation_set(*examples[i], labels, schema, oracle, cache);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
  return out;
}

}  // namespace xal
