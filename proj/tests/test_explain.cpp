#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "test_helpers.hpp"
#include "xal/explain.hpp"

using namespace xal;

namespace {

Example stance_example() {
  Example e;
  e.id = "tw1";
  e.text = "Michigan is fining individuals 500 dollars for not wearing a mask in public.";
  e.target = "Face Mask";
  e.gold_label = 0;  // Favor
  return e;
}

LabelSpace labels3() {
  return LabelSpace{3, {"class_0", "class_1", "class_2"}};
}

RationaleLexicon lexicon3() {
  RationaleLexicon lex;
  lex.groups = {{"apple", "pear"}, {"tiger", "lion"}, {"oak", "elm"}};
  lex.filler = {"the", "a", "some"};
  return lex;
}

Example synthetic_example(const std::string& id, const std::string& rationale, int gold) {
  Example e;
  e.id = id;
  e.text = "the " + rationale + " some a";
  e.gold_label = gold;
  return e;
}

// Wraps another oracle, counting calls and optionally failing the first N.
class CountingOracle final : public ExplanationOracle {
 public:
  CountingOracle(ExplanationOracle& inner, int fail_first = 0)
      : inner_(inner), fail_remaining_(fail_first) {}

  std::string id() const override { return inner_.id(); }
  std::string generate(const OracleRequest& request) override {
    calls_++;
    if (fail_remaining_ > 0) {
      fail_remaining_--;
      throw TransportError("injected failure");
    }
    return inner_.generate(request);
  }
  int calls() const { return calls_; }

 private:
  ExplanationOracle& inner_;
  std::atomic<int> calls_{0};
  int fail_remaining_;
};

}  // namespace

TEST_CASE("stance prompt matches the published template") {
  const auto& schema = schema_by_id("covid19");
  LabelSpace labels{3, schema.label_names};
  auto e = stance_example();
  auto prompt = render_prompt(e, 0, schema, labels);
  CHECK(prompt ==
        e.text +
            ". The stance of this tweet to the target Face Mask is Favor, explain the reason "
            "within 50 words");
  // purity: byte-identical on repeat
  CHECK(render_prompt(e, 0, schema, labels) == prompt);
}

TEST_CASE("relevance prompt asks for 100 words") {
  const auto& schema = schema_by_id("clef");
  LabelSpace labels{2, schema.label_names};
  Example e;
  e.id = "d1";
  e.text = "A renal cortical scanning agent study.";
  e.target = "Procalcitonin diagnosis";
  e.gold_label = 1;
  auto prompt = render_prompt(e, 1, schema, labels);
  CHECK(prompt.find("within 100 words") != std::string::npos);
  CHECK(prompt.find("Not Relevant") != std::string::npos);
  CHECK(prompt.find("Procalcitonin diagnosis") != std::string::npos);
}

TEST_CASE("pair task prompts substitute both sentences") {
  const auto& schema = schema_by_id("rte");
  LabelSpace labels{2, schema.label_names};
  Example e;
  e.id = "r1";
  e.text = "first sentence";
  e.text_pair = "second sentence";
  e.gold_label = 0;
  auto prompt = render_prompt(e, 0, schema, labels);
  CHECK(prompt == "Sentence 1: first sentence. Sentence 2: second sentence. Sentence 1 can Entail "
                  "sentence 2, explain the reason within 50 words");
  CHECK_THROWS_AS(render_prompt(e, 5, schema, labels), ValidationError);
}

TEST_CASE("mock explanations carry true signal for gold and misleading signal otherwise") {
  auto labels = labels3();
  auto lex = lexicon3();
  lex.validate(3);
  auto e = synthetic_example("s1", "tiger", 1);

  auto gold = mock_generate(e, 1, labels, lex);
  CHECK(gold.find("tiger") != std::string::npos);  // the planted rationale token
  CHECK(gold.find("class_1") != std::string::npos);

  auto wrong = mock_generate(e, 2, labels, lex);
  // contains a class_2 token, and that token is absent from the text
  bool has_group2_token = false;
  for (const auto& t : lex.groups[2]) {
    if (wrong.find(t) != std::string::npos) {
      has_group2_token = true;
      CHECK(e.text.find(t) == std::string::npos);
    }
  }
  CHECK(has_group2_token);

  CHECK(mock_generate(e, 1, labels, lex) == gold);  // purity
  CHECK(mock_generate(e, 2, labels, lex) == wrong);
}

TEST_CASE("lexicon validation rejects overlapping groups") {
  RationaleLexicon bad;
  bad.groups = {{"apple"}, {"apple", "lion"}};
  CHECK_THROWS_AS(bad.validate(2), ConfigError);
}

TEST_CASE("build_explanation_set queries once per label and caches immutably") {
  testutil::TmpDir tmp("explain_cache");
  auto labels = labels3();
  MockOracle mock(labels, lexicon3());
  CountingOracle oracle(mock);
  ExplanationCache cache(tmp.path(), "ds1");
  const auto& schema = schema_by_id("synthetic");

  auto e = synthetic_example("ex7", "oak", 2);
  auto set = build_explanation_set(e, labels, schema, oracle, cache);
  CHECK(oracle.calls() == 3);  // C=3 -> one query per candidate label
  validate_explanation_set(set, e.gold_label, 3);
  CHECK(set.explanations[0].reasonable);
  CHECK(set.explanations[0].source_label == 2);
  CHECK(set.explanations.size() == 3);

  const auto entry = cache.entry_path("ex7");
  REQUIRE(std::filesystem::exists(entry));
  const std::string bytes_before = read_text_file(entry);

  // cached example: zero further calls, identical set, identical bytes
  auto again = build_explanation_set(e, labels, schema, oracle, cache);
  CHECK(oracle.calls() == 3);
  CHECK(read_text_file(entry) == bytes_before);
  CHECK(again.explanations[0].text == set.explanations[0].text);
  CHECK(again.explanations[1].text == set.explanations[1].text);
  CHECK(again.explanations[2].text == set.explanations[2].text);
  CHECK(again.provenance.created_at == set.provenance.created_at);
}

TEST_CASE("oracle failure mid-set caches nothing") {
  testutil::TmpDir tmp("explain_partial");
  auto labels = labels3();
  MockOracle mock(labels, lexicon3());
  CountingOracle flaky(mock, 2);  // first two calls fail
  ExplanationCache cache(tmp.path(), "ds1");
  const auto& schema = schema_by_id("synthetic");

  auto e = synthetic_example("px", "apple", 0);
  CHECK_THROWS_AS(build_explanation_set(e, labels, schema, flaky, cache), OracleError);
  CHECK_FALSE(std::filesystem::exists(cache.entry_path("px")));
  CHECK_THROWS_AS(build_explanation_set(e, labels, schema, flaky, cache), OracleError);
  CHECK_FALSE(std::filesystem::exists(cache.entry_path("px")));

  // a later retry succeeds and completes the set
  auto set = build_explanation_set(e, labels, schema, flaky, cache);
  validate_explanation_set(set, 0, 3);
  CHECK(std::filesystem::exists(cache.entry_path("px")));
}

TEST_CASE("template version bump invalidates cache entries") {
  testutil::TmpDir tmp("explain_version");
  auto labels = labels3();
  MockOracle mock(labels, lexicon3());
  const auto& schema = schema_by_id("synthetic");
  auto e = synthetic_example("v1", "pear", 0);

  {
    CountingOracle oracle(mock);
    ExplanationCache cache(tmp.path(), "ds1", "v1");
    build_explanation_set(e, labels, schema, oracle, cache);
    CHECK(oracle.calls() == 3);
  }
  {
    CountingOracle oracle(mock);
    ExplanationCache cache(tmp.path(), "ds1", "v2");
    build_explanation_set(e, labels, schema, oracle, cache);
    CHECK(oracle.calls() == 3);  // rebuilt under the new version
  }
}

TEST_CASE("audit log line count equals non-cached oracle calls") {
  testutil::TmpDir tmp("explain_audit");
  auto labels = labels3();
  MockOracle mock(labels, lexicon3());
  mock.set_audit_log(tmp.file("audit.jsonl"));
  ExplanationCache cache(tmp.path() / "cache", "ds1");
  const auto& schema = schema_by_id("synthetic");

  std::vector<Example> examples;
  for (int i = 0; i < 4; ++i) {
    examples.push_back(synthetic_example("a" + std::to_string(i), "lion", 1));
  }
  for (const auto& e : examples) build_explanation_set(e, labels, schema, mock, cache);
  // second pass is fully cached
  for (const auto& e : examples) build_explanation_set(e, labels, schema, mock, cache);

  // independent recount: expected calls = 4 examples x 3 labels, once
  size_t lines = 0;
  std::istringstream in(read_text_file(tmp.file("audit.jsonl")));
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) ++lines;
  }
  CHECK(lines == 12);
}

TEST_CASE("parallel builders of disjoint examples are safe") {
  testutil::TmpDir tmp("explain_parallel");
  auto labels = labels3();
  MockOracle mock(labels, lexicon3());
  ExplanationCache cache(tmp.path(), "ds1");
  const auto& schema = schema_by_id("synthetic");

  std::vector<Example> storage;
  for (int i = 0; i < 24; ++i) {
    storage.push_back(synthetic_example("p" + std::to_string(i), "elm", 2));
  }
  std::vector<const Example*> ptrs;
  for (const auto& e : storage) ptrs.push_back(&e);

  auto sets = build_explanation_sets(ptrs, labels, schema, mock, cache, 4);
  REQUIRE(sets.size() == 24);
  for (size_t i = 0; i < sets.size(); ++i) {
    CHECK(sets[i].example_id == storage[i].id);
    validate_explanation_set(sets[i], 2, 3);
    CHECK(std::filesystem::exists(cache.entry_path(storage[i].id)));
  }
}

TEST_CASE("human-written flat JSONL imports through the cache") {
  testutil::TmpDir tmp("explain_import");
  Dataset ds;
  ds.schema_id = "synthetic";
  ds.dataset_id = "ds1";
  ds.labels = labels3();
  ds.examples.push_back(synthetic_example("h1", "apple", 0));
  ds.examples.push_back(synthetic_example("h2", "tiger", 1));
  ds.rebuild_index();

  std::string flat;
  for (const auto& e : ds.examples) {
    for (int label = 0; label < 3; ++label) {
      nlohmann::json rec{{"example_id", e.id},
                         {"label", ds.labels.names[label]},
                         {"text", "human explanation for " + e.id + " label " + std::to_string(label)},
                         {"oracle_id", "human"}};
      flat += rec.dump() + "\n";
    }
  }
  // plus one incomplete set that must not be imported
  flat += nlohmann::json{{"example_id", "h1"}, {"label", "class_0"}, {"text", "dup"}}.dump() + "\n";
  nlohmann::json incomplete{{"example_id", "h2"}, {"label", "class_0"}, {"text", "x"}};
  testutil::write_file(tmp.file("human.jsonl"), flat);

  ExplanationCache cache(tmp.path() / "cache", "ds1");
  const size_t imported = cache.import_flat_jsonl(tmp.file("human.jsonl"), ds);
  CHECK(imported == 2);

  auto cached = cache.lookup(ds.examples[0], ds.labels);
  REQUIRE(cached.has_value());
  CHECK(cached->provenance.oracle_id == "human");
  validate_explanation_set(*cached, 0, 3);

  testutil::write_file(tmp.file("bad.jsonl"), "{\"example_id\": \"nope\", \"label\": \"class_0\", \"text\": \"x\"}\n");
  CHECK_THROWS_AS(cache.import_flat_jsonl(tmp.file("bad.jsonl"), ds), ValidationError);
}

TEST_CASE("http oracle retries with backoff and surfaces transport errors") {
  httplib::Server server;
  std::atomic<int> hits{0};
  server.Post("/explain", [&](const httplib::Request& req, httplib::Response& res) {
    const int n = ++hits;
    auto body = nlohmann::json::parse(req.body);
    if (n <= 2) {
      res.status = 500;
      return;
    }
    res.set_content(nlohmann::json{{"text", "served: " + body["prompt"].get<std::string>()}}.dump(),
                    "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread server_thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  std::vector<double> sleeps;
  OracleTransportConfig cfg;
  cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/explain";
  cfg.max_attempts = 3;
  cfg.initial_backoff_seconds = 1.0;
  cfg.sleeper = [&](double s) { sleeps.push_back(s); };

  HttpOracle oracle(cfg);
  auto text = oracle.oracle_query("why so");
  CHECK(text == "served: why so");
  CHECK(hits == 3);
  // exponential backoff: 1s then 2s
  REQUIRE(sleeps.size() == 2);
  CHECK(sleeps[0] == doctest::Approx(1.0));
  CHECK(sleeps[1] == doctest::Approx(2.0));

  // now a permanently failing endpoint: cap+1 failures -> transport error
  hits = 100;  // server keeps failing? it would succeed; use a closed port instead
  server.stop();
  server_thread.join();

  OracleTransportConfig dead = cfg;
  dead.sleeper = [](double) {};
  HttpOracle down(dead);
  try {
    down.oracle_query("anyone there");
    FAIL("expected TransportError");
  } catch (const TransportError& e) {
    CHECK(std::string(e.what()).find("3 attempts") != std::string::npos);
  }
}

TEST_CASE("empty oracle response is an oracle-content error") {
  httplib::Server server;
  server.Post("/explain", [&](const httplib::Request&, httplib::Response& res) {
    res.set_content(nlohmann::json{{"text", ""}}.dump(), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread server_thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  OracleTransportConfig cfg;
  cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/explain";
  cfg.sleeper = [](double) {};
  HttpOracle oracle(cfg);
  CHECK_THROWS_AS(oracle.oracle_query("hello"), OracleError);

  server.stop();
  server_thread.join();
}
