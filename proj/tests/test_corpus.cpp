#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>

#include "test_helpers.hpp"
#include "xal/corpus.hpp"

using namespace xal;

namespace {

std::string stance_line(const std::string& id, const std::string& text, const std::string& target,
                        const std::string& label) {
  return "{\"id\": \"" + id + "\", \"text\": \"" + text + "\", \"target\": \"" + target +
         "\", \"label\": \"" + label + "\"}";
}

Dataset make_numbered(int n, int num_classes = 2) {
  Dataset ds;
  ds.schema_id = "synthetic";
  ds.dataset_id = "numbered";
  ds.labels.num_classes = num_classes;
  for (int c = 0; c < num_classes; ++c) ds.labels.names.push_back("class_" + std::to_string(c));
  for (int i = 0; i < n; ++i) {
    Example e;
    e.id = std::to_string(i);
    e.text = "item " + std::to_string(i);
    e.gold_label = i % num_classes;
    ds.examples.push_back(e);
  }
  ds.rebuild_index();
  return ds;
}

}  // namespace

TEST_CASE("empty file loads as empty dataset with a valid label space") {
  testutil::TmpDir tmp("corpus_empty");
  testutil::write_file(tmp.file("empty.jsonl"), "");
  auto ds = load_dataset(tmp.file("empty.jsonl"), "covid19");
  CHECK(ds.examples.empty());
  CHECK(ds.labels.num_classes == 3);
  ds.labels.validate();
}

TEST_CASE("stance schema has the three stance labels in order") {
  const auto& schema = schema_by_id("covid19");
  REQUIRE(schema.label_names.size() == 3);
  CHECK(schema.label_names[0] == "Favor");
  CHECK(schema.label_names[1] == "Neutral");
  CHECK(schema.label_names[2] == "Against");

  testutil::TmpDir tmp("corpus_stance");
  testutil::write_file(tmp.file("s.jsonl"), stance_line("a", "wear a mask", "Face Mask", "Favor") + "\n" +
                                                stance_line("b", "no masks", "Face Mask", "Against") + "\n");
  auto ds = load_dataset(tmp.file("s.jsonl"), "covid19");
  REQUIRE(ds.examples.size() == 2);
  CHECK(ds.examples[0].gold_label == 0);
  CHECK(ds.examples[1].gold_label == 2);
  CHECK(ds.examples[0].target.value() == "Face Mask");
}

TEST_CASE("unknown label is a validation error") {
  testutil::TmpDir tmp("corpus_badlabel");
  testutil::write_file(tmp.file("s.jsonl"), stance_line("a", "text", "T", "Maybe") + "\n");
  CHECK_THROWS_AS(load_dataset(tmp.file("s.jsonl"), "covid19"), ValidationError);
}

TEST_CASE("malformed record reports the line number") {
  testutil::TmpDir tmp("corpus_malformed");
  testutil::write_file(tmp.file("s.jsonl"),
                       stance_line("a", "first", "T", "Favor") + "\nnot json at all\n");
  try {
    load_dataset(tmp.file("s.jsonl"), "covid19");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
}

TEST_CASE("missing required field reports the line") {
  testutil::TmpDir tmp("corpus_missing");
  testutil::write_file(tmp.file("s.jsonl"), "{\"text\": \"hi\", \"label\": \"Favor\"}\n");
  CHECK_THROWS_AS(load_dataset(tmp.file("s.jsonl"), "covid19"), ParseError);  // no target
}

TEST_CASE("records without ids get zero-based positions; duplicates rejected") {
  testutil::TmpDir tmp("corpus_ids");
  testutil::write_file(tmp.file("a.jsonl"),
                       "{\"text\": \"x y\", \"label\": \"class_0\"}\n"
                       "{\"text\": \"z w\", \"label\": \"class_1\"}\n");
  auto ds = load_dataset(tmp.file("a.jsonl"), "synthetic");
  REQUIRE(ds.examples.size() == 2);
  CHECK(ds.examples[0].id == "0");
  CHECK(ds.examples[1].id == "1");
  CHECK(ds.labels.num_classes == 2);

  testutil::write_file(tmp.file("dup.jsonl"),
                       "{\"id\": \"a\", \"text\": \"x\", \"label\": \"class_0\"}\n"
                       "{\"id\": \"a\", \"text\": \"y\", \"label\": \"class_0\"}\n");
  CHECK_THROWS_AS(load_dataset(tmp.file("dup.jsonl"), "synthetic"), ValidationError);
}

TEST_CASE("init_pools zero case labels nothing") {
  auto ds = make_numbered(10);
  auto pool = init_pools(ds.examples, 0, 42);
  CHECK(pool.labeled_ids().empty());
  CHECK(pool.unlabeled_ids().size() == 10);
  pool.check_invariants();
}

TEST_CASE("init_pools splits a 4533-example pool into 100/4433") {
  auto ds = make_numbered(4533);
  auto pool = init_pools(ds.examples, 100, 7);
  CHECK(pool.labeled_ids().size() == 100);
  CHECK(pool.unlabeled_ids().size() == 4433);
  pool.check_invariants();
}

TEST_CASE("init_pools is deterministic per seed and varies across seeds") {
  auto ds = make_numbered(200);
  auto a = init_pools(ds.examples, 50, 123);
  auto b = init_pools(ds.examples, 50, 123);
  CHECK(a.labeled_ids() == b.labeled_ids());
  auto c = init_pools(ds.examples, 50, 124);
  CHECK(a.labeled_ids() != c.labeled_ids());
}

TEST_CASE("init_pools rejects oversized requests") {
  auto ds = make_numbered(5);
  CHECK_THROWS_AS(init_pools(ds.examples, 6, 1), CapacityError);
}

TEST_CASE("move semantics: empty move, batched rounds, error atomicity") {
  auto ds = make_numbered(600);
  auto pool = init_pools(ds.examples, 100, 9);

  auto before = pool.labeled_ids();
  pool.move_to_labeled({}, 1);
  CHECK(pool.labeled_ids() == before);

  // 4 rounds of 100 reach 500 labeled
  for (int round = 1; round <= 4; ++round) {
    std::vector<std::string> batch(pool.unlabeled_ids().begin(), pool.unlabeled_ids().begin() + 100);
    pool.move_to_labeled(batch, round);
  }
  CHECK(pool.labeled_ids().size() == 500);
  CHECK(pool.unlabeled_ids().size() == 100);
  pool.check_invariants();

  // moving an already-labeled id fails without partial mutation
  auto labeled_before = pool.labeled_ids();
  auto unlabeled_before = pool.unlabeled_ids();
  std::vector<std::string> bad{pool.unlabeled_ids().front(), pool.labeled_ids().front()};
  CHECK_THROWS_AS(pool.move_to_labeled(bad, 5), StateError);
  CHECK(pool.labeled_ids() == labeled_before);
  CHECK(pool.unlabeled_ids() == unlabeled_before);

  CHECK_THROWS_AS(pool.move_to_labeled({"no-such-id"}, 5), StateError);
}

TEST_CASE("pool invariants hold under random move sequences and the log replays") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    auto ds = make_numbered(60);
    auto pool = init_pools(ds.examples, 10, trial);
    int round = 0;
    while (!pool.unlabeled_ids().empty()) {
      std::uniform_int_distribution<size_t> dist(1, std::min<size_t>(7, pool.unlabeled_ids().size()));
      size_t take = dist(rng);
      std::vector<std::string> ids(pool.unlabeled_ids().begin(),
                                   pool.unlabeled_ids().begin() + static_cast<long>(take));
      pool.move_to_labeled(ids, ++round);
      pool.check_invariants();
      CHECK(pool.labeled_ids().size() + pool.unlabeled_ids().size() == 60);
    }
    CHECK(pool.replay_matches());
  }
}

TEST_CASE("class distribution counts") {
  auto ds = make_numbered(9, 3);
  auto pool = init_pools(ds.examples, 0, 1);
  auto zero = class_distribution(pool, ds);
  CHECK(zero == std::vector<size_t>{0, 0, 0});

  pool.move_to_labeled({"2"}, 1);  // example 2 has class 2
  auto one = class_distribution(pool, ds);
  CHECK(one == std::vector<size_t>{0, 0, 1});
}

TEST_CASE("class distribution matches an independent recount on a seeded draw") {
  auto ds = make_numbered(200, 2);  // alternating labels: 100 of each
  auto pool = init_pools(ds.examples, 100, 31);
  auto counts = class_distribution(pool, ds);

  // independent pass over labeled ids
  std::vector<size_t> recount(2, 0);
  for (const auto& id : pool.labeled_ids()) recount[static_cast<size_t>(ds.by_id(id).gold_label)]++;
  CHECK(counts == recount);
  CHECK(counts[0] + counts[1] == 100);
}

TEST_CASE("all seven schemas are registered") {
  auto ids = registered_schema_ids();
  std::set<std::string> want{"rte", "mrpc", "mams", "covid19", "deba", "clef", "synthetic"};
  CHECK(std::set<std::string>(ids.begin(), ids.end()) == want);
  CHECK_THROWS_AS(schema_by_id("nope"), ConfigError);
}

TEST_CASE("pair schemas require text_pair") {
  testutil::TmpDir tmp("corpus_pair");
  testutil::write_file(tmp.file("r.jsonl"),
                       "{\"text\": \"a\", \"text_pair\": \"b\", \"label\": \"Entail\"}\n");
  auto ds = load_dataset(tmp.file("r.jsonl"), "rte");
  CHECK(ds.examples[0].text_pair.value() == "b");

  testutil::write_file(tmp.file("bad.jsonl"), "{\"text\": \"a\", \"label\": \"Entail\"}\n");
  CHECK_THROWS_AS(load_dataset(tmp.file("bad.jsonl"), "rte"), ParseError);
}
