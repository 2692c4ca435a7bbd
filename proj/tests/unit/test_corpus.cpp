#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>

#include "datml/corpus/corpus.hpp"
#include "datml/corpus/generator.hpp"
#include "datml/corpus/io.hpp"
#include "datml/error.hpp"
#include "doctest.h"

using namespace datml;

namespace {

std::string serialize(const Corpus& c) {
  std::ostringstream out;
  write_corpus(out, c);
  return out.str();
}

Turn make_turn(Speaker s, const std::string& domain, const std::string& text) {
  Turn t;
  t.speaker = s;
  t.domain = domain;
  t.tokens = tokenize(text);
  return t;
}

Dialogue make_dialogue(const std::string& id, const std::vector<std::string>& domains) {
  Dialogue d;
  d.id = id;
  for (const auto& dom : domains) {
    d.turns.push_back(make_turn(Speaker::kUser, dom, "hello"));
    d.turns.push_back(make_turn(Speaker::kSystem, dom, "hi"));
    d.domains.insert(dom);
  }
  return d;
}

Corpus numbered_pool(std::size_t n) {
  Corpus pool;
  for (std::size_t i = 0; i < n; ++i) pool.push_back(make_dialogue("d" + std::to_string(i), {"x"}));
  return pool;
}

bool contains_tokens(const std::vector<std::string>& hay, const std::vector<std::string>& needle) {
  return std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end();
}

}  // namespace

TEST_CASE("tokenize lowercases and splits punctuation") {
  CHECK(tokenize("Book Golden Palace, please!") ==
        std::vector<std::string>{"book", "golden", "palace", ",", "please", "!"});
  CHECK(tokenize("  ").empty());
}

TEST_CASE("generate_corpus is deterministic in its seed") {
  auto spec = default_corpus_spec(4, 20);
  spec.multi_domain_fraction = 0.2;
  const auto a = generate_corpus(spec);
  const auto b = generate_corpus(spec);
  CHECK(serialize(a.dialogues) == serialize(b.dialogues));
  spec.seed += 1;
  const auto c = generate_corpus(spec);
  CHECK(serialize(a.dialogues) != serialize(c.dialogues));
}

TEST_CASE("generate_corpus produces domains x dialogues") {
  auto spec = default_corpus_spec(3, 100);
  const auto g = generate_corpus(spec);
  CHECK(g.dialogues.size() == 300);
  for (const auto& d : g.dialogues) CHECK(d.domains.size() == 1);
}

TEST_CASE("generated dialogues satisfy the data-model invariants") {
  auto spec = default_corpus_spec(5, 40);
  spec.multi_domain_fraction = 0.3;
  spec.max_exchanges = 4;
  const auto g = generate_corpus(spec);
  validate_knowledge_base(g.kb);
  std::size_t annotations = 0, in_kb = 0, multi = 0;
  std::set<std::string> ids;
  for (const auto& d : g.dialogues) {
    CHECK_NOTHROW(validate_dialogue(d));
    CHECK(ids.insert(d.id).second);
    multi += d.domains.size() > 1;
    for (const auto& t : d.turns) {
      if (t.speaker == Speaker::kUser) CHECK(t.entities.empty());
      const auto kb_values = g.kb.values(t.domain);
      for (const auto& e : t.entities) {
        ++annotations;
        in_kb += kb_values.count(e);
      }
    }
  }
  CHECK(annotations > 0);
  CHECK(in_kb == annotations);
  CHECK(multi == 5 * 12);
}

TEST_CASE("spec validation") {
  SUBCASE("fewer than three domains") {
    CHECK_THROWS_AS(generate_corpus(default_corpus_spec(2, 10)), InvalidArgument);
  }
  SUBCASE("template referencing an undeclared slot") {
    auto spec = default_corpus_spec(3, 10);
    spec.domains[0].exchanges[0].system.push_back("{colour} is nice");
    CHECK_THROWS_WITH_AS(validate_spec(spec), doctest::Contains("colour"), InvalidArgument);
  }
  SUBCASE("value shared across domains") {
    auto spec = default_corpus_spec(3, 10);
    spec.domains[1].slots[1].values.push_back("north");
    CHECK_THROWS_AS(validate_spec(spec), InvalidArgument);
  }
}

TEST_CASE("split_for_target examples") {
  Corpus corpus{make_dialogue("a", {"A"}), make_dialogue("b", {"B"}), make_dialogue("c", {"C"}),
                make_dialogue("ab", {"A", "B"}), make_dialogue("bc", {"B", "C"}),
                make_dialogue("c2", {"C"}), make_dialogue("c3", {"C"})};
  const auto split = split_for_target(corpus, "C", {}, 271);
  std::set<std::string> source_ids;
  for (const auto& d : split.source) {
    source_ids.insert(d.id);
    CHECK_FALSE(d.has_domain("C"));
  }
  CHECK(source_ids == std::set<std::string>{"a", "b", "ab"});

  std::set<std::string> target_ids;
  std::size_t total = 0;
  for (const auto* pool : {&split.target_train_pool, &split.target_validation, &split.target_test}) {
    for (const auto& d : *pool) {
      target_ids.insert(d.id);
      ++total;
    }
  }
  CHECK(total == target_ids.size());
  CHECK(target_ids == std::set<std::string>{"c", "bc", "c2", "c3"});

  CHECK_THROWS_AS(split_for_target(corpus, "Z", {}, 271), InvalidArgument);
  Corpus two{make_dialogue("a", {"A"}), make_dialogue("c", {"C"})};
  CHECK_THROWS_AS(split_for_target(two, "C", {}, 271), InvalidArgument);
}

TEST_CASE("no target-domain entity leaks into the source set") {
  auto spec = default_corpus_spec(5, 30);
  spec.multi_domain_fraction = 0.4;
  const auto g = generate_corpus(spec);
  for (const auto& target : corpus_domains(g.dialogues)) {
    const auto split = split_for_target(g.dialogues, target, {}, 271);
    std::size_t violations = 0;
    for (const auto& d : split.source) {
      for (const auto& t : d.turns) {
        for (const auto& e : g.kb.values(target)) violations += contains_tokens(t.tokens, tokenize(e.value));
      }
    }
    CHECK_MESSAGE(violations == 0, "target " << target);
  }
}

TEST_CASE("sample_fewshot") {
  SUBCASE("ten percent of 200") { CHECK(sample_fewshot(numbered_pool(200), 0.10).size() == 20); }
  SUBCASE("one percent of 150 rounds up") { CHECK(sample_fewshot(numbered_pool(150), 0.01).size() == 2); }
  SUBCASE("default seed 271 is reproducible") {
    const auto pool = numbered_pool(120);
    CHECK(serialize(sample_fewshot(pool, 0.05)) == serialize(sample_fewshot(pool, 0.05, 271)));
    CHECK(serialize(sample_fewshot(pool, 0.05)) != serialize(sample_fewshot(pool, 0.05, 272)));
  }
  SUBCASE("fraction outside (0, 1]") {
    CHECK_THROWS_AS(sample_fewshot(numbered_pool(10), 0.0), InvalidArgument);
    CHECK_THROWS_AS(sample_fewshot(numbered_pool(10), 1.5), InvalidArgument);
    CHECK_THROWS_AS(sample_fewshot(Corpus{}, 0.5), InvalidArgument);
  }
  SUBCASE("subset of the pool with ceil-sized output") {
    for (std::size_t n : {1u, 7u, 33u, 150u}) {
      const auto pool = numbered_pool(n);
      std::set<std::string> pool_ids;
      for (const auto& d : pool) pool_ids.insert(d.id);
      for (double f : {0.01, 0.03, 0.05, 0.1, 0.5, 1.0}) {
        const auto s = sample_fewshot(pool, f, 271 + n);
        CHECK(s.size() == std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(f * n - 1e-9))));
        std::set<std::string> ids;
        for (const auto& d : s) {
          CHECK(pool_ids.count(d.id));
          ids.insert(d.id);
        }
        CHECK(ids.size() == s.size());
      }
    }
  }
}

TEST_CASE("extract_entities") {
  KnowledgeBase kb;
  kb.tables["restaurant"] = {{{"name", "golden palace"}, {"area", "north"}},
                             {{"name", "palace"}, {"area", "south"}}};
  SUBCASE("single match") {
    CHECK(extract_entities(tokenize("book golden palace for two"), "restaurant", kb) ==
          EntitySet{{"name", "golden palace"}});
  }
  SUBCASE("no match") { CHECK(extract_entities(tokenize("hello there"), "restaurant", kb).empty()); }
  SUBCASE("longest match wins") {
    CHECK(extract_entities(tokenize("golden palace"), "restaurant", kb) == EntitySet{{"name", "golden palace"}});
  }
  SUBCASE("case-insensitive and token-bounded") {
    CHECK(extract_entities({"Golden", "PALACE", "in", "the", "North"}, "restaurant", kb) ==
          EntitySet{{"name", "golden palace"}, {"area", "north"}});
    CHECK(extract_entities(tokenize("northern palaces"), "restaurant", kb).empty());
  }
  SUBCASE("unknown domain") { CHECK(extract_entities(tokenize("north"), "hotel", kb).empty()); }
  SUBCASE("idempotent and KB-bounded on generated text") {
    const auto g = generate_corpus(default_corpus_spec(4, 15));
    for (const auto& d : g.dialogues) {
      for (const auto& t : d.turns) {
        const auto once = extract_entities(t.tokens, t.domain, g.kb);
        CHECK(once == extract_entities(t.tokens, t.domain, g.kb));
        for (const auto& e : once) CHECK(g.kb.values(t.domain).count(e));
      }
    }
  }
}

TEST_CASE("corpus files round trip and reject malformed input") {
  auto spec = default_corpus_spec(3, 12);
  spec.multi_domain_fraction = 0.25;
  const auto g = generate_corpus(spec);
  const auto dir = std::filesystem::temp_directory_path() / "datml_test_corpus";
  std::filesystem::create_directories(dir);
  save_corpus(dir / "corpus.jsonl", g.dialogues);
  save_knowledge_base(dir / "kb.json", g.kb);
  CHECK(serialize(load_corpus(dir / "corpus.jsonl")) == serialize(g.dialogues));
  CHECK(load_knowledge_base(dir / "kb.json").tables == g.kb.tables);

  std::istringstream odd(R"({"dialogue_id":"x","domains":["a"],"turns":[{"speaker":"usr","domain":"a","text":"hi","entities":[]}]})");
  CHECK_THROWS_AS(read_corpus(odd), InvalidArgument);
  std::istringstream wrong_speaker(
      R"({"dialogue_id":"x","domains":["a"],"turns":[{"speaker":"sys","domain":"a","text":"hi","entities":[]},{"speaker":"usr","domain":"a","text":"yo","entities":[]}]})");
  CHECK_THROWS_AS(read_corpus(wrong_speaker), InvalidArgument);
  std::istringstream missing_entity(
      R"({"dialogue_id":"x","domains":["a"],"turns":[{"speaker":"usr","domain":"a","text":"hi","entities":[]},{"speaker":"sys","domain":"a","text":"yo","entities":[{"slot":"name","value":"zed"}]}]})");
  CHECK_THROWS_AS(read_corpus(missing_entity), InvalidArgument);
  std::istringstream garbage("{not json");
  CHECK_THROWS_AS(read_corpus(garbage), InvalidArgument);
  std::filesystem::remove_all(dir);
}

TEST_CASE("vocabulary") {
  const auto g = generate_corpus(default_corpus_spec(3, 5));
  const auto v = Vocabulary::build({&g.dialogues});
  CHECK(v.token(Vocabulary::kPad) == "<pad>");
  CHECK(v.token(Vocabulary::kEos) == "</s>");
  CHECK(v.id("never-seen-token") == Vocabulary::kUnk);
  for (const auto& d : g.dialogues) {
    for (const auto& t : d.turns) {
      for (auto id : v.encode(t.tokens)) CHECK(id >= 4);
    }
  }
  CHECK(Vocabulary::from_tokens(v.tokens()).tokens() == v.tokens());
  CHECK_THROWS_AS(Vocabulary::from_tokens({"a", "b"}), InvalidArgument);
}
