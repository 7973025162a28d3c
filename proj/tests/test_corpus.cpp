#include <doctest.h>

#include <algorithm>
#include <set>

#include "cspeech/common.hpp"
#include "cspeech/corpus.hpp"
#include "cspeech/textio.hpp"
#include "tempdir.hpp"

using namespace cspeech;

namespace {

std::vector<CorpusRecord> make_records(std::size_t n, const std::string& prefix = "r") {
  std::vector<CorpusRecord> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back({prefix + std::to_string(i), "hate " + std::to_string(i), "reply " + std::to_string(i),
                   Source::synthetic, Split::unassigned});
  return out;
}

ConversationThread thread_with(std::size_t followups, std::size_t hateful) {
  ConversationThread t;
  t.hate_comment = {"h", "hate", std::nullopt, Source::reddit_live, Split::unassigned};
  t.reply_text = "reply";
  t.hater_id = "hater";
  for (std::size_t i = 0; i < followups; ++i) t.followups.push_back({"u" + std::to_string(i), "text", i < hateful});
  return t;
}

}  // namespace

TEST_CASE("load_corpus reads normalized JSONL in file order") {
  TempDir dir;
  auto recs = make_records(3);
  write_corpus_jsonl(dir / "corpus.jsonl", recs);
  auto loaded = load_corpus(dir / "corpus.jsonl", "jsonl");
  CHECK(loaded == recs);
  // Source-forcing formats read the same layout.
  auto forced = load_corpus(dir / "corpus.jsonl", "reddit_live");
  REQUIRE(forced.size() == 3);
  CHECK(forced[0].source == Source::reddit_live);
}

TEST_CASE("load_corpus names the line of a record with empty hate_text") {
  TempDir dir;
  textio::write_file(dir / "bad.jsonl",
                     R"({"id":"a","hate_text":"x","reply_text":"y","source":"synthetic","split":"unassigned"})"
                     "\n"
                     R"({"id":"b","hate_text":"","reply_text":"y","source":"synthetic","split":"unassigned"})"
                     "\n");
  try {
    load_corpus(dir / "bad.jsonl", "jsonl");
    FAIL("expected InputError");
  } catch (const InputError& e) {
    CHECK(e.line() == 2);
  }
}

TEST_CASE("load_corpus rejects unknown formats and duplicate ids") {
  TempDir dir;
  write_corpus_jsonl(dir / "c.jsonl", make_records(2));
  CHECK_THROWS_AS(load_corpus(dir / "c.jsonl", "tumblr"), ConfigError);

  textio::write_file(dir / "dup.jsonl",
                     R"({"id":"a","hate_text":"x","reply_text":"y","source":"synthetic","split":"train"})"
                     "\n"
                     R"({"id":"a","hate_text":"z","reply_text":"y","source":"synthetic","split":"train"})"
                     "\n");
  CHECK_THROWS_AS(load_corpus(dir / "dup.jsonl", "jsonl"), InputError);
}

TEST_CASE("benchmark CSV importer expands hate marks into pairs") {
  TempDir dir;
  textio::write_file(dir / "reddit.csv",
                     "id,text,hate_speech_idx,response\n"
                     "c1,\"1. you people are vermin\n2. \tcalm down\n3. \t\tgo back home\",\"[1, 3]\","
                     "\"['That is dehumanizing.', \"\"Please don't say that.\"\"]\"\n"
                     "c2,\"1. nice weather\",n/a,n/a\n");
  auto recs = load_corpus(dir / "reddit.csv", "benchmark_reddit");
  REQUIRE(recs.size() == 4);
  CHECK(recs[0].id == "c1-1-1");
  CHECK(recs[0].hate_text == "you people are vermin");
  CHECK(recs[1].reply_text == "Please don't say that.");
  CHECK(recs[2].hate_text == "go back home");
  CHECK(recs[3].source == Source::benchmark_reddit);
}

TEST_CASE("benchmark CSV importer reports out-of-range marks with their line") {
  TempDir dir;
  textio::write_file(dir / "gab.csv", "id,text,hate_speech_idx,response\nc1,\"1. a\",[4],\"['r']\"\n");
  try {
    load_corpus(dir / "gab.csv", "benchmark_gab");
    FAIL("expected InputError");
  } catch (const InputError& e) {
    CHECK(e.line() == 2);
  }
}

TEST_CASE("CONAN and Multi-CONAN importers") {
  TempDir dir;
  textio::write_file(dir / "conan.json",
                     R"({"conan":[{"cn_id":"X1","hateSpeech":"h1","counterSpeech":"c1"},)"
                     R"({"cn_id":"X2","hateSpeech":"h2","counterSpeech":"c2"}]})");
  auto conan = load_corpus(dir / "conan.json", "conan");
  REQUIRE(conan.size() == 2);
  CHECK(conan[1].id == "X2");
  CHECK(conan[1].source == Source::conan);

  textio::write_file(dir / "multi.csv",
                     "INDEX,HATE_SPEECH,COUNTER_NARRATIVE,TARGET\n1,\"h, one\",c one,MIGRANTS\n2,h two,c two,JEWS\n");
  auto multi = load_corpus(dir / "multi.csv", "multiconan");
  REQUIRE(multi.size() == 2);
  CHECK(multi[0].hate_text == "h, one");
  CHECK(multi[0].id == "multiconan-1");
}

TEST_CASE("extract_pairs enumerates (hate, response) combinations") {
  RawConversation one{"c", {"hate A", "fine"}, {{0, {"r1", "r2", "r3"}}}};
  CHECK(extract_pairs(one, Source::synthetic).size() == 3);

  RawConversation two{"c", {"hate A", "hate B"}, {{0, {"a1", "a2"}}, {1, {"b1", "b2"}}}};
  auto recs = extract_pairs(two, Source::synthetic);
  REQUIRE(recs.size() == 4);
  for (const auto& r : recs) {
    // Responses stay with their own hate comment.
    if (r.reply_text->front() == 'a') CHECK(r.hate_text == "hate A");
    if (r.reply_text->front() == 'b') CHECK(r.hate_text == "hate B");
  }

  RawConversation none{"c", {"hate A"}, {{0, {}}}};
  CHECK(extract_pairs(none, Source::synthetic).empty());
  RawConversation unmarked{"c", {"hello"}, {}};
  CHECK(extract_pairs(unmarked, Source::synthetic).empty());
}

TEST_CASE("split_corpus sizes and determinism") {
  auto recs = make_records(10);
  auto a = split_corpus(recs, 0.8, 13);
  CHECK(a.train.size() == 8);
  CHECK(a.test.size() == 2);
  auto b = split_corpus(recs, 0.8, 13);
  CHECK(a.train == b.train);
  CHECK(a.test == b.test);

  auto big = split_corpus(make_records(14208), 0.8, 1);
  CHECK(big.train.size() == 11366);
  CHECK(big.test.size() == 2842);

  CHECK_THROWS_AS(split_corpus(recs, 0.0, 1), ConfigError);
  CHECK_THROWS_AS(split_corpus(recs, 1.0, 1), ConfigError);
  CHECK_THROWS_AS(split_corpus({}, 0.5, 1), ConfigError);
}

TEST_CASE("split_corpus is a partition and ignores ingestion order (property)") {
  Rng rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.index(60);
    const double fraction = 0.05 + 0.9 * rng.uniform();
    const auto seed = rng.next();
    auto recs = make_records(n, "t" + std::to_string(trial) + "-");
    auto s = split_corpus(recs, fraction, seed);
    CHECK(s.train.size() == static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n))));
    std::set<std::string> ids;
    for (auto& r : s.train) {
      CHECK(r.split == Split::train);
      ids.insert(r.id);
    }
    for (auto& r : s.test) {
      CHECK(r.split == Split::test);
      ids.insert(r.id);
    }
    CHECK(ids.size() == n);

    auto shuffled = recs;
    std::reverse(shuffled.begin(), shuffled.end());
    auto s2 = split_corpus(shuffled, fraction, seed);
    std::set<std::string> train1, train2;
    for (auto& r : s.train) train1.insert(r.id);
    for (auto& r : s2.train) train2.insert(r.id);
    CHECK(train1 == train2);
  }
}

TEST_CASE("label_incivility rule") {
  CHECK(label_incivility(thread_with(10, 0)) == Incivility::low);
  CHECK(label_incivility(thread_with(4, 3)) == Incivility::high);
  CHECK(label_incivility(thread_with(0, 0)) == Incivility::medium);
  CHECK(label_incivility(thread_with(3, 0)) == Incivility::medium);  // not popular enough
  CHECK(label_incivility(thread_with(4, 1)) == Incivility::medium);  // 0.25 is not above the cutoff
  IncivilityRule bad;
  bad.popularity_cutoffs = {5, 5};
  CHECK_THROWS_AS(label_incivility(thread_with(1, 0), bad), ConfigError);
}

TEST_CASE("label_incivility depends only on counts (property)") {
  Rng rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = rng.index(12);
    const std::size_t h = n ? rng.index(n + 1) : 0;
    auto t = thread_with(n, h);
    const auto base = label_incivility(t);
    for (auto& f : t.followups) {
      f.text = "random words " + std::to_string(rng.next());
      f.author_id = "x" + std::to_string(rng.index(3));
    }
    std::reverse(t.followups.begin(), t.followups.end());
    t.reply_text = "different";
    CHECK(label_incivility(t) == base);
  }
}

TEST_CASE("label_reentry definitions") {
  auto t = thread_with(3, 0);
  CHECK(label_reentry(t) == Reentry::no_reentry);

  t.followups = {{"hater", "calm", false}, {"other", "x", false}, {"hater", "you idiots", true}};
  CHECK(label_reentry(t) == Reentry::hate_reentry);

  t.followups = {{"hater", "fair point", false}};
  CHECK(label_reentry(t) == Reentry::nonhate_reentry);

  t.hater_id.reset();
  CHECK_THROWS_AS(label_reentry(t), InputError);
}

TEST_CASE("label_reentry is exhaustive over small threads (property)") {
  // Every combination of up to 4 followups by {hater, other} x {hateful, not}.
  for (int n = 0; n <= 4; ++n) {
    const int combos = 1 << (2 * n);
    for (int mask = 0; mask < combos; ++mask) {
      ConversationThread t = thread_with(0, 0);
      bool hater_any = false, hater_hateful = false;
      for (int k = 0; k < n; ++k) {
        const bool by_hater = (mask >> (2 * k)) & 1;
        const bool hateful = (mask >> (2 * k + 1)) & 1;
        t.followups.push_back({by_hater ? "hater" : "other", "t", hateful});
        hater_any |= by_hater;
        hater_hateful |= by_hater && hateful;
      }
      const auto label = label_reentry(t);
      const int hits = (label == Reentry::hate_reentry) + (label == Reentry::no_reentry) +
                       (label == Reentry::nonhate_reentry);
      CHECK(hits == 1);
      if (!hater_any) CHECK(label == Reentry::no_reentry);
      else if (hater_hateful) CHECK(label == Reentry::hate_reentry);
      else CHECK(label == Reentry::nonhate_reentry);
    }
  }
}

TEST_CASE("outcomes.jsonl keeps nulls for absent labels") {
  TempDir dir;
  std::vector<OutcomeExample> ex = {{"a", "h", "r", Incivility::low, std::nullopt},
                                    {"b", "h2", "r2", std::nullopt, Reentry::nonhate_reentry}};
  write_outcomes_jsonl(dir / "o.jsonl", ex);
  const auto text = textio::read_file(dir / "o.jsonl");
  CHECK(text.find(R"("reentry":null)") != std::string::npos);
  CHECK(read_outcomes_jsonl(dir / "o.jsonl") == ex);

  std::vector<OutcomeExample> unlabeled = {{"c", "h", "r", std::nullopt, std::nullopt}};
  CHECK_THROWS_AS(write_outcomes_jsonl(dir / "bad.jsonl", unlabeled), InputError);
}

TEST_CASE("threads file labels both outcomes") {
  TempDir dir;
  textio::write_file(dir / "threads.jsonl",
                     R"({"id":"t1","hate_text":"h","reply_text":"r","hater_id":"u1","followups":[)"
                     R"({"author_id":"u1","text":"ok","is_hateful":false},{"author_id":"u2","text":"a","is_hateful":false},)"
                     R"({"author_id":"u3","text":"b","is_hateful":false},{"author_id":"u4","text":"c","is_hateful":false},)"
                     R"({"author_id":"u5","text":"d","is_hateful":false}]})"
                     "\n"
                     R"({"id":"t2","hate_text":"h","reply_text":"r","hater_id":null,"followups":[]})"
                     "\n");
  auto labeled = label_threads(read_threads_jsonl(dir / "threads.jsonl"));
  REQUIRE(labeled.size() == 2);
  CHECK(labeled[0].incivility == Incivility::low);
  CHECK(labeled[0].reentry == Reentry::nonhate_reentry);
  CHECK(labeled[1].incivility == Incivility::medium);
  CHECK_FALSE(labeled[1].reentry.has_value());
}
