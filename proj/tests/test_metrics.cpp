#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "cspeech/common.hpp"
#include "cspeech/metrics.hpp"
#include "metric_oracles.hpp"

using namespace cspeech;
using namespace cspeech::metrics;

namespace {

// Hand-set 2-D vectors for the BERTScore worked examples.
class TableEmbedder final : public Embedder {
 public:
  std::vector<Matrix> embed(std::span<const Tokens> sequences) const override {
    std::vector<Matrix> out;
    for (const auto& seq : sequences) {
      Matrix m;
      for (const auto& t : seq) {
        if (t == "x") m.push_back({1.0, 0.0});
        else if (t == "y") m.push_back({1.0, 0.0});
        else if (t == "u") m.push_back({1.0, 0.0});
        else if (t == "v") m.push_back({0.0, 1.0});
        else if (t == "p") m.push_back({0.6, 0.8});
        else m.push_back({0.0, 0.0});
      }
      out.push_back(std::move(m));
    }
    return out;
  }
};

Tokens random_tokens(Rng& rng, const std::vector<std::string>& alphabet, std::size_t max_len) {
  Tokens t(rng.index(max_len + 1));
  for (auto& s : t) s = alphabet[rng.index(alphabet.size())];
  return t;
}

std::string join(const Tokens& t) {
  std::string s;
  for (const auto& w : t) s += (s.empty() ? "" : " ") + w;
  return s;
}

}  // namespace

TEST_CASE("tokenize") {
  CHECK(tokenize("The cat, sat.") == Tokens{"the", "cat", "sat"});
  CHECK(tokenize("").empty());
  CHECK(tokenize("A a A") == Tokens{"a", "a", "a"});
  CHECK(tokenize("don't 'quote' x2") == Tokens{"don't", "quote", "x2"});
}

TEST_CASE("stem folds common suffixes") {
  CHECK(stem("cats") == "cat");
  CHECK(stem("cities") == "city");
  CHECK(stem("talking") == "talk");
  CHECK(stem("glass") == "glass");
  CHECK(stem("is") == "is");
}

TEST_CASE("bleu worked examples") {
  CHECK(bleu("the cat sat on the mat", {"the cat sat on the mat"}) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(bleu("dog runs", {"the cat sat"}) == 0.0);
  CHECK(bleu("", {"the cat"}) == 0.0);
  // the cat sat / the cat sat down: p1=3/3, p2=2/2, p3=1/1, p4 smoothed (0+1)/(0+1); BP=exp(1-4/3).
  CHECK(bleu("the cat sat", {"the cat sat down"}) == doctest::Approx(std::exp(1.0 - 4.0 / 3.0)).epsilon(1e-12));
  CHECK_THROWS_AS(bleu("a", std::vector<std::string>{}), ConfigError);
}

TEST_CASE("bleu uses the closest reference length") {
  const double one = bleu("a b c d", {"a b c d e f g h", "a b c d e"});
  CHECK(one == doctest::Approx(std::exp(1.0 - 5.0 / 4.0)).epsilon(1e-12));
}

TEST_CASE("rouge worked examples") {
  auto same = rouge("the cat sat on the mat", "the cat sat on the mat");
  CHECK(same.rouge_1.f1 == 1.0);
  CHECK(same.rouge_2.f1 == 1.0);
  CHECK(same.rouge_l.f1 == 1.0);

  auto r = rouge("a b c", "a c");
  CHECK(r.rouge_1.recall == 1.0);
  CHECK(r.rouge_1.precision == doctest::Approx(2.0 / 3.0));

  auto rev = rouge("a b c", "c b a");
  CHECK(rev.rouge_l.f1 == doctest::Approx(1.0 / 3.0));

  auto empty = rouge("", "");
  CHECK(empty.rouge_1.f1 == 0.0);
  CHECK(empty.rouge_l.f1 == 0.0);
}

TEST_CASE("meteor worked examples") {
  CHECK(meteor("peace", "peace") == 0.5);
  CHECK(meteor("a b", "c d") == 0.0);
  CHECK(meteor("the cat sat on the mat", "the cat sat on the mat") ==
        doctest::Approx(1.0 - 0.5 * std::pow(1.0 / 6.0, 3)).epsilon(1e-12));
  // Stem stage: "cats" aligns with "cat".
  const auto a = meteor_align(tokenize("the cats"), tokenize("the cat"));
  CHECK(a.exact == 1);
  CHECK(a.stemmed == 1);
  CHECK(a.chunks == 1);
}

TEST_CASE("meteor prefers the fewest-chunk alignment among duplicates") {
  // Greedy left-to-right matching of "the" would give 3 chunks here.
  const auto a = meteor_align(tokenize("the mat the cat"), tokenize("the cat the mat"));
  CHECK(a.matches() == 4);
  CHECK(a.chunks == 2);
  CHECK(a.optimal);
}

TEST_CASE("bleu/rouge/meteor equal brute-force oracles on short sequences (exhaustive, length <= 4)") {
  const std::vector<std::string> alphabet{"cat", "cats", "dog"};
  const auto seqs = oracle::all_sequences(alphabet, 4);
  std::size_t mismatches = 0;
  for (const auto& c : seqs)
    for (const auto& r : seqs) {
      if (std::abs(bleu(c, {r}) - oracle::bleu(c, {r})) > 1e-12) ++mismatches;
      const auto a = rouge(c, r), b = oracle::rouge(c, r);
      if (std::abs(a.rouge_1.f1 - b.rouge_1.f1) > 1e-12 || std::abs(a.rouge_2.f1 - b.rouge_2.f1) > 1e-12 ||
          std::abs(a.rouge_l.f1 - b.rouge_l.f1) > 1e-12 || std::abs(a.rouge_l.precision - b.rouge_l.precision) > 1e-12)
        ++mismatches;
      if (std::abs(meteor(c, r) - oracle::meteor(c, r)) > 1e-12) ++mismatches;
    }
  CHECK(mismatches == 0);
}

TEST_CASE("multi-reference bleu equals oracle (random)") {
  Rng rng(17);
  const std::vector<std::string> alphabet{"a", "b", "c", "d"};
  for (int i = 0; i < 2000; ++i) {
    const auto c = random_tokens(rng, alphabet, 7);
    std::vector<Tokens> refs;
    const std::size_t k = 1 + rng.index(3);
    for (std::size_t j = 0; j < k; ++j) refs.push_back(random_tokens(rng, alphabet, 7));
    CHECK(bleu(c, refs) == doctest::Approx(oracle::bleu(c, refs)).epsilon(1e-12));
  }
}

TEST_CASE("relevance scores ignore surface case (property)") {
  Rng rng(3);
  const std::vector<std::string> alphabet{"Peace", "hate", "Respect", "PEOPLE", "the"};
  OneHotEmbedder emb;
  for (int i = 0; i < 300; ++i) {
    auto c = join(random_tokens(rng, alphabet, 6)), r = join(random_tokens(rng, alphabet, 6));
    if (tokenize(c).empty() || tokenize(r).empty()) continue;
    const auto lc = to_lower(c), ur = to_lower(r);
    CHECK(bleu(c, {r}) == bleu(lc, {ur}));
    CHECK(rouge(c, r).rouge_l.f1 == rouge(lc, ur).rouge_l.f1);
    CHECK(meteor(c, r) == meteor(lc, ur));
    CHECK(bert_score(c, r, emb).f1 == bert_score(lc, ur, emb).f1);
  }
}

TEST_CASE("bert_score worked examples") {
  OneHotEmbedder onehot;
  CHECK(bert_score("the cat sat", "the cat sat", onehot).f1 == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(bert_score("a b", "c d", onehot).f1 == 0.0);

  TableEmbedder table;
  // candidate {x, y} both (1,0); reference u=(1,0), v=(0,1): P = (1+1)/2, R = (1+0)/2.
  auto s = bert_score(Tokens{"x", "y"}, Tokens{"u", "v"}, table);
  CHECK(s.precision == doctest::Approx(1.0));
  CHECK(s.recall == doctest::Approx(0.5));
  CHECK(s.f1 == doctest::Approx(2.0 / 3.0));
  // candidate {x, p}, reference {v}: cosines 0 and 0.8. P = (0+0.8)/2, R = 0.8.
  auto t = bert_score(Tokens{"x", "p"}, Tokens{"v"}, table);
  CHECK(t.precision == doctest::Approx(0.4));
  CHECK(t.recall == doctest::Approx(0.8));

  CHECK_THROWS_AS(bert_score(Tokens{}, Tokens{"u"}, table), InputError);
  CHECK_THROWS_AS(bert_score(Tokens{"zero"}, Tokens{"u"}, table), InputError);
}

TEST_CASE("one-hot bert_score reduces to unigram-overlap greedy matching (property)") {
  Rng rng(11);
  const std::vector<std::string> alphabet{"a", "b", "c", "d", "e"};
  OneHotEmbedder emb;
  for (int i = 0; i < 500; ++i) {
    auto c = random_tokens(rng, alphabet, 6), r = random_tokens(rng, alphabet, 6);
    if (c.empty() || r.empty()) continue;
    const std::set<std::string> cs(c.begin(), c.end()), rs(r.begin(), r.end());
    double p = 0, rec = 0;
    for (auto& t : c) p += rs.count(t) ? 1 : 0;
    for (auto& t : r) rec += cs.count(t) ? 1 : 0;
    p /= static_cast<double>(c.size());
    rec /= static_cast<double>(r.size());
    auto s = bert_score(c, r, emb);
    CHECK(s.precision == doctest::Approx(p).epsilon(1e-12));
    CHECK(s.recall == doctest::Approx(rec).epsilon(1e-12));
  }
}

TEST_CASE("hashed embedder is batch-invariant") {
  HashedEmbedder emb;
  const Tokens a{"peace", "be", "with", "you"}, b{"hate", "speech"};
  const Tokens both[2] = {a, b};
  auto together = emb.embed(std::span<const Tokens>(both, 2));
  auto alone = emb.embed(std::span<const Tokens>(&a, 1));
  CHECK(together[0] == alone[0]);
  CHECK(bert_score(a, a, emb).f1 == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("gruen components") {
  HeuristicAcceptability acc;
  auto one = gruen("That is not a fair thing to say.", acc);
  CHECK(one.redundancy == 0.0);
  CHECK(one.focus == 0.0);
  CHECK(one.grammaticality == 1.0);
  CHECK(one.overall == 1.0);

  auto dup = gruen("The cat sat on the mat. The cat sat on the mat!", acc);
  CHECK(dup.redundancy == doctest::Approx(-0.1));
  CHECK(dup.focus == 0.0);

  auto unfocused = gruen("Respect matters here. Bananas grow quickly.", acc);
  CHECK(unfocused.focus == doctest::Approx(-0.1));

  CHECK(acc.score("sooo grrrr xkcd2") < 1.0);
  CHECK_THROWS_AS(gruen("   ", acc), InputError);
}

TEST_CASE("gruen ranges hold for arbitrary text (property)") {
  Rng rng(23);
  HeuristicAcceptability acc;
  const std::vector<std::string> pieces{"peace", "Hate", "is", "wrong", ".", "!", "sooo", "x1", "the", "?"};
  for (int i = 0; i < 500; ++i) {
    std::string text;
    const std::size_t n = 1 + rng.index(40);
    for (std::size_t k = 0; k < n; ++k) text += pieces[rng.index(pieces.size())] + " ";
    if (split_sentences(text).empty()) continue;
    auto g = gruen(text, acc);
    CHECK(g.overall >= 0.0);
    CHECK(g.overall <= 1.0);
    CHECK(g.redundancy <= 0.0);
    CHECK(g.redundancy >= -1.0);
    CHECK(g.focus <= 0.0);
    CHECK(g.focus >= -1.0);
    CHECK(g.overall == doctest::Approx(std::clamp(g.grammaticality + g.redundancy + g.focus, 0.0, 1.0)));
  }
}

TEST_CASE("sentence splitting") {
  auto s = split_sentences("Hello there. How are you?! Fine 3.5 times");
  REQUIRE(s.size() == 3);
  CHECK(s[1] == "How are you?!");
  CHECK(s[2] == "Fine 3.5 times");
}

TEST_CASE("ttr and distinct-n") {
  const std::vector<std::string> distinct{"a b c d"};
  CHECK(ttr(distinct) == 1.0);
  const std::vector<std::string> rep{"a a a a"};
  CHECK(ttr(rep) == 0.25);
  const std::vector<std::string> two{"a a", "a b"};
  CHECK(distinct_n(two, 1) == 0.5);
  CHECK(distinct_n(distinct, 2) == 1.0);
  // k copies of a text with 3 distinct bigrams out of 3: 3 / (3k).
  for (std::size_t k = 1; k <= 5; ++k) {
    std::vector<std::string> copies(k, "w x y z");
    CHECK(distinct_n(copies, 2) == doctest::Approx(3.0 / (3.0 * static_cast<double>(k))));
  }
  const std::vector<std::string> shorts{"a", "b"};
  CHECK_THROWS_AS(distinct_n(shorts, 2), InputError);
  CHECK_THROWS_AS(ttr(std::vector<std::string>{""}), InputError);
  // TTR and distinct-1 agree by construction.
  const std::vector<std::string> mix{"the cat", "the dog the"};
  CHECK(ttr(mix) == distinct_n(mix, 1));
}

TEST_CASE("novelty") {
  const std::vector<std::string> gen{"x y"}, ref{"y"};
  auto n = novelty(gen, ref);
  CHECK(n.new_unigrams == 1);
  CHECK(n.new_bigrams == 1);
  const std::vector<std::string> subset{"the cat sat"}, corpus{"the cat sat", "on the mat"};
  auto z = novelty(subset, corpus);
  CHECK(z.new_unigrams == 0);
  CHECK(z.new_bigrams == 0);
  CHECK_THROWS_AS(novelty(gen, std::vector<std::string>{}), ConfigError);
}

TEST_CASE("novelty never grows when the reference corpus grows (property)") {
  Rng rng(8);
  const std::vector<std::string> alphabet{"a", "b", "c", "d", "e", "f"};
  for (int i = 0; i < 200; ++i) {
    std::vector<std::string> gen, ref;
    for (int k = 0; k < 3; ++k) gen.push_back(join(random_tokens(rng, alphabet, 5)));
    ref.push_back(join(random_tokens(rng, alphabet, 5)));
    auto before = novelty(gen, ref);
    ref.push_back(join(random_tokens(rng, alphabet, 5)));
    auto after = novelty(gen, ref);
    CHECK(after.new_unigrams <= before.new_unigrams);
    CHECK(after.new_bigrams <= before.new_bigrams);
  }
}

TEST_CASE("aggregate") {
  auto a = aggregate({1, 1, 1});
  CHECK(a.mean == 1.0);
  CHECK(a.std == 0.0);
  auto b = aggregate({0, 1});
  CHECK(b.mean == 0.5);
  CHECK(b.std == 0.5);
  auto c = aggregate({0.3});
  CHECK(c.mean == 0.3);
  CHECK(c.std == 0.0);
  CHECK(c.per_sample.size() == 1);
  CHECK_THROWS_AS(aggregate({}), InputError);
}

TEST_CASE("aggregate mean is permutation-invariant and linear (property)") {
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    std::vector<double> x(1 + rng.index(20));
    for (auto& v : x) v = rng.uniform();
    auto y = x;
    std::reverse(y.begin(), y.end());
    CHECK(aggregate(x).mean == doctest::Approx(aggregate(y).mean).epsilon(1e-12));
    const double a = 2.5 * rng.uniform(), b = rng.uniform();
    std::vector<double> z;
    for (double v : x) z.push_back(a * v + b);
    CHECK(aggregate(z).mean == doctest::Approx(a * aggregate(x).mean + b).epsilon(1e-12));
  }
}

TEST_CASE("metric_correlation") {
  auto m = metric_correlation({{"x", {1, 2, 3}}, {"neg", {-1, -2, -3}}, {"y", {2, 4, 7}}, {"flat", {5, 5, 5}}});
  CHECK(*m.values[0][0] == 1.0);
  CHECK(*m.values[0][1] == doctest::Approx(-1.0));
  CHECK(*m.values[0][2] == doctest::Approx(5.0 / std::sqrt(228.0 / 9.0)).epsilon(1e-12));
  CHECK(*m.values[0][2] == doctest::Approx(0.9934).epsilon(1e-4));
  CHECK(*m.values[2][0] == *m.values[0][2]);
  CHECK_FALSE(m.values[0][3].has_value());
  CHECK_FALSE(m.values[3][3].has_value());
}

TEST_CASE("score_samples: OpenMP path matches serial reference") {
  std::vector<std::string> cands{"Peace is better than hate.", "I disagree with you. You are wrong.", "ok"};
  std::vector<std::vector<std::string>> refs{{"Hate is never better.", "Peace wins."}, {"You are wrong about that."}, {}};
  HashedEmbedder emb;
  HeuristicAcceptability acc;
  ScoringContext ctx{emb, acc};
  auto serial = score_samples(cands, refs, ctx, Execution::serial);
  auto parallel = score_samples(cands, refs, ctx, Execution::parallel);
  REQUIRE(serial.size() == 3);
  CHECK_FALSE(serial[2].relevance.has_value());
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(serial[i].gruen.overall == parallel[i].gruen.overall);
    if (serial[i].relevance) {
      CHECK(serial[i].relevance->bleu == parallel[i].relevance->bleu);
      CHECK(serial[i].relevance->meteor == parallel[i].relevance->meteor);
      CHECK(serial[i].relevance->bertscore.f1 == parallel[i].relevance->bertscore.f1);
    }
  }
  // Best reference is taken per score.
  CHECK(serial[0].relevance->rouge.rouge_1.f1 ==
        std::max(rouge(cands[0], refs[0][0]).rouge_1.f1, rouge(cands[0], refs[0][1]).rouge_1.f1));
}
