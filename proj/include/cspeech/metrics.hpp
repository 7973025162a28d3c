#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cspeech/http_client.hpp"
#include "cspeech/parallel.hpp"

namespace cspeech::metrics {

using Tokens = std::vector<std::string>;

/// Lowercased word tokens. Word characters are ASCII alphanumerics, non-ASCII
/// bytes and apostrophes between word characters; everything else separates.
Tokens tokenize(std::string_view text);

/// Light suffix stemmer used by the METEOR stem stage.
std::string stem(std::string_view word);

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Harmonic mean, 0 when p + r is 0.
double f1_of(double p, double r);

// ---------------------------------------------------------------------------
// Relevance

/// Sentence BLEU: geometric mean of clipped n-gram precisions (n = 1..max_n)
/// times the brevity penalty against the closest reference length. When any
/// n-gram match count is zero, precisions for n >= 2 get +1 on numerator and
/// denominator. Empty candidate or zero unigram matches give 0.
double bleu(const Tokens& candidate, const std::vector<Tokens>& references, int max_n = 4);
double bleu(std::string_view candidate, const std::vector<std::string>& references, int max_n = 4);

struct RougeScores {
  Prf rouge_1;
  Prf rouge_2;
  Prf rouge_l;
};

/// ROUGE-1/2 n-gram overlap and ROUGE-L longest common subsequence. Zero
/// denominators give 0.
RougeScores rouge(const Tokens& candidate, const Tokens& reference);
RougeScores rouge(std::string_view candidate, std::string_view reference);

/// Longest common subsequence length.
std::size_t lcs_length(const Tokens& a, const Tokens& b);

struct MeteorParams {
  double alpha = 0.9;
  double gamma = 0.5;
  double theta = 3.0;
  /// Search nodes allowed per alignment before settling for the best found.
  std::size_t search_budget = 200000;
};

struct MeteorAlignment {
  std::size_t exact = 0;   // exact-stage matches
  std::size_t stemmed = 0; // stem-stage matches
  std::size_t chunks = 0;
  bool optimal = true;     // false when the search budget ran out
  std::size_t matches() const { return exact + stemmed; }
};

/// Staged alignment: a maximum exact matching, then a maximum stem matching
/// over what is left; among all such alignments the one with fewest chunks.
MeteorAlignment meteor_align(const Tokens& candidate, const Tokens& reference, std::size_t search_budget = 200000);

double meteor(const Tokens& candidate, const Tokens& reference, const MeteorParams& params = {});
double meteor(std::string_view candidate, std::string_view reference, const MeteorParams& params = {});

using Matrix = std::vector<std::vector<double>>;

/// Contextual embedding provider: one vector per token for each sequence.
/// Implementations must give the same vectors whether sequences arrive
/// together or one at a time.
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::vector<Matrix> embed(std::span<const Tokens> sequences) const = 0;
};

/// One-hot vector per distinct token string; cosine is 1 for equal tokens and
/// 0 otherwise.
class OneHotEmbedder final : public Embedder {
 public:
  std::vector<Matrix> embed(std::span<const Tokens> sequences) const override;
};

/// Hashed character-trigram vectors mixed with a neighbour window. Needs no
/// external model and gives graded similarities for desk-scale runs.
class HashedEmbedder final : public Embedder {
 public:
  explicit HashedEmbedder(std::size_t dims = 256, double context_weight = 0.25)
      : dims_(dims), context_weight_(context_weight) {}
  std::vector<Matrix> embed(std::span<const Tokens> sequences) const override;

 private:
  std::size_t dims_;
  double context_weight_;
};

/// Embedding service: POST {tokens: [[...], ...]} -> {embeddings: [[[...]]]},
/// one vector per token. Sequences are sent in batches of batch_size.
class HttpEmbedder final : public Embedder {
 public:
  static constexpr const char* kUrlEnv = "CSPEECH_EMBEDDER_URL";
  static constexpr const char* kTokenEnv = "CSPEECH_EMBEDDER_TOKEN";

  explicit HttpEmbedder(HttpEndpoint endpoint, std::size_t batch_size = 32)
      : endpoint_(std::move(endpoint)), batch_size_(batch_size ? batch_size : 1) {}
  std::vector<Matrix> embed(std::span<const Tokens> sequences) const override;

 private:
  HttpEndpoint endpoint_;
  std::size_t batch_size_;
};

/// Greedy cosine matching. Throws InputError when either side has no tokens or
/// a zero vector.
Prf bert_score(const Tokens& candidate, const Tokens& reference, const Embedder& embedder);
Prf bert_score(std::string_view candidate, std::string_view reference, const Embedder& embedder);

// ---------------------------------------------------------------------------
// Quality

class AcceptabilityScorer {
 public:
  virtual ~AcceptabilityScorer() = default;
  /// Acceptability of one sentence in [0, 1].
  virtual double score(std::string_view sentence) const = 0;
};

/// 1.0 minus fixed penalties for token shapes that rarely occur in edited
/// text (vowel-less long words, runs of three equal characters, letter/digit
/// mixes) and for a lowercase sentence start.
class HeuristicAcceptability final : public AcceptabilityScorer {
 public:
  double score(std::string_view sentence) const override;
};

/// Acceptability service: POST {sentences: [...]} -> {scores: [...]}.
class HttpAcceptability final : public AcceptabilityScorer {
 public:
  static constexpr const char* kUrlEnv = "CSPEECH_ACCEPTABILITY_URL";
  static constexpr const char* kTokenEnv = "CSPEECH_ACCEPTABILITY_TOKEN";

  explicit HttpAcceptability(HttpEndpoint endpoint) : endpoint_(std::move(endpoint)) {}
  double score(std::string_view sentence) const override;

 private:
  HttpEndpoint endpoint_;
};

struct GruenParams {
  double redundancy_threshold = 0.9;
  double focus_threshold = 0.05;
  double penalty_step = 0.1;
  double penalty_floor = -1.0;
};

struct GruenScores {
  double grammaticality = 0.0;
  double redundancy = 0.0;
  double focus = 0.0;
  double overall = 0.0;
};

/// Splits on terminal punctuation followed by whitespace.
std::vector<std::string> split_sentences(std::string_view text);

/// Cosine of token count vectors; 0 when either side is empty.
double lexical_cosine(std::string_view a, std::string_view b);

/// Throws InputError for text without any sentence.
GruenScores gruen(std::string_view text, const AcceptabilityScorer& acceptability, const GruenParams& params = {});

// ---------------------------------------------------------------------------
// Diversity and novelty (pooled over a set of texts)

/// distinct tokens / total tokens. Equal to distinct_n(texts, 1).
double ttr(std::span<const std::string> texts);
/// distinct n-grams / total n-grams; n-grams do not cross text boundaries.
double distinct_n(std::span<const std::string> texts, int n);

struct DiversityScores {
  double ttr = 0.0;
  double distinct_1 = 0.0;
  std::optional<double> distinct_2;  // empty when no text has two tokens
};

DiversityScores diversity(std::span<const std::string> texts);

struct NoveltyScores {
  std::size_t new_unigrams = 0;
  std::size_t new_bigrams = 0;
};

/// Distinct unigrams and bigrams of `texts` absent from the reference corpus.
NoveltyScores novelty(std::span<const std::string> texts, std::span<const std::string> reference_corpus);

// ---------------------------------------------------------------------------
// Aggregation

struct AggregateReport {
  std::vector<double> per_sample;
  double mean = 0.0;
  double std = 0.0;  // population
};

AggregateReport aggregate(std::vector<double> per_sample);

struct CorrelationMatrix {
  std::vector<std::string> names;
  /// Pearson r; empty where a column is constant.
  std::vector<std::vector<std::optional<double>>> values;
};

std::optional<double> pearson(std::span<const double> x, std::span<const double> y);
CorrelationMatrix metric_correlation(const std::vector<std::pair<std::string, std::vector<double>>>& columns);

// ---------------------------------------------------------------------------
// Per-sample batch kernel

struct RelevanceScores {
  double bleu = 0.0;
  RougeScores rouge;
  double meteor = 0.0;
  Prf bertscore;
};

struct SampleScores {
  std::optional<RelevanceScores> relevance;  // empty when the sample has no references
  GruenScores gruen;
};

struct ScoringContext {
  const Embedder& embedder;
  const AcceptabilityScorer& acceptability;
  MeteorParams meteor{};
  GruenParams gruen{};
};

/// Relevance of one candidate against several references: BLEU uses all of
/// them at once, ROUGE/METEOR/BERTScore take the best reference per score.
RelevanceScores relevance(std::string_view candidate, const std::vector<std::string>& references,
                          const ScoringContext& ctx);

/// Scores every candidate. Samples are independent; the parallel path fans
/// them out over OpenMP threads and must match the serial path exactly.
std::vector<SampleScores> score_samples(std::span<const std::string> candidates,
                                        std::span<const std::vector<std::string>> references,
                                        const ScoringContext& ctx, Execution exec = Execution::parallel);

}  // namespace cspeech::metrics
