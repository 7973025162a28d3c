#include <algorithm>
#include <cmath>
#include <set>

#include "cspeech/common.hpp"
#include "cspeech/metrics.hpp"

namespace cspeech::metrics {

namespace {

using Ngram = std::vector<std::string>;

void collect_ngrams(std::string_view text, std::size_t n, std::set<Ngram>& distinct, std::size_t& total) {
  const auto t = tokenize(text);
  if (t.size() < n) return;
  for (std::size_t i = 0; i + n <= t.size(); ++i) {
    distinct.emplace(t.begin() + static_cast<std::ptrdiff_t>(i), t.begin() + static_cast<std::ptrdiff_t>(i + n));
    ++total;
  }
}

}  // namespace

double distinct_n(std::span<const std::string> texts, int n) {
  if (n < 1) throw ConfigError("distinct_n: n must be positive");
  std::set<Ngram> distinct;
  std::size_t total = 0;
  for (const auto& t : texts) collect_ngrams(t, static_cast<std::size_t>(n), distinct, total);
  if (total == 0) throw InputError("distinct_n: no text has " + std::to_string(n) + " tokens");
  return static_cast<double>(distinct.size()) / static_cast<double>(total);
}

double ttr(std::span<const std::string> texts) {
  std::set<Ngram> distinct;
  std::size_t total = 0;
  for (const auto& t : texts) collect_ngrams(t, 1, distinct, total);
  if (total == 0) throw InputError("ttr: no tokens");
  return static_cast<double>(distinct.size()) / static_cast<double>(total);
}

DiversityScores diversity(std::span<const std::string> texts) {
  DiversityScores d;
  d.ttr = ttr(texts);
  d.distinct_1 = distinct_n(texts, 1);
  try {
    d.distinct_2 = distinct_n(texts, 2);
  } catch (const InputError&) {
    d.distinct_2.reset();
  }
  return d;
}

NoveltyScores novelty(std::span<const std::string> texts, std::span<const std::string> reference_corpus) {
  if (reference_corpus.empty()) throw ConfigError("novelty: reference corpus is empty");
  std::set<Ngram> ref1, ref2, gen1, gen2;
  std::size_t ignored = 0;
  for (const auto& r : reference_corpus) {
    collect_ngrams(r, 1, ref1, ignored);
    collect_ngrams(r, 2, ref2, ignored);
  }
  for (const auto& t : texts) {
    collect_ngrams(t, 1, gen1, ignored);
    collect_ngrams(t, 2, gen2, ignored);
  }
  NoveltyScores s;
  for (const auto& g : gen1) s.new_unigrams += ref1.count(g) ? 0 : 1;
  for (const auto& g : gen2) s.new_bigrams += ref2.count(g) ? 0 : 1;
  return s;
}

AggregateReport aggregate(std::vector<double> per_sample) {
  if (per_sample.empty()) throw InputError("aggregate: no samples");
  AggregateReport r;
  double sum = 0.0;
  for (double v : per_sample) sum += v;
  r.mean = sum / static_cast<double>(per_sample.size());
  double sq = 0.0;
  for (double v : per_sample) sq += (v - r.mean) * (v - r.mean);
  r.std = std::sqrt(sq / static_cast<double>(per_sample.size()));
  r.per_sample = std::move(per_sample);
  return r;
}

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw InputError("pearson: columns differ in length");
  if (x.size() < 2) throw InputError("pearson: need at least two samples");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

CorrelationMatrix metric_correlation(const std::vector<std::pair<std::string, std::vector<double>>>& columns) {
  CorrelationMatrix m;
  const std::size_t k = columns.size();
  m.values.assign(k, std::vector<std::optional<double>>(k));
  for (const auto& [name, col] : columns) {
    m.names.push_back(name);
    if (col.size() != columns.front().second.size()) throw InputError("metric_correlation: columns differ in length");
  }
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = a; b < k; ++b) {
      auto r = pearson(columns[a].second, columns[b].second);
      if (a == b && r) r = 1.0;
      m.values[a][b] = m.values[b][a] = r;
    }
  return m;
}

}  // namespace cspeech::metrics
