#include <cmath>
#include <unordered_map>

#include "cspeech/common.hpp"
#include "cspeech/metrics.hpp"

namespace cspeech::metrics {

namespace {

void normalize_rows(Matrix& m, const char* side) {
  for (auto& row : m) {
    double norm = 0.0;
    for (double v : row) norm += v * v;
    norm = std::sqrt(norm);
    if (!(norm > 0.0) || !std::isfinite(norm))
      throw InputError(std::string("bert_score: ") + side + " embedding is not normalizable");
    for (double& v : row) v /= norm;
  }
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw InputError("bert_score: embedding dimensions differ");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

std::vector<Matrix> OneHotEmbedder::embed(std::span<const Tokens> sequences) const {
  std::unordered_map<std::string, std::size_t> index;
  for (const auto& seq : sequences)
    for (const auto& t : seq) index.emplace(t, index.size());
  std::vector<Matrix> out;
  out.reserve(sequences.size());
  for (const auto& seq : sequences) {
    Matrix m;
    m.reserve(seq.size());
    for (const auto& t : seq) {
      std::vector<double> v(index.size(), 0.0);
      v[index.at(t)] = 1.0;
      m.push_back(std::move(v));
    }
    out.push_back(std::move(m));
  }
  return out;
}

std::vector<Matrix> HashedEmbedder::embed(std::span<const Tokens> sequences) const {
  std::vector<Matrix> out;
  out.reserve(sequences.size());
  for (const auto& seq : sequences) {
    Matrix base;
    base.reserve(seq.size());
    for (const auto& t : seq) {
      std::vector<double> v(dims_, 0.0);
      const std::string padded = "^" + t + "$";
      for (std::size_t i = 0; i + 3 <= padded.size(); ++i) {
        const auto h = fnv1a64(std::string_view(padded).substr(i, 3));
        v[h % dims_] += (h >> 63) ? 1.0 : -1.0;
      }
      // Whole-token feature keeps distinct short words apart.
      const auto h = fnv1a64(t);
      v[h % dims_] += 2.0;
      base.push_back(std::move(v));
    }
    // Add a fraction of the neighbours so vectors depend on context.
    Matrix ctx = base;
    for (std::size_t i = 0; i < base.size(); ++i) {
      for (long d : {-1L, 1L}) {
        const long k = static_cast<long>(i) + d;
        if (k < 0 || k >= static_cast<long>(base.size())) continue;
        for (std::size_t x = 0; x < dims_; ++x) ctx[i][x] += context_weight_ * base[static_cast<std::size_t>(k)][x];
      }
    }
    out.push_back(std::move(ctx));
  }
  return out;
}

Prf bert_score(const Tokens& candidate, const Tokens& reference, const Embedder& embedder) {
  if (candidate.empty() || reference.empty()) throw InputError("bert_score: empty token sequence");
  const Tokens pair[2] = {candidate, reference};
  auto emb = embedder.embed(std::span<const Tokens>(pair, 2));
  if (emb.size() != 2 || emb[0].size() != candidate.size() || emb[1].size() != reference.size())
    throw InputError("bert_score: embedder returned the wrong number of vectors");
  normalize_rows(emb[0], "candidate");
  normalize_rows(emb[1], "reference");
  const std::size_t m = candidate.size(), n = reference.size();
  std::vector<double> best_c(m, -2.0), best_r(n, -2.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double s = dot(emb[0][i], emb[1][j]);
      best_c[i] = std::max(best_c[i], s);
      best_r[j] = std::max(best_r[j], s);
    }
  Prf out;
  for (double v : best_c) out.precision += v;
  for (double v : best_r) out.recall += v;
  out.precision /= static_cast<double>(m);
  out.recall /= static_cast<double>(n);
  out.f1 = f1_of(out.precision, out.recall);
  return out;
}

Prf bert_score(std::string_view candidate, std::string_view reference, const Embedder& embedder) {
  return bert_score(tokenize(candidate), tokenize(reference), embedder);
}

}  // namespace cspeech::metrics
