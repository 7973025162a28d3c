#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <map>
#include <unordered_map>

#include "cspeech/common.hpp"
#include "cspeech/metrics.hpp"

namespace cspeech::metrics {

namespace {

bool is_word_byte(unsigned char c) { return std::isalnum(c) || c >= 0x80; }

using NgramCounts = std::map<std::vector<std::string_view>, std::size_t>;

NgramCounts count_ngrams(const Tokens& t, std::size_t n) {
  NgramCounts counts;
  if (t.size() < n) return counts;
  for (std::size_t i = 0; i + n <= t.size(); ++i) {
    std::vector<std::string_view> g(t.begin() + static_cast<std::ptrdiff_t>(i),
                                    t.begin() + static_cast<std::ptrdiff_t>(i + n));
    ++counts[g];
  }
  return counts;
}

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

bool has_vowel(std::string_view s) { return s.find_first_of("aeiouy") != std::string_view::npos; }

Prf overlap_prf(std::size_t overlap, std::size_t cand_total, std::size_t ref_total) {
  Prf p;
  p.precision = cand_total ? static_cast<double>(overlap) / static_cast<double>(cand_total) : 0.0;
  p.recall = ref_total ? static_cast<double>(overlap) / static_cast<double>(ref_total) : 0.0;
  p.f1 = f1_of(p.precision, p.recall);
  return p;
}

Prf rouge_n(const Tokens& c, const Tokens& r, std::size_t n) {
  const auto cc = count_ngrams(c, n);
  const auto rc = count_ngrams(r, n);
  std::size_t overlap = 0;
  for (const auto& [g, k] : cc)
    if (auto it = rc.find(g); it != rc.end()) overlap += std::min(k, it->second);
  const std::size_t ct = c.size() >= n ? c.size() - n + 1 : 0;
  const std::size_t rt = r.size() >= n ? r.size() - n + 1 : 0;
  return overlap_prf(overlap, ct, rt);
}

// Branch-and-bound search for the fewest-chunk staged alignment.
class MeteorSearch {
 public:
  MeteorSearch(const Tokens& c, const Tokens& r, std::size_t budget) : m_(c.size()), n_(r.size()), budget_(budget) {
    std::unordered_map<std::string, int> word_ids, stem_ids;
    auto intern = [](std::unordered_map<std::string, int>& ids, const std::string& s) {
      auto [it, inserted] = ids.emplace(s, static_cast<int>(ids.size()));
      return it->second;
    };
    for (const auto& t : c) {
      cw_.push_back(intern(word_ids, t));
      cs_.push_back(intern(stem_ids, stem(t)));
    }
    for (const auto& t : r) {
      rw_.push_back(intern(word_ids, t));
      rs_.push_back(intern(stem_ids, stem(t)));
    }
    const std::size_t W = word_ids.size(), S = stem_ids.size();
    std::vector<int> cnt_c(W, 0), cnt_r(W, 0);
    for (int w : cw_) ++cnt_c[static_cast<std::size_t>(w)];
    for (int w : rw_) ++cnt_r[static_cast<std::size_t>(w)];
    exact_need_.assign(W, 0);
    std::vector<int> left_c(S, 0), left_r(S, 0);
    std::vector<int> stem_of_word(W, 0);
    for (std::size_t i = 0; i < m_; ++i) stem_of_word[static_cast<std::size_t>(cw_[i])] = cs_[i];
    for (std::size_t j = 0; j < n_; ++j) stem_of_word[static_cast<std::size_t>(rw_[j])] = rs_[j];
    for (std::size_t w = 0; w < W; ++w) {
      exact_need_[w] = std::min(cnt_c[w], cnt_r[w]);
      exact_total_ += static_cast<std::size_t>(exact_need_[w]);
      left_c[static_cast<std::size_t>(stem_of_word[w])] += cnt_c[w] - exact_need_[w];
      left_r[static_cast<std::size_t>(stem_of_word[w])] += cnt_r[w] - exact_need_[w];
    }
    stem_need_.assign(S, 0);
    for (std::size_t s = 0; s < S; ++s) {
      stem_need_[s] = std::min(left_c[s], left_r[s]);
      stem_total_ += static_cast<std::size_t>(stem_need_[s]);
    }
    cand_rem_ = cnt_c;
    ref_free_ = cnt_r;
    used_.assign(n_, false);
  }

  MeteorAlignment run() {
    MeteorAlignment out;
    out.exact = exact_total_;
    out.stemmed = stem_total_;
    if (exact_total_ + stem_total_ == 0) return out;
    best_ = greedy_chunks();
    dfs(0, -1, 0);
    out.chunks = best_;
    out.optimal = !exhausted_;
    return out;
  }

 private:
  // Stage-wise greedy alignment; always a valid maximum alignment.
  std::size_t greedy_chunks() const {
    std::vector<long> match(m_, -1);
    std::vector<bool> used(n_, false);
    for (int stage = 0; stage < 2; ++stage) {
      long prev = -2;
      for (std::size_t i = 0; i < m_; ++i) {
        if (match[i] >= 0) {
          prev = match[i];
          continue;
        }
        auto eligible = [&](std::size_t j) {
          if (used[j]) return false;
          return stage == 0 ? rw_[j] == cw_[i] : (rw_[j] != cw_[i] && rs_[j] == cs_[i]);
        };
        long pick = -1;
        if (prev >= -1 && prev + 1 < static_cast<long>(n_) && eligible(static_cast<std::size_t>(prev + 1)))
          pick = prev + 1;
        for (std::size_t j = 0; pick < 0 && j < n_; ++j)
          if (eligible(j)) pick = static_cast<long>(j);
        if (pick >= 0) {
          match[i] = pick;
          used[static_cast<std::size_t>(pick)] = true;
        }
        prev = match[i] >= 0 ? match[i] : -2;
      }
    }
    return count_chunks(match);
  }

  static std::size_t count_chunks(const std::vector<long>& match) {
    std::size_t chunks = 0;
    for (std::size_t i = 0; i < match.size(); ++i) {
      if (match[i] < 0) continue;
      if (i == 0 || match[i - 1] < 0 || match[i - 1] + 1 != match[i]) ++chunks;
    }
    return chunks;
  }

  bool feasible(int w) const {
    const auto k = static_cast<std::size_t>(w);
    return exact_need_[k] <= cand_rem_[k] && exact_need_[k] <= ref_free_[k];
  }

  void dfs(std::size_t i, long prev, std::size_t chunks) {
    if (chunks >= best_) return;
    if (++nodes_ > budget_) {
      exhausted_ = true;
      return;
    }
    if (i == m_) {
      // exact_need is guaranteed zero by the feasibility checks; stem needs are not.
      for (int s : stem_need_)
        if (s != 0) return;
      best_ = chunks;
      return;
    }
    const int w = cw_[i];
    const int s = cs_[i];
    const auto wk = static_cast<std::size_t>(w);
    const auto sk = static_cast<std::size_t>(s);
    --cand_rem_[wk];

    auto try_match = [&](std::size_t j) {
      const bool exact = rw_[j] == w;
      if (exact) {
        if (exact_need_[wk] == 0) return;
        --exact_need_[wk];
      } else {
        if (rs_[j] != s || stem_need_[sk] == 0) return;
        --stem_need_[sk];
      }
      const int u = rw_[j];
      const auto uk = static_cast<std::size_t>(u);
      --ref_free_[uk];
      used_[j] = true;
      if (feasible(w) && feasible(u)) {
        const bool continues = prev >= 0 && static_cast<long>(j) == prev + 1;
        dfs(i + 1, static_cast<long>(j), chunks + (continues ? 0 : 1));
      }
      used_[j] = false;
      ++ref_free_[uk];
      if (exact)
        ++exact_need_[wk];
      else
        ++stem_need_[sk];
    };

    if (prev >= 0 && static_cast<std::size_t>(prev + 1) < n_ && !used_[static_cast<std::size_t>(prev + 1)])
      try_match(static_cast<std::size_t>(prev + 1));
    for (std::size_t j = 0; j < n_ && !exhausted_; ++j) {
      if (used_[j] || (prev >= 0 && static_cast<long>(j) == prev + 1)) continue;
      try_match(j);
    }
    if (!exhausted_ && feasible(w)) dfs(i + 1, -1, chunks);
    ++cand_rem_[wk];
  }

  std::size_t m_, n_;
  std::size_t budget_;
  std::vector<int> cw_, cs_, rw_, rs_;
  std::vector<int> exact_need_, stem_need_, cand_rem_, ref_free_;
  std::vector<bool> used_;
  std::size_t exact_total_ = 0, stem_total_ = 0;
  std::size_t best_ = std::numeric_limits<std::size_t>::max();
  std::size_t nodes_ = 0;
  bool exhausted_ = false;
};

}  // namespace

Tokens tokenize(std::string_view text) {
  Tokens out;
  std::string cur;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (is_word_byte(c)) {
      cur += static_cast<char>(std::tolower(c));
    } else if (c == '\'' && !cur.empty() && i + 1 < text.size() &&
               is_word_byte(static_cast<unsigned char>(text[i + 1]))) {
      cur += '\'';
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::string stem(std::string_view word) {
  std::string w = to_lower(word);
  if (w.size() <= 3) return w;
  if (ends_with(w, "sses")) {
    w.erase(w.size() - 2);
  } else if (ends_with(w, "ies")) {
    w.replace(w.size() - 3, 3, "y");
  } else if (ends_with(w, "s") && !ends_with(w, "ss") && !ends_with(w, "us") && !ends_with(w, "is")) {
    w.pop_back();
  }
  auto strip = [&](std::string_view suffix) {
    if (ends_with(w, suffix) && w.size() - suffix.size() >= 3 && has_vowel(std::string_view(w).substr(0, w.size() - suffix.size()))) {
      w.erase(w.size() - suffix.size());
      return true;
    }
    return false;
  };
  if (!strip("ing") && !strip("ed")) strip("ly");
  return w;
}

double f1_of(double p, double r) { return (p + r) != 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

double bleu(const Tokens& c, const std::vector<Tokens>& refs, int max_n) {
  if (refs.empty()) throw ConfigError("bleu needs at least one reference");
  if (max_n < 1) throw ConfigError("bleu max_n must be positive");
  if (c.empty()) return 0.0;
  const auto N = static_cast<std::size_t>(max_n);
  std::vector<std::size_t> matched(N + 1, 0), total(N + 1, 0);
  for (std::size_t n = 1; n <= N; ++n) {
    const auto cc = count_ngrams(c, n);
    NgramCounts max_ref;
    for (const auto& r : refs)
      for (const auto& [g, k] : count_ngrams(r, n)) max_ref[g] = std::max(max_ref[g], k);
    for (const auto& [g, k] : cc)
      if (auto it = max_ref.find(g); it != max_ref.end()) matched[n] += std::min(k, it->second);
    total[n] = c.size() >= n ? c.size() - n + 1 : 0;
  }
  if (matched[1] == 0) return 0.0;
  const bool smooth = std::any_of(matched.begin() + 1, matched.end(), [](std::size_t m) { return m == 0; });
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= N; ++n) {
    double p;
    if (smooth && n >= 2)
      p = static_cast<double>(matched[n] + 1) / static_cast<double>(total[n] + 1);
    else
      p = static_cast<double>(matched[n]) / static_cast<double>(total[n]);
    log_sum += std::log(p);
  }
  // Closest reference length, shorter on ties.
  std::size_t ref_len = refs.front().size();
  for (const auto& r : refs) {
    const auto d = [&](std::size_t len) { return len > c.size() ? len - c.size() : c.size() - len; };
    if (d(r.size()) < d(ref_len) || (d(r.size()) == d(ref_len) && r.size() < ref_len)) ref_len = r.size();
  }
  const double bp = c.size() > ref_len
                        ? 1.0
                        : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(c.size()));
  return bp * std::exp(log_sum / static_cast<double>(N));
}

double bleu(std::string_view candidate, const std::vector<std::string>& references, int max_n) {
  std::vector<Tokens> refs;
  refs.reserve(references.size());
  for (const auto& r : references) refs.push_back(tokenize(r));
  return bleu(tokenize(candidate), refs, max_n);
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

RougeScores rouge(const Tokens& c, const Tokens& r) {
  RougeScores s;
  s.rouge_1 = rouge_n(c, r, 1);
  s.rouge_2 = rouge_n(c, r, 2);
  s.rouge_l = overlap_prf(lcs_length(c, r), c.size(), r.size());
  return s;
}

RougeScores rouge(std::string_view candidate, std::string_view reference) {
  return rouge(tokenize(candidate), tokenize(reference));
}

MeteorAlignment meteor_align(const Tokens& c, const Tokens& r, std::size_t budget) {
  return MeteorSearch(c, r, budget).run();
}

double meteor(const Tokens& c, const Tokens& r, const MeteorParams& params) {
  if (c.empty() || r.empty()) return 0.0;
  const auto a = meteor_align(c, r, params.search_budget);
  const std::size_t m = a.matches();
  if (m == 0) return 0.0;
  const double p = static_cast<double>(m) / static_cast<double>(c.size());
  const double rec = static_cast<double>(m) / static_cast<double>(r.size());
  const double f = p * rec / (params.alpha * p + (1.0 - params.alpha) * rec);
  const double penalty =
      params.gamma * std::pow(static_cast<double>(a.chunks) / static_cast<double>(m), params.theta);
  return f * (1.0 - penalty);
}

double meteor(std::string_view candidate, std::string_view reference, const MeteorParams& params) {
  return meteor(tokenize(candidate), tokenize(reference), params);
}

}  // namespace cspeech::metrics
