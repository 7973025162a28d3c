#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>

#include "cspeech/common.hpp"
#include "cspeech/metrics.hpp"

namespace cspeech::metrics {

namespace {

bool suspicious_token(std::string_view raw) {
  bool alpha = false, digit = false;
  std::size_t run = 1;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const auto c = static_cast<unsigned char>(raw[i]);
    alpha |= std::isalpha(c) != 0;
    digit |= std::isdigit(c) != 0;
    if (i > 0 && std::tolower(c) == std::tolower(static_cast<unsigned char>(raw[i - 1])) && std::isalpha(c)) {
      if (++run >= 3) return true;
    } else {
      run = 1;
    }
  }
  if (alpha && digit) return true;
  const std::string lower = to_lower(raw);
  const bool all_alpha = std::all_of(lower.begin(), lower.end(), [](unsigned char c) { return std::isalpha(c); });
  return all_alpha && lower.size() >= 4 && lower.find_first_of("aeiouy") == std::string::npos;
}

}  // namespace

double HeuristicAcceptability::score(std::string_view sentence) const {
  double s = 1.0;
  for (const auto& tok : tokenize(sentence))
    if (suspicious_token(tok)) s -= 0.1;
  for (char c : sentence) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isalpha(u)) {
      if (std::islower(u)) s -= 0.05;
      break;
    }
  }
  return std::clamp(s, 0.0, 1.0);
}

std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (std::size_t i = 0; i < text.size(); ++i) {
    cur += text[i];
    const char c = text[i];
    if (c == '.' || c == '!' || c == '?') {
      // Swallow a run of terminal punctuation, then split on whitespace.
      while (i + 1 < text.size() && (text[i + 1] == '.' || text[i + 1] == '!' || text[i + 1] == '?')) cur += text[++i];
      if (i + 1 == text.size() || std::isspace(static_cast<unsigned char>(text[i + 1]))) {
        auto t = trim(cur);
        if (!tokenize(t).empty()) out.push_back(std::move(t));
        cur.clear();
      }
    }
  }
  auto t = trim(cur);
  if (!tokenize(t).empty()) out.push_back(std::move(t));
  return out;
}

double lexical_cosine(std::string_view a, std::string_view b) {
  std::map<std::string, double> va, vb;
  for (auto& t : tokenize(a)) va[t] += 1.0;
  for (auto& t : tokenize(b)) vb[t] += 1.0;
  if (va.empty() || vb.empty()) return 0.0;
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (const auto& [k, v] : va) {
    na += v * v;
    if (auto it = vb.find(k); it != vb.end()) dot += v * it->second;
  }
  for (const auto& [k, v] : vb) nb += v * v;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

GruenScores gruen(std::string_view text, const AcceptabilityScorer& acceptability, const GruenParams& params) {
  const auto sentences = split_sentences(text);
  if (sentences.empty()) throw InputError("gruen: text has no sentence");
  GruenScores g;
  for (const auto& s : sentences) g.grammaticality += std::clamp(acceptability.score(s), 0.0, 1.0);
  g.grammaticality /= static_cast<double>(sentences.size());

  std::size_t redundant = 0, unfocused = 0;
  for (std::size_t i = 0; i < sentences.size(); ++i)
    for (std::size_t j = i + 1; j < sentences.size(); ++j) {
      const double sim = lexical_cosine(sentences[i], sentences[j]);
      if (sim > params.redundancy_threshold) ++redundant;
      if (j == i + 1 && sim < params.focus_threshold) ++unfocused;
    }
  g.redundancy = std::max(params.penalty_floor, -params.penalty_step * static_cast<double>(redundant));
  g.focus = std::max(params.penalty_floor, -params.penalty_step * static_cast<double>(unfocused));
  // Keep penalties at exactly zero rather than -0.0 for clean reports.
  if (redundant == 0) g.redundancy = 0.0;
  if (unfocused == 0) g.focus = 0.0;
  g.overall = std::clamp(g.grammaticality + g.redundancy + g.focus, 0.0, 1.0);
  return g;
}

}  // namespace cspeech::metrics
