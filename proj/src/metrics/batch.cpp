#include "cspeech/common.hpp"
#include "cspeech/metrics.hpp"

namespace cspeech::metrics {

RelevanceScores relevance(std::string_view candidate, const std::vector<std::string>& references,
                          const ScoringContext& ctx) {
  if (references.empty()) throw InputError("relevance: no references");
  const Tokens cand = tokenize(candidate);
  std::vector<Tokens> refs;
  refs.reserve(references.size());
  for (const auto& r : references) refs.push_back(tokenize(r));

  RelevanceScores s;
  s.bleu = bleu(cand, refs);
  bool first = true;
  for (const auto& ref : refs) {
    const auto rg = rouge(cand, ref);
    if (first || rg.rouge_1.f1 > s.rouge.rouge_1.f1) s.rouge.rouge_1 = rg.rouge_1;
    if (first || rg.rouge_2.f1 > s.rouge.rouge_2.f1) s.rouge.rouge_2 = rg.rouge_2;
    if (first || rg.rouge_l.f1 > s.rouge.rouge_l.f1) s.rouge.rouge_l = rg.rouge_l;
    s.meteor = std::max(first ? 0.0 : s.meteor, meteor(cand, ref, ctx.meteor));
    if (!cand.empty() && !ref.empty()) {
      const auto b = bert_score(cand, ref, ctx.embedder);
      if (first || b.f1 > s.bertscore.f1) s.bertscore = b;
    }
    first = false;
  }
  return s;
}

std::vector<SampleScores> score_samples(std::span<const std::string> candidates,
                                        std::span<const std::vector<std::string>> references,
                                        const ScoringContext& ctx, Execution exec) {
  if (candidates.size() != references.size())
    throw InputError("score_samples: candidates and references differ in length");
  std::vector<SampleScores> out(candidates.size());
  for_each_index(candidates.size(), exec, [&](std::size_t i) {
    if (!references[i].empty()) out[i].relevance = relevance(candidates[i], references[i], ctx);
    out[i].gruen = gruen(candidates[i], ctx.acceptability, ctx.gruen);
  });
  return out;
}

}  // namespace cspeech::metrics
