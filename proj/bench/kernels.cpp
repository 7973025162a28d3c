// Serial reference vs OpenMP path for the hot kernels.
#include <benchmark/benchmark.h>

#include <string>
#include <vector>

#include "cspeech/classifier.hpp"
#include "cspeech/common.hpp"
#include "cspeech/metrics.hpp"
#include "cspeech/policy.hpp"

using namespace cspeech;

namespace {

const std::vector<std::string> kWords{"people", "hate", "is", "not", "ok", "we", "all", "the", "same", "please",
                                      "stop", "this", "why", "so", "angry", "peace", "talk", "rights", "you", "are"};

std::string sentence(Rng& rng, std::size_t len) {
  std::string s;
  for (std::size_t i = 0; i < len; ++i) s += (i ? " " : "") + kWords[rng.index(kWords.size())];
  return s + ".";
}

Execution exec_of(const benchmark::State& state) { return state.range(0) ? Execution::parallel : Execution::serial; }

void BM_score_samples(benchmark::State& state) {
  Rng rng(1);
  std::vector<std::string> cands;
  std::vector<std::vector<std::string>> refs;
  for (int i = 0; i < 64; ++i) {
    cands.push_back(sentence(rng, 12 + rng.index(12)));
    refs.push_back({sentence(rng, 15), sentence(rng, 20)});
  }
  metrics::HashedEmbedder emb;
  metrics::HeuristicAcceptability acc;
  const metrics::ScoringContext ctx{emb, acc};
  for (auto _ : state) benchmark::DoNotOptimize(metrics::score_samples(cands, refs, ctx, exec_of(state)));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(cands.size()));
}
BENCHMARK(BM_score_samples)->Arg(0)->Arg(1)->ArgName("parallel")->Unit(benchmark::kMillisecond);

void BM_softmax_gradient(benchmark::State& state) {
  Rng rng(2);
  const std::size_t features = 5000;
  std::vector<std::vector<std::pair<std::uint32_t, double>>> rows(4000);
  std::vector<std::size_t> labels;
  for (auto& r : rows) {
    for (int k = 0; k < 30; ++k) r.emplace_back(static_cast<std::uint32_t>(rng.index(features)), 0.18);
    labels.push_back(rng.index(kNumLabels));
  }
  std::vector<std::array<double, kNumLabels>> w(features);
  for (auto& a : w)
    for (auto& v : a) v = rng.uniform() - 0.5;
  const std::array<double, kNumLabels> b{0.1, -0.1, 0.0};
  for (auto _ : state) benchmark::DoNotOptimize(softmax_gradient(rows, labels, w, b, exec_of(state)));
  state.SetItemsProcessed(state.iterations() * static_cast<long>(rows.size()));
}
BENCHMARK(BM_softmax_gradient)->Arg(0)->Arg(1)->ArgName("parallel")->Unit(benchmark::kMillisecond);

void BM_supervised_update(benchmark::State& state) {
  Rng rng(3);
  std::vector<std::string> texts;
  std::vector<TextPair> batch;
  for (int i = 0; i < 256; ++i) {
    batch.push_back({sentence(rng, 8), sentence(rng, 16)});
    texts.push_back(batch.back().completion);
  }
  const auto base = TinyPolicy::build(texts, {});
  for (auto _ : state) {
    state.PauseTiming();
    auto policy = base;
    state.ResumeTiming();
    policy.supervised_update(batch, 0.5, exec_of(state));
    benchmark::ClobberMemory();
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(batch.size()));
}
BENCHMARK(BM_supervised_update)->Arg(0)->Arg(1)->ArgName("parallel")->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
