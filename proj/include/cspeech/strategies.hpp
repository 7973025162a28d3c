#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "cspeech/classifier.hpp"
#include "cspeech/common.hpp"
#include "cspeech/corpus.hpp"
#include "cspeech/gateway.hpp"
#include "cspeech/policy.hpp"

namespace cspeech {

// ---- method names -------------------------------------------------------

enum class FinetuneDataset { effective, reentry, conan, multiconan, bm_reddit, bm_gab };

std::string_view to_string(FinetuneDataset d);
FinetuneDataset parse_finetune_dataset(std::string_view s);

struct GenerationMethod {
  PromptCondition condition;
  bool operator==(const GenerationMethod&) const = default;
};
struct SelectMethod {
  PromptCondition condition;
  int n;
  TaskName selector;
  bool operator==(const SelectMethod&) const = default;
};
struct FinetuneMethod {
  FinetuneDataset dataset;
  bool operator==(const FinetuneMethod&) const = default;
};
struct TrlMethod {
  std::optional<FinetuneDataset> base;  // empty for the naive model
  TaskName target;
  bool operator==(const TrlMethod&) const = default;
};

/// "{condition}_generation", "{condition}_top{N}_select_{effective|reentry}",
/// "{dataset}_finetune", "{effective|reentry}_trl" or
/// "{dataset}_finetune_{effective|reentry}_trl".
using MethodName = std::variant<GenerationMethod, SelectMethod, FinetuneMethod, TrlMethod>;

std::string format_method(const MethodName& m);
/// ConfigError for strings outside the scheme.
MethodName parse_method(std::string_view s);
/// The 25 method names of the reference experiment grid.
std::vector<std::string> standard_grid();

// ---- prompting ----------------------------------------------------------

/// Picks among candidates predicted as target_label the one with the highest
/// confidence in it (lowest index on ties); if none has that label, a
/// uniformly random index drawn from rng. Empty input is an InputError.
std::size_t select_candidate(std::span<const OutcomePrediction> predictions, std::size_t target_label, Rng& rng);

GenerationRecord prompt_with_instruction(const CorpusRecord& hate, PromptCondition condition,
                                         const GenerationParams& params, const ChatBackend& backend,
                                         const RefusalPatterns& patterns = RefusalPatterns::defaults());

/// Generates n candidates, classifies the valid ones with `selector` and keeps
/// the one select_candidate picks (seeded by selection_seed and the hate id).
/// Candidates whose classification fails are skipped with a warning.
GenerationRecord prompt_and_select(const CorpusRecord& hate, PromptCondition condition, int n,
                                   const OutcomeClassifier& selector, const GenerationParams& params,
                                   const ChatBackend& backend, std::uint64_t selection_seed,
                                   const RefusalPatterns& patterns = RefusalPatterns::defaults());

/// Single response to the bare hate comment, for finetuned and TRL models.
GenerationRecord generate_plain(const CorpusRecord& hate, std::string method, const GenerationParams& params,
                                const ChatBackend& backend, const RefusalPatterns& patterns = RefusalPatterns::defaults());

// ---- finetune -----------------------------------------------------------

/// effective: outcome pairs with incivility = low; reentry: outcome pairs with
/// reentry = nonhate_reentry; the others: every corpus pair of the matching
/// source that has a reply and is not in the test split. An empty result is
/// an InputError naming the dataset.
std::vector<TextPair> prepare_finetune_dataset(FinetuneDataset dataset, const std::vector<CorpusRecord>& corpus,
                                               const std::vector<OutcomeExample>& outcomes);

void write_finetune_jsonl(const std::filesystem::path& path, std::span<const TextPair> pairs);
std::vector<TextPair> read_finetune_jsonl(const std::filesystem::path& path);

struct FinetuneConfig {
  int epochs = 30;
  double learning_rate = 1.0;
  Execution exec = Execution::parallel;
};

struct FinetuneResult {
  std::unique_ptr<TrainablePolicy> policy;
  /// Loss before the first epoch, then after each epoch.
  std::vector<double> loss_history;
};

/// Trains a copy of base; base is not modified. TrainingError on a
/// non-finite loss.
FinetuneResult finetune(const TrainablePolicy& base, std::span<const TextPair> dataset, const FinetuneConfig& config);

// ---- TRL ----------------------------------------------------------------

struct RewardConfig {
  TaskName target_task = TaskName::incivility;
  double beta = 0.0;
  void validate() const;
};

struct RewardBreakdown {
  double r = 0.0;
  double kl = 0.0;
  double beta = 0.0;
  double total = 0.0;
};

PolicySample trl_rollout(const TrainablePolicy& policy, std::string_view hate_text, const GenerationParams& params,
                         std::uint64_t seed);
/// Classifier confidence in target_label; 0 for an invalid response.
double trl_reward(std::string_view hate_text, std::string_view response, const OutcomeClassifier& classifier,
                  std::size_t target_label, const RefusalPatterns& patterns = RefusalPatterns::defaults());
/// max(0, mean(active - reference)). Lengths must match.
double kl_penalty(std::span<const double> active_logprobs, std::span<const double> reference_logprobs);
RewardBreakdown total_reward(double r, double kl, const RewardConfig& config);

/// Batch-whitened values (mean 0, unit population variance). All-equal
/// input gives all zeros.
std::vector<double> whiten(std::span<const double> values);

struct RolloutResult {
  std::string hate_text;
  PolicySample sample;
  std::vector<double> logprobs;  // active policy at rollout time
  RewardBreakdown reward;
};

/// One PPO update with whitened total rewards as advantages.
void ppo_step(TrainablePolicy& policy, std::span<const RolloutResult> batch, const PpoConfig& config,
              Execution exec = Execution::parallel);

struct TrlConfig {
  std::optional<RewardConfig> reward;  // required; beta has no default
  PpoConfig ppo;
  GenerationParams sampling{.top_k = 1 << 20, .temperature = 1.0, .max_length = 24, .n_candidates = 1, .seed = std::nullopt};
  int batch_size = 16;
  int max_steps = 100;
  int window = 5;
  double tolerance = 1e-3;
  std::uint64_t seed = 0;
  Execution exec = Execution::parallel;
};

struct TrlLogRow {
  int step = 0;
  double mean_r = 0.0;
  double mean_kl = 0.0;
  double mean_total = 0.0;
};

struct TrlResult {
  std::unique_ptr<TrainablePolicy> policy;
  std::vector<TrlLogRow> log;
  bool converged = false;
};

/// Rollout -> reward -> PPO loop on a copy of base; base doubles as the frozen
/// reference for the KL term. Stops when the mean total reward averaged over
/// the last `window` steps moves by less than `tolerance` from the previous
/// window, or after max_steps.
TrlResult trl_train(const TrainablePolicy& base, const OutcomeClassifier& classifier,
                    std::span<const std::string> prompts, const TrlConfig& config);

void write_trl_log_csv(const std::filesystem::path& path, std::span<const TrlLogRow> log);

}  // namespace cspeech
