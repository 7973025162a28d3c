#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "cspeech/gateway.hpp"
#include "cspeech/parallel.hpp"

namespace cspeech {

struct TextPair {
  std::string prompt;
  std::string completion;
  bool operator==(const TextPair&) const = default;
};

/// A sampled response. `tokens` are policy token ids and end with the
/// end-of-sequence id when the policy stopped on its own.
struct PolicySample {
  std::vector<int> tokens;
  std::string text;
};

/// One rollout prepared for a PPO update.
struct PpoSample {
  std::string prompt;
  std::vector<int> tokens;
  std::vector<double> old_logprobs;
  double advantage = 0.0;
};

struct PpoConfig {
  double learning_rate = 0.5;
  double clip = 0.2;
  /// Rescales the whole gradient when its L2 norm exceeds this (0 disables).
  double max_grad_norm = 0.0;
};

/// A model that can be sampled, scored and trained. Sampling and scoring are
/// const and safe to call concurrently; updates are exclusive.
class TrainablePolicy {
 public:
  virtual ~TrainablePolicy() = default;
  virtual std::unique_ptr<TrainablePolicy> clone() const = 0;

  /// Samples with params.top_k / temperature / max_length from a seed.
  virtual PolicySample sample(std::string_view prompt, const GenerationParams& params, std::uint64_t seed) const = 0;
  /// Log-probabilities of each token at temperature 1.
  virtual std::vector<double> logprobs(std::string_view prompt, std::span<const int> tokens) const = 0;

  /// Mean per-token negative log-likelihood of the completions.
  virtual double supervised_loss(std::span<const TextPair> batch, Execution exec) const = 0;
  /// One full-batch gradient step on supervised_loss.
  virtual void supervised_update(std::span<const TextPair> batch, double learning_rate, Execution exec) = 0;
  /// One clipped-surrogate gradient step. Parameters whose gradient is zero
  /// are left untouched, so an all-zero-advantage batch is an exact no-op.
  /// Throws TrainingError on a non-finite gradient.
  virtual void ppo_update(std::span<const PpoSample> batch, const PpoConfig& config, Execution exec) = 0;

  virtual nlohmann::json snapshot() const = 0;
  virtual void restore(const nlohmann::json& state) = 0;

  /// The vocabulary, id 0 first.
  virtual const std::vector<std::string>& vocabulary() const = 0;
};

struct TinyPolicyConfig {
  std::size_t max_vocab = 1000;
  double init_scale = 0.01;
  std::uint64_t seed = 0;
};

/// Small autoregressive model over a word vocabulary (id 0 is "<eos>").
/// Next-token logits are
///   bias + transition[previous token or start] + mean of context[w]
/// over the distinct in-vocabulary words w of the prompt.
class TinyPolicy final : public TrainablePolicy {
 public:
  static constexpr std::string_view kEos = "<eos>";
  static constexpr int kFormatVersion = 1;

  /// Vocabulary is <eos> then the most frequent words of `texts` (ties by
  /// spelling). Parameters start uniform in [-init_scale, init_scale].
  static TinyPolicy build(const std::vector<std::string>& texts, const TinyPolicyConfig& config = {});
  TinyPolicy(std::vector<std::string> vocabulary, double init_scale, std::uint64_t seed);

  std::unique_ptr<TrainablePolicy> clone() const override { return std::make_unique<TinyPolicy>(*this); }
  PolicySample sample(std::string_view prompt, const GenerationParams& params, std::uint64_t seed) const override;
  std::vector<double> logprobs(std::string_view prompt, std::span<const int> tokens) const override;
  double supervised_loss(std::span<const TextPair> batch, Execution exec) const override;
  void supervised_update(std::span<const TextPair> batch, double learning_rate, Execution exec) override;
  void ppo_update(std::span<const PpoSample> batch, const PpoConfig& config, Execution exec) override;
  nlohmann::json snapshot() const override;
  void restore(const nlohmann::json& state) override;
  const std::vector<std::string>& vocabulary() const override { return vocab_; }

  /// In-vocabulary words of a completion followed by <eos>.
  std::vector<int> encode_completion(std::string_view text) const;
  std::string decode(std::span<const int> tokens) const;
  int token_id(std::string_view word) const;  // -1 if absent
  /// Probability of each vocabulary token as the next token at temperature 1.
  std::vector<double> next_token_distribution(std::string_view prompt, std::span<const int> prefix) const;

  void save(const std::filesystem::path& path) const;
  static TinyPolicy load(const std::filesystem::path& path);

  bool operator==(const TinyPolicy& o) const {
    return vocab_ == o.vocab_ && bias_ == o.bias_ && trans_ == o.trans_ && ctx_ == o.ctx_;
  }

 private:
  using Gradient = std::vector<std::pair<std::size_t, std::vector<double>>>;  // (row key, values), sorted by key
  struct Position {
    int prev;
    int target;
    double weight;
  };

  std::size_t V() const { return vocab_.size(); }
  std::vector<int> context_ids(std::string_view prompt) const;
  std::vector<double> context_vector(const std::vector<int>& ctx) const;
  void logits_into(const std::vector<double>& cvec, int prev, std::vector<double>& out) const;
  /// Sum over sequences of weight * d(-log p(target))/d(params), reduced over
  /// fixed blocks so the result is independent of the thread count.
  Gradient gradient(std::size_t n, const std::function<std::string_view(std::size_t)>& prompt_of,
                    const std::function<std::vector<Position>(std::size_t, const std::vector<int>&)>& positions_of,
                    Execution exec) const;
  double* row(std::size_t key);
  void apply(const Gradient& g, double learning_rate);

  std::vector<std::string> vocab_;
  std::unordered_map<std::string, int> index_;
  std::vector<double> bias_;   // V
  std::vector<double> trans_;  // (V + 1) x V, last row is the start state
  std::vector<double> ctx_;    // V x V
};

/// Chat backend over a trainable policy. The prompt's user text is the
/// conditioning context; candidate k uses seed derive_seed(params.seed, "candidate-k").
class PolicyBackend final : public ChatBackend {
 public:
  explicit PolicyBackend(std::shared_ptr<const TrainablePolicy> policy) : policy_(std::move(policy)) {}
  std::vector<std::string> complete(const Prompt& prompt, const GenerationParams& params) const override;

 private:
  std::shared_ptr<const TrainablePolicy> policy_;
};

/// Loads a policy snapshot file written by TinyPolicy::save.
std::unique_ptr<TrainablePolicy> load_policy(const std::filesystem::path& path);

}  // namespace cspeech
