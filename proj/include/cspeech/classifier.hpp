#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "cspeech/corpus.hpp"
#include "cspeech/http_client.hpp"
#include "cspeech/outcome.hpp"
#include "cspeech/parallel.hpp"

namespace cspeech {

struct OutcomePrediction {
  TaskName task = TaskName::incivility;
  std::size_t label = 0;
  std::array<double, kNumLabels> confidence{};

  std::string_view label_name() const { return OutcomeTask::get(task).labels[label]; }
  bool operator==(const OutcomePrediction&) const = default;
};

/// Normalizes non-negative scores into a prediction. Argmax ties go to the
/// lower label index.
OutcomePrediction make_prediction(TaskName task, std::array<double, kNumLabels> scores);

/// A trained controller. Implementations are immutable after construction and
/// safe to call from several threads.
class OutcomeClassifier {
 public:
  virtual ~OutcomeClassifier() = default;
  virtual TaskName task() const = 0;
  /// Both texts must be non-empty (InputError otherwise).
  virtual OutcomePrediction predict(std::string_view hate_text, std::string_view reply_text) const = 0;
};

struct LinearTrainConfig {
  int epochs = 150;
  double learning_rate = 0.1;
  double l2 = 1e-4;
  bool bigrams = true;
  Execution exec = Execution::parallel;
};

/// Softmax regression over binary unigram/bigram features of
/// "hate [SEP] reply", L2-normalized per example. Trained full-batch with Adam.
class LinearClassifier final : public OutcomeClassifier {
 public:
  static constexpr std::string_view kSeparator = "[SEP]";
  static constexpr int kFormatVersion = 1;

  /// Throws InputError for empty input or examples missing the task label,
  /// TrainingError for a single-class set or a non-finite loss.
  static LinearClassifier train(const std::vector<OutcomeExample>& examples, TaskName task,
                                const LinearTrainConfig& config = {});

  TaskName task() const override { return task_; }
  OutcomePrediction predict(std::string_view hate_text, std::string_view reply_text) const override;

  /// Mean training loss after each epoch (first entry is before any update).
  const std::vector<double>& loss_history() const { return loss_history_; }
  std::size_t num_features() const { return vocabulary_.size(); }

  nlohmann::json to_json() const;
  static LinearClassifier from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static LinearClassifier load(const std::filesystem::path& path);

  /// Feature strings of a pair, before vocabulary lookup.
  static std::vector<std::string> feature_strings(std::string_view hate_text, std::string_view reply_text,
                                                  bool bigrams);

 private:
  using SparseRow = std::vector<std::pair<std::uint32_t, double>>;
  SparseRow encode(std::string_view hate_text, std::string_view reply_text) const;
  std::array<double, kNumLabels> logits(const SparseRow& row) const;

  TaskName task_ = TaskName::incivility;
  bool bigrams_ = true;
  std::vector<std::string> vocabulary_;
  std::unordered_map<std::string, std::uint32_t> index_;
  std::vector<std::array<double, kNumLabels>> weights_;  // per feature
  std::array<double, kNumLabels> bias_{};
  std::vector<double> loss_history_;
};

/// Gradient of the mean cross-entropy (without the L2 term) of a softmax
/// model over sparse rows. Exposed so the OpenMP kernel can be checked and
/// benchmarked against the serial reference; both give bit-identical output.
struct SoftmaxGradient {
  std::vector<std::array<double, kNumLabels>> weights;
  std::array<double, kNumLabels> bias{};
  double loss = 0.0;
};
SoftmaxGradient softmax_gradient(std::span<const std::vector<std::pair<std::uint32_t, double>>> rows,
                                 std::span<const std::size_t> labels,
                                 const std::vector<std::array<double, kNumLabels>>& weights,
                                 const std::array<double, kNumLabels>& bias, Execution exec);

/// Remote fine-tuned model. Request {hate_text, reply_text, task};
/// response {label, confidence: {label: p}}.
class HttpClassifier final : public OutcomeClassifier {
 public:
  HttpClassifier(HttpEndpoint endpoint, TaskName task) : endpoint_(std::move(endpoint)), task_(task) {}
  TaskName task() const override { return task_; }
  OutcomePrediction predict(std::string_view hate_text, std::string_view reply_text) const override;

 private:
  HttpEndpoint endpoint_;
  TaskName task_;
};

/// Loads a classifier artifact. kind "linear" is a LinearClassifier file;
/// kind "http" is {kind, task, url_env, token_env} naming the environment
/// variables that hold the endpoint.
std::unique_ptr<OutcomeClassifier> load_classifier(const std::filesystem::path& path);

struct ClassScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct ClassifierReport {
  TaskName task = TaskName::incivility;
  std::array<ClassScores, kNumLabels> per_class{};
  std::array<std::size_t, kNumLabels> support{};
  ClassScores weighted;
  ClassScores macro;
  double accuracy = 0.0;
  std::array<std::array<std::size_t, kNumLabels>, kNumLabels> confusion{};  // [truth][predicted]
};

/// Report from paired truth/prediction label indices. A class never predicted
/// gets precision 0; a class never present gets recall 0.
ClassifierReport evaluate_from_labels(TaskName task, std::span<const std::size_t> truth,
                                      std::span<const std::size_t> predicted);
ClassifierReport evaluate_classifier(const OutcomeClassifier& classifier, const std::vector<OutcomeExample>& test,
                                     Execution exec = Execution::parallel);
/// Predicts the most frequent training label (lowest index on ties) for every
/// test item.
ClassifierReport majority_baseline(TaskName task, std::span<const std::size_t> train_labels,
                                   std::span<const std::size_t> test_labels);

nlohmann::json to_json(const ClassifierReport& r);

/// Label indices of the examples; InputError if any lacks the task label.
std::vector<std::size_t> task_labels(const std::vector<OutcomeExample>& examples, TaskName task);

/// Toy outcome set whose label is fixed by a marker word in the reply.
/// With noise > 0 that fraction of labels is redrawn uniformly.
std::vector<OutcomeExample> synthetic_outcomes(TaskName task, std::size_t n, std::uint64_t seed, double noise = 0.0);
/// Marker word for each label of the synthetic set.
std::string_view synthetic_marker(TaskName task, std::size_t label);

}  // namespace cspeech
