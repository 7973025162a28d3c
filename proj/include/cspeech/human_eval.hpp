#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cspeech/gateway.hpp"

namespace httplib {
class Server;
}

namespace cspeech::human_eval {

enum class Dimension { suitableness, relevance, effectiveness };
inline constexpr std::array<Dimension, 3> kDimensions{Dimension::suitableness, Dimension::relevance,
                                                      Dimension::effectiveness};

std::string_view to_string(Dimension d);
/// ValidationError for other names.
Dimension parse_dimension(std::string_view s);

struct AnnotationTask {
  std::string task_id;
  std::string hate_text;
  std::string reply_text;
  std::string hidden_method;  // never part of an annotator payload
  int display_order = 0;
  bool operator==(const AnnotationTask&) const = default;
};

/// Storage form, including the hidden method.
nlohmann::json to_json(const AnnotationTask& t);
AnnotationTask annotation_task_from_json(const nlohmann::json& j);
/// What an annotator sees: task_id, hate_text, reply_text.
nlohmann::json annotator_payload(const AnnotationTask& t);

struct LabelRecord {
  std::string task_id;
  std::string annotator_id;
  std::array<bool, 3> answers{};  // indexed by Dimension
  std::string timestamp;
  bool answer(Dimension d) const { return answers[static_cast<std::size_t>(d)]; }
  bool operator==(const LabelRecord&) const = default;
};

nlohmann::json to_json(const LabelRecord& r);
/// ValidationError when a dimension is missing or not a yes/no value.
/// Accepts booleans and the strings "yes"/"no".
LabelRecord label_record_from_json(const nlohmann::json& j);

struct Adjudication {
  std::string task_id;
  Dimension dimension = Dimension::suitableness;
  bool final_label = false;
  std::string rationale;
  std::string timestamp;
  bool operator==(const Adjudication&) const = default;
};

nlohmann::json to_json(const Adjudication& a);
Adjudication adjudication_from_json(const nlohmann::json& j);

/// Generations of one method, as input to sampling.
struct MethodRun {
  std::string method;
  std::vector<GenerationRecord> records;
};

/// k valid generations per method drawn without replacement, then all tasks
/// shuffled together; display_order is the shuffled position. Task ids are
/// opaque hashes. ValidationError naming the method when it has fewer than
/// k valid generations.
std::vector<AnnotationTask> sample_for_annotation(std::span<const MethodRun> runs, std::size_t k, std::uint64_t seed);

struct DimensionAgreement {
  double rate = 0.0;
  std::vector<std::string> disagreements;  // task ids, sorted
  double kappa = 0.0;                      // Cohen's kappa, informational
};

struct AgreementReport {
  std::size_t tasks = 0;
  std::array<DimensionAgreement, 3> dimensions{};
};

nlohmann::json to_json(const AgreementReport& r);

/// Raw agreement per dimension over two annotators' labels. Both must cover
/// the same non-empty task set (ValidationError otherwise).
AgreementReport agreement_rate(std::span<const LabelRecord> labels_a, std::span<const LabelRecord> labels_b);

struct MethodSummary {
  std::string method;
  std::size_t tasks = 0;
  std::array<double, 3> yes{};  // proportion per dimension
};

/// Final labels per task and dimension: the agreed answer, else the latest
/// adjudication. ValidationError listing tasks that lack a label from either
/// annotator or have an unadjudicated disagreement.
std::vector<MethodSummary> summarize(std::span<const AnnotationTask> tasks, std::span<const LabelRecord> labels,
                                     std::span<const Adjudication> adjudications,
                                     const std::pair<std::string, std::string>& annotators);

std::string summary_csv(std::span<const MethodSummary> summary);
nlohmann::json to_json(std::span<const MethodSummary> summary);

/// A study on disk:
///   study.json          {annotators: [a, b]}
///   tasks.jsonl         tasks, including hidden methods
///   labels.jsonl        append-only label log
///   adjudications.jsonl append-only adjudication log
/// Writes go through one mutex and are appended before the in-memory state
/// is published; readers take an immutable snapshot without locking.
class Study {
 public:
  using Clock = std::function<std::string()>;

  /// Creates a study directory. Needs exactly two distinct annotators.
  static void create(const std::filesystem::path& dir, std::span<const AnnotationTask> tasks,
                     const std::pair<std::string, std::string>& annotators);

  explicit Study(std::filesystem::path dir, Clock clock = {});

  const std::pair<std::string, std::string>& annotators() const { return annotators_; }

  /// Lowest-display_order task this annotator has not labeled, or nothing.
  /// AuthorizationError for an unknown annotator.
  std::optional<AnnotationTask> next_task(const std::string& annotator_id) const;
  /// NotFoundError for an unknown task, AuthorizationError for an unknown
  /// annotator, ConflictError for a second label on the same pair.
  LabelRecord submit_label(LabelRecord record);

  AgreementReport agreement() const;
  struct Disagreement {
    std::string task_id;
    Dimension dimension;
    bool adjudicated;
  };
  /// Every disagreement between the two annotators, in display order.
  std::vector<Disagreement> disagreements() const;
  /// ValidationError unless both annotators labeled the task and disagree on
  /// that dimension. Later adjudications supersede earlier ones.
  Adjudication adjudicate(Adjudication a);
  std::vector<MethodSummary> summary() const;

  std::vector<AnnotationTask> tasks() const;
  std::vector<LabelRecord> labels() const;
  std::vector<Adjudication> adjudications() const;

  /// Writes labels.jsonl and adjudications.jsonl into out_dir, plus
  /// summary.csv when the study is finalized. Returns whether it was.
  bool export_to(const std::filesystem::path& out_dir) const;

 private:
  struct State {
    std::vector<AnnotationTask> tasks;  // by display order
    std::map<std::string, std::size_t> task_index;
    std::vector<LabelRecord> labels;
    std::map<std::pair<std::string, std::string>, std::size_t> label_index;  // (task, annotator)
    std::vector<Adjudication> adjudications;
  };

  std::shared_ptr<const State> snapshot() const { return std::atomic_load(&state_); }
  void check_annotator(const std::string& id) const;
  std::pair<const LabelRecord*, const LabelRecord*> pair_labels(const State& s, const std::string& task_id) const;

  std::filesystem::path dir_;
  Clock clock_;
  std::pair<std::string, std::string> annotators_;
  std::shared_ptr<const State> state_;
  std::mutex write_mutex_;
};

/// Registers the HTTP API on `server`. When static_dir is set it is mounted
/// at "/". Errors come back as {error: message} with status 400 for
/// validation and malformed input, 403 authorization, 404 not found and 409
/// conflict.
void register_routes(httplib::Server& server, Study& study,
                     const std::optional<std::filesystem::path>& static_dir = std::nullopt);

}  // namespace cspeech::human_eval
