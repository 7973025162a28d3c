#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cspeech/classifier.hpp"
#include "cspeech/corpus.hpp"
#include "cspeech/gateway.hpp"
#include "cspeech/metrics.hpp"
#include "cspeech/strategies.hpp"

namespace cspeech {

// ---- configuration --------------------------------------------------------

struct GatewayConfig {
  std::string backend = "http";  // http | scripted
  std::string url_env = HttpChatBackend::kUrlEnv;
  std::string token_env = HttpChatBackend::kTokenEnv;
  int max_in_flight = 1;
  GenerationParams params;
  std::optional<std::filesystem::path> refusal_patterns;
};

/// Relative paths are resolved against base_dir.
GatewayConfig gateway_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
GatewayConfig load_gateway_config(const std::filesystem::path& path);
std::shared_ptr<const ChatBackend> make_chat_backend(const GatewayConfig& config);
RefusalPatterns load_refusal_patterns(const GatewayConfig& config);

struct ExperimentConfig {
  std::vector<std::string> methods;
  std::filesystem::path corpus;      // generation inputs; the test split is used
  std::filesystem::path references;  // reference replies, read only after generation
  std::filesystem::path incivility_classifier;
  std::filesystem::path reentry_classifier;
  GatewayConfig gateway;
  std::map<std::string, std::filesystem::path> policies;  // finetune/TRL method -> policy snapshot
  std::string embedder = "hashed";          // hashed | onehot | http
  std::string acceptability = "heuristic";  // heuristic | http
  std::uint64_t seed = 0;
  int workers = 0;  // 0 lets OpenMP decide
  Execution exec = Execution::parallel;
  std::filesystem::path output;

  /// ConfigError for an empty or malformed method list, duplicate methods or
  /// missing input files.
  void validate() const;
};

/// JSON document mirroring ExperimentConfig. "methods" may be the string
/// "grid" for the full 25-method grid. Relative paths are resolved against
/// the file's directory.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Everything run_experiment talks to. Tests substitute doubles here.
struct ExperimentProviders {
  std::shared_ptr<const OutcomeClassifier> incivility;
  std::shared_ptr<const OutcomeClassifier> reentry;
  /// Backend for a method; may throw, which fails only that method.
  std::function<std::shared_ptr<const ChatBackend>(const MethodName&)> backend_for;
  std::shared_ptr<const metrics::Embedder> embedder;
  std::shared_ptr<const metrics::AcceptabilityScorer> acceptability;
  RefusalPatterns patterns = RefusalPatterns::defaults();
};

/// Loads classifiers, policies and metric providers named by the config.
ExperimentProviders make_providers(const ExperimentConfig& config);

// ---- generation -----------------------------------------------------------

/// Records of the given split with one entry per distinct hate text (first
/// id wins) and the reply removed. An absent split keeps every record.
std::vector<CorpusRecord> generation_inputs(const std::vector<CorpusRecord>& corpus, std::optional<Split> split);

/// Runs one method over the hate comments. Sample i uses params.seed =
/// derive_seed(seed, "generate/<method>/<hate id>"). A sample whose backend
/// call fails becomes an invalid record with empty text; if every sample
/// fails the first error is rethrown. Select methods need a selector for
/// their task.
std::vector<GenerationRecord> generate_method(const MethodName& method, std::span<const CorpusRecord> hate_comments,
                                              const GenerationParams& params, const ChatBackend& backend,
                                              const OutcomeClassifier* selector, const RefusalPatterns& patterns,
                                              std::uint64_t seed, Execution exec = Execution::parallel,
                                              int workers = 0);

// ---- evaluation -----------------------------------------------------------

/// Valid records whose (hate, text) prediction is target_label. Records the
/// classifier fails on are not counted.
std::size_t count_desired(std::span<const GenerationRecord> records, const OutcomeClassifier& classifier,
                          std::size_t target_label, Execution exec = Execution::parallel);

/// Per-sample metric columns, in report order.
const std::vector<std::string>& sample_metric_names();

struct SampleEvaluation {
  std::string method;
  std::string hate_id;
  bool valid = false;
  std::optional<std::string> incivility;  // predicted label names
  std::optional<std::string> reentry;
  /// One entry per sample_metric_names(); empty when not applicable.
  std::vector<std::optional<double>> metrics;
};

nlohmann::json to_json(const SampleEvaluation& e);

/// Reference replies keyed by trimmed hate text.
using ReferenceIndex = std::map<std::string, std::vector<std::string>>;
ReferenceIndex build_reference_index(const std::vector<CorpusRecord>& references);

struct EvaluationContext {
  const OutcomeClassifier& incivility;
  const OutcomeClassifier& reentry;
  const metrics::ScoringContext& scoring;
  const ReferenceIndex& references;
  Execution exec = Execution::parallel;
  int workers = 0;
};

/// Classifies valid records with both controllers and scores them. Invalid
/// records get no labels or metrics. Per-sample failures leave the affected
/// fields empty.
std::vector<SampleEvaluation> evaluate_records(const std::string& method, std::span<const GenerationRecord> records,
                                               const EvaluationContext& ctx);

struct MetricSummary {
  std::size_t n = 0;
  double mean = 0.0;
  double std = 0.0;
};

struct MethodReport {
  std::string method;
  bool failed = false;
  std::string error;
  std::size_t samples = 0;
  std::size_t valid = 0;
  double valid_response_rate = 0.0;
  std::size_t desired_effective = 0;  // predicted low incivility
  std::size_t desired_reentry = 0;    // predicted non-hateful reentry
  /// Keyed like sample_metric_names(); empty when no sample has a value.
  std::vector<std::optional<MetricSummary>> metrics;
  std::optional<metrics::DiversityScores> diversity;
  std::optional<metrics::NoveltyScores> novelty;
};

MethodReport summarize_method(const std::string& method, std::span<const GenerationRecord> records,
                              std::span<const SampleEvaluation> evaluations,
                              std::span<const std::string> reference_corpus);
MethodReport failed_method(const std::string& method, const std::string& error);

struct RunReport {
  std::vector<MethodReport> methods;
  /// Pearson correlation of per-sample metrics pooled over methods.
  metrics::CorrelationMatrix sample_correlation;
  /// Correlation of diversity and novelty measures across methods.
  metrics::CorrelationMatrix diversity_correlation;
};

nlohmann::json to_json(const RunReport& r);
RunReport run_report_from_json(const nlohmann::json& j);

// ---- orchestration --------------------------------------------------------

/// Layout under config.output:
///   runs/<method>.jsonl      generation records
///   report/samples.jsonl     per-sample labels and metrics
///   report/...               see emit_report
/// Methods run in config order. A method that throws is reported as failed
/// and the rest proceed.
RunReport run_experiment(const ExperimentConfig& config);
RunReport run_experiment(const ExperimentConfig& config, const ExperimentProviders& providers);

/// Evaluates persisted runs (runs_dir/<method>.jsonl for each method) and
/// writes the report into out_dir.
RunReport evaluate_runs(const std::filesystem::path& runs_dir, std::span<const std::string> methods,
                        const std::vector<CorpusRecord>& references, const ExperimentProviders& providers,
                        const std::filesystem::path& out_dir, Execution exec = Execution::parallel, int workers = 0);

/// Writes report.json, summary.csv, desired_counts.csv, correlation.csv,
/// diversity_correlation.csv, metrics/<method>.csv (when samples are given)
/// and the SVG bar charts desired_counts.svg and metric_means.svg.
void emit_report(const RunReport& report, std::span<const SampleEvaluation> samples,
                 const std::filesystem::path& out_dir);

std::string summary_csv(const RunReport& report);
std::string desired_counts_csv(const RunReport& report);
std::string correlation_csv(const metrics::CorrelationMatrix& m);
/// One row per valid sample, then mean and std rows.
std::string method_metrics_csv(std::span<const SampleEvaluation> samples);

struct BarSeries {
  std::string name;
  std::vector<double> values;
};
/// Grouped horizontal bar chart, one group per label.
std::string bar_chart_svg(const std::string& title, const std::vector<std::string>& labels,
                          const std::vector<BarSeries>& series);

/// For each method family (generation, select, finetune, TRL) the
/// non-failed method with the most low-incivility predictions; ties go to
/// the earlier method. Families without a method are skipped.
std::vector<std::string> pick_methods_for_annotation(const RunReport& report);

}  // namespace cspeech
