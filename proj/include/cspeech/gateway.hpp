#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cspeech/http_client.hpp"

namespace cspeech {

enum class PromptCondition { baseline, effective, reentry };

std::string_view to_string(PromptCondition c);
PromptCondition parse_condition(std::string_view s);

struct Prompt {
  std::string system;
  std::string user;
  bool operator==(const Prompt&) const = default;
};

inline constexpr std::string_view kSystemPrompt = "Generate a response in Reddit Style.";

/// Instruction prompt for a condition. hate_text must be non-empty.
Prompt build_prompt(std::string_view hate_text, PromptCondition condition);
/// Prompt used with finetuned and TRL-trained models: the raw hate comment.
Prompt plain_prompt(std::string_view hate_text);

struct GenerationParams {
  int top_k = 8;
  double temperature = 0.7;
  int max_length = 512;
  int n_candidates = 1;
  std::optional<std::uint64_t> seed;

  /// ConfigError unless every field is positive.
  void validate() const;
  bool operator==(const GenerationParams&) const = default;
};

nlohmann::json to_json(const GenerationParams& p);
GenerationParams generation_params_from_json(const nlohmann::json& j);

/// A chat model. Implementations must be safe for concurrent calls.
class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  /// Returns params.n_candidates texts in request order. Unreachable or
  /// timed-out backends throw TransportError.
  virtual std::vector<std::string> complete(const Prompt& prompt, const GenerationParams& params) const = 0;
};

/// Validates params, calls the backend and checks the candidate count.
std::vector<std::string> generate(const Prompt& prompt, const GenerationParams& params, const ChatBackend& backend);

/// Deterministic test double. The script maps (prompt, candidate index, seed)
/// to a text; the default returns "reply-<index>".
class ScriptedBackend final : public ChatBackend {
 public:
  using Script = std::function<std::string(const Prompt&, std::size_t, std::uint64_t)>;
  ScriptedBackend();
  explicit ScriptedBackend(Script script) : script_(std::move(script)) {}
  /// Cycles through fixed texts by candidate index.
  static ScriptedBackend cycling(std::vector<std::string> texts);

  std::vector<std::string> complete(const Prompt& prompt, const GenerationParams& params) const override;

 private:
  Script script_;
};

/// Chat endpoint speaking JSON {system, user, top_k, temperature, max_tokens,
/// n, seed?} -> {texts: [...]}. With max_in_flight > 1, the candidates of one
/// call are requested individually and concurrently (n = 1 each, per-candidate
/// seeds derived from the call seed); results keep request order.
class HttpChatBackend final : public ChatBackend {
 public:
  static constexpr const char* kUrlEnv = "CSPEECH_LLM_URL";
  static constexpr const char* kTokenEnv = "CSPEECH_LLM_TOKEN";

  explicit HttpChatBackend(HttpEndpoint endpoint, int max_in_flight = 1);
  static HttpChatBackend from_env(int max_in_flight = 1);

  std::vector<std::string> complete(const Prompt& prompt, const GenerationParams& params) const override;

 private:
  HttpEndpoint endpoint_;
  int max_in_flight_;
};

/// Case-insensitive refusal patterns. A pattern starting with '^' must match
/// at the start of the trimmed text; others match anywhere.
class RefusalPatterns {
 public:
  RefusalPatterns() = default;
  explicit RefusalPatterns(std::vector<std::string> patterns);
  /// One pattern per line; blank lines and lines starting with '#' ignored.
  static RefusalPatterns parse(std::string_view text);
  static RefusalPatterns load(const std::filesystem::path& path);
  /// Built-in list, identical to config/refusal_patterns.txt.
  static const RefusalPatterns& defaults();
  static std::string_view default_text();

  bool matches(std::string_view text) const;
  const std::vector<std::string>& patterns() const { return patterns_; }

 private:
  std::vector<std::string> patterns_;
};

/// False for empty/whitespace text or a refusal-pattern match.
bool is_valid_response(std::string_view text, const RefusalPatterns& patterns = RefusalPatterns::defaults());

struct Candidate {
  std::string text;
  bool valid = false;
  bool operator==(const Candidate&) const = default;
};

struct GenerationRecord {
  std::string hate_id;
  std::string hate_text;
  std::string method;
  std::string text;
  bool valid = false;
  GenerationParams params;
  std::optional<std::vector<Candidate>> candidates;
  bool operator==(const GenerationRecord&) const = default;
};

nlohmann::json to_json(const GenerationRecord& r);
GenerationRecord generation_record_from_json(const nlohmann::json& j);
std::vector<GenerationRecord> read_generations_jsonl(const std::filesystem::path& path);
void write_generations_jsonl(const std::filesystem::path& path, std::span<const GenerationRecord> records);

/// Fraction of valid records. Empty input is an InputError.
double valid_response_rate(std::span<const GenerationRecord> records);

}  // namespace cspeech
