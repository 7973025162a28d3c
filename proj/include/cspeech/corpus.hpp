#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cspeech/outcome.hpp"

namespace cspeech {

enum class Source { benchmark_reddit, benchmark_gab, conan, multiconan, reddit_live, synthetic };
enum class Split { train, test, unassigned };

std::string_view to_string(Source s);
std::string_view to_string(Split s);
Source parse_source(std::string_view s);
Split parse_split(std::string_view s);

/// One hate comment with (optionally) one reply.
struct CorpusRecord {
  std::string id;
  std::string hate_text;
  std::optional<std::string> reply_text;
  Source source = Source::synthetic;
  Split split = Split::unassigned;

  bool operator==(const CorpusRecord&) const = default;
};

/// Hate/reply pair with at least one conversation-outcome label.
struct OutcomeExample {
  std::string id;
  std::string hate_text;
  std::string reply_text;
  std::optional<Incivility> incivility;
  std::optional<Reentry> reentry;

  /// Label index for the given task, if present.
  std::optional<std::size_t> label(TaskName task) const;

  bool operator==(const OutcomeExample&) const = default;
};

struct Followup {
  std::string author_id;
  std::string text;
  bool is_hateful = false;
};

/// A reply to a hate comment plus the conversation that followed it.
/// Followups are in time order.
struct ConversationThread {
  CorpusRecord hate_comment;
  std::string reply_text;
  std::optional<std::string> hater_id;
  std::vector<Followup> followups;
};

/// A conversation as found in the benchmark dumps: numbered comments, some of
/// them marked hateful, each hateful one with its own list of responses.
struct RawConversation {
  struct HateMark {
    std::size_t comment_index;  // 0-based into comments
    std::vector<std::string> responses;
  };
  std::string id;
  std::vector<std::string> comments;
  std::vector<HateMark> hate;
};

// Serialization of the normalized line formats.
nlohmann::json to_json(const CorpusRecord& r);
CorpusRecord corpus_record_from_json(const nlohmann::json& j);
nlohmann::json to_json(const OutcomeExample& e);
OutcomeExample outcome_example_from_json(const nlohmann::json& j);

/// Checks the record invariants; throws InputError naming `line`.
void validate(const CorpusRecord& r, std::size_t line = 0);
void validate(const OutcomeExample& e, std::size_t line = 0);

/// Reads a corpus in the given input format. Accepted formats are the source
/// names plus "jsonl" (the normalized format with source/split preserved).
/// Native layouts:
///   benchmark_reddit, benchmark_gab : CSV with columns id,text,hate_speech_idx,response
///   conan                           : JSON {"conan": [{cn_id, hateSpeech, counterSpeech}]} or JSONL of the same objects
///   multiconan                      : CSV with columns HATE_SPEECH,COUNTER_NARRATIVE (INDEX optional)
///   reddit_live, synthetic          : normalized JSONL; source is forced to the format
std::vector<CorpusRecord> load_corpus(const std::filesystem::path& path, std::string_view format);

/// Normalized corpus.jsonl I/O.
std::vector<CorpusRecord> read_corpus_jsonl(const std::filesystem::path& path);
void write_corpus_jsonl(const std::filesystem::path& path, const std::vector<CorpusRecord>& records);

std::vector<OutcomeExample> read_outcomes_jsonl(const std::filesystem::path& path);
void write_outcomes_jsonl(const std::filesystem::path& path, const std::vector<OutcomeExample>& examples);

/// One record per (hate comment, response). Responses attach only to the
/// hate comment they were written for. Ids are "<conversation>-<comment>-<response>".
std::vector<CorpusRecord> extract_pairs(const RawConversation& conversation, Source source);

struct SplitResult {
  std::vector<CorpusRecord> train;
  std::vector<CorpusRecord> test;
};

/// Seeded train/test partition. Records are ordered by a seeded hash of their
/// id, so the partition does not depend on ingestion order; the first
/// round(train_fraction * N) go to train. Both halves keep input order.
SplitResult split_corpus(const std::vector<CorpusRecord>& records, double train_fraction, std::uint64_t seed);

struct IncivilityRule {
  std::pair<int, int> popularity_cutoffs{2, 5};
  double hate_fraction_cutoff = 0.25;
};

/// Depends only on the number of followups and the hateful fraction.
Incivility label_incivility(const ConversationThread& thread, const IncivilityRule& rule = {});

/// Throws InputError when hater_id is absent.
Reentry label_reentry(const ConversationThread& thread);

/// Threads file: one JSON object per line,
/// {id, hate_text, reply_text, hater_id|null, followups: [{author_id, text, is_hateful}]}.
std::vector<ConversationThread> read_threads_jsonl(const std::filesystem::path& path);

/// Labels every thread. Reentry is left empty for threads without hater_id.
std::vector<OutcomeExample> label_threads(const std::vector<ConversationThread>& threads,
                                          const IncivilityRule& rule = {});

}  // namespace cspeech
