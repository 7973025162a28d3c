#include "cspeech/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "cspeech/common.hpp"
#include "cspeech/textio.hpp"

namespace cspeech {

using nlohmann::json;

namespace {

constexpr std::string_view kSourceNames[] = {"benchmark_reddit", "benchmark_gab", "conan",
                                             "multiconan",       "reddit_live",   "synthetic"};
constexpr std::string_view kSplitNames[] = {"train", "test", "unassigned"};

using textio::for_each_json_line;

std::optional<std::string> opt_string(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<std::string>();
}

void check_unique_ids(const std::vector<CorpusRecord>& records, const std::vector<std::size_t>& lines) {
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < records.size(); ++i)
    if (!seen.insert(records[i].id).second)
      throw InputError("duplicate record id '" + records[i].id + "'", lines.empty() ? 0 : lines[i]);
}

// Column lookup by header name, case-insensitive.
std::size_t column(const textio::CsvRow& header, std::string_view name, bool required = true) {
  for (std::size_t i = 0; i < header.fields.size(); ++i)
    if (to_lower(trim(header.fields[i])) == to_lower(name)) return i;
  if (required) throw InputError("missing CSV column '" + std::string(name) + "'", header.line);
  return static_cast<std::size_t>(-1);
}

// Benchmark "text" cells hold numbered comments: "1. first\n2. \tsecond".
std::vector<std::string> split_numbered_comments(std::string_view text) {
  std::vector<std::string> comments;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    std::string t = trim(line);
    if (t.empty()) continue;
    std::size_t k = 0;
    while (k < t.size() && std::isdigit(static_cast<unsigned char>(t[k]))) ++k;
    if (k > 0 && k < t.size() && t[k] == '.') {
      comments.push_back(trim(t.substr(k + 1)));
    } else if (!comments.empty()) {
      comments.back() += " " + t;
    } else {
      comments.push_back(t);
    }
  }
  return comments;
}

std::vector<CorpusRecord> load_benchmark_csv(const std::filesystem::path& path, Source source) {
  auto rows = textio::parse_csv(textio::read_file(path));
  if (rows.empty()) return {};
  const auto& header = rows.front();
  const auto c_id = column(header, "id");
  const auto c_text = column(header, "text");
  const auto c_idx = column(header, "hate_speech_idx");
  const auto c_resp = column(header, "response");
  std::vector<CorpusRecord> out;
  std::vector<std::size_t> lines;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    const auto need = std::max({c_id, c_text, c_idx, c_resp});
    if (row.fields.size() <= need) throw InputError(path.string() + ": too few columns", row.line);
    RawConversation conv;
    conv.id = trim(row.fields[c_id]);
    conv.comments = split_numbered_comments(row.fields[c_text]);
    const std::string idx_cell = trim(row.fields[c_idx]);
    if (idx_cell.empty() || to_lower(idx_cell) == "n/a") continue;
    std::vector<std::string> idx, responses;
    try {
      idx = textio::parse_python_list(idx_cell);
      const std::string resp_cell = trim(row.fields[c_resp]);
      if (!resp_cell.empty() && to_lower(resp_cell) != "n/a") responses = textio::parse_python_list(resp_cell);
    } catch (const InputError& e) {
      throw InputError(path.string() + ": " + e.what(), row.line);
    }
    // Benchmark responses are written for the conversation's hate; every
    // marked comment receives the full list.
    std::vector<std::string> kept;
    for (auto& s : responses)
      if (!trim(s).empty()) kept.push_back(trim(s));
    for (const auto& s : idx) {
      std::size_t one_based = 0;
      try {
        one_based = std::stoul(s);
      } catch (...) {
        throw InputError(path.string() + ": bad hate_speech_idx '" + s + "'", row.line);
      }
      if (one_based == 0 || one_based > conv.comments.size())
        throw InputError(path.string() + ": hate_speech_idx " + s + " out of range", row.line);
      conv.hate.push_back({one_based - 1, kept});
    }
    std::vector<CorpusRecord> recs;
    try {
      recs = extract_pairs(conv, source);
    } catch (const InputError& e) {
      throw InputError(path.string() + ": " + e.what(), row.line);
    }
    for (auto& rec : recs) {
      out.push_back(std::move(rec));
      lines.push_back(row.line);
    }
  }
  check_unique_ids(out, lines);
  return out;
}

std::vector<CorpusRecord> load_conan(const std::filesystem::path& path) {
  const std::string text = textio::read_file(path);
  std::vector<std::pair<json, std::size_t>> items;
  const std::string head = trim(text.substr(0, std::min<std::size_t>(text.size(), 64)));
  bool whole_document = false;
  if (!head.empty() && head[0] == '[') whole_document = true;
  if (!head.empty() && head[0] == '{') {
    // Either a {"conan": [...]} document or JSONL of flat objects.
    try {
      json doc = json::parse(text);
      if (doc.is_object() && doc.contains("conan")) {
        for (auto& it : doc["conan"]) items.emplace_back(it, 0);
      } else {
        items.emplace_back(doc, 1);
      }
    } catch (const json::parse_error&) {
      for_each_json_line(path, [&](const json& j, std::size_t line) { items.emplace_back(j, line); });
    }
  } else if (whole_document) {
    try {
      for (auto& it : json::parse(text)) items.emplace_back(it, 0);
    } catch (const json::exception& e) {
      throw InputError(path.string() + ": invalid JSON: " + e.what());
    }
  }
  std::vector<CorpusRecord> out;
  std::vector<std::size_t> lines;
  std::size_t ordinal = 0;
  for (auto& [j, line] : items) {
    ++ordinal;
    const std::size_t where = line ? line : ordinal;
    try {
      CorpusRecord r;
      r.id = j.contains("cn_id") ? (j["cn_id"].is_string() ? j["cn_id"].get<std::string>()
                                                           : j["cn_id"].dump())
                                 : "conan-" + std::to_string(ordinal);
      r.hate_text = trim(j.at("hateSpeech").get<std::string>());
      r.reply_text = trim(j.at("counterSpeech").get<std::string>());
      r.source = Source::conan;
      validate(r, where);
      out.push_back(std::move(r));
      lines.push_back(where);
    } catch (const json::exception& e) {
      throw InputError(path.string() + ": malformed CONAN record: " + e.what(), where);
    }
  }
  check_unique_ids(out, lines);
  return out;
}

std::vector<CorpusRecord> load_multiconan(const std::filesystem::path& path) {
  auto rows = textio::parse_csv(textio::read_file(path));
  if (rows.empty()) return {};
  const auto& header = rows.front();
  const auto c_hs = column(header, "HATE_SPEECH");
  const auto c_cn = column(header, "COUNTER_NARRATIVE");
  const auto c_id = column(header, "INDEX", false);
  std::vector<CorpusRecord> out;
  std::vector<std::size_t> lines;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.fields.size() <= std::max(c_hs, c_cn)) throw InputError(path.string() + ": too few columns", row.line);
    CorpusRecord rec;
    rec.id = (c_id != static_cast<std::size_t>(-1) && c_id < row.fields.size() && !trim(row.fields[c_id]).empty())
                 ? "multiconan-" + trim(row.fields[c_id])
                 : "multiconan-" + std::to_string(r);
    rec.hate_text = trim(row.fields[c_hs]);
    rec.reply_text = trim(row.fields[c_cn]);
    rec.source = Source::multiconan;
    validate(rec, row.line);
    out.push_back(std::move(rec));
    lines.push_back(row.line);
  }
  check_unique_ids(out, lines);
  return out;
}

std::vector<CorpusRecord> load_normalized(const std::filesystem::path& path, std::optional<Source> force) {
  std::vector<CorpusRecord> out;
  std::vector<std::size_t> lines;
  for_each_json_line(path, [&](const json& j, std::size_t line) {
    CorpusRecord r = corpus_record_from_json(j);
    if (force) r.source = *force;
    validate(r, line);
    out.push_back(std::move(r));
    lines.push_back(line);
  });
  check_unique_ids(out, lines);
  return out;
}

}  // namespace

std::string_view to_string(Source s) { return kSourceNames[static_cast<std::size_t>(s)]; }
std::string_view to_string(Split s) { return kSplitNames[static_cast<std::size_t>(s)]; }

Source parse_source(std::string_view s) {
  for (std::size_t i = 0; i < std::size(kSourceNames); ++i)
    if (kSourceNames[i] == s) return static_cast<Source>(i);
  throw ConfigError("unknown source '" + std::string(s) + "'");
}

Split parse_split(std::string_view s) {
  for (std::size_t i = 0; i < std::size(kSplitNames); ++i)
    if (kSplitNames[i] == s) return static_cast<Split>(i);
  throw ConfigError("unknown split '" + std::string(s) + "'");
}

std::optional<std::size_t> OutcomeExample::label(TaskName task) const {
  if (task == TaskName::incivility) {
    if (incivility) return static_cast<std::size_t>(*incivility);
    return std::nullopt;
  }
  if (reentry) return static_cast<std::size_t>(*reentry);
  return std::nullopt;
}

json to_json(const CorpusRecord& r) {
  json j;
  j["id"] = r.id;
  j["hate_text"] = r.hate_text;
  j["reply_text"] = r.reply_text ? json(*r.reply_text) : json(nullptr);
  j["source"] = to_string(r.source);
  j["split"] = to_string(r.split);
  return j;
}

CorpusRecord corpus_record_from_json(const json& j) {
  CorpusRecord r;
  r.id = j.at("id").get<std::string>();
  r.hate_text = j.at("hate_text").get<std::string>();
  r.reply_text = opt_string(j, "reply_text");
  r.source = parse_source(j.at("source").get<std::string>());
  auto split = opt_string(j, "split");
  r.split = split ? parse_split(*split) : Split::unassigned;
  return r;
}

json to_json(const OutcomeExample& e) {
  json j;
  j["id"] = e.id;
  j["hate_text"] = e.hate_text;
  j["reply_text"] = e.reply_text;
  j["incivility"] = e.incivility ? json(to_string(*e.incivility)) : json(nullptr);
  j["reentry"] = e.reentry ? json(to_string(*e.reentry)) : json(nullptr);
  return j;
}

OutcomeExample outcome_example_from_json(const json& j) {
  OutcomeExample e;
  e.id = j.at("id").get<std::string>();
  e.hate_text = j.at("hate_text").get<std::string>();
  e.reply_text = j.at("reply_text").get<std::string>();
  if (auto s = opt_string(j, "incivility")) e.incivility = parse_incivility(*s);
  if (auto s = opt_string(j, "reentry")) e.reentry = parse_reentry(*s);
  return e;
}

void validate(const CorpusRecord& r, std::size_t line) {
  if (r.id.empty()) throw InputError("record has empty id", line);
  if (trim(r.hate_text).empty()) throw InputError("record '" + r.id + "' has empty hate_text", line);
}

void validate(const OutcomeExample& e, std::size_t line) {
  if (e.id.empty()) throw InputError("outcome example has empty id", line);
  if (trim(e.hate_text).empty() || trim(e.reply_text).empty())
    throw InputError("outcome example '" + e.id + "' has empty text", line);
  if (!e.incivility && !e.reentry) throw InputError("outcome example '" + e.id + "' carries no label", line);
}

std::vector<CorpusRecord> load_corpus(const std::filesystem::path& path, std::string_view format) {
  if (format == "jsonl") return load_normalized(path, std::nullopt);
  const Source source = parse_source(format);
  if (!std::filesystem::exists(path)) throw IoError("no such file: " + path.string());
  switch (source) {
    case Source::benchmark_reddit:
    case Source::benchmark_gab:
      return load_benchmark_csv(path, source);
    case Source::conan:
      return load_conan(path);
    case Source::multiconan:
      return load_multiconan(path);
    case Source::reddit_live:
    case Source::synthetic:
      return load_normalized(path, source);
  }
  throw ConfigError("unsupported format");
}

std::vector<CorpusRecord> read_corpus_jsonl(const std::filesystem::path& path) {
  return load_normalized(path, std::nullopt);
}

void write_corpus_jsonl(const std::filesystem::path& path, const std::vector<CorpusRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    validate(r);
    out += to_json(r).dump();
    out += '\n';
  }
  textio::write_file(path, out);
}

std::vector<OutcomeExample> read_outcomes_jsonl(const std::filesystem::path& path) {
  std::vector<OutcomeExample> out;
  for_each_json_line(path, [&](const json& j, std::size_t line) {
    auto e = outcome_example_from_json(j);
    validate(e, line);
    out.push_back(std::move(e));
  });
  return out;
}

void write_outcomes_jsonl(const std::filesystem::path& path, const std::vector<OutcomeExample>& examples) {
  std::string out;
  for (const auto& e : examples) {
    validate(e);
    out += to_json(e).dump();
    out += '\n';
  }
  textio::write_file(path, out);
}

std::vector<CorpusRecord> extract_pairs(const RawConversation& conv, Source source) {
  std::vector<CorpusRecord> out;
  for (const auto& mark : conv.hate) {
    if (mark.comment_index >= conv.comments.size())
      throw InputError("conversation '" + conv.id + "' marks comment " + std::to_string(mark.comment_index + 1) +
                       " of " + std::to_string(conv.comments.size()));
    const std::string& hate = conv.comments[mark.comment_index];
    for (std::size_t k = 0; k < mark.responses.size(); ++k) {
      CorpusRecord r;
      r.id = conv.id + "-" + std::to_string(mark.comment_index + 1) + "-" + std::to_string(k + 1);
      r.hate_text = hate;
      r.reply_text = mark.responses[k];
      r.source = source;
      validate(r);
      out.push_back(std::move(r));
    }
  }
  return out;
}

SplitResult split_corpus(const std::vector<CorpusRecord>& records, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw ConfigError("train_fraction must lie in (0, 1), got " + format_double(train_fraction));
  if (records.empty()) throw ConfigError("cannot split an empty corpus");
  const std::size_t n = records.size();
  std::vector<std::uint64_t> key(n);
  for (std::size_t i = 0; i < n; ++i) key[i] = derive_seed(seed, records[i].id);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (key[a] != key[b]) return key[a] < key[b];
    if (records[a].id != records[b].id) return records[a].id < records[b].id;
    return a < b;
  });
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  std::vector<bool> is_train(n, false);
  for (std::size_t k = 0; k < n_train; ++k) is_train[order[k]] = true;
  SplitResult res;
  res.train.reserve(n_train);
  res.test.reserve(n - n_train);
  for (std::size_t i = 0; i < n; ++i) {
    CorpusRecord r = records[i];
    r.split = is_train[i] ? Split::train : Split::test;
    (is_train[i] ? res.train : res.test).push_back(std::move(r));
  }
  return res;
}

Incivility label_incivility(const ConversationThread& thread, const IncivilityRule& rule) {
  const auto [low_cut, high_cut] = rule.popularity_cutoffs;
  if (!(low_cut < high_cut)) throw ConfigError("popularity cutoffs must satisfy low < high");
  const std::size_t n = thread.followups.size();
  if (n == 0) return Incivility::medium;
  const auto hateful = static_cast<std::size_t>(
      std::count_if(thread.followups.begin(), thread.followups.end(), [](const Followup& f) { return f.is_hateful; }));
  const double fraction = static_cast<double>(hateful) / static_cast<double>(n);
  if (fraction > rule.hate_fraction_cutoff) return Incivility::high;
  if (n >= static_cast<std::size_t>(high_cut)) return Incivility::low;
  return Incivility::medium;
}

Reentry label_reentry(const ConversationThread& thread) {
  if (!thread.hater_id) throw InputError("thread '" + thread.hate_comment.id + "' has no hater id");
  bool returned = false;
  for (const auto& f : thread.followups) {
    if (f.author_id != *thread.hater_id) continue;
    if (f.is_hateful) return Reentry::hate_reentry;
    returned = true;
  }
  return returned ? Reentry::nonhate_reentry : Reentry::no_reentry;
}

std::vector<ConversationThread> read_threads_jsonl(const std::filesystem::path& path) {
  std::vector<ConversationThread> out;
  for_each_json_line(path, [&](const json& j, std::size_t line) {
    ConversationThread t;
    t.hate_comment.id = j.at("id").get<std::string>();
    t.hate_comment.hate_text = j.at("hate_text").get<std::string>();
    t.hate_comment.source = Source::reddit_live;
    t.reply_text = j.at("reply_text").get<std::string>();
    t.hater_id = opt_string(j, "hater_id");
    if (auto it = j.find("followups"); it != j.end())
      for (const auto& f : *it)
        t.followups.push_back({f.at("author_id").get<std::string>(), f.value("text", std::string{}),
                               f.value("is_hateful", false)});
    validate(t.hate_comment, line);
    out.push_back(std::move(t));
  });
  return out;
}

std::vector<OutcomeExample> label_threads(const std::vector<ConversationThread>& threads, const IncivilityRule& rule) {
  std::vector<OutcomeExample> out;
  out.reserve(threads.size());
  for (const auto& t : threads) {
    OutcomeExample e;
    e.id = t.hate_comment.id;
    e.hate_text = t.hate_comment.hate_text;
    e.reply_text = t.reply_text;
    e.incivility = label_incivility(t, rule);
    if (t.hater_id) e.reentry = label_reentry(t);
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace cspeech
