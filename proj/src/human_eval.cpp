#include "cspeech/human_eval.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <set>

#include "cspeech/common.hpp"
#include "cspeech/log.hpp"
#include "cspeech/textio.hpp"

namespace cspeech::human_eval {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::size_t idx(Dimension d) { return static_cast<std::size_t>(d); }

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

bool yes_no(const json& j, const std::string& key) {
  if (!j.contains(key) || j[key].is_null()) throw ValidationError("missing dimension '" + key + "'");
  const auto& v = j[key];
  if (v.is_boolean()) return v.get<bool>();
  if (v.is_string()) {
    const auto s = to_lower(v.get<std::string>());
    if (s == "yes") return true;
    if (s == "no") return false;
  }
  throw ValidationError("dimension '" + key + "' must be yes or no");
}

std::string required_string(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key) || !j[key].is_string() || j[key].get<std::string>().empty())
    throw ValidationError(std::string("missing '") + key + "'");
  return j[key].get<std::string>();
}

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (const auto& s : v) out += (out.empty() ? "" : ", ") + s;
  return out;
}

}  // namespace

std::string_view to_string(Dimension d) {
  switch (d) {
    case Dimension::suitableness: return "suitableness";
    case Dimension::relevance: return "relevance";
    case Dimension::effectiveness: return "effectiveness";
  }
  return "?";
}

Dimension parse_dimension(std::string_view s) {
  for (auto d : kDimensions)
    if (to_string(d) == s) return d;
  throw ValidationError("unknown dimension '" + std::string(s) + "'");
}

json to_json(const AnnotationTask& t) {
  return {{"task_id", t.task_id},
          {"hate_text", t.hate_text},
          {"reply_text", t.reply_text},
          {"hidden_method", t.hidden_method},
          {"display_order", t.display_order}};
}

AnnotationTask annotation_task_from_json(const json& j) {
  return {j.at("task_id").get<std::string>(), j.at("hate_text").get<std::string>(), j.at("reply_text").get<std::string>(),
          j.at("hidden_method").get<std::string>(), j.at("display_order").get<int>()};
}

json annotator_payload(const AnnotationTask& t) {
  return {{"task_id", t.task_id}, {"hate_text", t.hate_text}, {"reply_text", t.reply_text}};
}

json to_json(const LabelRecord& r) {
  json j{{"task_id", r.task_id}, {"annotator_id", r.annotator_id}};
  for (auto d : kDimensions) j[std::string(to_string(d))] = r.answer(d);
  j["timestamp"] = r.timestamp;
  return j;
}

LabelRecord label_record_from_json(const json& j) {
  LabelRecord r;
  r.task_id = required_string(j, "task_id");
  r.annotator_id = required_string(j, "annotator_id");
  for (auto d : kDimensions) r.answers[idx(d)] = yes_no(j, std::string(to_string(d)));
  if (j.contains("timestamp") && j["timestamp"].is_string()) r.timestamp = j["timestamp"].get<std::string>();
  return r;
}

json to_json(const Adjudication& a) {
  return {{"task_id", a.task_id},
          {"dimension", to_string(a.dimension)},
          {"final_label", a.final_label},
          {"rationale", a.rationale},
          {"timestamp", a.timestamp}};
}

Adjudication adjudication_from_json(const json& j) {
  Adjudication a;
  a.task_id = required_string(j, "task_id");
  a.dimension = parse_dimension(required_string(j, "dimension"));
  a.final_label = yes_no(j, "final_label");
  a.rationale = required_string(j, "rationale");
  if (j.contains("timestamp") && j["timestamp"].is_string()) a.timestamp = j["timestamp"].get<std::string>();
  return a;
}

// ---- sampling -------------------------------------------------------------

std::vector<AnnotationTask> sample_for_annotation(std::span<const MethodRun> runs, std::size_t k, std::uint64_t seed) {
  if (k == 0) throw ValidationError("sample_for_annotation: k must be positive");
  std::vector<AnnotationTask> tasks;
  std::set<std::string> methods, ids;
  for (const auto& run : runs) {
    if (!methods.insert(run.method).second) throw ValidationError("method listed twice: " + run.method);
    std::vector<std::size_t> valid;
    for (std::size_t i = 0; i < run.records.size(); ++i)
      if (run.records[i].valid) valid.push_back(i);
    if (valid.size() < k)
      throw ValidationError(run.method + " has " + std::to_string(valid.size()) + " valid generations, need " +
                            std::to_string(k));
    Rng rng(derive_seed(seed, "human-eval/sample/" + run.method));
    for (std::size_t i = 0; i < k; ++i) {
      std::swap(valid[i], valid[i + rng.index(valid.size() - i)]);
      const auto& r = run.records[valid[i]];
      char id[24];
      std::snprintf(id, sizeof id, "t%016llx",
                    static_cast<unsigned long long>(derive_seed(seed, "human-eval/task/" + run.method + "/" + r.hate_id +
                                                                          "/" + std::to_string(valid[i]))));
      if (!ids.insert(id).second) throw ValidationError("task id collision; change the seed");
      tasks.push_back({id, r.hate_text, r.text, run.method, 0});
    }
  }
  Rng rng(derive_seed(seed, "human-eval/shuffle"));
  for (std::size_t i = tasks.size(); i > 1; --i) std::swap(tasks[i - 1], tasks[rng.index(i)]);
  for (std::size_t i = 0; i < tasks.size(); ++i) tasks[i].display_order = static_cast<int>(i);
  return tasks;
}

// ---- agreement and summary ------------------------------------------------

json to_json(const AgreementReport& r) {
  json dims = json::object();
  for (auto d : kDimensions) {
    const auto& a = r.dimensions[idx(d)];
    dims[std::string(to_string(d))] = {{"rate", a.rate}, {"kappa", a.kappa}, {"disagreements", a.disagreements}};
  }
  return {{"tasks", r.tasks}, {"dimensions", dims}};
}

AgreementReport agreement_rate(std::span<const LabelRecord> labels_a, std::span<const LabelRecord> labels_b) {
  const auto by_task = [](std::span<const LabelRecord> ls, const char* who) {
    std::map<std::string, const LabelRecord*> m;
    for (const auto& l : ls)
      if (!m.emplace(l.task_id, &l).second) throw ValidationError(std::string("annotator ") + who + " labeled " + l.task_id + " twice");
    return m;
  };
  const auto a = by_task(labels_a, "a");
  const auto b = by_task(labels_b, "b");
  if (a.empty()) throw ValidationError("agreement: no labels");
  std::vector<std::string> only;
  for (const auto& [t, _] : a)
    if (!b.count(t)) only.push_back(t);
  for (const auto& [t, _] : b)
    if (!a.count(t)) only.push_back(t);
  if (!only.empty()) throw ValidationError("agreement: task sets differ on " + join(only));

  AgreementReport r;
  r.tasks = a.size();
  const double n = static_cast<double>(a.size());
  for (auto d : kDimensions) {
    auto& out = r.dimensions[idx(d)];
    std::size_t same = 0, yes_a = 0, yes_b = 0;
    for (const auto& [t, la] : a) {
      const auto* lb = b.at(t);
      if (la->answer(d) == lb->answer(d))
        ++same;
      else
        out.disagreements.push_back(t);
      yes_a += la->answer(d);
      yes_b += lb->answer(d);
    }
    out.rate = static_cast<double>(same) / n;
    const double pa = static_cast<double>(yes_a) / n, pb = static_cast<double>(yes_b) / n;
    const double pe = pa * pb + (1 - pa) * (1 - pb);
    out.kappa = pe < 1.0 ? (out.rate - pe) / (1.0 - pe) : 1.0;
  }
  return r;
}

std::vector<MethodSummary> summarize(std::span<const AnnotationTask> tasks, std::span<const LabelRecord> labels,
                                     std::span<const Adjudication> adjudications,
                                     const std::pair<std::string, std::string>& annotators) {
  std::map<std::pair<std::string, std::string>, const LabelRecord*> by_pair;
  for (const auto& l : labels) by_pair[{l.task_id, l.annotator_id}] = &l;
  std::map<std::pair<std::string, Dimension>, bool> final_adj;
  for (const auto& a : adjudications) final_adj[{a.task_id, a.dimension}] = a.final_label;

  std::map<std::string, MethodSummary> acc;
  std::vector<std::string> unfinalized;
  for (const auto& t : tasks) {
    const auto ia = by_pair.find({t.task_id, annotators.first});
    const auto ib = by_pair.find({t.task_id, annotators.second});
    if (ia == by_pair.end() || ib == by_pair.end()) {
      unfinalized.push_back(t.task_id);
      continue;
    }
    std::array<bool, 3> final{};
    bool ok = true;
    for (auto d : kDimensions) {
      if (ia->second->answer(d) == ib->second->answer(d)) {
        final[idx(d)] = ia->second->answer(d);
      } else if (const auto adj = final_adj.find({t.task_id, d}); adj != final_adj.end()) {
        final[idx(d)] = adj->second;
      } else {
        ok = false;
      }
    }
    if (!ok) {
      unfinalized.push_back(t.task_id);
      continue;
    }
    auto& m = acc[t.hidden_method];
    m.method = t.hidden_method;
    ++m.tasks;
    for (auto d : kDimensions) m.yes[idx(d)] += final[idx(d)] ? 1.0 : 0.0;
  }
  if (!unfinalized.empty()) throw ValidationError("tasks not finalized: " + join(unfinalized));
  std::vector<MethodSummary> out;
  for (auto& [_, m] : acc) {
    for (double& y : m.yes) y /= static_cast<double>(m.tasks);
    out.push_back(m);
  }
  return out;
}

std::string summary_csv(std::span<const MethodSummary> summary) {
  std::string out = textio::csv_line({"method", "tasks", "suitableness", "relevance", "effectiveness"}) + "\n";
  for (const auto& m : summary)
    out += textio::csv_line({m.method, std::to_string(m.tasks), format_double(m.yes[0]), format_double(m.yes[1]),
                             format_double(m.yes[2])}) +
           "\n";
  return out;
}

json to_json(std::span<const MethodSummary> summary) {
  json out = json::array();
  for (const auto& m : summary) {
    json row{{"method", m.method}, {"tasks", m.tasks}};
    for (auto d : kDimensions) row[std::string(to_string(d))] = m.yes[idx(d)];
    out.push_back(row);
  }
  return out;
}

// ---- study ----------------------------------------------------------------

void Study::create(const fs::path& dir, std::span<const AnnotationTask> tasks,
                   const std::pair<std::string, std::string>& annotators) {
  if (annotators.first.empty() || annotators.second.empty() || annotators.first == annotators.second)
    throw ValidationError("a study needs two distinct annotator ids");
  if (tasks.empty()) throw ValidationError("a study needs at least one task");
  if (fs::exists(dir / "study.json")) throw ConflictError("study already exists in " + dir.string());
  std::string lines;
  for (const auto& t : tasks) lines += to_json(t).dump() + "\n";
  textio::write_file(dir / "tasks.jsonl", lines);
  textio::write_file(dir / "labels.jsonl", "");
  textio::write_file(dir / "adjudications.jsonl", "");
  textio::write_file(dir / "study.json",
                     json{{"annotators", {annotators.first, annotators.second}}}.dump(2) + "\n");
}

Study::Study(fs::path dir, Clock clock) : dir_(std::move(dir)), clock_(clock ? std::move(clock) : Clock(utc_now)) {
  if (!fs::exists(dir_ / "study.json")) throw NotFoundError("no study in " + dir_.string());
  json meta;
  try {
    meta = json::parse(textio::read_file(dir_ / "study.json"));
    const auto a = meta.at("annotators").get<std::vector<std::string>>();
    if (a.size() != 2 || a[0] == a[1]) throw ValidationError("study.json: need two distinct annotators");
    annotators_ = {a[0], a[1]};
  } catch (const json::exception& e) {
    throw InputError(std::string("study.json: ") + e.what());
  }
  auto s = std::make_shared<State>();
  textio::for_each_json_line(dir_ / "tasks.jsonl",
                             [&](const json& j, std::size_t) { s->tasks.push_back(annotation_task_from_json(j)); });
  std::stable_sort(s->tasks.begin(), s->tasks.end(),
                   [](const auto& a, const auto& b) { return a.display_order < b.display_order; });
  for (std::size_t i = 0; i < s->tasks.size(); ++i)
    if (!s->task_index.emplace(s->tasks[i].task_id, i).second)
      throw InputError("tasks.jsonl: duplicate task id " + s->tasks[i].task_id);
  if (fs::exists(dir_ / "labels.jsonl"))
    textio::for_each_json_line(dir_ / "labels.jsonl", [&](const json& j, std::size_t line) {
      auto r = label_record_from_json(j);
      if (!s->label_index.emplace(std::pair{r.task_id, r.annotator_id}, s->labels.size()).second)
        throw InputError("labels.jsonl: duplicate label", line);
      s->labels.push_back(std::move(r));
    });
  if (fs::exists(dir_ / "adjudications.jsonl"))
    textio::for_each_json_line(dir_ / "adjudications.jsonl",
                               [&](const json& j, std::size_t) { s->adjudications.push_back(adjudication_from_json(j)); });
  state_ = std::move(s);
}

void Study::check_annotator(const std::string& id) const {
  if (id != annotators_.first && id != annotators_.second) throw AuthorizationError("unknown annotator '" + id + "'");
}

std::optional<AnnotationTask> Study::next_task(const std::string& annotator_id) const {
  check_annotator(annotator_id);
  const auto s = snapshot();
  for (const auto& t : s->tasks)
    if (!s->label_index.count({t.task_id, annotator_id})) return t;
  return std::nullopt;
}

LabelRecord Study::submit_label(LabelRecord record) {
  check_annotator(record.annotator_id);
  std::lock_guard lock(write_mutex_);
  const auto cur = snapshot();
  if (!cur->task_index.count(record.task_id)) throw NotFoundError("unknown task '" + record.task_id + "'");
  if (cur->label_index.count({record.task_id, record.annotator_id}))
    throw ConflictError(record.annotator_id + " already labeled " + record.task_id);
  record.timestamp = clock_();
  textio::append_line(dir_ / "labels.jsonl", to_json(record).dump());
  auto next = std::make_shared<State>(*cur);
  next->label_index.emplace(std::pair{record.task_id, record.annotator_id}, next->labels.size());
  next->labels.push_back(record);
  std::atomic_store(&state_, std::shared_ptr<const State>(std::move(next)));
  return record;
}

std::pair<const LabelRecord*, const LabelRecord*> Study::pair_labels(const State& s, const std::string& task_id) const {
  const auto a = s.label_index.find({task_id, annotators_.first});
  const auto b = s.label_index.find({task_id, annotators_.second});
  return {a == s.label_index.end() ? nullptr : &s.labels[a->second],
          b == s.label_index.end() ? nullptr : &s.labels[b->second]};
}

AgreementReport Study::agreement() const {
  const auto s = snapshot();
  std::vector<LabelRecord> a, b;
  for (const auto& t : s->tasks) {
    const auto [la, lb] = pair_labels(*s, t.task_id);
    if (la && lb) {
      a.push_back(*la);
      b.push_back(*lb);
    }
  }
  if (a.empty()) throw ValidationError("no task has been labeled by both annotators");
  return agreement_rate(a, b);
}

std::vector<Study::Disagreement> Study::disagreements() const {
  const auto s = snapshot();
  std::set<std::pair<std::string, Dimension>> adjudicated;
  for (const auto& a : s->adjudications) adjudicated.insert({a.task_id, a.dimension});
  std::vector<Disagreement> out;
  for (const auto& t : s->tasks) {
    const auto [la, lb] = pair_labels(*s, t.task_id);
    if (!la || !lb) continue;
    for (auto d : kDimensions)
      if (la->answer(d) != lb->answer(d)) out.push_back({t.task_id, d, adjudicated.count({t.task_id, d}) > 0});
  }
  return out;
}

Adjudication Study::adjudicate(Adjudication a) {
  if (trim(a.rationale).empty()) throw ValidationError("adjudication needs a rationale");
  std::lock_guard lock(write_mutex_);
  const auto cur = snapshot();
  if (!cur->task_index.count(a.task_id)) throw NotFoundError("unknown task '" + a.task_id + "'");
  const auto [la, lb] = pair_labels(*cur, a.task_id);
  if (!la || !lb) throw ValidationError(a.task_id + " has not been labeled by both annotators");
  if (la->answer(a.dimension) == lb->answer(a.dimension))
    throw ValidationError("no disagreement on " + std::string(to_string(a.dimension)) + " for " + a.task_id);
  a.timestamp = clock_();
  textio::append_line(dir_ / "adjudications.jsonl", to_json(a).dump());
  auto next = std::make_shared<State>(*cur);
  next->adjudications.push_back(a);
  std::atomic_store(&state_, std::shared_ptr<const State>(std::move(next)));
  return a;
}

std::vector<MethodSummary> Study::summary() const {
  const auto s = snapshot();
  return summarize(s->tasks, s->labels, s->adjudications, annotators_);
}

std::vector<AnnotationTask> Study::tasks() const { return snapshot()->tasks; }
std::vector<LabelRecord> Study::labels() const { return snapshot()->labels; }
std::vector<Adjudication> Study::adjudications() const { return snapshot()->adjudications; }

bool Study::export_to(const fs::path& out_dir) const {
  const auto s = snapshot();
  std::string labels, adjudications;
  for (const auto& l : s->labels) labels += to_json(l).dump() + "\n";
  for (const auto& a : s->adjudications) adjudications += to_json(a).dump() + "\n";
  textio::write_file(out_dir / "labels.jsonl", labels);
  textio::write_file(out_dir / "adjudications.jsonl", adjudications);
  try {
    textio::write_file(out_dir / "summary.csv", summary_csv(summarize(s->tasks, s->labels, s->adjudications, annotators_)));
    return true;
  } catch (const ValidationError& e) {
    log_warn(std::string("summary not written: ") + e.what());
    return false;
  }
}

}  // namespace cspeech::human_eval
