#include "cspeech/harness.hpp"

#include <algorithm>
#include <set>

#include "cspeech/common.hpp"
#include "cspeech/log.hpp"
#include "cspeech/parallel.hpp"
#include "cspeech/policy.hpp"
#include "cspeech/textio.hpp"

namespace cspeech {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

void check_keys(const json& j, std::initializer_list<std::string_view> allowed, std::string_view what) {
  if (!j.is_object()) throw ConfigError(std::string(what) + ": expected an object");
  for (const auto& [key, _] : j.items())
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw ConfigError(std::string(what) + ": unknown key '" + key + "'");
}

json read_json_file(const fs::path& path) {
  try {
    return json::parse(textio::read_file(path));
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

template <typename T>
T get_field(const json& j, const char* key, std::string_view what) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string(what) + ": bad or missing '" + key + "'");
  }
}

std::string method_name(const MethodName& m) { return format_method(m); }

}  // namespace

// ---- configuration --------------------------------------------------------

GatewayConfig gateway_config_from_json(const json& j, const fs::path& base_dir) {
  check_keys(j, {"backend", "url_env", "token_env", "max_in_flight", "params", "refusal_patterns"}, "gateway");
  GatewayConfig c;
  c.backend = j.value("backend", c.backend);
  if (c.backend != "http" && c.backend != "scripted") throw ConfigError("gateway: unknown backend '" + c.backend + "'");
  c.url_env = j.value("url_env", c.url_env);
  c.token_env = j.value("token_env", c.token_env);
  c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
  if (c.max_in_flight < 1) throw ConfigError("gateway: max_in_flight must be >= 1");
  try {
    c.params = generation_params_from_json(j.value("params", json::object()));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("gateway params: ") + e.what());
  }
  if (j.contains("refusal_patterns")) c.refusal_patterns = resolve(base_dir, get_field<std::string>(j, "refusal_patterns", "gateway"));
  return c;
}

GatewayConfig load_gateway_config(const fs::path& path) {
  return gateway_config_from_json(read_json_file(path), path.parent_path());
}

std::shared_ptr<const ChatBackend> make_chat_backend(const GatewayConfig& config) {
  if (config.backend == "scripted") return std::make_shared<ScriptedBackend>();
  return std::make_shared<HttpChatBackend>(HttpEndpoint::from_env(config.url_env.c_str(), config.token_env.c_str()),
                                           config.max_in_flight);
}

RefusalPatterns load_refusal_patterns(const GatewayConfig& config) {
  return config.refusal_patterns ? RefusalPatterns::load(*config.refusal_patterns) : RefusalPatterns::defaults();
}

void ExperimentConfig::validate() const {
  if (methods.empty()) throw ConfigError("experiment: empty method list");
  std::set<std::string> seen;
  for (const auto& m : methods) {
    parse_method(m);
    if (!seen.insert(m).second) throw ConfigError("experiment: duplicate method " + m);
  }
  if (corpus.empty() || !fs::exists(corpus)) throw ConfigError("experiment: corpus not found: " + corpus.string());
  if (references.empty() || !fs::exists(references))
    throw ConfigError("experiment: references not found: " + references.string());
  if (output.empty()) throw ConfigError("experiment: output directory not set");
  if (embedder != "hashed" && embedder != "onehot" && embedder != "http")
    throw ConfigError("experiment: unknown embedder '" + embedder + "'");
  if (acceptability != "heuristic" && acceptability != "http")
    throw ConfigError("experiment: unknown acceptability scorer '" + acceptability + "'");
  if (workers < 0) throw ConfigError("experiment: workers must be >= 0");
}

ExperimentConfig experiment_config_from_json(const json& j, const fs::path& base_dir) {
  check_keys(j,
             {"methods", "corpus", "references", "classifiers", "gateway", "policies", "embedder", "acceptability",
              "seed", "workers", "execution", "output"},
             "experiment");
  ExperimentConfig c;
  if (!j.contains("methods")) throw ConfigError("experiment: 'methods' is required");
  if (j["methods"].is_string()) {
    if (j["methods"] != "grid") throw ConfigError("experiment: methods must be a list or \"grid\"");
    c.methods = standard_grid();
  } else {
    c.methods = get_field<std::vector<std::string>>(j, "methods", "experiment");
  }
  c.corpus = resolve(base_dir, get_field<std::string>(j, "corpus", "experiment"));
  c.references = j.contains("references") ? resolve(base_dir, get_field<std::string>(j, "references", "experiment"))
                                          : c.corpus;
  if (j.contains("classifiers")) {
    const auto& cl = j["classifiers"];
    check_keys(cl, {"incivility", "reentry"}, "classifiers");
    if (cl.contains("incivility")) c.incivility_classifier = resolve(base_dir, get_field<std::string>(cl, "incivility", "classifiers"));
    if (cl.contains("reentry")) c.reentry_classifier = resolve(base_dir, get_field<std::string>(cl, "reentry", "classifiers"));
  }
  if (j.contains("gateway")) {
    if (j["gateway"].is_string())
      c.gateway = load_gateway_config(resolve(base_dir, j["gateway"].get<std::string>()));
    else
      c.gateway = gateway_config_from_json(j["gateway"], base_dir);
  }
  if (j.contains("policies")) {
    for (const auto& [m, p] : get_field<std::map<std::string, std::string>>(j, "policies", "experiment")) {
      const auto parsed = parse_method(m);
      if (!std::holds_alternative<FinetuneMethod>(parsed) && !std::holds_alternative<TrlMethod>(parsed))
        throw ConfigError("experiment: policy given for non-trained method " + m);
      c.policies[m] = resolve(base_dir, p);
    }
  }
  c.embedder = j.value("embedder", c.embedder);
  c.acceptability = j.value("acceptability", c.acceptability);
  c.seed = j.value("seed", c.seed);
  c.workers = j.value("workers", c.workers);
  const std::string exec = j.value("execution", std::string("parallel"));
  if (exec != "parallel" && exec != "serial") throw ConfigError("experiment: execution must be parallel or serial");
  c.exec = exec == "serial" ? Execution::serial : Execution::parallel;
  c.output = resolve(base_dir, get_field<std::string>(j, "output", "experiment"));
  return c;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  return experiment_config_from_json(read_json_file(path), path.parent_path());
}

ExperimentProviders make_providers(const ExperimentConfig& config) {
  ExperimentProviders p;
  if (config.incivility_classifier.empty() || config.reentry_classifier.empty())
    throw ConfigError("experiment: both classifiers are required");
  p.incivility = load_classifier(config.incivility_classifier);
  p.reentry = load_classifier(config.reentry_classifier);
  if (p.incivility->task() != TaskName::incivility) throw ConfigError("experiment: incivility classifier has the wrong task");
  if (p.reentry->task() != TaskName::reentry) throw ConfigError("experiment: reentry classifier has the wrong task");

  if (config.embedder == "onehot")
    p.embedder = std::make_shared<metrics::OneHotEmbedder>();
  else if (config.embedder == "http")
    p.embedder = std::make_shared<metrics::HttpEmbedder>(
        HttpEndpoint::from_env(metrics::HttpEmbedder::kUrlEnv, metrics::HttpEmbedder::kTokenEnv));
  else
    p.embedder = std::make_shared<metrics::HashedEmbedder>();
  if (config.acceptability == "http")
    p.acceptability = std::make_shared<metrics::HttpAcceptability>(
        HttpEndpoint::from_env(metrics::HttpAcceptability::kUrlEnv, metrics::HttpAcceptability::kTokenEnv));
  else
    p.acceptability = std::make_shared<metrics::HeuristicAcceptability>();
  p.patterns = load_refusal_patterns(config.gateway);

  auto gateway = config.gateway;
  auto policies = config.policies;
  p.backend_for = [gateway, policies](const MethodName& m) -> std::shared_ptr<const ChatBackend> {
    if (std::holds_alternative<GenerationMethod>(m) || std::holds_alternative<SelectMethod>(m))
      return make_chat_backend(gateway);
    const auto it = policies.find(format_method(m));
    if (it == policies.end()) throw ConfigError("no policy configured for " + format_method(m));
    return std::make_shared<PolicyBackend>(std::shared_ptr<const TrainablePolicy>(load_policy(it->second)));
  };
  return p;
}

// ---- generation -----------------------------------------------------------

std::vector<CorpusRecord> generation_inputs(const std::vector<CorpusRecord>& corpus, std::optional<Split> split) {
  std::vector<CorpusRecord> out;
  std::set<std::string> seen;
  for (const auto& r : corpus) {
    if (split && r.split != *split) continue;
    if (!seen.insert(trim(r.hate_text)).second) continue;
    auto blind = r;
    blind.reply_text.reset();
    out.push_back(std::move(blind));
  }
  return out;
}

std::vector<GenerationRecord> generate_method(const MethodName& method, std::span<const CorpusRecord> hate_comments,
                                              const GenerationParams& params, const ChatBackend& backend,
                                              const OutcomeClassifier* selector, const RefusalPatterns& patterns,
                                              std::uint64_t seed, Execution exec, int workers) {
  const std::string name = method_name(method);
  if (hate_comments.empty()) throw InputError(name + ": no hate comments to generate for");
  if (const auto* s = std::get_if<SelectMethod>(&method)) {
    if (!selector) throw ConfigError(name + ": a selector classifier is required");
    if (selector->task() != s->selector) throw ConfigError(name + ": selector has the wrong task");
  }
  params.validate();
  const std::uint64_t selection_seed = derive_seed(seed, "select/" + name);

  std::vector<GenerationRecord> out(hate_comments.size());
  const auto errors = for_each_index_collect(
      hate_comments.size(), exec,
      [&](std::size_t i) {
        const auto& hate = hate_comments[i];
        auto p = params;
        p.seed = derive_seed(seed, "generate/" + name + "/" + hate.id);
        std::visit(
            [&](const auto& m) {
              using M = std::decay_t<decltype(m)>;
              if constexpr (std::is_same_v<M, GenerationMethod>)
                out[i] = prompt_with_instruction(hate, m.condition, p, backend, patterns);
              else if constexpr (std::is_same_v<M, SelectMethod>)
                out[i] = prompt_and_select(hate, m.condition, m.n, *selector, p, backend, selection_seed, patterns);
              else
                out[i] = generate_plain(hate, name, p, backend, patterns);
            },
            method);
      },
      workers);

  std::size_t failures = 0;
  std::exception_ptr first;
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (!errors[i]) continue;
    ++failures;
    if (!first) first = errors[i];
    try {
      std::rethrow_exception(errors[i]);
    } catch (const std::exception& e) {
      log_warn(name + ": " + hate_comments[i].id + " failed: " + e.what());
    }
    auto& r = out[i];
    r = GenerationRecord{};
    r.hate_id = hate_comments[i].id;
    r.hate_text = hate_comments[i].hate_text;
    r.method = name;
    r.params = params;
    r.params.seed = derive_seed(seed, "generate/" + name + "/" + r.hate_id);
    if (const auto* s = std::get_if<SelectMethod>(&method)) r.params.n_candidates = s->n;
  }
  if (failures == hate_comments.size()) std::rethrow_exception(first);
  return out;
}

// ---- evaluation -----------------------------------------------------------

std::size_t count_desired(std::span<const GenerationRecord> records, const OutcomeClassifier& classifier,
                          std::size_t target_label, Execution exec) {
  std::vector<char> hit(records.size(), 0);
  for_each_index_collect(records.size(), exec, [&](std::size_t i) {
    if (!records[i].valid) return;
    hit[i] = classifier.predict(records[i].hate_text, records[i].text).label == target_label;
  });
  return static_cast<std::size_t>(std::count(hit.begin(), hit.end(), 1));
}

const std::vector<std::string>& sample_metric_names() {
  static const std::vector<std::string> names{"bleu",           "rouge_1",    "rouge_2", "rouge_l",
                                              "meteor",         "bertscore",  "grammaticality",
                                              "redundancy",     "focus",      "gruen"};
  return names;
}

json to_json(const SampleEvaluation& e) {
  json m = json::object();
  const auto& names = sample_metric_names();
  for (std::size_t k = 0; k < names.size(); ++k) m[names[k]] = e.metrics[k] ? json(*e.metrics[k]) : json(nullptr);
  return {{"method", e.method},
          {"hate_id", e.hate_id},
          {"valid", e.valid},
          {"incivility", e.incivility ? json(*e.incivility) : json(nullptr)},
          {"reentry", e.reentry ? json(*e.reentry) : json(nullptr)},
          {"metrics", m}};
}

ReferenceIndex build_reference_index(const std::vector<CorpusRecord>& references) {
  ReferenceIndex idx;
  for (const auto& r : references)
    if (r.reply_text && !trim(*r.reply_text).empty()) idx[trim(r.hate_text)].push_back(*r.reply_text);
  return idx;
}

std::vector<SampleEvaluation> evaluate_records(const std::string& method, std::span<const GenerationRecord> records,
                                               const EvaluationContext& ctx) {
  const std::size_t nm = sample_metric_names().size();
  std::vector<SampleEvaluation> out(records.size());
  for_each_index(
      records.size(), ctx.exec,
      [&](std::size_t i) {
        const auto& r = records[i];
        auto& e = out[i];
        e.method = method;
        e.hate_id = r.hate_id;
        e.valid = r.valid;
        e.metrics.assign(nm, std::nullopt);
        if (!r.valid) return;
        const auto guarded = [&](const char* what, auto&& fn) {
          try {
            fn();
          } catch (const Error& err) {
            log_warn(method + ": " + r.hate_id + " " + what + " failed: " + err.what());
          }
        };
        guarded("incivility", [&] { e.incivility = std::string(ctx.incivility.predict(r.hate_text, r.text).label_name()); });
        guarded("reentry", [&] { e.reentry = std::string(ctx.reentry.predict(r.hate_text, r.text).label_name()); });
        const auto refs = ctx.references.find(trim(r.hate_text));
        if (refs != ctx.references.end()) {
          guarded("relevance", [&] {
            const auto s = metrics::relevance(r.text, refs->second, ctx.scoring);
            e.metrics[0] = s.bleu;
            e.metrics[1] = s.rouge.rouge_1.f1;
            e.metrics[2] = s.rouge.rouge_2.f1;
            e.metrics[3] = s.rouge.rouge_l.f1;
            e.metrics[4] = s.meteor;
            e.metrics[5] = s.bertscore.f1;
          });
        }
        guarded("gruen", [&] {
          const auto g = metrics::gruen(r.text, ctx.scoring.acceptability, ctx.scoring.gruen);
          e.metrics[6] = g.grammaticality;
          e.metrics[7] = g.redundancy;
          e.metrics[8] = g.focus;
          e.metrics[9] = g.overall;
        });
      },
      ctx.workers);
  return out;
}

MethodReport failed_method(const std::string& method, const std::string& error) {
  MethodReport m;
  m.method = method;
  m.failed = true;
  m.error = error;
  m.metrics.assign(sample_metric_names().size(), std::nullopt);
  return m;
}

MethodReport summarize_method(const std::string& method, std::span<const GenerationRecord> records,
                              std::span<const SampleEvaluation> evaluations,
                              std::span<const std::string> reference_corpus) {
  if (records.size() != evaluations.size()) throw InputError(method + ": records and evaluations differ in length");
  MethodReport m;
  m.method = method;
  m.samples = records.size();
  m.metrics.assign(sample_metric_names().size(), std::nullopt);
  if (records.empty()) return m;
  m.valid_response_rate = valid_response_rate(records);

  const auto& civil = OutcomeTask::incivility();
  const auto& reentry = OutcomeTask::reentry();
  std::vector<std::string> valid_texts;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!records[i].valid) continue;
    ++m.valid;
    valid_texts.push_back(records[i].text);
    const auto& e = evaluations[i];
    if (e.incivility && *e.incivility == civil.desired_label()) ++m.desired_effective;
    if (e.reentry && *e.reentry == reentry.desired_label()) ++m.desired_reentry;
  }
  for (std::size_t k = 0; k < m.metrics.size(); ++k) {
    std::vector<double> col;
    for (const auto& e : evaluations)
      if (e.valid && e.metrics[k]) col.push_back(*e.metrics[k]);
    if (col.empty()) continue;
    const auto agg = metrics::aggregate(std::move(col));
    m.metrics[k] = MetricSummary{agg.per_sample.size(), agg.mean, agg.std};
  }
  try {
    if (!valid_texts.empty()) m.diversity = metrics::diversity(valid_texts);
  } catch (const InputError&) {
    // no tokens at all
  }
  if (!valid_texts.empty() && !reference_corpus.empty()) m.novelty = metrics::novelty(valid_texts, reference_corpus);
  return m;
}

// ---- report JSON ----------------------------------------------------------

namespace {

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
std::optional<double> opt_double(const json& j) {
  return j.is_null() ? std::nullopt : std::optional<double>(j.get<double>());
}

json to_json(const metrics::CorrelationMatrix& m) {
  json values = json::array();
  for (const auto& row : m.values) {
    json r = json::array();
    for (const auto& v : row) r.push_back(opt_json(v));
    values.push_back(r);
  }
  return {{"names", m.names}, {"values", values}};
}

metrics::CorrelationMatrix correlation_from_json(const json& j) {
  metrics::CorrelationMatrix m;
  m.names = j.at("names").get<std::vector<std::string>>();
  for (const auto& row : j.at("values")) {
    std::vector<std::optional<double>> r;
    for (const auto& v : row) r.push_back(opt_double(v));
    m.values.push_back(std::move(r));
  }
  return m;
}

json to_json(const MethodReport& m) {
  json metrics_j = json::object();
  const auto& names = sample_metric_names();
  for (std::size_t k = 0; k < names.size(); ++k)
    metrics_j[names[k]] = m.metrics[k] ? json{{"n", m.metrics[k]->n}, {"mean", m.metrics[k]->mean}, {"std", m.metrics[k]->std}}
                                       : json(nullptr);
  json div = nullptr;
  if (m.diversity)
    div = {{"ttr", m.diversity->ttr}, {"distinct_1", m.diversity->distinct_1}, {"distinct_2", opt_json(m.diversity->distinct_2)}};
  json nov = nullptr;
  if (m.novelty) nov = {{"new_unigrams", m.novelty->new_unigrams}, {"new_bigrams", m.novelty->new_bigrams}};
  return {{"method", m.method},
          {"failed", m.failed},
          {"error", m.error},
          {"samples", m.samples},
          {"valid", m.valid},
          {"valid_response_rate", m.valid_response_rate},
          {"desired_effective", m.desired_effective},
          {"desired_reentry", m.desired_reentry},
          {"metrics", metrics_j},
          {"diversity", div},
          {"novelty", nov}};
}

MethodReport method_report_from_json(const json& j) {
  MethodReport m;
  m.method = j.at("method").get<std::string>();
  m.failed = j.at("failed").get<bool>();
  m.error = j.at("error").get<std::string>();
  m.samples = j.at("samples").get<std::size_t>();
  m.valid = j.at("valid").get<std::size_t>();
  m.valid_response_rate = j.at("valid_response_rate").get<double>();
  m.desired_effective = j.at("desired_effective").get<std::size_t>();
  m.desired_reentry = j.at("desired_reentry").get<std::size_t>();
  for (const auto& name : sample_metric_names()) {
    const auto& v = j.at("metrics").at(name);
    if (v.is_null())
      m.metrics.emplace_back();
    else
      m.metrics.emplace_back(MetricSummary{v.at("n").get<std::size_t>(), v.at("mean").get<double>(), v.at("std").get<double>()});
  }
  if (const auto& d = j.at("diversity"); !d.is_null())
    m.diversity = metrics::DiversityScores{d.at("ttr").get<double>(), d.at("distinct_1").get<double>(), opt_double(d.at("distinct_2"))};
  if (const auto& n = j.at("novelty"); !n.is_null())
    m.novelty = metrics::NoveltyScores{n.at("new_unigrams").get<std::size_t>(), n.at("new_bigrams").get<std::size_t>()};
  return m;
}

metrics::CorrelationMatrix sample_correlation(std::span<const SampleEvaluation> samples) {
  // Pooled over samples that have every metric.
  const auto& names = sample_metric_names();
  std::vector<std::pair<std::string, std::vector<double>>> cols;
  for (const auto& n : names) cols.emplace_back(n, std::vector<double>{});
  for (const auto& s : samples) {
    if (!s.valid || std::any_of(s.metrics.begin(), s.metrics.end(), [](const auto& v) { return !v; })) continue;
    for (std::size_t k = 0; k < names.size(); ++k) cols[k].second.push_back(*s.metrics[k]);
  }
  if (cols.front().second.size() < 2) return {names, std::vector(names.size(), std::vector<std::optional<double>>(names.size()))};
  return metrics::metric_correlation(cols);
}

metrics::CorrelationMatrix diversity_correlation(std::span<const MethodReport> methods) {
  const std::vector<std::string> names{"ttr", "distinct_1", "distinct_2", "new_unigrams", "new_bigrams"};
  std::vector<std::pair<std::string, std::vector<double>>> cols;
  for (const auto& n : names) cols.emplace_back(n, std::vector<double>{});
  for (const auto& m : methods) {
    if (!m.diversity || !m.diversity->distinct_2 || !m.novelty) continue;
    cols[0].second.push_back(m.diversity->ttr);
    cols[1].second.push_back(m.diversity->distinct_1);
    cols[2].second.push_back(*m.diversity->distinct_2);
    cols[3].second.push_back(static_cast<double>(m.novelty->new_unigrams));
    cols[4].second.push_back(static_cast<double>(m.novelty->new_bigrams));
  }
  if (cols.front().second.size() < 2) return {names, std::vector(names.size(), std::vector<std::optional<double>>(names.size()))};
  return metrics::metric_correlation(cols);
}

}  // namespace

json to_json(const RunReport& r) {
  json methods = json::array();
  for (const auto& m : r.methods) methods.push_back(to_json(m));
  return {{"methods", methods},
          {"sample_correlation", to_json(r.sample_correlation)},
          {"diversity_correlation", to_json(r.diversity_correlation)}};
}

RunReport run_report_from_json(const json& j) {
  try {
    RunReport r;
    for (const auto& m : j.at("methods")) r.methods.push_back(method_report_from_json(m));
    r.sample_correlation = correlation_from_json(j.at("sample_correlation"));
    r.diversity_correlation = correlation_from_json(j.at("diversity_correlation"));
    return r;
  } catch (const json::exception& e) {
    throw InputError(std::string("report: ") + e.what());
  }
}

// ---- orchestration --------------------------------------------------------

namespace {

std::string run_file_name(const std::string& method) { return method + ".jsonl"; }

std::vector<std::string> reply_corpus(const std::vector<CorpusRecord>& references) {
  std::vector<std::string> out;
  for (const auto& r : references)
    if (r.reply_text) out.push_back(*r.reply_text);
  return out;
}

}  // namespace

namespace {

RunReport evaluate_runs_impl(const fs::path& runs_dir, std::span<const std::string> methods,
                             const std::vector<CorpusRecord>& references, const ExperimentProviders& providers,
                             const fs::path& out_dir, Execution exec, int workers,
                             const std::map<std::string, std::string>& failures) {
  if (!providers.incivility || !providers.reentry || !providers.embedder || !providers.acceptability)
    throw ConfigError("evaluate: classifiers and metric providers are required");
  const auto index = build_reference_index(references);
  const auto corpus = reply_corpus(references);
  const metrics::ScoringContext scoring{*providers.embedder, *providers.acceptability};
  const EvaluationContext ctx{*providers.incivility, *providers.reentry, scoring, index, exec, workers};

  RunReport report;
  std::vector<SampleEvaluation> all_samples;
  for (const auto& method : methods) {
    if (const auto it = failures.find(method); it != failures.end()) {
      report.methods.push_back(failed_method(method, it->second));
      continue;
    }
    const auto path = runs_dir / run_file_name(method);
    if (!fs::exists(path)) {
      report.methods.push_back(failed_method(method, "no generations"));
      continue;
    }
    try {
      const auto records = read_generations_jsonl(path);
      auto evals = evaluate_records(method, records, ctx);
      report.methods.push_back(summarize_method(method, records, evals, corpus));
      all_samples.insert(all_samples.end(), std::make_move_iterator(evals.begin()), std::make_move_iterator(evals.end()));
    } catch (const Error& e) {
      log_warn(method + ": evaluation failed: " + e.what());
      report.methods.push_back(failed_method(method, e.what()));
    }
  }
  report.sample_correlation = sample_correlation(all_samples);
  report.diversity_correlation = diversity_correlation(report.methods);
  emit_report(report, all_samples, out_dir);
  return report;
}

}  // namespace

RunReport evaluate_runs(const fs::path& runs_dir, std::span<const std::string> methods,
                        const std::vector<CorpusRecord>& references, const ExperimentProviders& providers,
                        const fs::path& out_dir, Execution exec, int workers) {
  return evaluate_runs_impl(runs_dir, methods, references, providers, out_dir, exec, workers, {});
}

RunReport run_experiment(const ExperimentConfig& config) {
  config.validate();
  return run_experiment(config, make_providers(config));
}

RunReport run_experiment(const ExperimentConfig& config, const ExperimentProviders& providers) {
  config.validate();
  if (!providers.backend_for) throw ConfigError("experiment: no backend provider");
  const auto hate_comments = generation_inputs(read_corpus_jsonl(config.corpus), Split::test);
  if (hate_comments.empty()) throw InputError("experiment: corpus has no test-split records");

  const auto runs_dir = config.output / "runs";
  fs::create_directories(runs_dir);
  std::map<std::string, std::string> failures;
  for (const auto& name : config.methods) {
    const auto method = parse_method(name);
    const auto run_path = runs_dir / run_file_name(name);
    try {
      const auto backend = providers.backend_for(method);
      const OutcomeClassifier* selector = nullptr;
      if (const auto* s = std::get_if<SelectMethod>(&method))
        selector = s->selector == TaskName::incivility ? providers.incivility.get() : providers.reentry.get();
      const auto records = generate_method(method, hate_comments, config.gateway.params, *backend, selector,
                                           providers.patterns, config.seed, config.exec, config.workers);
      write_generations_jsonl(run_path, records);
      log_info(name + ": " + std::to_string(records.size()) + " generations written");
    } catch (const std::exception& e) {
      log_warn(name + ": generation failed: " + e.what());
      failures[name] = e.what();
      fs::remove(run_path);
    }
  }

  // References are read only now that every generation is on disk.
  const auto references = read_corpus_jsonl(config.references);
  return evaluate_runs_impl(runs_dir, config.methods, references, providers, config.output / "report", config.exec,
                            config.workers, failures);
}

std::vector<std::string> pick_methods_for_annotation(const RunReport& report) {
  std::vector<std::string> picks;
  std::vector<const MethodReport*> best(4, nullptr);
  for (const auto& m : report.methods) {
    if (m.failed) continue;
    const std::size_t family = parse_method(m.method).index();
    if (!best[family] || m.desired_effective > best[family]->desired_effective) best[family] = &m;
  }
  for (const auto* b : best)
    if (b) picks.push_back(b->method);
  return picks;
}

}  // namespace cspeech
