#include <CLI11.hpp>
#include <httplib.h>

#include <csignal>
#include <cstdio>
#include <iostream>

#include "cspeech/classifier.hpp"
#include "cspeech/common.hpp"
#include "cspeech/corpus.hpp"
#include "cspeech/harness.hpp"
#include "cspeech/human_eval.hpp"
#include "cspeech/log.hpp"
#include "cspeech/policy.hpp"
#include "cspeech/strategies.hpp"
#include "cspeech/textio.hpp"

using namespace cspeech;
namespace fs = std::filesystem;

namespace {

std::optional<Split> parse_split_option(const std::string& s) {
  if (s == "all") return std::nullopt;
  return parse_split(s);
}

std::pair<std::string, std::string> parse_annotators(const std::string& s) {
  const auto comma = s.find(',');
  if (comma == std::string::npos) throw ConfigError("--annotators takes two ids separated by a comma");
  return {trim(s.substr(0, comma)), trim(s.substr(comma + 1))};
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto end = s.find(',', start);
    const auto item = trim(s.substr(start, end == std::string::npos ? std::string::npos : end - start));
    if (!item.empty()) out.push_back(item);
    if (end == std::string::npos) break;
    start = end + 1;
  }
  return out;
}

std::vector<std::string> methods_in(const fs::path& runs_dir) {
  std::vector<std::string> out;
  for (const auto& e : fs::directory_iterator(runs_dir))
    if (e.is_regular_file() && e.path().extension() == ".jsonl") out.push_back(e.path().stem().string());
  std::sort(out.begin(), out.end());
  return out;
}

void print_classifier_report(const ClassifierReport& r, const std::string& name) {
  const auto& task = OutcomeTask::get(r.task);
  std::printf("%-10s", name.c_str());
  for (std::size_t k = 0; k < kNumLabels; ++k)
    std::printf("  %s P %.2f R %.2f F1 %.2f", std::string(task.labels[k]).c_str(), r.per_class[k].precision,
                r.per_class[k].recall, r.per_class[k].f1);
  std::printf("  weighted P %.2f R %.2f F1 %.2f  macro F1 %.2f  acc %.2f\n", r.weighted.precision, r.weighted.recall,
              r.weighted.f1, r.macro.f1, r.accuracy);
}

void print_run_report(const RunReport& r) {
  std::printf("%-40s %6s %7s %9s %9s %8s %8s %8s\n", "method", "status", "valid", "effective", "reentry", "bleu",
              "bertsc", "gruen");
  const auto& names = sample_metric_names();
  const auto col = [&](const MethodReport& m, const char* n) {
    const auto k = static_cast<std::size_t>(std::find(names.begin(), names.end(), n) - names.begin());
    return m.metrics[k] ? m.metrics[k]->mean : std::nan("");
  };
  for (const auto& m : r.methods)
    std::printf("%-40s %6s %7.3f %9zu %9zu %8.4f %8.4f %8.4f\n", m.method.c_str(), m.failed ? "failed" : "ok",
                m.valid_response_rate, m.desired_effective, m.desired_reentry, col(m, "bleu"), col(m, "bertscore"),
                col(m, "gruen"));
}

httplib::Server* g_server = nullptr;
void stop_server(int) {
  if (g_server) g_server->stop();
}

int run_cli(int argc, char** argv) {
  CLI::App app{"Counterspeech generation and evaluation toolkit"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Log progress to stderr");

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Normalize a source dataset into corpus JSONL");
  std::string ingest_format, ingest_in, ingest_out;
  ingest->add_option("--format", ingest_format, "Source format")->required();
  ingest->add_option("--in", ingest_in, "Input file")->required()->check(CLI::ExistingFile);
  ingest->add_option("--out", ingest_out, "Output corpus.jsonl")->required();

  // split
  auto* split = app.add_subcommand("split", "Assign a seeded train/test split");
  std::string split_in, split_out;
  double train_fraction = 0.8;
  std::uint64_t split_seed = 0;
  split->add_option("--in", split_in, "Corpus JSONL")->required()->check(CLI::ExistingFile);
  split->add_option("--train-fraction", train_fraction, "Fraction assigned to train")->capture_default_str();
  split->add_option("--seed", split_seed, "Split seed")->required();
  split->add_option("--out", split_out, "Output path (defaults to rewriting --in)");

  // label-outcomes
  auto* label = app.add_subcommand("label-outcomes", "Derive outcome labels from conversation threads");
  std::string threads_in, outcomes_out;
  label->add_option("--threads", threads_in, "Threads JSONL")->required()->check(CLI::ExistingFile);
  label->add_option("--out", outcomes_out, "Outcomes JSONL")->required();

  // train-classifier
  auto* train = app.add_subcommand("train-classifier", "Train an outcome classifier");
  std::string train_task, train_data, train_out;
  LinearTrainConfig train_cfg;
  bool no_bigrams = false;
  train->add_option("--task", train_task, "incivility or reentry")->required();
  train->add_option("--data", train_data, "Outcomes JSONL")->required()->check(CLI::ExistingFile);
  train->add_option("--out", train_out, "Model file")->required();
  train->add_option("--epochs", train_cfg.epochs)->capture_default_str();
  train->add_option("--lr", train_cfg.learning_rate)->capture_default_str();
  train->add_option("--l2", train_cfg.l2)->capture_default_str();
  train->add_flag("--no-bigrams", no_bigrams, "Unigram features only");

  // eval-classifier
  auto* evalc = app.add_subcommand("eval-classifier", "Per-class and weighted precision/recall/F1");
  std::string eval_model, eval_data, eval_train, eval_json;
  evalc->add_option("--model", eval_model, "Model file")->required()->check(CLI::ExistingFile);
  evalc->add_option("--data", eval_data, "Test outcomes JSONL")->required()->check(CLI::ExistingFile);
  evalc->add_option("--train-data", eval_train, "Training outcomes for the majority baseline")->check(CLI::ExistingFile);
  evalc->add_option("--json", eval_json, "Also write the report as JSON");

  // init-policy
  auto* init = app.add_subcommand("init-policy", "Create an untrained policy over a corpus vocabulary");
  std::string init_corpus, init_out;
  TinyPolicyConfig init_cfg;
  init->add_option("--corpus", init_corpus, "Corpus JSONL")->required()->check(CLI::ExistingFile);
  init->add_option("--out", init_out, "Policy file")->required();
  init->add_option("--max-vocab", init_cfg.max_vocab)->capture_default_str();
  init->add_option("--seed", init_cfg.seed)->capture_default_str();

  // finetune
  auto* ft = app.add_subcommand("finetune", "Supervised finetuning on one of the six datasets");
  std::string ft_dataset, ft_corpus, ft_outcomes, ft_base, ft_out, ft_pairs;
  FinetuneConfig ft_cfg;
  ft->add_option("--dataset", ft_dataset, "effective, reentry, conan, multiconan, bm_reddit or bm_gab")->required();
  ft->add_option("--corpus", ft_corpus, "Corpus JSONL")->check(CLI::ExistingFile);
  ft->add_option("--outcomes", ft_outcomes, "Outcomes JSONL")->check(CLI::ExistingFile);
  ft->add_option("--base", ft_base, "Base policy")->required()->check(CLI::ExistingFile);
  ft->add_option("--out", ft_out, "Output policy")->required();
  ft->add_option("--pairs-out", ft_pairs, "Also write the prepared prompt/completion pairs");
  ft->add_option("--epochs", ft_cfg.epochs)->capture_default_str();
  ft->add_option("--lr", ft_cfg.learning_rate)->capture_default_str();

  // trl
  auto* trl = app.add_subcommand("trl", "Reinforcement learning against an outcome classifier");
  std::string trl_target, trl_base, trl_out, trl_classifier, trl_prompts, trl_log;
  double trl_beta = 0.0;
  TrlConfig trl_cfg;
  trl->add_option("--target", trl_target, "effective or reentry")->required();
  trl->add_option("--beta", trl_beta, "KL coefficient")->required();
  trl->add_option("--steps", trl_cfg.max_steps, "Maximum PPO steps")->required();
  trl->add_option("--base", trl_base, "Base policy")->required()->check(CLI::ExistingFile);
  trl->add_option("--out", trl_out, "Output policy")->required();
  trl->add_option("--classifier", trl_classifier, "Reward classifier")->required()->check(CLI::ExistingFile);
  trl->add_option("--prompts", trl_prompts, "Corpus JSONL whose train-split hate comments are the queries")
      ->required()
      ->check(CLI::ExistingFile);
  trl->add_option("--batch-size", trl_cfg.batch_size)->capture_default_str();
  trl->add_option("--window", trl_cfg.window)->capture_default_str();
  trl->add_option("--tolerance", trl_cfg.tolerance)->capture_default_str();
  trl->add_option("--lr", trl_cfg.ppo.learning_rate)->capture_default_str();
  trl->add_option("--seed", trl_cfg.seed)->capture_default_str();
  trl->add_option("--log", trl_log, "Per-step reward log CSV");

  // generate
  auto* gen = app.add_subcommand("generate", "Generate replies with one method");
  std::string gen_method, gen_corpus, gen_gateway, gen_out, gen_classifier, gen_policy, gen_split = "test";
  std::uint64_t gen_seed = 0;
  int gen_workers = 0;
  gen->add_option("--method", gen_method, "Method name")->required();
  gen->add_option("--corpus", gen_corpus, "Corpus JSONL")->required()->check(CLI::ExistingFile);
  gen->add_option("--gateway", gen_gateway, "Gateway config JSON")->check(CLI::ExistingFile);
  gen->add_option("--out", gen_out, "Output generations JSONL")->required();
  gen->add_option("--classifier", gen_classifier, "Selector classifier (select methods)")->check(CLI::ExistingFile);
  gen->add_option("--policy", gen_policy, "Policy file (finetune and TRL methods)")->check(CLI::ExistingFile);
  gen->add_option("--split", gen_split, "test, train, unassigned or all")->capture_default_str();
  gen->add_option("--seed", gen_seed)->capture_default_str();
  gen->add_option("--workers", gen_workers, "Concurrent samples (0 = OpenMP default)")->capture_default_str();

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Classify and score persisted generations");
  std::string ev_run, ev_refs, ev_out, ev_inc, ev_re, ev_methods, ev_embedder = "hashed", ev_accept = "heuristic";
  int ev_workers = 0;
  evaluate->add_option("--run", ev_run, "Directory of <method>.jsonl files")->required()->check(CLI::ExistingDirectory);
  evaluate->add_option("--references", ev_refs, "Reference corpus JSONL")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--out", ev_out, "Report directory")->required();
  evaluate->add_option("--incivility-classifier", ev_inc)->required()->check(CLI::ExistingFile);
  evaluate->add_option("--reentry-classifier", ev_re)->required()->check(CLI::ExistingFile);
  evaluate->add_option("--methods", ev_methods, "Comma-separated methods (default: every file in --run)");
  evaluate->add_option("--embedder", ev_embedder, "hashed, onehot or http")->capture_default_str();
  evaluate->add_option("--acceptability", ev_accept, "heuristic or http")->capture_default_str();
  evaluate->add_option("--workers", ev_workers)->capture_default_str();

  // report
  auto* report = app.add_subcommand("report", "Print a stored report and redraw its tables and charts");
  std::string rep_run;
  report->add_option("--run", rep_run, "Experiment or report directory")->required()->check(CLI::ExistingDirectory);

  // run
  auto* run = app.add_subcommand("run", "Run a full experiment from a config file");
  std::string run_config;
  run->add_option("--config", run_config, "Experiment config JSON")->required()->check(CLI::ExistingFile);

  // human-eval
  auto* he = app.add_subcommand("human-eval", "Blinded human evaluation");
  he->require_subcommand(1);
  auto* he_sample = he->add_subcommand("sample", "Draw annotation tasks and create a study");
  std::string hs_run, hs_methods, hs_annotators, hs_out;
  std::size_t hs_k = 50;
  std::uint64_t hs_seed = 0;
  he_sample->add_option("--run", hs_run, "Experiment directory (with runs/ and report/)")
      ->required()
      ->check(CLI::ExistingDirectory);
  he_sample->add_option("--methods", hs_methods, "Comma-separated methods (default: best of each family)");
  he_sample->add_option("--k", hs_k, "Tasks per method")->capture_default_str();
  he_sample->add_option("--seed", hs_seed)->capture_default_str();
  he_sample->add_option("--annotators", hs_annotators, "Two annotator ids, comma-separated")->required();
  he_sample->add_option("--out", hs_out, "Study directory")->required();

  auto* he_serve = he->add_subcommand("serve", "Serve the annotation API and UI");
  std::string sv_study, sv_static, sv_host = "127.0.0.1";
  int sv_port = 8080;
  he_serve->add_option("--study", sv_study, "Study directory")->required()->check(CLI::ExistingDirectory);
  he_serve->add_option("--static", sv_static, "Directory of UI assets")->check(CLI::ExistingDirectory);
  he_serve->add_option("--host", sv_host)->capture_default_str();
  he_serve->add_option("--port", sv_port)->capture_default_str();

  auto* he_export = he->add_subcommand("export", "Export labels, adjudications and the summary");
  std::string ex_study, ex_out;
  he_export->add_option("--study", ex_study, "Study directory")->required()->check(CLI::ExistingDirectory);
  he_export->add_option("--out", ex_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  if (verbose) set_log_level(LogLevel::info);

  if (*ingest) {
    const auto records = load_corpus(ingest_in, ingest_format);
    write_corpus_jsonl(ingest_out, records);
    std::printf("%zu records\n", records.size());
  } else if (*split) {
    const auto result = split_corpus(read_corpus_jsonl(split_in), train_fraction, split_seed);
    auto all = result.train;
    all.insert(all.end(), result.test.begin(), result.test.end());
    write_corpus_jsonl(split_out.empty() ? split_in : split_out, all);
    std::printf("train %zu, test %zu\n", result.train.size(), result.test.size());
  } else if (*label) {
    const auto examples = label_threads(read_threads_jsonl(threads_in));
    write_outcomes_jsonl(outcomes_out, examples);
    std::printf("%zu labeled pairs\n", examples.size());
  } else if (*train) {
    train_cfg.bigrams = !no_bigrams;
    const auto clf = LinearClassifier::train(read_outcomes_jsonl(train_data), parse_task_name(train_task), train_cfg);
    clf.save(train_out);
    std::printf("%zu features, final loss %s\n", clf.num_features(), format_double(clf.loss_history().back()).c_str());
  } else if (*evalc) {
    const auto clf = load_classifier(eval_model);
    const auto test = read_outcomes_jsonl(eval_data);
    if (!eval_train.empty()) {
      const auto train_labels = task_labels(read_outcomes_jsonl(eval_train), clf->task());
      print_classifier_report(majority_baseline(clf->task(), train_labels, task_labels(test, clf->task())), "Baseline");
    }
    const auto rep = evaluate_classifier(*clf, test);
    print_classifier_report(rep, std::string(to_string(clf->task())));
    if (!eval_json.empty()) textio::write_file(eval_json, to_json(rep).dump(2) + "\n");
  } else if (*init) {
    std::vector<std::string> texts;
    for (const auto& r : read_corpus_jsonl(init_corpus))
      if (r.reply_text) texts.push_back(*r.reply_text);
    const auto policy = TinyPolicy::build(texts, init_cfg);
    policy.save(init_out);
    std::printf("vocabulary %zu\n", policy.vocabulary().size());
  } else if (*ft) {
    const auto dataset = parse_finetune_dataset(ft_dataset);
    const auto corpus = ft_corpus.empty() ? std::vector<CorpusRecord>{} : read_corpus_jsonl(ft_corpus);
    const auto outcomes = ft_outcomes.empty() ? std::vector<OutcomeExample>{} : read_outcomes_jsonl(ft_outcomes);
    const auto pairs = prepare_finetune_dataset(dataset, corpus, outcomes);
    if (!ft_pairs.empty()) write_finetune_jsonl(ft_pairs, pairs);
    const auto base = load_policy(ft_base);
    const auto result = finetune(*base, pairs, ft_cfg);
    dynamic_cast<const TinyPolicy&>(*result.policy).save(ft_out);
    std::printf("%zu pairs, loss %s -> %s\n", pairs.size(), format_double(result.loss_history.front()).c_str(),
                format_double(result.loss_history.back()).c_str());
  } else if (*trl) {
    const auto base = load_policy(trl_base);
    const auto clf = load_classifier(trl_classifier);
    const auto target = parse_target_name(trl_target);
    if (clf->task() != target) throw ConfigError("--classifier does not match --target");
    trl_cfg.reward = RewardConfig{target, trl_beta};
    std::vector<std::string> prompts;
    for (const auto& r : generation_inputs(read_corpus_jsonl(trl_prompts), Split::train)) prompts.push_back(r.hate_text);
    const auto result = trl_train(*base, *clf, prompts, trl_cfg);
    dynamic_cast<const TinyPolicy&>(*result.policy).save(trl_out);
    if (!trl_log.empty()) write_trl_log_csv(trl_log, result.log);
    std::printf("%zu steps, %s, mean total reward %s -> %s\n", result.log.size(),
                result.converged ? "converged" : "step limit reached",
                format_double(result.log.front().mean_total).c_str(), format_double(result.log.back().mean_total).c_str());
  } else if (*gen) {
    const auto method = parse_method(gen_method);
    const auto gateway = gen_gateway.empty() ? GatewayConfig{} : load_gateway_config(gen_gateway);
    std::shared_ptr<const ChatBackend> backend;
    if (std::holds_alternative<FinetuneMethod>(method) || std::holds_alternative<TrlMethod>(method)) {
      if (gen_policy.empty()) throw ConfigError(gen_method + " needs --policy");
      backend = std::make_shared<PolicyBackend>(std::shared_ptr<const TrainablePolicy>(load_policy(gen_policy)));
    } else {
      backend = make_chat_backend(gateway);
    }
    std::unique_ptr<OutcomeClassifier> selector;
    if (!gen_classifier.empty()) selector = load_classifier(gen_classifier);
    const auto inputs = generation_inputs(read_corpus_jsonl(gen_corpus), parse_split_option(gen_split));
    const auto records = generate_method(method, inputs, gateway.params, *backend, selector.get(),
                                         load_refusal_patterns(gateway), gen_seed, Execution::parallel, gen_workers);
    write_generations_jsonl(gen_out, records);
    std::printf("%zu generations, valid rate %s\n", records.size(), format_double(valid_response_rate(records)).c_str());
  } else if (*evaluate) {
    ExperimentConfig cfg;
    cfg.incivility_classifier = ev_inc;
    cfg.reentry_classifier = ev_re;
    cfg.embedder = ev_embedder;
    cfg.acceptability = ev_accept;
    const auto providers = make_providers(cfg);
    const auto methods = ev_methods.empty() ? methods_in(ev_run) : split_list(ev_methods);
    const auto rep = evaluate_runs(ev_run, methods, read_corpus_jsonl(ev_refs), providers, ev_out, Execution::parallel,
                                   ev_workers);
    print_run_report(rep);
  } else if (*report) {
    fs::path dir = rep_run;
    if (!fs::exists(dir / "report.json") && fs::exists(dir / "report" / "report.json")) dir /= "report";
    const auto rep = run_report_from_json(nlohmann::json::parse(textio::read_file(dir / "report.json")));
    std::vector<SampleEvaluation> samples;
    if (fs::exists(dir / "samples.jsonl")) {
      textio::for_each_json_line(dir / "samples.jsonl", [&](const nlohmann::json& j, std::size_t) {
        SampleEvaluation s;
        s.method = j.at("method").get<std::string>();
        s.hate_id = j.at("hate_id").get<std::string>();
        s.valid = j.at("valid").get<bool>();
        if (!j.at("incivility").is_null()) s.incivility = j["incivility"].get<std::string>();
        if (!j.at("reentry").is_null()) s.reentry = j["reentry"].get<std::string>();
        for (const auto& n : sample_metric_names()) {
          const auto& v = j.at("metrics").at(n);
          s.metrics.push_back(v.is_null() ? std::nullopt : std::optional<double>(v.get<double>()));
        }
        samples.push_back(std::move(s));
      });
    }
    emit_report(rep, samples, dir);
    print_run_report(rep);
  } else if (*run) {
    const auto cfg = load_experiment_config(run_config);
    const auto rep = run_experiment(cfg);
    print_run_report(rep);
  } else if (*he_sample) {
    const fs::path root = hs_run;
    std::vector<std::string> methods;
    if (!hs_methods.empty()) {
      methods = split_list(hs_methods);
    } else {
      const auto rep = run_report_from_json(nlohmann::json::parse(textio::read_file(root / "report" / "report.json")));
      methods = pick_methods_for_annotation(rep);
    }
    std::vector<human_eval::MethodRun> runs;
    for (const auto& m : methods) runs.push_back({m, read_generations_jsonl(root / "runs" / (m + ".jsonl"))});
    const auto tasks = human_eval::sample_for_annotation(runs, hs_k, hs_seed);
    human_eval::Study::create(hs_out, tasks, parse_annotators(hs_annotators));
    std::printf("%zu tasks from %zu methods\n", tasks.size(), methods.size());
  } else if (*he_serve) {
    human_eval::Study study(sv_study);
    httplib::Server server;
    human_eval::register_routes(server, study, sv_static.empty() ? std::nullopt : std::optional<fs::path>(sv_static));
    g_server = &server;
    std::signal(SIGINT, stop_server);
    std::signal(SIGTERM, stop_server);
    std::printf("serving %s on http://%s:%d\n", sv_study.c_str(), sv_host.c_str(), sv_port);
    std::fflush(stdout);
    if (!server.listen(sv_host, sv_port)) throw IoError("cannot listen on " + sv_host + ":" + std::to_string(sv_port));
  } else if (*he_export) {
    human_eval::Study study(ex_study);
    const bool finalized = study.export_to(ex_out);
    std::printf("%zu labels, %zu adjudications%s\n", study.labels().size(), study.adjudications().size(),
                finalized ? "" : " (summary pending: not all tasks finalized)");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return 3;
  } catch (const TransportError& e) {
    std::cerr << "transport error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
