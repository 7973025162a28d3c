#include "cspeech/strategies.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <regex>

#include "cspeech/log.hpp"
#include "cspeech/textio.hpp"

namespace cspeech {

// ---- method names -------------------------------------------------------

std::string_view to_string(FinetuneDataset d) {
  switch (d) {
    case FinetuneDataset::effective: return "effective";
    case FinetuneDataset::reentry: return "reentry";
    case FinetuneDataset::conan: return "conan";
    case FinetuneDataset::multiconan: return "multiconan";
    case FinetuneDataset::bm_reddit: return "bm_reddit";
    case FinetuneDataset::bm_gab: return "bm_gab";
  }
  return "?";
}

FinetuneDataset parse_finetune_dataset(std::string_view s) {
  for (auto d : {FinetuneDataset::effective, FinetuneDataset::reentry, FinetuneDataset::conan,
                 FinetuneDataset::multiconan, FinetuneDataset::bm_reddit, FinetuneDataset::bm_gab})
    if (to_string(d) == s) return d;
  throw ConfigError("unknown finetune dataset '" + std::string(s) + "'");
}

std::string format_method(const MethodName& m) {
  struct {
    std::string operator()(const GenerationMethod& g) const { return std::string(to_string(g.condition)) + "_generation"; }
    std::string operator()(const SelectMethod& s) const {
      if (s.n < 1) throw ConfigError("select method needs n >= 1");
      return std::string(to_string(s.condition)) + "_top" + std::to_string(s.n) + "_select_" +
             std::string(target_name(s.selector));
    }
    std::string operator()(const FinetuneMethod& f) const { return std::string(to_string(f.dataset)) + "_finetune"; }
    std::string operator()(const TrlMethod& t) const {
      std::string s = t.base ? std::string(to_string(*t.base)) + "_finetune_" : "";
      return s + std::string(target_name(t.target)) + "_trl";
    }
  } visitor;
  return std::visit(visitor, m);
}

MethodName parse_method(std::string_view s) {
  static const std::string cond = "(baseline|effective|reentry)";
  static const std::string target = "(effective|reentry)";
  static const std::string dataset = "(effective|reentry|conan|multiconan|bm_reddit|bm_gab)";
  static const std::regex gen("^" + cond + "_generation$");
  static const std::regex sel("^" + cond + "_top([1-9][0-9]{0,5})_select_" + target + "$");
  static const std::regex ft("^" + dataset + "_finetune$");
  static const std::regex trl("^(?:" + dataset + "_finetune_)?" + target + "_trl$");
  const std::string str(s);
  std::smatch m;
  if (std::regex_match(str, m, gen)) return GenerationMethod{parse_condition(m[1].str())};
  if (std::regex_match(str, m, sel))
    return SelectMethod{parse_condition(m[1].str()), std::stoi(m[2].str()), parse_target_name(m[3].str())};
  if (std::regex_match(str, m, ft)) return FinetuneMethod{parse_finetune_dataset(m[1].str())};
  if (std::regex_match(str, m, trl)) {
    TrlMethod t{std::nullopt, parse_target_name(m[2].str())};
    if (m[1].matched) t.base = parse_finetune_dataset(m[1].str());
    return t;
  }
  throw ConfigError("method name '" + str + "' does not follow the naming scheme");
}

std::vector<std::string> standard_grid() {
  const PromptCondition conds[] = {PromptCondition::baseline, PromptCondition::effective, PromptCondition::reentry};
  const TaskName tasks[] = {TaskName::incivility, TaskName::reentry};
  std::vector<std::string> out;
  for (auto c : conds) out.push_back(format_method(GenerationMethod{c}));
  for (int n : {5, 10})
    for (auto t : tasks)
      for (auto c : conds) out.push_back(format_method(SelectMethod{c, n, t}));
  for (auto d : {FinetuneDataset::effective, FinetuneDataset::reentry, FinetuneDataset::conan,
                 FinetuneDataset::multiconan, FinetuneDataset::bm_reddit, FinetuneDataset::bm_gab})
    out.push_back(format_method(FinetuneMethod{d}));
  for (auto t : tasks) out.push_back(format_method(TrlMethod{std::nullopt, t}));
  for (auto t : tasks) out.push_back(format_method(TrlMethod{FinetuneDataset::bm_reddit, t}));
  return out;
}

// ---- prompting ----------------------------------------------------------

std::size_t select_candidate(std::span<const OutcomePrediction> predictions, std::size_t target_label, Rng& rng) {
  if (predictions.empty()) throw InputError("select_candidate: no candidates");
  if (target_label >= kNumLabels) throw ConfigError("select_candidate: target label out of range");
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i].task != predictions[0].task) throw InputError("select_candidate: predictions from different tasks");
    if (predictions[i].label != target_label) continue;
    if (!best || predictions[i].confidence[target_label] > predictions[*best].confidence[target_label]) best = i;
  }
  return best ? *best : rng.index(predictions.size());
}

namespace {

GenerationRecord base_record(const CorpusRecord& hate, std::string method, const GenerationParams& params) {
  GenerationRecord r;
  r.hate_id = hate.id;
  r.hate_text = hate.hate_text;
  r.method = std::move(method);
  r.params = params;
  return r;
}

}  // namespace

GenerationRecord prompt_with_instruction(const CorpusRecord& hate, PromptCondition condition,
                                         const GenerationParams& params, const ChatBackend& backend,
                                         const RefusalPatterns& patterns) {
  auto p = params;
  p.n_candidates = 1;
  auto r = base_record(hate, format_method(GenerationMethod{condition}), p);
  r.text = generate(build_prompt(hate.hate_text, condition), p, backend).front();
  r.valid = is_valid_response(r.text, patterns);
  return r;
}

GenerationRecord prompt_and_select(const CorpusRecord& hate, PromptCondition condition, int n,
                                   const OutcomeClassifier& selector, const GenerationParams& params,
                                   const ChatBackend& backend, std::uint64_t selection_seed,
                                   const RefusalPatterns& patterns) {
  if (n < 1) throw ConfigError("prompt_and_select: n must be >= 1");
  auto p = params;
  p.n_candidates = n;
  auto r = base_record(hate, format_method(SelectMethod{condition, n, selector.task()}), p);
  const auto texts = generate(build_prompt(hate.hate_text, condition), p, backend);

  r.candidates.emplace();
  std::vector<std::size_t> eligible;
  std::vector<OutcomePrediction> preds;
  for (std::size_t k = 0; k < texts.size(); ++k) {
    const bool valid = is_valid_response(texts[k], patterns);
    r.candidates->push_back({texts[k], valid});
    if (!valid) continue;
    try {
      preds.push_back(selector.predict(hate.hate_text, texts[k]));
      eligible.push_back(k);
    } catch (const Error& e) {
      log_warn("prompt_and_select: " + hate.id + " candidate " + std::to_string(k) + " skipped: " + e.what());
    }
  }
  if (eligible.empty()) {
    // Keep the first text when everything was invalid; nothing usable otherwise.
    const bool any_valid = std::any_of(r.candidates->begin(), r.candidates->end(), [](const auto& c) { return c.valid; });
    r.text = any_valid ? "" : texts.front();
    r.valid = false;
    return r;
  }
  Rng rng(derive_seed(selection_seed, "select/" + hate.id));
  r.text = texts[eligible[select_candidate(preds, OutcomeTask::get(selector.task()).desired, rng)]];
  r.valid = true;
  return r;
}

GenerationRecord generate_plain(const CorpusRecord& hate, std::string method, const GenerationParams& params,
                                const ChatBackend& backend, const RefusalPatterns& patterns) {
  auto p = params;
  p.n_candidates = 1;
  auto r = base_record(hate, std::move(method), p);
  r.text = generate(plain_prompt(hate.hate_text), p, backend).front();
  r.valid = is_valid_response(r.text, patterns);
  return r;
}

// ---- finetune -----------------------------------------------------------

std::vector<TextPair> prepare_finetune_dataset(FinetuneDataset dataset, const std::vector<CorpusRecord>& corpus,
                                               const std::vector<OutcomeExample>& outcomes) {
  std::vector<TextPair> out;
  if (dataset == FinetuneDataset::effective || dataset == FinetuneDataset::reentry) {
    for (const auto& e : outcomes) {
      const bool keep = dataset == FinetuneDataset::effective ? e.incivility == Incivility::low
                                                              : e.reentry == Reentry::nonhate_reentry;
      if (keep) out.push_back({e.hate_text, e.reply_text});
    }
  } else {
    Source want = Source::conan;
    switch (dataset) {
      case FinetuneDataset::conan: want = Source::conan; break;
      case FinetuneDataset::multiconan: want = Source::multiconan; break;
      case FinetuneDataset::bm_reddit: want = Source::benchmark_reddit; break;
      case FinetuneDataset::bm_gab: want = Source::benchmark_gab; break;
      default: break;
    }
    for (const auto& r : corpus)
      if (r.source == want && r.split != Split::test && r.reply_text) out.push_back({r.hate_text, *r.reply_text});
  }
  if (out.empty()) throw InputError("finetune dataset '" + std::string(to_string(dataset)) + "' is empty");
  return out;
}

void write_finetune_jsonl(const std::filesystem::path& path, std::span<const TextPair> pairs) {
  std::string out;
  for (const auto& p : pairs) out += nlohmann::json{{"prompt", p.prompt}, {"completion", p.completion}}.dump() + "\n";
  textio::write_file(path, out);
}

std::vector<TextPair> read_finetune_jsonl(const std::filesystem::path& path) {
  std::vector<TextPair> out;
  textio::for_each_json_line(path, [&](const nlohmann::json& j, std::size_t line) {
    TextPair p{j.at("prompt").get<std::string>(), j.at("completion").get<std::string>()};
    if (trim(p.prompt).empty()) throw InputError(path.string() + ": empty prompt", line);
    out.push_back(std::move(p));
  });
  return out;
}

FinetuneResult finetune(const TrainablePolicy& base, std::span<const TextPair> dataset, const FinetuneConfig& config) {
  if (dataset.empty()) throw InputError("finetune: empty dataset");
  if (config.epochs < 0 || !(config.learning_rate > 0)) throw ConfigError("finetune: epochs >= 0 and learning_rate > 0 required");
  FinetuneResult res;
  res.policy = base.clone();
  for (int epoch = 0;; ++epoch) {
    const double loss = res.policy->supervised_loss(dataset, config.exec);
    if (!std::isfinite(loss)) throw TrainingError("finetune: loss is not finite at epoch " + std::to_string(epoch));
    res.loss_history.push_back(loss);
    if (epoch == config.epochs) break;
    res.policy->supervised_update(dataset, config.learning_rate, config.exec);
  }
  return res;
}

// ---- TRL ----------------------------------------------------------------

void RewardConfig::validate() const {
  if (!std::isfinite(beta) || beta < 0) throw ConfigError("reward beta must be a finite non-negative number");
}

PolicySample trl_rollout(const TrainablePolicy& policy, std::string_view hate_text, const GenerationParams& params,
                         std::uint64_t seed) {
  if (trim(hate_text).empty()) throw InputError("trl_rollout: empty hate text");
  return policy.sample(hate_text, params, seed);
}

double trl_reward(std::string_view hate_text, std::string_view response, const OutcomeClassifier& classifier,
                  std::size_t target_label, const RefusalPatterns& patterns) {
  if (target_label >= kNumLabels) throw ConfigError("trl_reward: target label out of range");
  if (!is_valid_response(response, patterns)) return 0.0;
  return classifier.predict(hate_text, response).confidence[target_label];
}

double kl_penalty(std::span<const double> active_logprobs, std::span<const double> reference_logprobs) {
  if (active_logprobs.size() != reference_logprobs.size())
    throw InputError("kl_penalty: sequences differ in length");
  if (active_logprobs.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < active_logprobs.size(); ++i) s += active_logprobs[i] - reference_logprobs[i];
  return std::max(0.0, s / static_cast<double>(active_logprobs.size()));
}

RewardBreakdown total_reward(double r, double kl, const RewardConfig& config) {
  config.validate();
  if (!(kl >= 0)) throw InputError("total_reward: kl must be non-negative");
  return {r, kl, config.beta, r - config.beta * kl};
}

std::vector<double> whiten(std::span<const double> values) {
  if (values.empty()) return {};
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  std::vector<double> out(values.size(), 0.0);
  if (!(sd > 1e-12)) return out;
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - mean) / sd;
  return out;
}

void ppo_step(TrainablePolicy& policy, std::span<const RolloutResult> batch, const PpoConfig& config, Execution exec) {
  if (batch.empty()) throw InputError("ppo_step: empty batch");
  std::vector<double> totals;
  for (const auto& b : batch) totals.push_back(b.reward.total);
  const auto adv = whiten(totals);
  std::vector<PpoSample> samples;
  for (std::size_t i = 0; i < batch.size(); ++i)
    samples.push_back({batch[i].hate_text, batch[i].sample.tokens, batch[i].logprobs, adv[i]});
  policy.ppo_update(samples, config, exec);
}

TrlResult trl_train(const TrainablePolicy& base, const OutcomeClassifier& classifier,
                    std::span<const std::string> prompts, const TrlConfig& config) {
  if (!config.reward) throw ConfigError("trl: reward config with beta is required");
  config.reward->validate();
  if (config.reward->target_task != classifier.task())
    throw ConfigError("trl: classifier task does not match the reward target");
  if (config.batch_size < 1 || config.max_steps < 0 || config.window < 1 || config.tolerance < 0)
    throw ConfigError("trl: batch_size >= 1, max_steps >= 0, window >= 1 and tolerance >= 0 required");
  config.sampling.validate();
  if (config.max_steps > 0 && prompts.empty()) throw InputError("trl: no prompts");

  TrlResult res;
  res.policy = base.clone();
  const TrainablePolicy& reference = base;
  const std::size_t desired = OutcomeTask::get(config.reward->target_task).desired;
  const auto batch_size = static_cast<std::size_t>(config.batch_size);

  for (int step = 0; step < config.max_steps; ++step) {
    Rng pick(derive_seed(config.seed, "trl/prompts/" + std::to_string(step)));
    std::vector<RolloutResult> batch(batch_size);
    for (auto& b : batch) b.hate_text = prompts[pick.index(prompts.size())];
    const TrainablePolicy& active = *res.policy;
    for_each_index(batch_size, config.exec, [&](std::size_t i) {
      auto& b = batch[i];
      b.sample = trl_rollout(active, b.hate_text, config.sampling,
                             derive_seed(config.seed, "trl/rollout/" + std::to_string(step) + "/" + std::to_string(i)));
      b.logprobs = active.logprobs(b.hate_text, b.sample.tokens);
      const auto ref = reference.logprobs(b.hate_text, b.sample.tokens);
      const double r = trl_reward(b.hate_text, b.sample.text, classifier, desired);
      b.reward = total_reward(r, kl_penalty(b.logprobs, ref), *config.reward);
    });

    TrlLogRow row{step, 0, 0, 0};
    for (const auto& b : batch) {
      row.mean_r += b.reward.r;
      row.mean_kl += b.reward.kl;
      row.mean_total += b.reward.total;
    }
    row.mean_r /= static_cast<double>(batch_size);
    row.mean_kl /= static_cast<double>(batch_size);
    row.mean_total /= static_cast<double>(batch_size);
    res.log.push_back(row);
    log_info("trl step " + std::to_string(step) + " mean_total " + format_double(row.mean_total));

    ppo_step(*res.policy, batch, config.ppo, config.exec);

    const auto w = static_cast<std::size_t>(config.window);
    if (res.log.size() >= 2 * w) {
      double now = 0, before = 0;
      for (std::size_t k = 0; k < w; ++k) {
        now += res.log[res.log.size() - 1 - k].mean_total;
        before += res.log[res.log.size() - 1 - w - k].mean_total;
      }
      if (std::abs(now - before) / static_cast<double>(w) < config.tolerance) {
        res.converged = true;
        break;
      }
    }
  }
  return res;
}

void write_trl_log_csv(const std::filesystem::path& path, std::span<const TrlLogRow> log) {
  std::string out = "step,mean_r,mean_kl,mean_total\n";
  for (const auto& r : log)
    out += textio::csv_line({std::to_string(r.step), format_double(r.mean_r), format_double(r.mean_kl),
                             format_double(r.mean_total)}) + "\n";
  textio::write_file(path, out);
}

}  // namespace cspeech
