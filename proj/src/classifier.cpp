#include "cspeech/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "cspeech/common.hpp"
#include "cspeech/metrics.hpp"
#include "cspeech/textio.hpp"

namespace cspeech {

namespace {

using Row = std::vector<std::pair<std::uint32_t, double>>;
using Vec3 = std::array<double, kNumLabels>;

Vec3 softmax(const Vec3& z) {
  const double mx = *std::max_element(z.begin(), z.end());
  Vec3 p;
  double s = 0.0;
  for (std::size_t k = 0; k < kNumLabels; ++k) s += p[k] = std::exp(z[k] - mx);
  for (auto& v : p) v /= s;
  return p;
}

Vec3 row_logits(const Row& row, const std::vector<Vec3>& w, const Vec3& b) {
  Vec3 z = b;
  for (const auto& [f, x] : row)
    for (std::size_t k = 0; k < kNumLabels; ++k) z[k] += w[f][k] * x;
  return z;
}

void check_texts(std::string_view hate, std::string_view reply) {
  if (trim(hate).empty()) throw InputError("predict: empty hate text");
  if (trim(reply).empty()) throw InputError("predict: empty reply text");
}

}  // namespace

OutcomePrediction make_prediction(TaskName task, std::array<double, kNumLabels> scores) {
  double s = 0.0;
  for (double v : scores) {
    if (!std::isfinite(v) || v < 0.0) throw InputError("prediction scores must be finite and non-negative");
    s += v;
  }
  if (s <= 0.0) throw InputError("prediction scores sum to zero");
  OutcomePrediction p;
  p.task = task;
  for (std::size_t k = 0; k < kNumLabels; ++k) p.confidence[k] = scores[k] / s;
  p.label = 0;
  for (std::size_t k = 1; k < kNumLabels; ++k)
    if (p.confidence[k] > p.confidence[p.label]) p.label = k;
  return p;
}

// ---- linear model -------------------------------------------------------

std::vector<std::string> LinearClassifier::feature_strings(std::string_view hate_text, std::string_view reply_text,
                                                           bool bigrams) {
  std::vector<std::string> seq = metrics::tokenize(hate_text);
  seq.emplace_back(kSeparator);
  for (auto& t : metrics::tokenize(reply_text)) seq.push_back(std::move(t));
  std::vector<std::string> out = seq;
  if (bigrams)
    for (std::size_t i = 0; i + 1 < seq.size(); ++i) out.push_back(seq[i] + " " + seq[i + 1]);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

LinearClassifier::SparseRow LinearClassifier::encode(std::string_view hate_text, std::string_view reply_text) const {
  SparseRow row;
  for (const auto& f : feature_strings(hate_text, reply_text, bigrams_)) {
    auto it = index_.find(f);
    if (it != index_.end()) row.emplace_back(it->second, 1.0);
  }
  std::sort(row.begin(), row.end());
  if (!row.empty()) {
    const double norm = 1.0 / std::sqrt(static_cast<double>(row.size()));
    for (auto& e : row) e.second = norm;
  }
  return row;
}

std::array<double, kNumLabels> LinearClassifier::logits(const SparseRow& row) const {
  return row_logits(row, weights_, bias_);
}

OutcomePrediction LinearClassifier::predict(std::string_view hate_text, std::string_view reply_text) const {
  check_texts(hate_text, reply_text);
  return make_prediction(task_, softmax(logits(encode(hate_text, reply_text))));
}

SoftmaxGradient softmax_gradient(std::span<const Row> rows, std::span<const std::size_t> labels,
                                 const std::vector<Vec3>& weights, const Vec3& bias, Execution exec) {
  const std::size_t n = rows.size();
  if (n == 0 || labels.size() != n) throw InputError("softmax_gradient: bad shapes");
  std::vector<Vec3> residual(n);
  std::vector<double> losses(n);
  auto per_example = [&](std::size_t i) {
    const Vec3 p = softmax(row_logits(rows[i], weights, bias));
    losses[i] = -std::log(std::max(p[labels[i]], 1e-300));
    for (std::size_t k = 0; k < kNumLabels; ++k) residual[i][k] = p[k] - (k == labels[i] ? 1.0 : 0.0);
  };

  SoftmaxGradient g;
  g.weights.assign(weights.size(), Vec3{});
  const double inv_n = 1.0 / static_cast<double>(n);

  if (exec == Execution::serial) {
    for (std::size_t i = 0; i < n; ++i) per_example(i);
    for (std::size_t i = 0; i < n; ++i)
      for (const auto& [f, x] : rows[i])
        for (std::size_t k = 0; k < kNumLabels; ++k) g.weights[f][k] += residual[i][k] * x;
  } else {
    for_each_index(n, Execution::parallel, per_example);
    // Feature-major pass: each feature sums its examples in example order,
    // which is the order the serial loop uses.
    std::vector<std::size_t> start(weights.size() + 1, 0);
    for (const auto& r : rows)
      for (const auto& e : r) ++start[e.first + 1];
    for (std::size_t f = 0; f < weights.size(); ++f) start[f + 1] += start[f];
    std::vector<std::pair<std::uint32_t, double>> entries(start.back());
    std::vector<std::size_t> fill(start.begin(), start.end() - 1);
    for (std::size_t i = 0; i < n; ++i)
      for (const auto& [f, x] : rows[i]) entries[fill[f]++] = {static_cast<std::uint32_t>(i), x};
    const std::size_t blocks = std::min<std::size_t>(kReductionBlocks, weights.size());
    for_each_index(blocks, Execution::parallel, [&](std::size_t b) {
      for (std::size_t f = b; f < weights.size(); f += blocks)
        for (std::size_t e = start[f]; e < start[f + 1]; ++e)
          for (std::size_t k = 0; k < kNumLabels; ++k) g.weights[f][k] += residual[entries[e].first][k] * entries[e].second;
    });
  }
  for (std::size_t i = 0; i < n; ++i) {
    g.loss += losses[i];
    for (std::size_t k = 0; k < kNumLabels; ++k) g.bias[k] += residual[i][k];
  }
  g.loss *= inv_n;
  for (auto& k : g.bias) k *= inv_n;
  for (auto& w : g.weights)
    for (auto& k : w) k *= inv_n;
  return g;
}

std::vector<std::size_t> task_labels(const std::vector<OutcomeExample>& examples, TaskName task) {
  std::vector<std::size_t> out;
  out.reserve(examples.size());
  for (const auto& e : examples) {
    auto l = e.label(task);
    if (!l) throw InputError("example " + e.id + " has no " + std::string(to_string(task)) + " label");
    out.push_back(*l);
  }
  return out;
}

LinearClassifier LinearClassifier::train(const std::vector<OutcomeExample>& examples, TaskName task,
                                         const LinearTrainConfig& config) {
  if (examples.empty()) throw InputError("train_classifier: no examples");
  if (config.epochs < 1 || !(config.learning_rate > 0) || config.l2 < 0)
    throw ConfigError("train_classifier: epochs >= 1, learning_rate > 0 and l2 >= 0 required");
  const auto labels = task_labels(examples, task);
  if (std::set<std::size_t>(labels.begin(), labels.end()).size() < 2)
    throw TrainingError("train_classifier: training set has a single class");

  LinearClassifier m;
  m.task_ = task;
  m.bigrams_ = config.bigrams;
  std::set<std::string> vocab;
  for (const auto& e : examples)
    for (auto& f : feature_strings(e.hate_text, e.reply_text, m.bigrams_)) vocab.insert(std::move(f));
  m.vocabulary_.assign(vocab.begin(), vocab.end());
  for (std::uint32_t i = 0; i < m.vocabulary_.size(); ++i) m.index_.emplace(m.vocabulary_[i], i);
  m.weights_.assign(m.vocabulary_.size(), Vec3{});

  std::vector<Row> rows;
  rows.reserve(examples.size());
  for (const auto& e : examples) rows.push_back(m.encode(e.hate_text, e.reply_text));

  auto penalty = [&] {
    double s = 0.0;
    for (const auto& w : m.weights_)
      for (double v : w) s += v * v;
    return 0.5 * config.l2 * s;
  };

  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::vector<Vec3> mw(m.weights_.size(), Vec3{}), vw(m.weights_.size(), Vec3{});
  Vec3 mb{}, vb{};
  for (int epoch = 0; epoch <= config.epochs; ++epoch) {
    auto g = softmax_gradient(rows, labels, m.weights_, m.bias_, config.exec);
    const double loss = g.loss + penalty();
    if (!std::isfinite(loss)) throw TrainingError("train_classifier: loss is not finite at epoch " + std::to_string(epoch));
    m.loss_history_.push_back(loss);
    if (epoch == config.epochs) break;
    const double t = epoch + 1;
    const double c1 = 1.0 - std::pow(beta1, t), c2 = 1.0 - std::pow(beta2, t);
    auto step = [&](double& param, double grad, double& m1, double& m2) {
      m1 = beta1 * m1 + (1 - beta1) * grad;
      m2 = beta2 * m2 + (1 - beta2) * grad * grad;
      param -= config.learning_rate * (m1 / c1) / (std::sqrt(m2 / c2) + eps);
    };
    for (std::size_t f = 0; f < m.weights_.size(); ++f)
      for (std::size_t k = 0; k < kNumLabels; ++k)
        step(m.weights_[f][k], g.weights[f][k] + config.l2 * m.weights_[f][k], mw[f][k], vw[f][k]);
    for (std::size_t k = 0; k < kNumLabels; ++k) step(m.bias_[k], g.bias[k], mb[k], vb[k]);
  }
  return m;
}

nlohmann::json LinearClassifier::to_json() const {
  const auto& t = OutcomeTask::get(task_);
  nlohmann::json j;
  j["format_version"] = kFormatVersion;
  j["kind"] = "linear";
  j["task"] = to_string(task_);
  j["labels"] = nlohmann::json::array();
  for (auto l : t.labels) j["labels"].push_back(l);
  j["bigrams"] = bigrams_;
  j["vocabulary"] = vocabulary_;
  j["weights"] = weights_;
  j["bias"] = bias_;
  j["loss_history"] = loss_history_;
  return j;
}

LinearClassifier LinearClassifier::from_json(const nlohmann::json& j) {
  try {
    if (j.at("kind") != "linear") throw InputError("classifier artifact is not a linear model");
    if (j.at("format_version").get<int>() != kFormatVersion)
      throw InputError("unsupported classifier format_version " + j.at("format_version").dump());
    LinearClassifier m;
    m.task_ = parse_task_name(j.at("task").get<std::string>());
    const auto& t = OutcomeTask::get(m.task_);
    const auto labels = j.at("labels").get<std::vector<std::string>>();
    if (labels.size() != kNumLabels) throw InputError("classifier artifact: expected 3 labels");
    for (std::size_t k = 0; k < kNumLabels; ++k)
      if (labels[k] != t.labels[k]) throw InputError("classifier artifact: label order differs from task");
    m.bigrams_ = j.at("bigrams").get<bool>();
    m.vocabulary_ = j.at("vocabulary").get<std::vector<std::string>>();
    m.weights_ = j.at("weights").get<std::vector<Vec3>>();
    m.bias_ = j.at("bias").get<Vec3>();
    if (j.contains("loss_history")) m.loss_history_ = j["loss_history"].get<std::vector<double>>();
    if (m.weights_.size() != m.vocabulary_.size()) throw InputError("classifier artifact: weights/vocabulary mismatch");
    for (std::uint32_t i = 0; i < m.vocabulary_.size(); ++i) m.index_.emplace(m.vocabulary_[i], i);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("classifier artifact: ") + e.what());
  }
}

void LinearClassifier::save(const std::filesystem::path& path) const { textio::write_file(path, to_json().dump()); }

LinearClassifier LinearClassifier::load(const std::filesystem::path& path) {
  try {
    return from_json(nlohmann::json::parse(textio::read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

// ---- remote model -------------------------------------------------------

OutcomePrediction HttpClassifier::predict(std::string_view hate_text, std::string_view reply_text) const {
  check_texts(hate_text, reply_text);
  nlohmann::json req{{"hate_text", hate_text}, {"reply_text", reply_text}, {"task", to_string(task_)}};
  const auto res = post_json(endpoint_, req);
  const auto& t = OutcomeTask::get(task_);
  try {
    std::array<double, kNumLabels> scores{};
    for (std::size_t k = 0; k < kNumLabels; ++k) scores[k] = res.at("confidence").at(std::string(t.labels[k])).get<double>();
    auto p = make_prediction(task_, scores);
    if (res.contains("label") && res["label"].get<std::string>() != p.label_name())
      throw InputError("classifier response label disagrees with its confidences");
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("classifier response: ") + e.what());
  }
}

std::unique_ptr<OutcomeClassifier> load_classifier(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(textio::read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError(path.string() + ": " + e.what());
  }
  const std::string kind = j.value("kind", "");
  if (kind == "linear") return std::make_unique<LinearClassifier>(LinearClassifier::from_json(j));
  if (kind == "http") {
    const auto url_env = j.value("url_env", "CSPEECH_CLASSIFIER_URL");
    const auto token_env = j.value("token_env", "CSPEECH_CLASSIFIER_TOKEN");
    return std::make_unique<HttpClassifier>(HttpEndpoint::from_env(url_env.c_str(), token_env.c_str()),
                                            parse_task_name(j.at("task").get<std::string>()));
  }
  throw ConfigError(path.string() + ": unknown classifier kind '" + kind + "'");
}

// ---- evaluation ---------------------------------------------------------

ClassifierReport evaluate_from_labels(TaskName task, std::span<const std::size_t> truth,
                                      std::span<const std::size_t> predicted) {
  if (truth.empty()) throw InputError("evaluate: empty test set");
  if (truth.size() != predicted.size()) throw InputError("evaluate: truth and predictions differ in length");
  ClassifierReport r;
  r.task = task;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= kNumLabels || predicted[i] >= kNumLabels) throw InputError("evaluate: label index out of range");
    ++r.confusion[truth[i]][predicted[i]];
    correct += truth[i] == predicted[i];
  }
  const double n = static_cast<double>(truth.size());
  for (std::size_t k = 0; k < kNumLabels; ++k) {
    std::size_t tp = r.confusion[k][k], pred = 0, sup = 0;
    for (std::size_t o = 0; o < kNumLabels; ++o) {
      pred += r.confusion[o][k];
      sup += r.confusion[k][o];
    }
    auto& c = r.per_class[k];
    c.precision = pred ? static_cast<double>(tp) / static_cast<double>(pred) : 0.0;
    c.recall = sup ? static_cast<double>(tp) / static_cast<double>(sup) : 0.0;
    c.f1 = c.precision + c.recall > 0 ? 2 * c.precision * c.recall / (c.precision + c.recall) : 0.0;
    r.support[k] = sup;
    const double w = static_cast<double>(sup) / n;
    r.weighted.precision += w * c.precision;
    r.weighted.recall += w * c.recall;
    r.weighted.f1 += w * c.f1;
    r.macro.precision += c.precision / kNumLabels;
    r.macro.recall += c.recall / kNumLabels;
    r.macro.f1 += c.f1 / kNumLabels;
  }
  r.accuracy = static_cast<double>(correct) / n;
  return r;
}

ClassifierReport evaluate_classifier(const OutcomeClassifier& classifier, const std::vector<OutcomeExample>& test,
                                     Execution exec) {
  const auto truth = task_labels(test, classifier.task());
  std::vector<std::size_t> pred(test.size());
  for_each_index(test.size(), exec,
                 [&](std::size_t i) { pred[i] = classifier.predict(test[i].hate_text, test[i].reply_text).label; });
  return evaluate_from_labels(classifier.task(), truth, pred);
}

ClassifierReport majority_baseline(TaskName task, std::span<const std::size_t> train_labels,
                                   std::span<const std::size_t> test_labels) {
  if (train_labels.empty()) throw InputError("majority_baseline: no training labels");
  std::array<std::size_t, kNumLabels> counts{};
  for (auto l : train_labels) {
    if (l >= kNumLabels) throw InputError("majority_baseline: label index out of range");
    ++counts[l];
  }
  const std::size_t majority = static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  std::vector<std::size_t> pred(test_labels.size(), majority);
  return evaluate_from_labels(task, test_labels, pred);
}

nlohmann::json to_json(const ClassifierReport& r) {
  const auto& t = OutcomeTask::get(r.task);
  auto scores = [](const ClassScores& c) {
    return nlohmann::json{{"precision", c.precision}, {"recall", c.recall}, {"f1", c.f1}};
  };
  nlohmann::json j;
  j["task"] = to_string(r.task);
  for (std::size_t k = 0; k < kNumLabels; ++k) {
    const std::string name(t.labels[k]);
    j["per_class"][name] = scores(r.per_class[k]);
    j["support"][name] = r.support[k];
  }
  j["weighted"] = scores(r.weighted);
  j["macro"] = scores(r.macro);
  j["accuracy"] = r.accuracy;
  j["confusion"] = r.confusion;
  return j;
}

// ---- toy data -----------------------------------------------------------

std::string_view synthetic_marker(TaskName task, std::size_t label) {
  static constexpr std::array<std::string_view, kNumLabels> incivility{"disgusting", "whatever", "respectfully"};
  static constexpr std::array<std::string_view, kNumLabels> reentry{"trash", "bye", "discuss"};
  if (label >= kNumLabels) throw ConfigError("synthetic_marker: label out of range");
  return task == TaskName::incivility ? incivility[label] : reentry[label];
}

std::vector<OutcomeExample> synthetic_outcomes(TaskName task, std::size_t n, std::uint64_t seed, double noise) {
  static const std::vector<std::string> hates{
      "people like you ruin every thread", "your whole group is worthless", "go back where you came from",
      "nobody wants your kind here",       "you lot are all the same",      "this community would be better without you"};
  static const std::vector<std::string> filler{"i", "think", "that", "is", "not", "fair", "you", "should", "consider",
                                               "the", "people", "here", "really", "about", "it", "maybe"};
  if (noise < 0 || noise > 1) throw ConfigError("synthetic_outcomes: noise must be in [0, 1]");
  Rng rng(derive_seed(seed, "synthetic_outcomes"));
  std::vector<OutcomeExample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t marker_label = rng.index(kNumLabels);
    std::vector<std::string> words(3 + rng.index(6));
    for (auto& w : words) w = filler[rng.index(filler.size())];
    words.insert(words.begin() + static_cast<long>(rng.index(words.size() + 1)), std::string(synthetic_marker(task, marker_label)));
    std::string reply;
    for (const auto& w : words) reply += (reply.empty() ? "" : " ") + w;
    std::size_t label = marker_label;
    if (noise > 0 && rng.uniform() < noise) label = rng.index(kNumLabels);
    OutcomeExample e;
    e.id = "syn-" + std::to_string(i);
    e.hate_text = hates[rng.index(hates.size())];
    e.reply_text = reply;
    if (task == TaskName::incivility) e.incivility = static_cast<Incivility>(label);
    else e.reentry = static_cast<Reentry>(label);
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace cspeech
