#include "cspeech/policy.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "cspeech/common.hpp"
#include "cspeech/metrics.hpp"
#include "cspeech/textio.hpp"

namespace cspeech {

TinyPolicy TinyPolicy::build(const std::vector<std::string>& texts, const TinyPolicyConfig& config) {
  if (config.max_vocab < 2) throw ConfigError("tiny policy needs max_vocab >= 2");
  std::map<std::string, std::size_t> counts;
  for (const auto& t : texts)
    for (auto& w : metrics::tokenize(t)) ++counts[w];
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> vocab{std::string(kEos)};
  for (const auto& [w, c] : ranked) {
    if (vocab.size() >= config.max_vocab) break;
    vocab.push_back(w);
  }
  if (vocab.size() < 2) throw InputError("tiny policy: no words to build a vocabulary from");
  return TinyPolicy(std::move(vocab), config.init_scale, config.seed);
}

TinyPolicy::TinyPolicy(std::vector<std::string> vocabulary, double init_scale, std::uint64_t seed)
    : vocab_(std::move(vocabulary)) {
  if (vocab_.empty() || vocab_[0] != kEos) throw ConfigError("tiny policy vocabulary must start with <eos>");
  for (std::size_t i = 0; i < vocab_.size(); ++i)
    if (!index_.emplace(vocab_[i], static_cast<int>(i)).second) throw ConfigError("duplicate vocabulary entry " + vocab_[i]);
  const std::size_t v = V();
  bias_.assign(v, 0.0);
  trans_.assign((v + 1) * v, 0.0);
  ctx_.assign(v * v, 0.0);
  if (init_scale > 0) {
    Rng rng(derive_seed(seed, "tiny_policy_init"));
    for (auto* p : {&bias_, &trans_, &ctx_})
      for (auto& x : *p) x = init_scale * (2.0 * rng.uniform() - 1.0);
  }
}

int TinyPolicy::token_id(std::string_view word) const {
  auto it = index_.find(std::string(word));
  return it == index_.end() ? -1 : it->second;
}

std::vector<int> TinyPolicy::context_ids(std::string_view prompt) const {
  std::vector<int> ids;
  for (const auto& w : metrics::tokenize(prompt))
    if (int id = token_id(w); id > 0) ids.push_back(id);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

std::vector<double> TinyPolicy::context_vector(const std::vector<int>& ctx) const {
  std::vector<double> c(V(), 0.0);
  if (ctx.empty()) return c;
  for (int w : ctx) {
    const double* r = ctx_.data() + static_cast<std::size_t>(w) * V();
    for (std::size_t j = 0; j < V(); ++j) c[j] += r[j];
  }
  const double inv = 1.0 / static_cast<double>(ctx.size());
  for (auto& x : c) x *= inv;
  return c;
}

void TinyPolicy::logits_into(const std::vector<double>& cvec, int prev, std::vector<double>& out) const {
  const std::size_t v = V();
  const double* t = trans_.data() + (prev < 0 ? v : static_cast<std::size_t>(prev)) * v;
  out.resize(v);
  for (std::size_t j = 0; j < v; ++j) out[j] = bias_[j] + t[j] + cvec[j];
}

namespace {

void softmax_inplace(std::vector<double>& z) {
  const double mx = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (auto& x : z) s += x = std::exp(x - mx);
  for (auto& x : z) x /= s;
}

double log_softmax_at(const std::vector<double>& z, int target) {
  const double mx = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double x : z) s += std::exp(x - mx);
  return z[static_cast<std::size_t>(target)] - mx - std::log(s);
}

}  // namespace

PolicySample TinyPolicy::sample(std::string_view prompt, const GenerationParams& params, std::uint64_t seed) const {
  params.validate();
  Rng rng(seed);
  const auto cvec = context_vector(context_ids(prompt));
  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(params.top_k), V());
  std::vector<double> z;
  std::vector<int> order(V());
  PolicySample out;
  int prev = -1;
  for (int step = 0; step < params.max_length; ++step) {
    logits_into(cvec, prev, z);
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + static_cast<long>(k), order.end(), [&](int a, int b) {
      return z[static_cast<std::size_t>(a)] > z[static_cast<std::size_t>(b)] ||
             (z[static_cast<std::size_t>(a)] == z[static_cast<std::size_t>(b)] && a < b);
    });
    const double top = z[static_cast<std::size_t>(order[0])];
    std::vector<double> w(k);
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) total += w[i] = std::exp((z[static_cast<std::size_t>(order[i])] - top) / params.temperature);
    double u = rng.uniform() * total;
    std::size_t pick = k - 1;
    for (std::size_t i = 0; i < k; ++i) {
      if (u < w[i]) {
        pick = i;
        break;
      }
      u -= w[i];
    }
    const int id = order[pick];
    out.tokens.push_back(id);
    if (id == 0) break;
    prev = id;
  }
  out.text = decode(out.tokens);
  return out;
}

std::vector<double> TinyPolicy::logprobs(std::string_view prompt, std::span<const int> tokens) const {
  const auto cvec = context_vector(context_ids(prompt));
  std::vector<double> out, z;
  int prev = -1;
  for (int t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= V()) throw InputError("logprobs: token id out of range");
    logits_into(cvec, prev, z);
    out.push_back(log_softmax_at(z, t));
    prev = t;
  }
  return out;
}

std::vector<double> TinyPolicy::next_token_distribution(std::string_view prompt, std::span<const int> prefix) const {
  std::vector<double> z;
  logits_into(context_vector(context_ids(prompt)), prefix.empty() ? -1 : prefix.back(), z);
  softmax_inplace(z);
  return z;
}

std::vector<int> TinyPolicy::encode_completion(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& w : metrics::tokenize(text))
    if (int id = token_id(w); id > 0) ids.push_back(id);
  ids.push_back(0);
  return ids;
}

std::string TinyPolicy::decode(std::span<const int> tokens) const {
  std::string s;
  for (int t : tokens) {
    if (t == 0) break;
    if (!s.empty()) s += ' ';
    s += vocab_.at(static_cast<std::size_t>(t));
  }
  return s;
}

// ---- gradients ----------------------------------------------------------

TinyPolicy::Gradient TinyPolicy::gradient(
    std::size_t n, const std::function<std::string_view(std::size_t)>& prompt_of,
    const std::function<std::vector<Position>(std::size_t, const std::vector<int>&)>& positions_of,
    Execution exec) const {
  const std::size_t v = V();
  const std::size_t blocks = std::min(kReductionBlocks, n);
  std::vector<std::map<std::size_t, std::vector<double>>> partial(blocks);
  for_each_index(blocks, exec, [&](std::size_t b) {
    auto& acc = partial[b];
    auto add = [&](std::size_t key, const std::vector<double>& d, double scale) {
      auto& r = acc[key];
      if (r.empty()) r.assign(v, 0.0);
      for (std::size_t j = 0; j < v; ++j) r[j] += scale * d[j];
    };
    std::vector<double> z;
    for (std::size_t i = b * n / blocks; i < (b + 1) * n / blocks; ++i) {
      const auto ctx = context_ids(prompt_of(i));
      const auto cvec = context_vector(ctx);
      for (const auto& pos : positions_of(i, ctx)) {
        if (pos.weight == 0.0) continue;
        logits_into(cvec, pos.prev, z);
        softmax_inplace(z);
        z[static_cast<std::size_t>(pos.target)] -= 1.0;  // d(-log p)/d(logits)
        add(0, z, pos.weight);
        add(1 + (pos.prev < 0 ? v : static_cast<std::size_t>(pos.prev)), z, pos.weight);
        const double share = pos.weight / static_cast<double>(ctx.size());
        for (int w : ctx) add(2 + v + static_cast<std::size_t>(w), z, share);
      }
    }
  });
  std::map<std::size_t, std::vector<double>> total;
  for (auto& part : partial)
    for (auto& [key, vec] : part) {
      auto& r = total[key];
      if (r.empty()) r.assign(v, 0.0);
      for (std::size_t j = 0; j < v; ++j) r[j] += vec[j];
    }
  Gradient g(std::make_move_iterator(total.begin()), std::make_move_iterator(total.end()));
  for (const auto& [key, vec] : g)
    for (double x : vec)
      if (!std::isfinite(x)) throw TrainingError("policy gradient is not finite");
  return g;
}

double* TinyPolicy::row(std::size_t key) {
  const std::size_t v = V();
  if (key == 0) return bias_.data();
  if (key <= v + 1) return trans_.data() + (key - 1) * v;
  return ctx_.data() + (key - 2 - v) * v;
}

void TinyPolicy::apply(const Gradient& g, double learning_rate) {
  for (const auto& [key, vec] : g) {
    double* r = row(key);
    for (std::size_t j = 0; j < vec.size(); ++j)
      if (vec[j] != 0.0) r[j] -= learning_rate * vec[j];
  }
}

double TinyPolicy::supervised_loss(std::span<const TextPair> batch, Execution exec) const {
  if (batch.empty()) throw InputError("supervised_loss: empty batch");
  std::vector<double> sums(batch.size());
  std::vector<std::size_t> counts(batch.size());
  for_each_index(batch.size(), exec, [&](std::size_t i) {
    const auto toks = encode_completion(batch[i].completion);
    const auto lp = logprobs(batch[i].prompt, toks);
    sums[i] = -std::accumulate(lp.begin(), lp.end(), 0.0);
    counts[i] = toks.size();
  });
  return std::accumulate(sums.begin(), sums.end(), 0.0) /
         static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::size_t{0}));
}

void TinyPolicy::supervised_update(std::span<const TextPair> batch, double learning_rate, Execution exec) {
  if (batch.empty()) throw InputError("supervised_update: empty batch");
  std::vector<std::vector<int>> seqs;
  std::size_t total = 0;
  for (const auto& p : batch) {
    seqs.push_back(encode_completion(p.completion));
    total += seqs.back().size();
  }
  const double w = 1.0 / static_cast<double>(total);
  auto g = gradient(
      batch.size(), [&](std::size_t i) { return std::string_view(batch[i].prompt); },
      [&](std::size_t i, const std::vector<int>&) {
        std::vector<Position> pos;
        int prev = -1;
        for (int t : seqs[i]) {
          pos.push_back({prev, t, w});
          prev = t;
        }
        return pos;
      },
      exec);
  apply(g, learning_rate);
}

void TinyPolicy::ppo_update(std::span<const PpoSample> batch, const PpoConfig& config, Execution exec) {
  if (batch.empty()) throw InputError("ppo_update: empty batch");
  if (!(config.learning_rate > 0) || !(config.clip > 0) || config.max_grad_norm < 0)
    throw ConfigError("ppo_update: learning_rate and clip must be positive");
  for (const auto& s : batch) {
    if (s.tokens.empty() || s.tokens.size() != s.old_logprobs.size())
      throw InputError("ppo_update: tokens and old logprobs must be non-empty and aligned");
    if (!std::isfinite(s.advantage)) throw TrainingError("ppo_update: non-finite advantage");
  }
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  auto g = gradient(
      batch.size(), [&](std::size_t i) { return std::string_view(batch[i].prompt); },
      [&](std::size_t i, const std::vector<int>&) {
        const auto& s = batch[i];
        std::vector<Position> pos;
        if (s.advantage == 0.0) return pos;
        const auto now = logprobs(s.prompt, s.tokens);
        const double inv_t = 1.0 / static_cast<double>(s.tokens.size());
        int prev = -1;
        for (std::size_t t = 0; t < s.tokens.size(); ++t) {
          const double ratio = std::exp(now[t] - s.old_logprobs[t]);
          const bool clipped = (s.advantage > 0 && ratio > 1 + config.clip) || (s.advantage < 0 && ratio < 1 - config.clip);
          // Surrogate -A*ratio: its gradient is A*ratio * d(-log p).
          pos.push_back({prev, s.tokens[t], clipped ? 0.0 : s.advantage * ratio * inv_t * inv_b});
          prev = s.tokens[t];
        }
        return pos;
      },
      exec);
  if (config.max_grad_norm > 0) {
    double sq = 0.0;
    for (const auto& [key, vec] : g)
      for (double x : vec) sq += x * x;
    const double norm = std::sqrt(sq);
    if (norm > config.max_grad_norm)
      for (auto& [key, vec] : g)
        for (auto& x : vec) x *= config.max_grad_norm / norm;
  }
  apply(g, config.learning_rate);
}

// ---- persistence --------------------------------------------------------

nlohmann::json TinyPolicy::snapshot() const {
  return {{"format_version", kFormatVersion}, {"kind", "tiny"}, {"vocabulary", vocab_},
          {"bias", bias_},                    {"trans", trans_}, {"ctx", ctx_}};
}

void TinyPolicy::restore(const nlohmann::json& state) {
  try {
    if (state.at("kind") != "tiny") throw InputError("policy snapshot is not a tiny policy");
    if (state.at("format_version").get<int>() != kFormatVersion) throw InputError("unsupported policy format_version");
    TinyPolicy p(state.at("vocabulary").get<std::vector<std::string>>(), 0.0, 0);
    p.bias_ = state.at("bias").get<std::vector<double>>();
    p.trans_ = state.at("trans").get<std::vector<double>>();
    p.ctx_ = state.at("ctx").get<std::vector<double>>();
    const std::size_t v = p.V();
    if (p.bias_.size() != v || p.trans_.size() != (v + 1) * v || p.ctx_.size() != v * v)
      throw InputError("policy snapshot: parameter sizes do not match the vocabulary");
    *this = std::move(p);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("policy snapshot: ") + e.what());
  }
}

void TinyPolicy::save(const std::filesystem::path& path) const { textio::write_file(path, snapshot().dump()); }

TinyPolicy TinyPolicy::load(const std::filesystem::path& path) {
  TinyPolicy p({std::string(kEos)}, 0.0, 0);
  try {
    p.restore(nlohmann::json::parse(textio::read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError(path.string() + ": " + e.what());
  }
  return p;
}

std::unique_ptr<TrainablePolicy> load_policy(const std::filesystem::path& path) {
  return std::make_unique<TinyPolicy>(TinyPolicy::load(path));
}

std::vector<std::string> PolicyBackend::complete(const Prompt& prompt, const GenerationParams& params) const {
  std::vector<std::string> out;
  for (int k = 0; k < params.n_candidates; ++k)
    out.push_back(policy_->sample(prompt.user, params, derive_seed(params.seed.value_or(0), "candidate-" + std::to_string(k))).text);
  return out;
}

}  // namespace cspeech
