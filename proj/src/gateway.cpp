#include "cspeech/gateway.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <thread>

#include "cspeech/common.hpp"
#include "cspeech/parallel.hpp"
#include "cspeech/refusal_patterns_default.hpp"
#include "cspeech/textio.hpp"

namespace cspeech {

std::string_view to_string(PromptCondition c) {
  switch (c) {
    case PromptCondition::baseline: return "baseline";
    case PromptCondition::effective: return "effective";
    case PromptCondition::reentry: return "reentry";
  }
  return "?";
}

PromptCondition parse_condition(std::string_view s) {
  if (s == "baseline") return PromptCondition::baseline;
  if (s == "effective") return PromptCondition::effective;
  if (s == "reentry") return PromptCondition::reentry;
  throw ConfigError("unknown prompt condition '" + std::string(s) + "'");
}

Prompt build_prompt(std::string_view hate_text, PromptCondition condition) {
  if (trim(hate_text).empty()) throw InputError("build_prompt: empty hate text");
  const std::string h(hate_text);
  Prompt p{std::string(kSystemPrompt), {}};
  switch (condition) {
    case PromptCondition::baseline:
      p.user = "Here is the Reddit comment: " + h + ". Please write a counterspeech to the Reddit hate comment.";
      break;
    case PromptCondition::effective:
      p.user = "Here is the hate comment: " + h +
               ". Please write a counterspeech to the hate comment so that it could lead to low incivility in the "
               "following conversations.";
      break;
    case PromptCondition::reentry:
      p.user = "Here is the hate comment: " + h +
               ". Please write a counterspeech to the hate comment so that the hater will come back and have "
               "constructive engagement in the conversation.";
      break;
  }
  return p;
}

Prompt plain_prompt(std::string_view hate_text) {
  if (trim(hate_text).empty()) throw InputError("plain_prompt: empty hate text");
  return {std::string(kSystemPrompt), std::string(hate_text)};
}

void GenerationParams::validate() const {
  if (top_k <= 0) throw ConfigError("top_k must be positive");
  if (!(temperature > 0)) throw ConfigError("temperature must be positive");
  if (max_length <= 0) throw ConfigError("max_length must be positive");
  if (n_candidates <= 0) throw ConfigError("n_candidates must be positive");
}

nlohmann::json to_json(const GenerationParams& p) {
  nlohmann::json j{{"top_k", p.top_k},
                   {"temperature", p.temperature},
                   {"max_length", p.max_length},
                   {"n_candidates", p.n_candidates}};
  j["seed"] = p.seed ? nlohmann::json(*p.seed) : nlohmann::json(nullptr);
  return j;
}

GenerationParams generation_params_from_json(const nlohmann::json& j) {
  GenerationParams p;
  p.top_k = j.value("top_k", p.top_k);
  p.temperature = j.value("temperature", p.temperature);
  p.max_length = j.value("max_length", p.max_length);
  p.n_candidates = j.value("n_candidates", p.n_candidates);
  if (j.contains("seed") && !j["seed"].is_null()) p.seed = j["seed"].get<std::uint64_t>();
  p.validate();
  return p;
}

std::vector<std::string> generate(const Prompt& prompt, const GenerationParams& params, const ChatBackend& backend) {
  params.validate();
  auto texts = backend.complete(prompt, params);
  if (texts.size() != static_cast<std::size_t>(params.n_candidates))
    throw InputError("backend returned " + std::to_string(texts.size()) + " texts, expected " +
                     std::to_string(params.n_candidates));
  return texts;
}

// ---- scripted -----------------------------------------------------------

ScriptedBackend::ScriptedBackend()
    : script_([](const Prompt&, std::size_t k, std::uint64_t) { return "reply-" + std::to_string(k); }) {}

ScriptedBackend ScriptedBackend::cycling(std::vector<std::string> texts) {
  if (texts.empty()) throw ConfigError("ScriptedBackend::cycling: no texts");
  return ScriptedBackend([texts = std::move(texts)](const Prompt&, std::size_t k, std::uint64_t) {
    return texts[k % texts.size()];
  });
}

std::vector<std::string> ScriptedBackend::complete(const Prompt& prompt, const GenerationParams& params) const {
  std::vector<std::string> out;
  for (int k = 0; k < params.n_candidates; ++k)
    out.push_back(script_(prompt, static_cast<std::size_t>(k), params.seed.value_or(0)));
  return out;
}

// ---- http ---------------------------------------------------------------

HttpChatBackend::HttpChatBackend(HttpEndpoint endpoint, int max_in_flight)
    : endpoint_(std::move(endpoint)), max_in_flight_(max_in_flight) {
  if (max_in_flight_ < 1) throw ConfigError("max_in_flight must be at least 1");
}

HttpChatBackend HttpChatBackend::from_env(int max_in_flight) {
  return HttpChatBackend(HttpEndpoint::from_env(kUrlEnv, kTokenEnv), max_in_flight);
}

namespace {

std::vector<std::string> request_texts(const HttpEndpoint& endpoint, const Prompt& prompt, const GenerationParams& p,
                                       int n, std::optional<std::uint64_t> seed) {
  nlohmann::json body{{"system", prompt.system}, {"user", prompt.user},  {"top_k", p.top_k},
                      {"temperature", p.temperature}, {"max_tokens", p.max_length}, {"n", n}};
  if (seed) body["seed"] = *seed;
  const auto res = post_json(endpoint, body);
  if (!res.contains("texts") || !res["texts"].is_array()) throw InputError("chat response has no texts array");
  std::vector<std::string> out;
  for (const auto& t : res["texts"]) {
    if (!t.is_string()) throw InputError("chat response texts must be strings");
    out.push_back(t.get<std::string>());
  }
  if (out.size() != static_cast<std::size_t>(n))
    throw InputError("chat response has " + std::to_string(out.size()) + " texts, expected " + std::to_string(n));
  return out;
}

}  // namespace

std::vector<std::string> HttpChatBackend::complete(const Prompt& prompt, const GenerationParams& params) const {
  const int n = params.n_candidates;
  if (max_in_flight_ == 1 || n == 1) return request_texts(endpoint_, prompt, params, n, params.seed);

  std::vector<std::string> out(static_cast<std::size_t>(n));
  std::vector<std::exception_ptr> errors(out.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k; (k = next.fetch_add(1)) < out.size();) {
      try {
        std::optional<std::uint64_t> seed;
        if (params.seed) seed = derive_seed(*params.seed, "candidate-" + std::to_string(k));
        out[k] = request_texts(endpoint_, prompt, params, 1, seed).front();
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < std::min(max_in_flight_, n); ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

// ---- validity -----------------------------------------------------------

namespace {

std::string normalize(std::string_view text) {
  std::string s = to_lower(trim(text));
  // Typographic apostrophe (U+2019) folds to ASCII.
  for (std::size_t p; (p = s.find("\xE2\x80\x99")) != std::string::npos;) s.replace(p, 3, "'");
  return s;
}

}  // namespace

RefusalPatterns::RefusalPatterns(std::vector<std::string> patterns) {
  for (auto& p : patterns) {
    const bool anchored = !p.empty() && p[0] == '^';
    std::string body = normalize(anchored ? std::string_view(p).substr(1) : std::string_view(p));
    if (body.empty()) throw ConfigError("empty refusal pattern");
    patterns_.push_back(anchored ? "^" + body : body);
  }
}

RefusalPatterns RefusalPatterns::parse(std::string_view text) {
  std::vector<std::string> pats;
  std::istringstream in{std::string(text)};
  for (std::string line; std::getline(in, line);) {
    const auto t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    pats.push_back(t);
  }
  return RefusalPatterns(std::move(pats));
}

RefusalPatterns RefusalPatterns::load(const std::filesystem::path& path) { return parse(textio::read_file(path)); }

std::string_view RefusalPatterns::default_text() { return detail::kDefaultRefusalPatterns; }

const RefusalPatterns& RefusalPatterns::defaults() {
  static const RefusalPatterns d = parse(default_text());
  return d;
}

bool RefusalPatterns::matches(std::string_view text) const {
  const std::string s = normalize(text);
  for (const auto& p : patterns_) {
    if (p[0] == '^') {
      if (s.compare(0, p.size() - 1, p, 1) == 0) return true;
    } else if (s.find(p) != std::string::npos) {
      return true;
    }
  }
  return false;
}

bool is_valid_response(std::string_view text, const RefusalPatterns& patterns) {
  return !trim(text).empty() && !patterns.matches(text);
}

// ---- records ------------------------------------------------------------

nlohmann::json to_json(const GenerationRecord& r) {
  nlohmann::json j{{"hate_id", r.hate_id}, {"hate_text", r.hate_text}, {"method", r.method},
                   {"text", r.text},       {"valid", r.valid},         {"params", to_json(r.params)}};
  if (r.candidates) {
    j["candidates"] = nlohmann::json::array();
    for (const auto& c : *r.candidates) j["candidates"].push_back({{"text", c.text}, {"valid", c.valid}});
  } else {
    j["candidates"] = nullptr;
  }
  return j;
}

GenerationRecord generation_record_from_json(const nlohmann::json& j) {
  GenerationRecord r;
  r.hate_id = j.at("hate_id").get<std::string>();
  r.hate_text = j.value("hate_text", "");
  r.method = j.at("method").get<std::string>();
  r.text = j.at("text").get<std::string>();
  r.valid = j.at("valid").get<bool>();
  r.params = generation_params_from_json(j.value("params", nlohmann::json::object()));
  if (j.contains("candidates") && !j["candidates"].is_null()) {
    r.candidates.emplace();
    for (const auto& c : j["candidates"]) r.candidates->push_back({c.at("text").get<std::string>(), c.at("valid").get<bool>()});
  }
  return r;
}

std::vector<GenerationRecord> read_generations_jsonl(const std::filesystem::path& path) {
  std::vector<GenerationRecord> out;
  textio::for_each_json_line(path, [&](const nlohmann::json& j, std::size_t) { out.push_back(generation_record_from_json(j)); });
  return out;
}

void write_generations_jsonl(const std::filesystem::path& path, std::span<const GenerationRecord> records) {
  std::string out;
  for (const auto& r : records) out += to_json(r).dump() + "\n";
  textio::write_file(path, out);
}

double valid_response_rate(std::span<const GenerationRecord> records) {
  if (records.empty()) throw InputError("valid_response_rate: no records");
  const auto valid = std::count_if(records.begin(), records.end(), [](const auto& r) { return r.valid; });
  return static_cast<double>(valid) / static_cast<double>(records.size());
}

}  // namespace cspeech
