#include <doctest.h>

#include <algorithm>
#include <mutex>
#include <thread>

#include <httplib.h>

#include "cspeech/common.hpp"
#include "cspeech/gateway.hpp"
#include "cspeech/textio.hpp"
#include "tempdir.hpp"

using namespace cspeech;

namespace {

std::size_t count_occurrences(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (std::size_t p = hay.find(needle); p != std::string::npos; p = hay.find(needle, p + 1)) ++n;
  return n;
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

GenerationRecord rec(bool valid) {
  GenerationRecord r;
  r.hate_id = "h";
  r.method = "baseline_generation";
  r.text = valid ? "fine" : "";
  r.valid = valid;
  return r;
}

}  // namespace

TEST_CASE("prompt templates") {
  auto b = build_prompt("X", PromptCondition::baseline);
  CHECK(b.system == "Generate a response in Reddit Style.");
  CHECK(b.user == "Here is the Reddit comment: X. Please write a counterspeech to the Reddit hate comment.");
  auto e = build_prompt("X", PromptCondition::effective);
  CHECK(e.user ==
        "Here is the hate comment: X. Please write a counterspeech to the hate comment so that it could lead to low "
        "incivility in the following conversations.");
  auto r = build_prompt("X", PromptCondition::reentry);
  CHECK(ends_with(r.user, "so that the hater will come back and have constructive engagement in the conversation."));
  CHECK_THROWS_AS(build_prompt(" ", PromptCondition::baseline), InputError);
  CHECK(plain_prompt("hi there").user == "hi there");
  CHECK(parse_condition(to_string(PromptCondition::reentry)) == PromptCondition::reentry);
  CHECK_THROWS_AS(parse_condition("polite"), ConfigError);
}

TEST_CASE("build_prompt contains the hate text exactly once (property)") {
  Rng rng(2);
  const std::string alphabet = "qzxjvkw0123456789";
  for (int i = 0; i < 500; ++i) {
    std::string h(6 + rng.index(10), 'q');
    for (auto& c : h) c = alphabet[rng.index(alphabet.size())];
    for (auto c : {PromptCondition::baseline, PromptCondition::effective, PromptCondition::reentry})
      CHECK(count_occurrences(build_prompt(h, c).user, h) == 1);
  }
}

TEST_CASE("generation params") {
  GenerationParams p;
  CHECK(p.top_k == 8);
  CHECK(p.temperature == 0.7);
  CHECK(p.max_length == 512);
  CHECK(p.n_candidates == 1);
  CHECK_FALSE(p.seed.has_value());
  p.seed = 9;
  CHECK(generation_params_from_json(to_json(p)) == p);
  p.temperature = 0;
  CHECK_THROWS_AS(p.validate(), ConfigError);
}

TEST_CASE("generate returns n candidates in order") {
  ScriptedBackend mock;
  GenerationParams p;
  p.n_candidates = 5;
  auto texts = generate(build_prompt("X", PromptCondition::baseline), p, mock);
  CHECK(texts == std::vector<std::string>{"reply-0", "reply-1", "reply-2", "reply-3", "reply-4"});
  p.n_candidates = 1;
  CHECK(generate(build_prompt("X", PromptCondition::baseline), p, mock).size() == 1);

  auto refusing = ScriptedBackend::cycling({"I cannot help with that."});
  auto out = generate(build_prompt("X", PromptCondition::baseline), p, refusing);
  CHECK(out.front() == "I cannot help with that.");
  CHECK_FALSE(is_valid_response(out.front()));
}

TEST_CASE("is_valid_response") {
  CHECK_FALSE(is_valid_response(""));
  CHECK_FALSE(is_valid_response(" \n\t"));
  CHECK_FALSE(is_valid_response("I cannot fulfill this request."));
  CHECK_FALSE(is_valid_response("  i can\xE2\x80\x99t write that."));
  CHECK_FALSE(is_valid_response("As an AI, I do not have opinions."));
  CHECK_FALSE(is_valid_response("Well, as an AI language model I must decline."));
  CHECK(is_valid_response("That generalization is unfair because..."));
  // Anchored pattern does not fire mid-text.
  CHECK(is_valid_response("You say I cannot be trusted, but that's false."));
}

TEST_CASE("built-in refusal list is the versioned config file") {
  const auto file = textio::read_file(std::filesystem::path(CSPEECH_SOURCE_DIR) / "config/refusal_patterns.txt");
  CHECK(file == RefusalPatterns::default_text());
  CHECK(RefusalPatterns::load(std::filesystem::path(CSPEECH_SOURCE_DIR) / "config/refusal_patterns.txt").patterns() ==
        RefusalPatterns::defaults().patterns());
  auto p = RefusalPatterns::parse("# comment\n\n^Nope\n  maybe later  \n");
  CHECK(p.patterns() == std::vector<std::string>{"^nope", "maybe later"});
  CHECK(p.matches("NOPE."));
  CHECK(p.matches("ok, Maybe Later"));
  CHECK_FALSE(p.matches("not nope"));
}

TEST_CASE("adding a refusal pattern never makes an invalid response valid (property)") {
  Rng rng(31);
  const std::vector<std::string> words{"i", "cannot", "sorry", "as", "an", "ai", "peace", "no", "thanks", "hate"};
  auto phrase = [&](std::size_t max) {
    std::string s;
    const std::size_t n = 1 + rng.index(max);
    for (std::size_t k = 0; k < n; ++k) s += (s.empty() ? "" : " ") + words[rng.index(words.size())];
    return s;
  };
  for (int i = 0; i < 1000; ++i) {
    std::vector<std::string> pats;
    for (std::size_t k = rng.index(4); k > 0; --k) pats.push_back((rng.index(2) ? "^" : "") + phrase(2));
    const RefusalPatterns small(pats);
    pats.push_back((rng.index(2) ? "^" : "") + phrase(2));
    const RefusalPatterns large(pats);
    const auto text = phrase(6);
    if (!is_valid_response(text, small)) CHECK_FALSE(is_valid_response(text, large));
  }
}

TEST_CASE("valid_response_rate") {
  std::vector<GenerationRecord> rs;
  for (int i = 0; i < 100; ++i) rs.push_back(rec(i < 83));
  CHECK(valid_response_rate(rs) == doctest::Approx(0.83));
  std::reverse(rs.begin(), rs.end());
  CHECK(valid_response_rate(rs) == doctest::Approx(0.83));
  rs.clear();
  for (int i = 0; i < 100; ++i) rs.push_back(rec(i >= 8));
  CHECK(valid_response_rate(rs) == doctest::Approx(0.92));
  std::vector<GenerationRecord> all{rec(true), rec(true)};
  CHECK(valid_response_rate(all) == 1.0);
  CHECK_THROWS_AS(valid_response_rate(std::vector<GenerationRecord>{}), InputError);
}

TEST_CASE("generation records round trip through JSONL") {
  TempDir dir;
  GenerationRecord a = rec(true);
  a.hate_text = "h text";
  a.params.seed = 4;
  GenerationRecord b = rec(false);
  b.method = "effective_top5_select_reentry";
  b.candidates = std::vector<Candidate>{{"one", true}, {"", false}};
  std::vector<GenerationRecord> v{a, b};
  write_generations_jsonl(dir / "g.jsonl", v);
  CHECK(read_generations_jsonl(dir / "g.jsonl") == v);
}

TEST_CASE("http chat backend: protocol, fan-out ordering and transport errors") {
  httplib::Server srv;
  std::mutex mu;
  std::vector<nlohmann::json> bodies;
  srv.Post("/chat", [&](const httplib::Request& req, httplib::Response& res) {
    auto j = nlohmann::json::parse(req.body);
    {
      std::lock_guard lock(mu);
      bodies.push_back(j);
    }
    CHECK(req.get_header_value("Authorization") == "Bearer tok");
    nlohmann::json texts = nlohmann::json::array();
    const int n = j["n"];
    const std::string tag = j.contains("seed") ? std::to_string(j["seed"].get<std::uint64_t>()) : "none";
    for (int k = 0; k < n; ++k) texts.push_back(tag + ":" + std::to_string(k));
    res.set_content(nlohmann::json{{"texts", texts}}.dump(), "application/json");
  });
  const int port = srv.bind_to_any_port("127.0.0.1");
  std::thread th([&] { srv.listen_after_bind(); });
  srv.wait_until_ready();

  auto ep = HttpEndpoint::parse("http://127.0.0.1:" + std::to_string(port) + "/chat");
  ep.token = "tok";
  GenerationParams p;
  p.n_candidates = 3;
  p.seed = 7;
  auto prompt = build_prompt("X", PromptCondition::effective);

  auto single = generate(prompt, p, HttpChatBackend(ep, 1));
  CHECK(single == std::vector<std::string>{"7:0", "7:1", "7:2"});
  REQUIRE(bodies.size() == 1);
  CHECK(bodies[0]["system"] == "Generate a response in Reddit Style.");
  CHECK(bodies[0]["max_tokens"] == 512);
  CHECK(bodies[0]["top_k"] == 8);

  auto fanned = generate(prompt, p, HttpChatBackend(ep, 3));
  REQUIRE(fanned.size() == 3);
  for (std::size_t k = 0; k < 3; ++k)
    CHECK(fanned[k] == std::to_string(derive_seed(7, "candidate-" + std::to_string(k))) + ":0");

  srv.stop();
  th.join();
  CHECK_THROWS_AS(generate(prompt, p, HttpChatBackend(ep, 2)), TransportError);
}
