#include <doctest.h>

#include <httplib.h>

#include <fstream>
#include <set>
#include <thread>

#include "cspeech/common.hpp"
#include "cspeech/human_eval.hpp"
#include "cspeech/textio.hpp"
#include "eval_session.hpp"
#include "tempdir.hpp"

using namespace cspeech;
using namespace cspeech::human_eval;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

MethodRun run(std::string method, std::size_t n, std::size_t invalid_every = 0) {
  MethodRun r{std::move(method), {}};
  for (std::size_t i = 0; i < n; ++i) {
    GenerationRecord g;
    g.hate_id = "h" + std::to_string(i);
    g.hate_text = "hate " + std::to_string(i);
    g.method = r.method;
    g.text = r.method + " reply " + std::to_string(i);
    g.valid = !(invalid_every && i % invalid_every == 0);
    r.records.push_back(g);
  }
  return r;
}

Study::Clock fixed_clock() {
  auto n = std::make_shared<int>(0);
  return [n] { return "2024-01-01T00:00:" + std::to_string(10 + (*n)++) + "Z"; };
}

void label_all(Study& s) {
  for (int i = 0; i < 10; ++i) {
    s.submit_label(session::label(i, session::kAnn));
    s.submit_label(session::label(i, session::kBob));
  }
}

struct Served {
  httplib::Server server;
  std::thread thread;
  int port = 0;
  Served(Study& study, const std::optional<fs::path>& static_dir = std::nullopt) {
    register_routes(server, study, static_dir);
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~Served() {
    server.stop();
    thread.join();
  }
};

}  // namespace

TEST_CASE("sampling draws k valid generations per method and shuffles them together") {
  const std::vector<MethodRun> runs{run("a_generation", 120, 4), run("b_select", 60), run("c_finetune", 80, 3),
                                    run("d_trl", 50)};
  const auto tasks = sample_for_annotation(runs, 50, 9);
  REQUIRE(tasks.size() == 200);
  std::map<std::string, int> per_method;
  std::set<std::string> ids;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    CHECK(tasks[i].display_order == static_cast<int>(i));
    per_method[tasks[i].hidden_method]++;
    ids.insert(tasks[i].task_id);
    CHECK(tasks[i].task_id.find(tasks[i].hidden_method) == std::string::npos);
  }
  CHECK(ids.size() == 200);
  for (const auto& [m, n] : per_method) CHECK(n == 50);
  // No invalid generation was drawn, and no generation twice.
  std::set<std::string> texts;
  for (const auto& t : tasks) {
    CHECK(texts.insert(t.reply_text).second);
    const auto i = std::stoul(t.reply_text.substr(t.reply_text.rfind(' ') + 1));
    if (t.hidden_method == "a_generation") CHECK(i % 4 != 0);
    if (t.hidden_method == "c_finetune") CHECK(i % 3 != 0);
  }
  // Shuffled: the first 50 are not all from one method.
  std::set<std::string> head;
  for (std::size_t i = 0; i < 50; ++i) head.insert(tasks[i].hidden_method);
  CHECK(head.size() > 1);

  CHECK(sample_for_annotation(runs, 50, 9) == tasks);
  CHECK(sample_for_annotation(runs, 50, 10) != tasks);
  CHECK(sample_for_annotation(std::vector<MethodRun>{run("solo", 3)}, 1, 0).size() == 1);
}

TEST_CASE("sampling fails for a method short of valid generations") {
  const std::vector<MethodRun> runs{run("a_generation", 60), run("short_one", 60, 2)};
  try {
    sample_for_annotation(runs, 50, 1);
    FAIL("expected an error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("short_one") != std::string::npos);
  }
}

TEST_CASE("annotator payload carries only the three visible fields") {
  const AnnotationTask t{"t1", "hate", "reply", "secret_method", 3};
  const auto p = annotator_payload(t);
  CHECK(p.size() == 3);
  CHECK(p.dump().find("secret_method") == std::string::npos);
  CHECK(annotation_task_from_json(to_json(t)) == t);
}

TEST_CASE("label records need every dimension as yes or no") {
  json j{{"task_id", "t1"}, {"annotator_id", "ann"}, {"suitableness", true}, {"relevance", "no"}, {"effectiveness", "yes"}};
  const auto r = label_record_from_json(j);
  CHECK(r.answers == std::array<bool, 3>{true, false, true});
  auto missing = j;
  missing.erase("effectiveness");
  CHECK_THROWS_AS(label_record_from_json(missing), ValidationError);
  auto odd = j;
  odd["relevance"] = "maybe";
  CHECK_THROWS_AS(label_record_from_json(odd), ValidationError);
  CHECK_THROWS_AS(parse_dimension("quality"), ValidationError);
}

TEST_CASE("agreement on the scripted session") {
  std::vector<LabelRecord> a, b;
  for (int i = 0; i < 10; ++i) {
    a.push_back(session::label(i, session::kAnn));
    b.push_back(session::label(i, session::kBob));
  }
  const auto r = agreement_rate(a, b);
  CHECK(r.tasks == 10);
  for (std::size_t d = 0; d < 3; ++d) CHECK(r.dimensions[d].rate == doctest::Approx(session::kAgreement[d]).epsilon(1e-12));
  CHECK(r.dimensions[0].disagreements == std::vector<std::string>{"t3", "t7"});
  CHECK(r.dimensions[1].disagreements.empty());
  CHECK(r.dimensions[2].disagreements == std::vector<std::string>{"t1", "t3", "t7", "t9"});

  CHECK(agreement_rate(a, a).dimensions[2].rate == 1.0);
}

TEST_CASE("agreement counts matching answers over the shared tasks") {
  std::vector<LabelRecord> a, b;
  for (int i = 0; i < 10; ++i) {
    a.push_back({"x" + std::to_string(i), "a", {true, true, true}, ""});
    b.push_back({"x" + std::to_string(i), "b", {i < 5, true, true}, ""});
  }
  CHECK(agreement_rate(a, b).dimensions[0].rate == 0.5);

  std::vector<LabelRecord> other{{"y0", "b", {true, true, true}, ""}};
  CHECK_THROWS_AS(agreement_rate(a, other), ValidationError);
  CHECK_THROWS_AS(agreement_rate({}, {}), ValidationError);
}

TEST_CASE("agreement is symmetric") {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.index(30);
    std::vector<LabelRecord> a, b;
    for (std::size_t i = 0; i < n; ++i) {
      a.push_back({"t" + std::to_string(i), "a", {rng.uniform() < 0.5, rng.uniform() < 0.5, rng.uniform() < 0.5}, ""});
      b.push_back({"t" + std::to_string(i), "b", {rng.uniform() < 0.5, rng.uniform() < 0.5, rng.uniform() < 0.5}, ""});
    }
    std::reverse(b.begin(), b.end());
    const auto ab = agreement_rate(a, b), ba = agreement_rate(b, a);
    for (std::size_t d = 0; d < 3; ++d) {
      CHECK(ab.dimensions[d].rate == ba.dimensions[d].rate);
      CHECK(ab.dimensions[d].kappa == ba.dimensions[d].kappa);
      CHECK(ab.dimensions[d].disagreements == ba.dimensions[d].disagreements);
    }
  }
}

TEST_CASE("summarize uses agreed labels and adjudications") {
  const auto tasks = session::tasks();
  std::vector<LabelRecord> labels;
  for (int i = 0; i < 10; ++i) {
    labels.push_back(session::label(i, session::kAnn));
    labels.push_back(session::label(i, session::kBob));
  }
  const std::pair<std::string, std::string> pair{session::kAnn, session::kBob};
  CHECK_THROWS_AS(summarize(tasks, labels, {}, pair), ValidationError);

  const auto adj = session::adjudications();
  const auto s = summarize(tasks, labels, adj, pair);
  REQUIRE(s.size() == 2);
  CHECK(s[0].method == "alpha_generation");
  CHECK(s[0].tasks == 5);
  CHECK(s[1].method == "beta_finetune");
  for (std::size_t d = 0; d < 3; ++d) {
    CHECK(s[0].yes[d] == doctest::Approx(session::kAlpha[d]).epsilon(1e-12));
    CHECK(s[1].yes[d] == doctest::Approx(session::kBeta[d]).epsilon(1e-12));
  }

  // Missing labels are listed.
  labels.pop_back();
  try {
    summarize(tasks, labels, adj, pair);
    FAIL("expected an error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("t9") != std::string::npos);
  }
}

TEST_CASE("summary proportions: 40 of 50 and all-no") {
  std::vector<AnnotationTask> tasks;
  std::vector<LabelRecord> labels;
  for (int i = 0; i < 50; ++i) {
    tasks.push_back({"f" + std::to_string(i), "h", "r", "finetune", i});
    tasks.push_back({"n" + std::to_string(i), "h", "r", "nope", 50 + i});
    for (const char* who : {"a", "b"}) {
      labels.push_back({"f" + std::to_string(i), who, {i < 40, true, false}, ""});
      labels.push_back({"n" + std::to_string(i), who, {false, false, false}, ""});
    }
  }
  const auto s = summarize(tasks, labels, {}, {"a", "b"});
  REQUIRE(s.size() == 2);
  CHECK(s[0].method == "finetune");
  CHECK(s[0].yes[0] == 0.8);
  CHECK(s[0].yes[1] == 1.0);
  CHECK(s[1].yes == std::array<double, 3>{0.0, 0.0, 0.0});
}

TEST_CASE("study queue, conflicts and errors") {
  TempDir dir;
  Study::create(dir.path(), session::tasks(), {session::kAnn, session::kBob});
  Study s(dir.path(), fixed_clock());

  const auto first = s.next_task(session::kAnn);
  REQUIRE(first);
  CHECK(first->display_order == 0);
  s.submit_label(session::label(0, session::kAnn));
  CHECK(s.next_task(session::kAnn)->task_id == "t1");
  CHECK(s.next_task(session::kBob)->task_id == "t0");
  CHECK_THROWS_AS(s.submit_label(session::label(0, session::kAnn)), ConflictError);
  CHECK_THROWS_AS(s.next_task("mallory"), AuthorizationError);
  CHECK_THROWS_AS(s.submit_label({"t0", "mallory", {}, ""}), AuthorizationError);
  CHECK_THROWS_AS(s.submit_label({"t99", session::kAnn, {}, ""}), NotFoundError);

  for (int i = 1; i < 10; ++i) s.submit_label(session::label(i, session::kAnn));
  CHECK_FALSE(s.next_task(session::kAnn));

  CHECK_THROWS_AS(Study::create(dir.path(), session::tasks(), {"x", "y"}), ConflictError);
  TempDir other;
  CHECK_THROWS_AS(Study::create(other.path(), session::tasks(), {"x", "x"}), ValidationError);
}

TEST_CASE("adjudication rules and audit log") {
  TempDir dir;
  Study::create(dir.path(), session::tasks(), {session::kAnn, session::kBob});
  Study s(dir.path(), fixed_clock());
  s.submit_label(session::label(3, session::kAnn));
  // Only one annotator so far.
  CHECK_THROWS_AS(s.adjudicate({"t3", Dimension::suitableness, true, "why", ""}), ValidationError);
  s.submit_label(session::label(3, session::kBob));
  CHECK_THROWS_AS(s.adjudicate({"t3", Dimension::relevance, true, "agreed already", ""}), ValidationError);
  CHECK_THROWS_AS(s.adjudicate({"t3", Dimension::suitableness, true, "  ", ""}), ValidationError);
  CHECK_THROWS_AS(s.adjudicate({"nope", Dimension::suitableness, true, "x", ""}), NotFoundError);

  s.adjudicate({"t3", Dimension::suitableness, false, "first pass", ""});
  s.adjudicate({"t3", Dimension::suitableness, true, "second look", ""});
  const auto log = textio::read_file(dir / "adjudications.jsonl");
  CHECK(std::count(log.begin(), log.end(), '\n') == 2);
  CHECK(s.adjudications().size() == 2);
  CHECK(s.adjudications()[0].rationale == "first pass");

  s.adjudicate({"t3", Dimension::effectiveness, false, "too vague", ""});
  // Latest wins in the summary.
  std::vector<AnnotationTask> only{session::tasks()[3]};
  const auto sum = summarize(only, s.labels(), s.adjudications(), s.annotators());
  CHECK(sum.at(0).yes[0] == 1.0);
}

TEST_CASE("study state survives a reopen and export writes the files") {
  TempDir dir;
  Study::create(dir.path(), session::tasks(), {session::kAnn, session::kBob});
  {
    Study s(dir.path(), fixed_clock());
    label_all(s);
    CHECK_FALSE(s.export_to(dir / "early"));
    CHECK_FALSE(fs::exists(dir / "early/summary.csv"));
    for (const auto& a : session::adjudications()) s.adjudicate(a);
  }
  Study s(dir.path());
  CHECK(s.labels().size() == 20);
  CHECK(s.adjudications().size() == 6);
  CHECK(s.labels()[0].timestamp == "2024-01-01T00:00:10Z");
  CHECK_THROWS_AS(s.submit_label(session::label(0, session::kAnn)), ConflictError);
  REQUIRE(s.export_to(dir / "export"));
  CHECK(textio::read_file(dir / "export/summary.csv") ==
        "method,tasks,suitableness,relevance,effectiveness\nalpha_generation,5,0.8,1,0.8\nbeta_finetune,5,0.6,0.6,0.4\n");
  CHECK(textio::read_file(dir / "export/labels.jsonl") == textio::read_file(dir / "labels.jsonl"));
}

TEST_CASE("concurrent submissions are all stored once") {
  TempDir dir;
  std::vector<AnnotationTask> tasks;
  for (int i = 0; i < 200; ++i) tasks.push_back({"c" + std::to_string(i), "h", "r", "m", i});
  Study::create(dir.path(), tasks, {"a", "b"});
  Study s(dir.path());
  std::atomic<int> conflicts{0};
  std::vector<std::thread> threads;
  for (int w = 0; w < 8; ++w)
    threads.emplace_back([&, w] {
      for (int i = 0; i < 200; ++i) {
        try {
          s.submit_label({"c" + std::to_string(i), w % 2 ? "a" : "b", {true, true, true}, ""});
        } catch (const ConflictError&) {
          conflicts++;
        }
      }
    });
  for (auto& t : threads) t.join();
  CHECK(s.labels().size() == 400);
  CHECK(conflicts == 8 * 200 - 400);
  Study reopened(dir.path());
  CHECK(reopened.labels().size() == 400);
}

TEST_CASE("HTTP API: flow, error mapping and blinding") {
  TempDir dir, web;
  Study::create(dir.path(), session::tasks(), {session::kAnn, session::kBob});
  Study study(dir.path(), fixed_clock());
  { std::ofstream(web / "index.html") << "<html>annotate</html>"; }
  Served served(study, web.path());
  httplib::Client cli("127.0.0.1", served.port);

  std::vector<std::string> annotator_bodies;
  auto get = [&](const std::string& path, int status) {
    auto res = cli.Get(path);
    REQUIRE(res);
    CHECK_MESSAGE(res->status == status, path);
    annotator_bodies.push_back(res->body);
    return json::parse(res->body);
  };
  auto post = [&](const std::string& path, const json& body, int status) {
    auto res = cli.Post(path, body.dump(), "application/json");
    REQUIRE(res);
    CAPTURE(res->body);
    CHECK_MESSAGE(res->status == status, path);
    annotator_bodies.push_back(res->body);
    return json::parse(res->body);
  };

  const auto first = get("/api/annotators/ann/next", 200);
  CHECK(first["task_id"] == "t0");
  CHECK(first.size() == 3);

  for (int i = 0; i < 10; ++i)
    for (const auto& who : {session::kAnn, session::kBob}) {
      const auto next = get("/api/annotators/" + who + "/next", 200);
      CHECK(next["task_id"] == "t" + std::to_string(i));
      auto l = session::label(i, who);
      auto body = to_json(l);
      body.erase("task_id");
      body.erase("timestamp");
      post("/api/tasks/t" + std::to_string(i) + "/labels", body, 201);
    }
  CHECK(get("/api/annotators/ann/next", 200) == json{{"done", true}});

  // Error mapping.
  post("/api/tasks/t0/labels", to_json(session::label(0, session::kAnn)), 409);
  post("/api/tasks/t0/labels", json{{"annotator_id", "ann"}, {"suitableness", true}, {"relevance", true}}, 400);
  post("/api/tasks/t0/labels",
       json{{"annotator_id", "eve"}, {"suitableness", true}, {"relevance", true}, {"effectiveness", true}}, 403);
  post("/api/tasks/zzz/labels",
       json{{"annotator_id", "ann"}, {"suitableness", true}, {"relevance", true}, {"effectiveness", true}}, 404);
  {
    auto res = cli.Post("/api/adjudications", "{not json", "application/json");
    REQUIRE(res);
    CHECK(res->status == 400);
  }
  get("/api/annotators/eve/next", 403);
  get("/api/summary", 400);

  const auto agreement = get("/api/agreement", 200);
  CHECK(agreement["dimensions"]["suitableness"]["rate"].get<double>() == doctest::Approx(0.8));
  CHECK(agreement["dimensions"]["relevance"]["rate"].get<double>() == 1.0);
  CHECK(agreement["dimensions"]["effectiveness"]["rate"].get<double>() == doctest::Approx(0.6));

  const auto dis = get("/api/disagreements", 200);
  CHECK(dis.size() == 6);
  post("/api/adjudications", json{{"task_id", "t0"}, {"dimension", "relevance"}, {"final_label", true}, {"rationale", "x"}},
       400);
  for (const auto& a : session::adjudications()) {
    auto body = to_json(a);
    body.erase("timestamp");
    post("/api/adjudications", body, 201);
  }
  for (const auto& d : get("/api/disagreements", 200)) CHECK(d["adjudicated"] == true);

  // Blinding: nothing served so far names a method or a run path.
  for (const auto& body : annotator_bodies) {
    CHECK(body.find("alpha_generation") == std::string::npos);
    CHECK(body.find("beta_finetune") == std::string::npos);
    CHECK(body.find("hidden_method") == std::string::npos);
    CHECK(body.find("runs/") == std::string::npos);
  }

  // Unblinded only now.
  const auto summary = get("/api/summary", 200);
  REQUIRE(summary.size() == 2);
  CHECK(summary[0]["method"] == "alpha_generation");
  CHECK(summary[0]["effectiveness"].get<double>() == doctest::Approx(0.8));
  CHECK(summary[1]["relevance"].get<double>() == doctest::Approx(0.6));

  auto page = cli.Get("/index.html");
  REQUIRE(page);
  CHECK(page->status == 200);
  CHECK(page->body == "<html>annotate</html>");
}
